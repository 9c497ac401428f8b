use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::taxonomy::TaxonPath;

/// Trusted detections grouped by species, the training set for the projection.
#[derive(Debug, Clone, Default)]
pub struct AnchorSet {
    ids: Vec<String>,
    labels: Vec<TaxonPath>,
    inputs: Vec<Vec<f64>>,
    groups: Vec<(TaxonPath, Vec<usize>)>,
}

impl AnchorSet {
    /// Groups `(id, species label, raw embedding)` members by taxon. Group order is
    /// the lexicographic order of the rank fields; member order is input order.
    pub fn new(members: impl IntoIterator<Item = (String, TaxonPath, Vec<f64>)>) -> Self {
        let mut set = AnchorSet::default();
        let mut by_key: BTreeMap<String, (TaxonPath, Vec<usize>)> = BTreeMap::new();
        for (idx, (id, label, input)) in members.into_iter().enumerate() {
            by_key
                .entry(label.rank_key())
                .or_insert_with(|| (label.clone(), Vec::new()))
                .1
                .push(idx);
            set.ids.push(id);
            set.labels.push(label);
            set.inputs.push(input);
        }
        set.groups = by_key.into_values().collect();
        set
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn label(&self, idx: usize) -> &TaxonPath {
        &self.labels[idx]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn groups(&self) -> &[(TaxonPath, Vec<usize>)] {
        &self.groups
    }
}

/// Indices into an [`AnchorSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn ids<'a>(&self, set: &'a AnchorSet) -> (&'a str, &'a str, &'a str) {
        (
            set.id(self.anchor),
            set.id(self.positive),
            set.id(self.negative),
        )
    }
}

/// Draws `count` random triplets: a species with at least two members, two distinct
/// members of it, then a uniformly chosen member of a uniformly chosen other species.
pub fn sample_triplets(anchors: &AnchorSet, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(anchors, count, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(
    anchors: &AnchorSet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let groups = anchors.groups();
    if groups.len() < 2 {
        return Err(Error::InsufficientClasses(groups.len()));
    }
    let eligible: Vec<usize> = (0..groups.len())
        .filter(|&g| groups[g].1.len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientMembers);
    }

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let g = eligible[rng.random_range(0..eligible.len())];
        let members = &groups[g].1;
        let i = rng.random_range(0..members.len());
        let mut j = rng.random_range(0..members.len() - 1);
        if j >= i {
            j += 1;
        }
        let mut other = rng.random_range(0..groups.len() - 1);
        if other >= g {
            other += 1;
        }
        let negatives = &groups[other].1;
        let n = negatives[rng.random_range(0..negatives.len())];
        out.push(Triplet {
            anchor: members[i],
            positive: members[j],
            negative: n,
        });
    }
    Ok(out)
}
