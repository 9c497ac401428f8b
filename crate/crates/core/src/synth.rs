//! Synthetic datasets with known ground truth.
//!
//! Every species gets a seeded random unit direction in the embedding space.
//! Members are that direction plus isotropic Gaussian noise, rescaled to a norm
//! near one. Each member is then given one of four roles that decide what the
//! upstream classifier "said" about it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedspace::{dot, normalize};
use crate::error::{Error, Result};
use crate::ingest::{
    save_manifest, Dataset, Detection, PreEnsembleEntry, EMBEDDING_DIM, MAX_TOP_K,
};
use crate::taxonomy::{Label, TaxonPath};

/// Smallest per-species count: a cluster needs five anchors, plus headroom.
pub const MIN_PER_SPECIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub label: TaxonPath,
    pub mean_seed: u64,
}

/// Pulls the second species of `pair` toward the first so their means sit at
/// `angle_deg` degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardMode {
    pub angle_deg: f64,
    #[serde(default = "default_pair")]
    pub pair: (usize, usize),
}

fn default_pair() -> (usize, usize) {
    (0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub species: Vec<SpeciesSpec>,
    pub per_species_count: usize,
    pub noise_sigma: f64,
    pub frac_high_conf: f64,
    pub frac_generic: f64,
    pub frac_blank: f64,
    pub seed: u64,
    pub hard_mode: Option<HardMode>,
}

fn species(ranks: [&str; 6], common: &str, mean_seed: u64) -> SpeciesSpec {
    SpeciesSpec {
        label: TaxonPath::new(&ranks, common).expect("valid built-in taxon"),
        mean_seed,
    }
}

pub fn default_species() -> Vec<SpeciesSpec> {
    vec![
        species(
            [
                "animalia",
                "mammalia",
                "carnivora",
                "felidae",
                "panthera",
                "leo",
            ],
            "lion",
            1,
        ),
        species(
            [
                "animalia",
                "mammalia",
                "carnivora",
                "felidae",
                "panthera",
                "pardus",
            ],
            "leopard",
            2,
        ),
        species(
            [
                "animalia",
                "mammalia",
                "carnivora",
                "hyaenidae",
                "crocuta",
                "crocuta",
            ],
            "spotted hyaena",
            3,
        ),
        species(
            [
                "animalia",
                "mammalia",
                "cetartiodactyla",
                "giraffidae",
                "giraffa",
                "camelopardalis",
            ],
            "giraffe",
            4,
        ),
        species(
            [
                "animalia",
                "mammalia",
                "cetartiodactyla",
                "bovidae",
                "oryx",
                "gazella",
            ],
            "gemsbok",
            5,
        ),
    ]
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            species: default_species(),
            per_species_count: 60,
            noise_sigma: 0.05,
            frac_high_conf: 0.4,
            frac_generic: 0.3,
            frac_blank: 0.1,
            seed: 42,
            hard_mode: None,
        }
    }
}

/// What the classifier reported for a synthetic member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    HighConfidence,
    SubThreshold,
    Generic,
    Blank,
}

/// Per-species role counts; the remainder after the three fractions is
/// sub-threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleCounts {
    pub high_conf: usize,
    pub generic: usize,
    pub blank: usize,
    pub sub_threshold: usize,
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::SpecInvalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.species.len() < 2 {
            return bad(format!(
                "need at least 2 species, got {}",
                self.species.len()
            ));
        }
        for (i, s) in self.species.iter().enumerate() {
            if !s.label.is_species_level() {
                return bad(format!(
                    "species {i} label {} is not species level",
                    s.label
                ));
            }
            if self.species[..i]
                .iter()
                .any(|o| o.label.same_taxon(&s.label))
            {
                return bad(format!("species {} listed twice", s.label));
            }
        }
        if self.per_species_count < MIN_PER_SPECIES {
            return bad(format!(
                "per_species_count {} below {MIN_PER_SPECIES}",
                self.per_species_count
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            ));
        }
        let fracs = [self.frac_high_conf, self.frac_generic, self.frac_blank];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if fracs.iter().sum::<f64>() > 1.0 + 1e-12 {
            return bad("fractions sum above 1".into());
        }
        if let Some(h) = &self.hard_mode {
            let (a, b) = h.pair;
            if a == b || a >= self.species.len() || b >= self.species.len() {
                return bad(format!("hard mode pair {:?} invalid", h.pair));
            }
            if !(h.angle_deg.is_finite() && h.angle_deg > 0.0 && h.angle_deg < 180.0) {
                return bad(format!("hard mode angle {} outside (0, 180)", h.angle_deg));
            }
        }
        Ok(())
    }

    pub fn role_counts(&self) -> RoleCounts {
        let n = self.per_species_count;
        let part = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let high_conf = part(self.frac_high_conf);
        let generic = part(self.frac_generic);
        let blank = part(self.frac_blank);
        RoleCounts {
            high_conf,
            generic,
            blank,
            sub_threshold: n.saturating_sub(high_conf + generic + blank),
        }
    }

    fn role(&self, k: usize) -> Role {
        let c = self.role_counts();
        if k < c.high_conf {
            Role::HighConfidence
        } else if k < c.high_conf + c.generic {
            Role::Generic
        } else if k < c.high_conf + c.generic + c.blank {
            Role::Blank
        } else {
            Role::SubThreshold
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_direction(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Ok(v) = normalize(&gaussian(&mut rng, EMBEDDING_DIM)) {
            return v;
        }
    }
}

/// Unit species means, with the hard-mode pair rotated to the requested angle.
pub fn species_means(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = spec
        .species
        .iter()
        .map(|s| unit_direction(s.mean_seed))
        .collect();
    if let Some(h) = &spec.hard_mode {
        let (a, b) = h.pair;
        let base = means[a].clone();
        // Gram-Schmidt the second mean against the first.
        let along = dot(&means[b], &base);
        let ortho: Vec<f64> = means[b]
            .iter()
            .zip(&base)
            .map(|(x, y)| x - along * y)
            .collect();
        let ortho = normalize(&ortho).expect("independent random directions");
        let theta = h.angle_deg.to_radians();
        means[b] = base
            .iter()
            .zip(&ortho)
            .map(|(x, y)| theta.cos() * x + theta.sin() * y)
            .collect();
    }
    means
}

fn top5(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    generating: usize,
    first_score: Option<f64>,
) -> Vec<PreEnsembleEntry> {
    let mut others: Vec<usize> = (0..spec.species.len())
        .filter(|&s| s != generating)
        .collect();
    others.shuffle(rng);
    let mut order = Vec::with_capacity(MAX_TOP_K);
    if first_score.is_some() {
        order.push(generating);
    } else {
        others.push(generating);
        others.shuffle(rng);
    }
    order.extend(others);
    order.truncate(MAX_TOP_K);

    let mut remaining = 1.0;
    let mut prev = 1.0f64;
    let mut out = Vec::with_capacity(order.len());
    for (i, s) in order.into_iter().enumerate() {
        let score = match (i, first_score) {
            (0, Some(score)) => score,
            _ => rng.random_range(0.0..0.5) * remaining,
        };
        let score = score.min(prev).min(remaining).max(0.0);
        remaining -= score;
        prev = score;
        out.push(PreEnsembleEntry {
            label: spec.species[s].label.clone(),
            score,
        });
    }
    out
}

/// Generates the dataset described by `spec`. Ground truth is always the
/// generating species. Identical specs give identical datasets.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = species_means(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut detections = Vec::with_capacity(spec.species.len() * spec.per_species_count);

    for (s, sp) in spec.species.iter().enumerate() {
        for k in 0..spec.per_species_count {
            let noise = gaussian(&mut rng, EMBEDDING_DIM);
            let raw: Vec<f64> = means[s]
                .iter()
                .zip(&noise)
                .map(|(m, n)| m + spec.noise_sigma * n)
                .collect();
            let scale = rng.random_range(0.8..1.2);
            let embedding: Vec<f32> = normalize(&raw)
                .map_err(|_| Error::SpecInvalid("degenerate member embedding".into()))?
                .iter()
                .map(|x| (x * scale) as f32)
                .collect();

            let (label, score, top) = match spec.role(k) {
                Role::HighConfidence => {
                    let score = rng.random_range(0.8..=1.0);
                    let top = top5(&mut rng, spec, s, Some(score));
                    (Label::Taxon(sp.label.clone()), score, top)
                }
                Role::SubThreshold => {
                    let score = rng.random_range(0.3..0.8);
                    let top = top5(&mut rng, spec, s, Some(score));
                    (Label::Taxon(sp.label.clone()), score, top)
                }
                Role::Generic => {
                    let label = if k % 3 == 2 {
                        TaxonPath::mammal()
                    } else {
                        TaxonPath::animal()
                    };
                    let score = rng.random_range(0.3..0.8);
                    let first = rng.random_range(0.1..0.5);
                    let top = top5(&mut rng, spec, s, Some(first));
                    (Label::Taxon(label), score, top)
                }
                Role::Blank => {
                    let score = rng.random_range(0.3..0.8);
                    let top = top5(&mut rng, spec, s, None);
                    (Label::Blank, score, top)
                }
            };

            detections.push(Detection {
                id: format!("syn-{s:02}-{k:04}"),
                image_id: format!("img-{s:02}-{k:04}"),
                ensemble_label: label,
                ensemble_score: score,
                top5: top,
                embedding,
                ground_truth: Some(Label::Taxon(sp.label.clone())),
            });
        }
    }
    Dataset::new(detections, format!("synth:seed={}", spec.seed))
}

/// Writes a generated dataset as a manifest plus embedding matrix.
pub fn write(ds: &Dataset, manifest: &Path, embeddings: &Path) -> Result<()> {
    save_manifest(ds, manifest, Some(embeddings))
}
