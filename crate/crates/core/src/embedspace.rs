//! Vector primitives shared by centroid building and adaptive scoring.
//!
//! Everything accumulates in `f64`, with compensated summation for sums that
//! run over whole clusters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::TaxonPath;

/// Which space a cluster's centroid lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// The upstream 768-d image embedding.
    Raw,
    /// The L2-normalized output of the trained projection.
    Learned,
}

/// How a cluster's mean intra-cluster distance is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanDistance {
    /// Mean cosine distance over all unordered member pairs.
    #[default]
    Pairwise,
    /// Mean cosine distance from each member to the centroid.
    ToCentroid,
}

/// Per-species centroid with intra-cluster distance statistics.
///
/// `p95_intra_dist` is always a percentile of member-to-centroid distances;
/// `mean_intra_dist` follows the [`MeanDistance`] the cluster was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub label: TaxonPath,
    /// Arithmetic mean of the members, not normalized.
    pub centroid: Vec<f64>,
    pub mean_intra_dist: f64,
    pub p95_intra_dist: f64,
    pub member_count: usize,
    pub space: Space,
}

impl ClusterModel {
    /// Builds a cluster from its members; `percentile_rank` selects the spread
    /// statistic stored in `p95_intra_dist`.
    pub fn build(
        label: TaxonPath,
        members: &[&[f64]],
        percentile_rank: f64,
        mean_mode: MeanDistance,
        space: Space,
    ) -> Result<Self> {
        let centroid = centroid(members)?;
        let distances = members
            .iter()
            .map(|m| cosine_distance(m, &centroid))
            .collect::<Result<Vec<_>>>()?;
        let mean_intra_dist = match mean_mode {
            MeanDistance::Pairwise => mean_pairwise_distance(members)?,
            MeanDistance::ToCentroid => mean(&distances)?,
        };
        Ok(ClusterModel {
            label,
            mean_intra_dist,
            p95_intra_dist: percentile(&distances, percentile_rank)?,
            member_count: members.len(),
            centroid,
            space,
        })
    }

    /// Cosine distance from `v` to this cluster's centroid.
    pub fn distance(&self, v: &[f64]) -> Result<f64> {
        cosine_distance(v, &self.centroid)
    }
}

/// Mean cosine distance over all unordered pairs of `members`; zero for a
/// single member.
pub fn mean_pairwise_distance<V: AsRef<[f64]>>(members: &[V]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut sum = KahanSum::default();
    let mut pairs = 0usize;
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            sum.add(cosine_distance(a.as_ref(), b.as_ref())?);
            pairs += 1;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        sum.value() / pairs as f64
    })
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(uu * vv) rather than norm(u) * norm(v): for u == v this is exactly uu,
    // so identical vectors are at distance exactly zero.
    Ok((1.0 - dot(u, v) / (uu * vv).sqrt()).clamp(0.0, 2.0))
}

pub fn squared_euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(squared_euclidean(u, v).sqrt())
}

/// Component-wise arithmetic mean of `members`.
pub fn centroid<V: AsRef<[f64]>>(members: &[V]) -> Result<Vec<f64>> {
    let first = members.first().ok_or(Error::EmptyCluster)?.as_ref();
    let dim = first.len();
    let mut sums = vec![KahanSum::default(); dim];
    for member in members {
        let member = member.as_ref();
        if member.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: member.len(),
            });
        }
        for (acc, &x) in sums.iter_mut().zip(member) {
            acc.add(x);
        }
    }
    let n = members.len() as f64;
    Ok(sums.iter().map(|s| s.value() / n).collect())
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = KahanSum::default();
    values.iter().for_each(|&v| acc.add(v));
    Ok(acc.value() / values.len() as f64)
}

/// Nearest-rank percentile: the element at index `ceil(p/100 * n) - 1` of the
/// ascending sort.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// `v / ‖v‖₂`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}
