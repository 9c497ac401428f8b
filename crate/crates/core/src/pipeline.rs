//! The five-stage re-classification pipeline.
//!
//! 1. High-confidence species predictions become anchors.
//! 2. Blank/kingdom detections whose top-5 is dominated by birds are relabeled Aves.
//! 3. Raw-space species centroids admit sub-threshold species predictions that
//!    sit inside their own cluster.
//! 4. A projection is trained on all anchors with a triplet loss.
//! 5. Coarse detections are scored against learned-space clusters with a
//!    tightness-weighted cosine distance; the best cluster wins when it clears
//!    the threshold and agrees with the original label, otherwise the
//!    detection falls back to the generic "animal" label.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::embedspace::{dot, normalize, ClusterModel, MeanDistance, Space};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Detection};
use crate::projection::{train, AnchorSet, ProjectionNet, TrainConfig, TrainedProjection};
use crate::report::FunnelCounts;
use crate::taxonomy::{hierarchy_match, is_bird, Label, Rank, TaxonPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub accept_threshold: f64,
    pub bird_min_species: usize,
    pub bird_min_sum: f64,
    pub min_cluster_size: usize,
    pub centroid_percentile: f64,
    pub tau: f64,
    /// Definition of each cluster's mean intra-cluster distance.
    pub mean_distance: MeanDistance,
    pub train: TrainConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            accept_threshold: 0.8,
            bird_min_species: 3,
            bird_min_sum: 0.3,
            min_cluster_size: 5,
            centroid_percentile: 95.0,
            tau: 0.85,
            mean_distance: MeanDistance::Pairwise,
            train: TrainConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return fail("accept_threshold must lie in [0, 1]");
        }
        if !(1..=crate::ingest::MAX_TOP_K).contains(&self.bird_min_species) {
            return fail("bird_min_species must lie in [1, 5]");
        }
        if !(self.bird_min_sum >= 0.0 && self.bird_min_sum.is_finite()) {
            return fail("bird_min_sum must be non-negative");
        }
        if self.min_cluster_size < 1 {
            return fail("min_cluster_size must be at least 1");
        }
        if !(self.centroid_percentile > 0.0 && self.centroid_percentile <= 100.0) {
            return fail("centroid_percentile must lie in (0, 100]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        self.train.validate()
    }
}

/// Which stage settled a detection's final label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Stage1,
    Stage2,
    Stage3,
    Stage5,
    RollupAnimal,
    Untouched,
}

impl DecidedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            DecidedBy::Stage1 => "stage1",
            DecidedBy::Stage2 => "stage2",
            DecidedBy::Stage3 => "stage3",
            DecidedBy::Stage5 => "stage5",
            DecidedBy::RollupAnimal => "rollup_animal",
            DecidedBy::Untouched => "untouched",
        }
    }

    /// Anchors are the detections whose labels feed clusters and training.
    pub fn is_anchor(self) -> bool {
        matches!(self, DecidedBy::Stage1 | DecidedBy::Stage3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub detection_id: String,
    pub original_label: Label,
    pub final_label: Label,
    pub decided_by: DecidedBy,
    /// Best adaptive score, for detections that reached stage 5.
    pub score: Option<f64>,
    pub nearest_label: Option<TaxonPath>,
    pub audit: Vec<String>,
}

impl PipelineOutcome {
    fn pending(d: &Detection) -> Self {
        PipelineOutcome {
            detection_id: d.id.clone(),
            original_label: d.ensemble_label.clone(),
            final_label: d.ensemble_label.clone(),
            decided_by: DecidedBy::Untouched,
            score: None,
            nearest_label: None,
            audit: Vec::new(),
        }
    }
}

/// Species-level prediction at or above the acceptance threshold.
pub fn stage1_accept(d: &Detection, cfg: &StageConfig) -> bool {
    d.ensemble_label.is_species_level() && d.ensemble_score >= cfg.accept_threshold
}

/// Bird species count and summed score among the top-5 entries.
pub fn bird_evidence(d: &Detection) -> (usize, f64) {
    d.top5
        .iter()
        .filter(|e| is_bird(&e.label))
        .fold((0, 0.0), |(n, s), e| (n + 1, s + e.score))
}

/// Class-level Aves when enough bird species with enough summed confidence sit
/// in the top 5. Only blank and kingdom-level detections are eligible.
pub fn stage2_bird_override(d: &Detection, cfg: &StageConfig) -> Option<Label> {
    if !is_stage2_eligible(&d.ensemble_label) {
        return None;
    }
    let (count, sum) = bird_evidence(d);
    (count >= cfg.bird_min_species && sum >= cfg.bird_min_sum)
        .then(|| Label::Taxon(TaxonPath::bird()))
}

pub fn is_stage2_eligible(label: &Label) -> bool {
    match label {
        Label::Blank => true,
        Label::Taxon(path) => path.level() == Rank::Kingdom,
        Label::Unknown => false,
    }
}

/// Stage-5 candidates: blank, kingdom-level, or class-level mammal/bird labels.
pub fn is_stage5_candidate(label: &Label) -> bool {
    match label {
        Label::Blank => true,
        Label::Unknown => false,
        Label::Taxon(path) => match path.level() {
            Rank::Kingdom => true,
            Rank::Class => matches!(path.class(), "mammalia" | "aves"),
            _ => false,
        },
    }
}

/// Groups `members` by taxon and builds a cluster for every group of at least
/// `min_size`. Output is ordered by rank fields.
pub fn build_clusters(
    members: &[(&TaxonPath, &[f64])],
    min_size: usize,
    percentile_rank: f64,
    mean_mode: MeanDistance,
    space: Space,
) -> Result<Vec<ClusterModel>> {
    let mut groups: BTreeMap<String, (&TaxonPath, Vec<&[f64]>)> = BTreeMap::new();
    for (label, v) in members {
        groups
            .entry(label.rank_key())
            .or_insert_with(|| (*label, Vec::new()))
            .1
            .push(v);
    }
    groups
        .into_values()
        .filter(|(_, vs)| vs.len() >= min_size.max(1))
        .map(|(label, vs)| {
            ClusterModel::build(label.clone(), &vs, percentile_rank, mean_mode, space)
        })
        .collect()
}

/// Nearest cluster by cosine distance; ties go to the smaller label.
pub fn nearest_cluster<'a>(
    v: &[f64],
    clusters: &'a [ClusterModel],
) -> Result<Option<(&'a ClusterModel, f64)>> {
    let mut best: Option<(&ClusterModel, f64)> = None;
    for c in clusters {
        let d = c.distance(v)?;
        best = match best {
            Some((b, bd)) if bd < d || (bd == d && b.label <= c.label) => Some((b, bd)),
            _ => Some((c, d)),
        };
    }
    Ok(best)
}

/// Result of the stage-3 check for one sub-threshold species prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidCheck {
    pub index: usize,
    pub nearest: TaxonPath,
    pub distance: f64,
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Stage3Output {
    pub clusters: Vec<ClusterModel>,
    pub checks: Vec<CentroidCheck>,
}

impl Stage3Output {
    pub fn accepted(&self) -> impl Iterator<Item = usize> + '_ {
        self.checks.iter().filter(|c| c.accepted).map(|c| c.index)
    }
}

/// Builds raw-space clusters from `anchors` (dataset indices) and checks every
/// index in `candidates` against them. Clusters are not updated with the
/// newly accepted detections.
pub fn stage3_build_centroids(
    ds: &Dataset,
    raw: &[Vec<f64>],
    anchors: &[usize],
    candidates: &[usize],
    cfg: &StageConfig,
) -> Result<Stage3Output> {
    let members: Vec<(&TaxonPath, &[f64])> = anchors
        .iter()
        .filter_map(|&i| {
            ds.detections[i]
                .ensemble_label
                .as_taxon()
                .map(|t| (t, raw[i].as_slice()))
        })
        .collect();
    let clusters = build_clusters(
        &members,
        cfg.min_cluster_size,
        cfg.centroid_percentile,
        cfg.mean_distance,
        Space::Raw,
    )?;
    if clusters.is_empty() {
        return Err(Error::NoEligibleClusters);
    }
    let checks = recheck_candidates(ds, raw, &clusters, candidates)?;
    Ok(Stage3Output { clusters, checks })
}

/// The acceptance test of stage 3 against fixed clusters.
pub fn recheck_candidates(
    ds: &Dataset,
    raw: &[Vec<f64>],
    clusters: &[ClusterModel],
    candidates: &[usize],
) -> Result<Vec<CentroidCheck>> {
    let mut checks = Vec::new();
    for &i in candidates {
        let Some(predicted) = ds.detections[i].ensemble_label.as_taxon() else {
            continue;
        };
        if !predicted.is_species_level() {
            continue;
        }
        let Some((nearest, distance)) = nearest_cluster(&raw[i], clusters)? else {
            continue;
        };
        let accepted = nearest.label.same_taxon(predicted) && distance <= nearest.p95_intra_dist;
        checks.push(CentroidCheck {
            index: i,
            nearest: nearest.label.clone(),
            distance,
            threshold: nearest.p95_intra_dist,
            accepted,
        });
    }
    Ok(checks)
}

/// `w_c = 1 + (d̄_max − d̄_c) / d̄_max`, in `[1, 2]`.
pub fn tightness_weight(mean_intra: f64, max_mean_intra: f64) -> f64 {
    1.0 + (max_mean_intra - mean_intra) / max_mean_intra
}

/// Adaptive score of a learned-space embedding against every cluster, ascending.
///
/// `score_c = (1 − μ̂_cᵀ e′) / (d̄_c · w_c)` with μ̂_c the normalized centroid.
/// Equal scores are ordered by label.
pub fn stage5_adaptive_score(
    e_learned: &[f64],
    clusters: &[ClusterModel],
) -> Result<Vec<(TaxonPath, f64)>> {
    if clusters.is_empty() {
        return Err(Error::NoEligibleClusters);
    }
    if let Some(c) = clusters.iter().find(|c| c.mean_intra_dist <= 0.0) {
        return Err(Error::DegenerateCluster(c.label.render()));
    }
    let max_mean = clusters
        .iter()
        .map(|c| c.mean_intra_dist)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut scored = clusters
        .iter()
        .map(|c| {
            let unit_centroid = normalize(&c.centroid)?;
            if unit_centroid.len() != e_learned.len() {
                return Err(Error::DimensionMismatch {
                    expected: unit_centroid.len(),
                    found: e_learned.len(),
                });
            }
            let w = tightness_weight(c.mean_intra_dist, max_mean);
            let score = (1.0 - dot(&unit_centroid, e_learned)) / (c.mean_intra_dist * w);
            Ok((c.label.clone(), score))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(compare_scored);
    Ok(scored)
}

/// Stage-5 decision: re-classify iff the best score is strictly below `tau` and
/// the best label is consistent with the original.
pub fn stage5_accepts(original: &Label, best: &TaxonPath, score: f64, tau: f64) -> bool {
    score < tau && hierarchy_match(original, best)
}

/// Splits clusters into those usable for scoring and the degenerate ones.
pub fn scorable_clusters(clusters: Vec<ClusterModel>) -> (Vec<ClusterModel>, Vec<TaxonPath>) {
    let (good, bad): (Vec<_>, Vec<_>) = clusters.into_iter().partition(|c| c.mean_intra_dist > 0.0);
    let excluded: Vec<TaxonPath> = bad.into_iter().map(|c| c.label).collect();
    for label in &excluded {
        warn!("excluding degenerate cluster {label} from scoring");
    }
    (good, excluded)
}

/// Learned-space clusters for a set of anchors under a trained projection.
pub fn learned_clusters(
    net: &ProjectionNet,
    anchors: &[(&TaxonPath, &[f64])],
    cfg: &StageConfig,
) -> Result<Vec<ClusterModel>> {
    let projected = anchors
        .iter()
        .map(|(_, v)| net.forward(v))
        .collect::<Result<Vec<_>>>()?;
    let members: Vec<(&TaxonPath, &[f64])> = anchors
        .iter()
        .zip(&projected)
        .map(|((label, _), e)| (*label, e.as_slice()))
        .collect();
    build_clusters(
        &members,
        cfg.min_cluster_size,
        cfg.centroid_percentile,
        cfg.mean_distance,
        Space::Learned,
    )
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// One outcome per detection, in dataset order.
    pub outcomes: Vec<PipelineOutcome>,
    pub net: ProjectionNet,
    pub epoch_losses: Vec<f64>,
    pub raw_clusters: Vec<ClusterModel>,
    /// Clusters used for stage-5 scoring.
    pub learned_clusters: Vec<ClusterModel>,
    pub excluded_clusters: Vec<TaxonPath>,
    pub funnel: FunnelCounts,
}

fn fmt_score(x: f64) -> String {
    format!("{x:.6}")
}

/// Runs all five stages over `ds`.
pub fn run_pipeline(ds: &Dataset, cfg: &StageConfig) -> Result<PipelineResult> {
    run_stages(ds, cfg, None)
}

/// Runs the pipeline with an already trained projection in place of stage 4.
/// `epoch_losses` is empty in the result.
pub fn run_pipeline_with_model(
    ds: &Dataset,
    cfg: &StageConfig,
    net: ProjectionNet,
) -> Result<PipelineResult> {
    run_stages(ds, cfg, Some(net))
}

/// Stages 1 to 4 only: selects anchors and trains the projection on them.
pub fn train_projection(ds: &Dataset, cfg: &StageConfig) -> Result<TrainedProjection> {
    cfg.validate()?;
    let raw: Vec<Vec<f64>> = ds.detections.iter().map(Detection::embedding_f64).collect();
    let anchors = select_anchors(ds, cfg, &raw)?;
    let (_, set) = anchor_set(ds, &anchors.outcomes, &raw);
    train(&set, &cfg.train)
}

struct AnchorSelection {
    outcomes: Vec<PipelineOutcome>,
    decided: Vec<bool>,
    stage3: Stage3Output,
}

fn anchor_set(
    ds: &Dataset,
    outcomes: &[PipelineOutcome],
    raw: &[Vec<f64>],
) -> (Vec<usize>, AnchorSet) {
    let anchor_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| outcomes[i].decided_by.is_anchor())
        .collect();
    let set = AnchorSet::new(anchor_idx.iter().map(|&i| {
        let d = &ds.detections[i];
        let label = d
            .ensemble_label
            .as_taxon()
            .expect("anchors are species-level");
        (d.id.clone(), label.clone(), raw[i].clone())
    }));
    (anchor_idx, set)
}

fn select_anchors(ds: &Dataset, cfg: &StageConfig, raw: &[Vec<f64>]) -> Result<AnchorSelection> {
    let mut outcomes: Vec<PipelineOutcome> =
        ds.detections.iter().map(PipelineOutcome::pending).collect();
    let mut decided = vec![false; ds.len()];

    // Stage 1
    for (i, d) in ds.detections.iter().enumerate() {
        if stage1_accept(d, cfg) {
            let o = &mut outcomes[i];
            o.decided_by = DecidedBy::Stage1;
            o.audit.push(format!(
                "stage1: accepted as anchor (score {} >= {})",
                fmt_score(d.ensemble_score),
                cfg.accept_threshold
            ));
            decided[i] = true;
        }
    }

    // Stage 2
    for (i, d) in ds.detections.iter().enumerate() {
        if decided[i] {
            continue;
        }
        if !is_stage2_eligible(&d.ensemble_label) {
            continue;
        }
        let (count, sum) = bird_evidence(d);
        let o = &mut outcomes[i];
        match stage2_bird_override(d, cfg) {
            Some(label) => {
                o.final_label = label;
                o.decided_by = DecidedBy::Stage2;
                o.audit.push(format!(
                    "stage2: bird override ({count} bird species, summed score {})",
                    fmt_score(sum)
                ));
                decided[i] = true;
            }
            None => o.audit.push(format!(
                "stage2: no override ({count} bird species, summed score {})",
                fmt_score(sum)
            )),
        }
    }

    // Stage 3
    let stage1: Vec<usize> = (0..ds.len())
        .filter(|&i| outcomes[i].decided_by == DecidedBy::Stage1)
        .collect();
    let sub_threshold: Vec<usize> = (0..ds.len())
        .filter(|&i| !decided[i] && ds.detections[i].ensemble_label.is_species_level())
        .collect();
    let stage3 = stage3_build_centroids(ds, raw, &stage1, &sub_threshold, cfg)?;
    for check in &stage3.checks {
        let o = &mut outcomes[check.index];
        let verdict = if check.accepted {
            "accepted"
        } else {
            "rejected"
        };
        o.audit.push(format!(
            "stage3: nearest centroid {} at {} (p{} {}) {verdict}",
            check.nearest,
            fmt_score(check.distance),
            cfg.centroid_percentile,
            fmt_score(check.threshold)
        ));
        if check.accepted {
            o.decided_by = DecidedBy::Stage3;
            decided[check.index] = true;
        }
    }
    Ok(AnchorSelection {
        outcomes,
        decided,
        stage3,
    })
}

fn run_stages(
    ds: &Dataset,
    cfg: &StageConfig,
    model: Option<ProjectionNet>,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let raw: Vec<Vec<f64>> = ds.detections.iter().map(Detection::embedding_f64).collect();
    let AnchorSelection {
        mut outcomes,
        mut decided,
        stage3,
    } = select_anchors(ds, cfg, &raw)?;

    // Stage 4
    let (anchor_idx, anchor_set) = anchor_set(ds, &outcomes, &raw);
    let (net, epoch_losses) = match model {
        Some(net) => (net, Vec::new()),
        None => {
            info!(
                "training projection on {} anchors across {} species",
                anchor_set.len(),
                anchor_set.groups().len()
            );
            let trained = train(&anchor_set, &cfg.train)?;
            (trained.net, trained.epoch_losses)
        }
    };

    let anchor_members: Vec<(&TaxonPath, &[f64])> = anchor_idx
        .iter()
        .map(|&i| {
            let label = ds.detections[i]
                .ensemble_label
                .as_taxon()
                .expect("species-level");
            (label, raw[i].as_slice())
        })
        .collect();
    let (clusters, excluded) = scorable_clusters(learned_clusters(&net, &anchor_members, cfg)?);
    if clusters.is_empty() {
        return Err(Error::NoEligibleClusters);
    }

    // Stage 5
    for (i, d) in ds.detections.iter().enumerate() {
        if decided[i] || !is_stage5_candidate(&d.ensemble_label) {
            continue;
        }
        let e = net.forward(&raw[i])?;
        let ranked = stage5_adaptive_score(&e, &clusters)?;
        let (best, score) = ranked.first().cloned().expect("clusters are non-empty");
        let o = &mut outcomes[i];
        if stage5_accepts(&d.ensemble_label, &best, score, cfg.tau) {
            o.final_label = Label::Taxon(best.clone());
            o.decided_by = DecidedBy::Stage5;
            o.audit.push(format!(
                "stage5: re-classified as {best} (score {} < tau {})",
                fmt_score(score),
                cfg.tau
            ));
        } else {
            let reason = if score >= cfg.tau {
                format!("score {} >= tau {}", fmt_score(score), cfg.tau)
            } else {
                format!("{best} conflicts with original label")
            };
            o.final_label = Label::Taxon(TaxonPath::animal());
            o.decided_by = DecidedBy::RollupAnimal;
            o.audit.push(format!(
                "stage5: rolled up to animal (best {best}, {reason})"
            ));
        }
        o.score = Some(score);
        o.nearest_label = Some(best);
        decided[i] = true;
    }

    for o in outcomes
        .iter_mut()
        .filter(|o| o.decided_by == DecidedBy::Untouched)
    {
        o.audit.push("untouched".to_string());
    }

    let funnel = FunnelCounts::from_outcomes(&outcomes);
    Ok(PipelineResult {
        outcomes,
        net,
        epoch_losses,
        raw_clusters: stage3.clusters,
        learned_clusters: clusters,
        excluded_clusters: excluded,
        funnel,
    })
}

/// Orders scored labels by score, then label. Exposed for callers that merge
/// rankings.
pub fn compare_scored(a: &(TaxonPath, f64), b: &(TaxonPath, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PreEnsembleEntry, EMBEDDING_DIM};

    const LION: &str = "animalia;mammalia;carnivora;felidae;panthera;leo;lion";
    const LEOPARD: &str = "animalia;mammalia;carnivora;felidae;panthera;pardus;leopard";

    fn path(s: &str) -> TaxonPath {
        s.parse().unwrap()
    }

    fn bird_species(name: &str) -> TaxonPath {
        TaxonPath::new(&["animalia", "aves", "o", "f", "g", name], name).unwrap()
    }

    fn detection(label: Label, score: f64, top5: Vec<PreEnsembleEntry>) -> Detection {
        let mut embedding = vec![0.0f32; EMBEDDING_DIM];
        embedding[0] = 1.0;
        Detection {
            id: "d".into(),
            image_id: "i".into(),
            ensemble_label: label,
            ensemble_score: score,
            top5,
            embedding,
            ground_truth: None,
        }
    }

    fn entry(p: TaxonPath, score: f64) -> PreEnsembleEntry {
        PreEnsembleEntry { label: p, score }
    }

    #[test]
    fn stage1_threshold_is_inclusive() {
        let cfg = StageConfig::default();
        assert!(stage1_accept(
            &detection(path(LION).into(), 0.8, vec![]),
            &cfg
        ));
        assert!(!stage1_accept(
            &detection(path(LION).into(), 0.799, vec![]),
            &cfg
        ));
        assert!(!stage1_accept(
            &detection(TaxonPath::animal().into(), 0.99, vec![]),
            &cfg
        ));
    }

    #[test]
    fn stage2_override_thresholds() {
        let cfg = StageConfig::default();
        let three = vec![
            entry(bird_species("a"), 0.1),
            entry(bird_species("b"), 0.1),
            entry(bird_species("c"), 0.1),
        ];
        let d = detection(TaxonPath::animal().into(), 0.5, three.clone());
        assert_eq!(
            stage2_bird_override(&d, &cfg),
            Some(TaxonPath::bird().into())
        );
        let blank = detection(Label::Blank, 0.5, three);
        assert!(stage2_bird_override(&blank, &cfg).is_some());

        let two = vec![
            entry(bird_species("a"), 0.25),
            entry(bird_species("b"), 0.25),
        ];
        assert_eq!(
            stage2_bird_override(&detection(Label::Blank, 0.5, two), &cfg),
            None
        );

        let four_low = vec![
            entry(bird_species("a"), 0.08),
            entry(bird_species("b"), 0.07),
            entry(bird_species("c"), 0.07),
            entry(bird_species("d"), 0.07),
        ];
        assert_eq!(
            stage2_bird_override(&detection(Label::Blank, 0.5, four_low), &cfg),
            None
        );
    }

    #[test]
    fn stage2_skips_non_kingdom_labels() {
        let cfg = StageConfig::default();
        let birds = vec![
            entry(bird_species("a"), 0.3),
            entry(bird_species("b"), 0.3),
            entry(bird_species("c"), 0.3),
        ];
        let d = detection(TaxonPath::mammal().into(), 0.5, birds);
        assert_eq!(stage2_bird_override(&d, &cfg), None);
    }

    #[test]
    fn candidate_pools() {
        assert!(is_stage5_candidate(&Label::Blank));
        assert!(is_stage5_candidate(&TaxonPath::animal().into()));
        assert!(is_stage5_candidate(&TaxonPath::mammal().into()));
        assert!(is_stage5_candidate(&TaxonPath::bird().into()));
        assert!(!is_stage5_candidate(&Label::Unknown));
        assert!(!is_stage5_candidate(
            &path("animalia;reptilia;;;;;reptile").into()
        ));
        assert!(!is_stage5_candidate(&path(LION).into()));
    }

    fn cluster(label: &str, centroid: Vec<f64>, mean: f64) -> ClusterModel {
        ClusterModel {
            label: path(label),
            centroid,
            mean_intra_dist: mean,
            p95_intra_dist: mean,
            member_count: 5,
            space: Space::Learned,
        }
    }

    #[test]
    fn single_cluster_score() {
        // cos = 0.9, d̄ = 0.2, w = 1 → 0.1 / 0.2
        let e = [0.9, (1.0f64 - 0.81).sqrt()];
        let scores = stage5_adaptive_score(&e, &[cluster(LION, vec![2.0, 0.0], 0.2)]).unwrap();
        assert!((scores[0].1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn tight_cluster_gets_boost() {
        let cos: f64 = 1.0 - 0.06;
        let e = [cos, (1.0 - cos * cos).sqrt(), 0.0];
        let clusters = [
            cluster(LION, vec![1.0, 0.0, 0.0], 0.05),
            cluster(LEOPARD, vec![0.0, 0.0, 1.0], 0.10),
        ];
        assert_eq!(tightness_weight(0.05, 0.10), 1.5);
        let scores = stage5_adaptive_score(&e, &clusters).unwrap();
        assert_eq!(scores[0].0, path(LION));
        assert!((scores[0].1 - 0.8).abs() < 1e-9);
        assert!(stage5_accepts(
            &Label::Blank,
            &scores[0].0,
            scores[0].1,
            0.85
        ));
    }

    #[test]
    fn exact_centroid_scores_zero() {
        let scores =
            stage5_adaptive_score(&[0.0, 1.0], &[cluster(LION, vec![0.0, 3.0], 0.2)]).unwrap();
        assert_eq!(scores[0].1, 0.0);
    }

    #[test]
    fn degenerate_cluster_is_an_error() {
        let err = stage5_adaptive_score(&[1.0, 0.0], &[cluster(LION, vec![1.0, 0.0], 0.0)]);
        assert!(matches!(err, Err(Error::DegenerateCluster(_))));
        let (good, bad) = scorable_clusters(vec![
            cluster(LION, vec![1.0, 0.0], 0.0),
            cluster(LEOPARD, vec![0.0, 1.0], 0.1),
        ]);
        assert_eq!(good.len(), 1);
        assert_eq!(bad, vec![path(LION)]);
    }

    #[test]
    fn ties_prefer_smaller_label() {
        let clusters = [
            cluster(LION, vec![1.0, 0.0], 0.2),
            cluster(LEOPARD, vec![0.0, 1.0], 0.2),
        ];
        let e = [
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ];
        let scores = stage5_adaptive_score(&e, &clusters).unwrap();
        assert_eq!(scores[0].1, scores[1].1);
        assert_eq!(scores[0].0, path(LION));
    }

    #[test]
    fn threshold_is_strict() {
        assert!(!stage5_accepts(&Label::Blank, &path(LION), 0.85, 0.85));
        assert!(stage5_accepts(&Label::Blank, &path(LION), 0.8499999, 0.85));
        let bird: Label = TaxonPath::bird().into();
        assert!(!stage5_accepts(&bird, &path(LION), 0.1, 0.85));
    }

    #[test]
    fn weights_lie_in_unit_to_two() {
        let means = [0.01, 0.2, 0.05, 0.2, 0.13];
        let max = 0.2;
        for m in means {
            let w = tightness_weight(m, max);
            assert!((1.0..=2.0).contains(&w));
        }
        assert_eq!(tightness_weight(max, max), 1.0);
    }

    #[test]
    fn config_validation() {
        StageConfig::default().validate().unwrap();
        let bad = StageConfig {
            tau: 0.0,
            ..StageConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StageConfig {
            centroid_percentile: 0.0,
            ..StageConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
