//! Refines coarse camera-trap labels ("animal", "mammal", blank) toward species
//! level.
//!
//! Trusted species predictions form per-species clusters. A small projection
//! network is trained on them with a triplet loss, and coarse detections are
//! assigned to the learned-space cluster they sit closest to, relative to how
//! tight that cluster is. Detections that no cluster claims confidently are
//! rolled up to the generic "animal" label.

pub mod artifacts;
pub mod config;
pub mod embedspace;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod projection;
pub mod report;
pub mod synth;
pub mod taxonomy;

pub use artifacts::{write_run, RunArtifacts};
pub use config::{load_stage_config, ConfigFile};
pub use embedspace::{cosine_distance, ClusterModel, MeanDistance, Space};
pub use error::{Error, Result};
pub use ingest::{
    load_manifest, load_outcomes, save_manifest, save_outcomes, Dataset, Detection,
    PreEnsembleEntry,
};
pub use pipeline::{
    run_pipeline, run_pipeline_with_model, train_projection, DecidedBy, PipelineOutcome,
    PipelineResult, StageConfig,
};
pub use projection::{load_model, save_model, ProjectionNet, TrainConfig};
pub use report::{build_report, render_report, FunnelCounts, Report};
pub use synth::{generate, SynthSpec};
pub use taxonomy::{hierarchy_match, parse_label, Label, Rank, TaxonPath};
