//! Benchmark-only crate; see `benches/`.
//!
//! Fixtures are shared here so both bench targets build identical inputs.

use taxorefine::pipeline::StageConfig;
use taxorefine::projection::{AnchorSet, TrainConfig};
use taxorefine::{generate, Dataset, SynthSpec};

/// The default five-species synthetic dataset.
pub fn dataset() -> Dataset {
    generate(&SynthSpec::default()).expect("default spec is valid")
}

/// Training settings small enough for repeated iterations.
pub fn quick_config() -> StageConfig {
    StageConfig {
        train: TrainConfig {
            epochs: 3,
            triplets_per_epoch: 512,
            hidden_dim: 64,
            output_dim: 32,
            ..TrainConfig::default()
        },
        ..StageConfig::default()
    }
}

/// Species-level detections of `ds` as a training set.
pub fn anchor_set(ds: &Dataset) -> AnchorSet {
    AnchorSet::new(ds.detections.iter().filter_map(|d| {
        let label = d
            .ensemble_label
            .as_taxon()
            .filter(|t| t.is_species_level())?;
        Some((d.id.clone(), label.clone(), d.embedding_f64()))
    }))
}
