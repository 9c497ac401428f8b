//! The metric-learning projection: a one-hidden-layer ReLU network whose
//! L2-normalized output is trained with a margin triplet loss.

mod loss;
mod net;
mod optim;
mod sampling;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{loss_and_gradient, triplet_loss, BatchGradient};
pub use net::{load_model, save_model, ForwardCache, NetShape, ProjectionNet, Tensor};
pub use optim::AdamState;
pub use sampling::{sample_triplets, AnchorSet, Triplet};
pub use train::{grad_step, train, TrainedProjection};

/// Hyper-parameters of the projection and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub triplets_per_epoch: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 42,
            triplets_per_epoch: 10_000,
            hidden_dim: 512,
            output_dim: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail("margin must be positive");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.triplets_per_epoch < 1 {
            return fail("triplets_per_epoch must be at least 1");
        }
        if self.hidden_dim < 1 || self.output_dim < 1 {
            return fail("hidden_dim and output_dim must be at least 1");
        }
        Ok(())
    }
}
