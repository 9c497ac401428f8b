use log::debug;

use super::loss::{loss_and_gradient, triplet_loss};
use super::net::{NetShape, ProjectionNet};
use super::optim::AdamState;
use super::sampling::{sample_triplets, AnchorSet, Triplet};
use super::TrainConfig;
use crate::error::{Error, Result};

/// One Adam step on the mean triplet loss of `batch`; returns the pre-update loss.
///
/// A batch with no active hinge leaves the parameters and the optimizer state
/// untouched.
pub fn grad_step<V: AsRef<[f64]>>(
    net: &mut ProjectionNet,
    inputs: &[V],
    batch: &[Triplet],
    cfg: &TrainConfig,
    opt: &mut AdamState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let step = loss_and_gradient(net, inputs, batch, cfg.margin)?;
    if !step.loss.is_finite() || step.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    if step.active == 0 {
        return Ok(step.loss);
    }
    opt.update(net.params_mut(), &step.grad, cfg.learning_rate);
    if !net.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(step.loss)
}

#[derive(Debug, Clone)]
pub struct TrainedProjection {
    pub net: ProjectionNet,
    /// Mean pre-update triplet loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains a fresh network on `anchors`.
///
/// Each epoch samples `triplets_per_epoch` triplets and walks them in batches of
/// `batch_size` (the last batch may be short). The returned parameters are
/// rounded to `f32` so that a saved model reproduces them exactly.
pub fn train(anchors: &AnchorSet, cfg: &TrainConfig) -> Result<TrainedProjection> {
    cfg.validate()?;
    let input = anchors
        .inputs()
        .first()
        .map(Vec::len)
        .ok_or(Error::InsufficientClasses(0))?;
    let shape = NetShape {
        input,
        hidden: cfg.hidden_dim,
        output: cfg.output_dim,
    };
    let mut net = ProjectionNet::init(shape, cfg.seed);
    let mut opt = AdamState::new(shape.param_count());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    // Projections of every anchor under the current parameters. Valid only while
    // no update has happened, which lets converged epochs skip the network.
    let mut frozen: Option<Vec<Vec<f64>>> = None;

    for epoch in 0..cfg.epochs {
        let triplets =
            sample_triplets(anchors, cfg.triplets_per_epoch, epoch_seed(cfg.seed, epoch))?;
        let mut total = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            if let Some(emb) = &frozen {
                let inactive = batch.iter().all(|t| {
                    triplet_loss(
                        &emb[t.anchor],
                        &emb[t.positive],
                        &emb[t.negative],
                        cfg.margin,
                    ) <= 0.0
                });
                if inactive {
                    continue;
                }
            }
            let steps = opt.step_count();
            let loss = grad_step(&mut net, anchors.inputs(), batch, cfg, &mut opt)?;
            total += loss * batch.len() as f64;
            frozen = if opt.step_count() == steps {
                match frozen {
                    Some(emb) => Some(emb),
                    None => Some(
                        anchors
                            .inputs()
                            .iter()
                            .map(|x| net.forward(x))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                }
            } else {
                None
            };
        }
        let mean = total / triplets.len() as f64;
        debug!("epoch {}: mean triplet loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }

    net.round_to_f32();
    Ok(TrainedProjection { net, epoch_losses })
}
