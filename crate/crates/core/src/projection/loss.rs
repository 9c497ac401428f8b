use std::collections::BTreeMap;

use super::net::{ForwardCache, ProjectionNet};
use super::sampling::Triplet;
use crate::embedspace::squared_euclidean;
use crate::error::Result;

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)` on already-normalized embeddings.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (squared_euclidean(anchor, positive) - squared_euclidean(anchor, negative) + margin).max(0.0)
}

/// Mean batch loss and its gradient over the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Triplets with a strictly positive hinge.
    pub active: usize,
}

/// Exact gradient of the mean hinge loss over `triplets`, whose indices point
/// into `inputs`.
///
/// Each distinct input is pushed through the network once; gradients of
/// repeated inputs are summed before backpropagation.
pub fn loss_and_gradient<V: AsRef<[f64]>>(
    net: &ProjectionNet,
    inputs: &[V],
    triplets: &[Triplet],
    margin: f64,
) -> Result<BatchGradient> {
    let mut caches: BTreeMap<usize, ForwardCache> = BTreeMap::new();
    for t in triplets {
        for idx in [t.anchor, t.positive, t.negative] {
            if let std::collections::btree_map::Entry::Vacant(slot) = caches.entry(idx) {
                slot.insert(net.forward_cached(inputs[idx].as_ref())?);
            }
        }
    }

    let out_dim = net.shape().output;
    let scale = 1.0 / triplets.len().max(1) as f64;
    let mut grad_embeddings: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;
    let mut active = 0;

    for t in triplets {
        let a = &caches[&t.anchor].embedding;
        let p = &caches[&t.positive].embedding;
        let n = &caches[&t.negative].embedding;
        let loss = triplet_loss(a, p, n, margin);
        if loss <= 0.0 {
            continue;
        }
        total += loss;
        active += 1;
        // d/da = 2(n − p), d/dp = 2(p − a), d/dn = 2(a − n)
        let ga: Vec<f64> = n
            .iter()
            .zip(p)
            .map(|(ni, pi)| 2.0 * scale * (ni - pi))
            .collect();
        let gp: Vec<f64> = p
            .iter()
            .zip(a)
            .map(|(pi, ai)| 2.0 * scale * (pi - ai))
            .collect();
        let gn: Vec<f64> = a
            .iter()
            .zip(n)
            .map(|(ai, ni)| 2.0 * scale * (ai - ni))
            .collect();
        for (idx, g) in [(t.anchor, ga), (t.positive, gp), (t.negative, gn)] {
            let slot = grad_embeddings
                .entry(idx)
                .or_insert_with(|| vec![0.0; out_dim]);
            slot.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
        }
    }

    let mut grad = vec![0.0; net.params().len()];
    for (idx, g) in &grad_embeddings {
        net.backward(inputs[*idx].as_ref(), &caches[idx], g, &mut grad);
    }

    Ok(BatchGradient {
        loss: total * scale,
        grad,
        active,
    })
}
