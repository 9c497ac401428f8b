use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedspace::norm;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"TXRP";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl NetShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }
}

/// Parameter tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    W1,
    B1,
    W2,
    B2,
}

impl Tensor {
    pub const ALL: [Tensor; 4] = [Tensor::W1, Tensor::B1, Tensor::W2, Tensor::B2];
}

/// `x -> normalize(W2 · relu(W1 · x + b1) + b2)`.
///
/// All parameters live in one flat buffer: W1 (hidden × input, row-major), b1,
/// W2 (output × hidden, row-major), b2.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    shape: NetShape,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output_norm: f64,
    pub embedding: Vec<f64>,
}

impl ProjectionNet {
    /// He-uniform weights, zero biases.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = ProjectionNet {
            shape,
            params: vec![0.0; shape.param_count()],
        };
        let limit1 = (6.0 / shape.input as f64).sqrt();
        let limit2 = (6.0 / shape.hidden as f64).sqrt();
        for w in net.tensor_mut(Tensor::W1) {
            *w = rng.random_range(-limit1..limit1);
        }
        for w in net.tensor_mut(Tensor::W2) {
            *w = rng.random_range(-limit2..limit2);
        }
        net
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_count(),
                found: params.len(),
            });
        }
        Ok(ProjectionNet { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor_range(&self, tensor: Tensor) -> Range<usize> {
        let s = self.shape;
        let w1 = s.hidden * s.input;
        let b1 = w1 + s.hidden;
        let w2 = b1 + s.output * s.hidden;
        match tensor {
            Tensor::W1 => 0..w1,
            Tensor::B1 => w1..b1,
            Tensor::W2 => b1..w2,
            Tensor::B2 => w2..w2 + s.output,
        }
    }

    pub fn tensor(&self, tensor: Tensor) -> &[f64] {
        &self.params[self.tensor_range(tensor)]
    }

    pub fn tensor_mut(&mut self, tensor: Tensor) -> &mut [f64] {
        let range = self.tensor_range(tensor);
        &mut self.params[range]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Rounds every parameter to the nearest `f32` so the model file is lossless.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_cached(x).map(|c| c.embedding)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        let s = self.shape;
        if x.len() != s.input {
            return Err(Error::DimensionMismatch {
                expected: s.input,
                found: x.len(),
            });
        }
        let w1 = self.tensor(Tensor::W1);
        let b1 = self.tensor(Tensor::B1);
        let pre_activation: Vec<f64> = w1
            .chunks_exact(s.input)
            .zip(b1)
            .map(|(row, b)| row_dot(row, x) + b)
            .collect();
        let hidden: Vec<f64> = pre_activation.iter().map(|&z| z.max(0.0)).collect();

        let w2 = self.tensor(Tensor::W2);
        let b2 = self.tensor(Tensor::B2);
        let output: Vec<f64> = w2
            .chunks_exact(s.hidden)
            .zip(b2)
            .map(|(row, b)| row_dot(row, &hidden) + b)
            .collect();
        let output_norm = norm(&output);
        if output_norm == 0.0 || !output_norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let embedding = output.iter().map(|y| y / output_norm).collect();
        Ok(ForwardCache {
            pre_activation,
            hidden,
            output_norm,
            embedding,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose gradient
    /// with respect to the normalized output is `grad_embedding`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        grad_embedding: &[f64],
        grad: &mut [f64],
    ) {
        let s = self.shape;
        let e = &cache.embedding;
        // Jacobian of y / ‖y‖ is (I - e eᵀ) / ‖y‖.
        let radial: f64 = row_dot(e, grad_embedding);
        let grad_output: Vec<f64> = grad_embedding
            .iter()
            .zip(e)
            .map(|(g, ei)| (g - ei * radial) / cache.output_norm)
            .collect();

        let w2 = self.tensor(Tensor::W2);
        let mut grad_hidden = vec![0.0; s.hidden];
        let (gw1, rest) = grad.split_at_mut(s.hidden * s.input);
        let (gb1, rest) = rest.split_at_mut(s.hidden);
        let (gw2, gb2) = rest.split_at_mut(s.output * s.hidden);

        for (k, (&gy, w_row)) in grad_output
            .iter()
            .zip(w2.chunks_exact(s.hidden))
            .enumerate()
        {
            gb2[k] += gy;
            let gw_row = &mut gw2[k * s.hidden..(k + 1) * s.hidden];
            for (gw, &h) in gw_row.iter_mut().zip(&cache.hidden) {
                *gw += gy * h;
            }
            for (gh, &w) in grad_hidden.iter_mut().zip(w_row) {
                *gh += gy * w;
            }
        }

        for (j, (&z, &gh)) in cache.pre_activation.iter().zip(&grad_hidden).enumerate() {
            if z <= 0.0 || gh == 0.0 {
                continue;
            }
            gb1[j] += gh;
            for (gw, &xi) in gw1[j * s.input..(j + 1) * s.input].iter_mut().zip(x) {
                *gw += gh * xi;
            }
        }
    }

    /// Serializes to the model file layout: magic, version, three `u32` dims,
    /// then W1, b1, W2, b2 as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.params.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for dim in [self.shape.input, self.shape.hidden, self.shape.output] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut header = [0u8; 20];
        bytes
            .read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        if &header[..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        if word(4) != MODEL_VERSION {
            return Err(bad(&format!("unsupported version {}", word(4))));
        }
        let shape = NetShape {
            input: word(8) as usize,
            hidden: word(12) as usize,
            output: word(16) as usize,
        };
        if bytes.len() != shape.param_count() * 4 {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                shape.param_count() * 4,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let net = ProjectionNet { shape, params };
        if !net.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(net)
    }
}

fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn save_model(net: &ProjectionNet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&net.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ProjectionNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ProjectionNet::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ProjectionNet {
        ProjectionNet::init(
            NetShape {
                input: 12,
                hidden: 10,
                output: 6,
            },
            7,
        )
    }

    fn input(seed: u64, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_is_unit_norm_and_finite() {
        let net = small();
        for seed in 0..10 {
            let e = net.forward(&input(seed, 12)).unwrap();
            assert!(e.iter().all(|x| x.is_finite()));
            assert!((norm(&e) - 1.0).abs() < 1e-6);
            let doubled: Vec<f64> = input(seed, 12).iter().map(|x| 2.0 * x).collect();
            let e2 = net.forward(&doubled).unwrap();
            assert!((norm(&e2) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_bit_stable() {
        let a = small().forward(&input(3, 12)).unwrap();
        let b = small().forward(&input(3, 12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dead_network_reports_zero_vector() {
        let mut net = small();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert!(matches!(net.forward(&input(1, 12)), Err(Error::ZeroVector)));
        assert!(matches!(
            small().forward(&[1.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tensor_ranges_partition_params() {
        let net = small();
        let mut end = 0;
        for t in Tensor::ALL {
            let r = net.tensor_range(t);
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, net.params().len());
        assert_eq!(net.tensor(Tensor::B2).len(), 6);
    }

    #[test]
    fn model_bytes_round_trip_after_rounding() {
        let mut net = small();
        net.round_to_f32();
        let back = ProjectionNet::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn model_bytes_reject_garbage() {
        let net = small();
        let mut bytes = net.to_bytes();
        assert!(ProjectionNet::from_bytes(&bytes[..10]).is_err());
        bytes.pop();
        assert!(ProjectionNet::from_bytes(&bytes).is_err());
        let mut bad = net.to_bytes();
        bad[0] = b'X';
        assert!(ProjectionNet::from_bytes(&bad).is_err());
    }
}
