//! Learnable adapters over frozen embeddings.
//!
//! [`attention`] holds the residual self-attention adapter that re-weights a
//! class's sentences before averaging them into a prototype; [`mlp`] holds the
//! bottleneck MLP baseline applied to image or text features. Parameters are
//! kept in `f64` and every forward pass records what its backward pass needs.

pub mod attention;
pub mod checkpoint;
pub mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::{
    adapted_classifier, attention_forward, AttentionAdapter, AttentionGradients, AttentionMaps,
    SelfAttentionParams,
};
pub use mlp::{mlp_adapter_text, mlp_adapter_visual, MlpAdapter, MlpAdapterParams, MlpGradients};

/// Hyperparameters shared by the adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Residual ratio of the attention adapter (0 = pure zero-shot ensemble).
    pub beta: f64,
    /// Residual ratio of the visual MLP adapter.
    pub alpha: f64,
    pub heads: usize,
    pub seed: u64,
    /// Multiplier on the `1/sqrt(D)` uniform init bound.
    pub init_scale: f64,
    /// Bottleneck reduction of the MLP adapter.
    pub reduction: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            alpha: 0.2,
            heads: 1,
            seed: 0,
            init_scale: 1.0,
            reduction: 4,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.heads == 0 || self.reduction == 0 {
            return Err(Error::InvalidInput("heads and reduction must be >= 1".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::InvalidInput("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Named flat tensors, in a fixed order. Implemented by parameter sets and
/// their same-shaped gradients so the optimizer can walk them pairwise.
pub trait Parameters {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; len];
    }
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

/// `out[m x n] = a[m x k] * b[k x n] + bias[n]`.
pub(crate) fn affine(a: &[f64], b: &[f64], bias: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        out.extend_from_slice(bias);
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (d, &w) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *d += x * w;
            }
        }
    }
    out
}

/// `grad_w[k x n] += a^T[k x m] * g[m x n]` and `grad_b[n] += colsum(g)`.
pub(crate) fn accumulate_affine_grads(
    a: &[f64],
    g: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for (db, &gv) in grad_b.iter_mut().zip(g_row) {
            *db += gv;
        }
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (dw, &gv) in grad_w[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                *dw += x * gv;
            }
        }
    }
}

/// `out[m x k] = g[m x n] * w^T` for `w` stored `k x n`.
pub(crate) fn matmul_transposed(g: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = g_row
                .iter()
                .zip(&w[p * n..(p + 1) * n])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    out
}
