//! Residual self-attention adapter over each class's sentence embeddings.
//!
//! For class `k` with unit sentence rows `X` (`M_k x D`):
//!
//! ```text
//! avg    = mean_m X_m
//! O      = softmax(Q K^T / sqrt(D / heads)) V W_o + b_o,   Q = X W_q + b_q, ...
//! amean  = mean_m O_m
//! proto  = normalize(beta * amean + (1 - beta) * avg)
//! ```
//!
//! Attention only mixes sentences of the same class and uses no positional
//! encoding, so each prototype is invariant to sentence order.

use serde::{Deserialize, Serialize};

use super::{
    accumulate_affine_grads, affine, identity, matmul_transposed, seeded_rng, uniform_init,
    AdapterConfig, Parameters,
};
use crate::embedding::{softmax, ClassifierWeights, EmbeddingMatrix};
use crate::ensemble::{normalized_mean, renormalize, SentenceBank};
use crate::error::{Error, Result};

/// Projection weights (`D x D`, applied as `x W`) and biases of one attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttentionParams {
    pub dim: usize,
    pub heads: usize,
    pub w_q: Vec<f64>,
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl SelfAttentionParams {
    pub fn zeros(dim: usize, heads: usize) -> Result<Self> {
        if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidInput(format!(
                "dim {dim} must be a positive multiple of heads {heads}"
            )));
        }
        let square = vec![0.0; dim * dim];
        let vector = vec![0.0; dim];
        Ok(Self {
            dim,
            heads,
            w_q: square.clone(),
            b_q: vector.clone(),
            w_k: square.clone(),
            b_k: vector.clone(),
            w_v: square.clone(),
            b_v: vector.clone(),
            w_o: square,
            b_o: vector,
        })
    }

    /// Uniform `[-s/sqrt(D), s/sqrt(D))` weights, zero biases.
    pub fn init(dim: usize, cfg: &AdapterConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(dim, cfg.heads)?;
        let mut rng = seeded_rng(cfg.seed);
        let bound = cfg.init_scale / (dim as f64).sqrt();
        p.w_q = uniform_init(&mut rng, dim * dim, bound);
        p.w_k = uniform_init(&mut rng, dim * dim, bound);
        p.w_v = uniform_init(&mut rng, dim * dim, bound);
        p.w_o = uniform_init(&mut rng, dim * dim, bound);
        Ok(p)
    }

    /// Zero query/key weights with identity value/output projections:
    /// attention is uniform and every output row is the input mean.
    pub fn uniform_identity(dim: usize, heads: usize) -> Result<Self> {
        let mut p = Self::zeros(dim, heads)?;
        p.w_v = identity(dim);
        p.w_o = identity(dim);
        Ok(p)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = Self::zeros(self.dim, self.heads)?;
        for ((name, have), (_, want)) in self.tensors().into_iter().zip(fresh.tensors()) {
            if have.len() != want.len() {
                return Err(Error::DimMismatch {
                    context: name,
                    expected: want.len(),
                    found: have.len(),
                });
            }
        }
        if !self.all_finite() {
            return Err(Error::InvalidInput("attention parameters are not finite".into()));
        }
        Ok(())
    }
}

impl Parameters for SelfAttentionParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_k", &mut self.w_k),
            ("b_k", &mut self.b_k),
            ("w_v", &mut self.w_v),
            ("b_v", &mut self.b_v),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// Attention probabilities for one sequence: `heads` row-stochastic `M x M` maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMaps {
    pub heads: usize,
    pub len: usize,
    pub values: Vec<f64>,
}

impl AttentionMaps {
    pub fn head(&self, h: usize) -> &[f64] {
        let sq = self.len * self.len;
        &self.values[h * sq..(h + 1) * sq]
    }

    /// Head-averaged `M x M` map.
    pub fn mean(&self) -> Vec<f64> {
        let sq = self.len * self.len;
        let mut out = vec![0.0; sq];
        for h in 0..self.heads {
            for (o, v) in out.iter_mut().zip(self.head(h)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.heads as f64);
        out
    }
}

/// Everything the backward pass needs from one sequence.
#[derive(Debug, Clone)]
struct SequenceTrace {
    len: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: AttentionMaps,
    mixed: Vec<f64>,
    out: Vec<f64>,
}

fn forward_sequence(p: &SelfAttentionParams, x: &[f64], len: usize) -> SequenceTrace {
    let d = p.dim;
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(x, &p.w_q, &p.b_q, len, d, d);
    let k = affine(x, &p.w_k, &p.b_k, len, d, d);
    let v = affine(x, &p.w_v, &p.b_v, len, d, d);
    let mut attn = vec![0.0; p.heads * len * len];
    let mut mixed = vec![0.0; len * d];
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..len {
            let qi = &q[i * d..(i + 1) * d][cols.clone()];
            let scores: Vec<f64> = (0..len)
                .map(|j| {
                    let kj = &k[j * d..(j + 1) * d][cols.clone()];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                })
                .collect();
            let probs = softmax(&scores);
            let dst = &mut mixed[i * d..(i + 1) * d][cols.clone()];
            for (j, &a) in probs.iter().enumerate() {
                let vj = &v[j * d..(j + 1) * d][cols.clone()];
                for (m, &vv) in dst.iter_mut().zip(vj) {
                    *m += a * vv;
                }
            }
            attn[(h * len + i) * len..(h * len + i + 1) * len].copy_from_slice(&probs);
        }
    }
    let out = affine(&mixed, &p.w_o, &p.b_o, len, d, d);
    SequenceTrace {
        len,
        x: x.to_vec(),
        q,
        k,
        v,
        attn: AttentionMaps {
            heads: p.heads,
            len,
            values: attn,
        },
        mixed,
        out,
    }
}

/// Backpropagates `d_out` (`M x D`) through one sequence, accumulating into `grads`.
fn backward_sequence(p: &SelfAttentionParams, t: &SequenceTrace, d_out: &[f64], grads: &mut SelfAttentionParams) {
    let d = p.dim;
    let dh = p.head_dim();
    let len = t.len;
    let scale = 1.0 / (dh as f64).sqrt();

    accumulate_affine_grads(&t.mixed, d_out, &mut grads.w_o, &mut grads.b_o, len, d, d);
    let d_mixed = matmul_transposed(d_out, &p.w_o, len, d, d);

    let mut d_q = vec![0.0; len * d];
    let mut d_k = vec![0.0; len * d];
    let mut d_v = vec![0.0; len * d];
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        let a = t.attn.head(h);
        for i in 0..len {
            let dm = &d_mixed[i * d..(i + 1) * d][cols.clone()];
            let a_row = &a[i * len..(i + 1) * len];
            // dA_ij = dmixed_i . v_j ; dV_j += A_ij dmixed_i
            let mut d_a = vec![0.0; len];
            for j in 0..len {
                let vj = &t.v[j * d..(j + 1) * d][cols.clone()];
                d_a[j] = dm.iter().zip(vj).map(|(x, y)| x * y).sum();
                let dvj = &mut d_v[j * d..(j + 1) * d][cols.clone()];
                for (g, &x) in dvj.iter_mut().zip(dm) {
                    *g += a_row[j] * x;
                }
            }
            let weighted: f64 = a_row.iter().zip(&d_a).map(|(x, y)| x * y).sum();
            let qi: Vec<f64> = t.q[i * d..(i + 1) * d][cols.clone()].to_vec();
            for j in 0..len {
                let ds = a_row[j] * (d_a[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj: Vec<f64> = t.k[j * d..(j + 1) * d][cols.clone()].to_vec();
                for (g, &kv) in d_q[i * d..(i + 1) * d][cols.clone()].iter_mut().zip(&kj) {
                    *g += ds * kv;
                }
                for (g, &qv) in d_k[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(&qi) {
                    *g += ds * qv;
                }
            }
        }
    }
    accumulate_affine_grads(&t.x, &d_q, &mut grads.w_q, &mut grads.b_q, len, d, d);
    accumulate_affine_grads(&t.x, &d_k, &mut grads.w_k, &mut grads.b_k, len, d, d);
    accumulate_affine_grads(&t.x, &d_v, &mut grads.w_v, &mut grads.b_v, len, d, d);
}

/// Runs one attention layer over the rows of `x` (used as-is, not normalized).
///
/// Returns the `M x D` outputs and the attention maps.
pub fn attention_forward(
    p: &SelfAttentionParams,
    x: &EmbeddingMatrix,
) -> Result<(Vec<f64>, AttentionMaps)> {
    if x.dim() != p.dim {
        return Err(Error::DimMismatch {
            context: "sentence dim vs adapter dim",
            expected: p.dim,
            found: x.dim(),
        });
    }
    let t = forward_sequence(p, &x.to_f64(), x.rows());
    Ok((t.out, t.attn))
}

#[derive(Debug, Clone)]
struct ClassTrace {
    seq: SequenceTrace,
    avg: Vec<f64>,
    amean: Vec<f64>,
    blend_norm: f64,
    proto: Vec<f64>,
}

/// Adapter forward pass over a whole bank, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AdapterTrace {
    beta: f64,
    classes: Vec<ClassTrace>,
}

impl AdapterTrace {
    /// Unit prototypes, `K x D` row-major.
    pub fn prototypes(&self) -> Vec<f64> {
        self.classes.iter().flat_map(|c| c.proto.iter().copied()).collect()
    }

    pub fn attention(&self, class: usize) -> &AttentionMaps {
        &self.classes[class].seq.attn
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

fn trace_bank(p: &SelfAttentionParams, bank: &SentenceBank, beta: f64) -> Result<AdapterTrace> {
    if bank.dim() != p.dim {
        return Err(Error::DimMismatch {
            context: "sentence dim vs adapter dim",
            expected: p.dim,
            found: bank.dim(),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta = {beta} is outside [0, 1]")));
    }
    let classes = bank
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, block)| {
            let emb = block.embeddings();
            let x = emb.normalized_f64()?;
            let avg = normalized_mean(emb)?;
            let seq = forward_sequence(p, &x, emb.rows());
            let m = emb.rows() as f64;
            let mut amean = vec![0.0; p.dim];
            for row in seq.out.chunks_exact(p.dim) {
                for (a, v) in amean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            amean.iter_mut().for_each(|a| *a /= m);
            let blend: Vec<f64> = amean
                .iter()
                .zip(&avg)
                .map(|(a, v)| beta * a + (1.0 - beta) * v)
                .collect();
            let proto = renormalize(&blend, k)?;
            let blend_norm = blend.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(ClassTrace {
                seq,
                avg,
                amean,
                blend_norm,
                proto,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdapterTrace { beta, classes })
}

/// Adapted prototypes for every class of `bank`.
pub fn adapted_classifier(
    p: &SelfAttentionParams,
    bank: &SentenceBank,
    beta: f64,
) -> Result<ClassifierWeights> {
    let trace = trace_bank(p, bank, beta)?;
    ClassifierWeights::from_unit_rows(bank.num_classes(), p.dim, &trace.prototypes())
}

/// Gradients of a scalar loss with respect to every attention parameter,
/// plus the diagnostic derivative with respect to the residual ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub params: SelfAttentionParams,
    pub beta: f64,
}

/// Attention parameters together with the trace of their latest forward pass.
#[derive(Debug, Clone)]
pub struct AttentionAdapter {
    params: SelfAttentionParams,
    trace: Option<AdapterTrace>,
}

impl AttentionAdapter {
    pub fn new(params: SelfAttentionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            trace: None,
        })
    }

    pub fn params(&self) -> &SelfAttentionParams {
        &self.params
    }

    /// Mutable access invalidates the recorded trace.
    pub fn params_mut(&mut self) -> &mut SelfAttentionParams {
        self.trace = None;
        &mut self.params
    }

    pub fn into_params(self) -> SelfAttentionParams {
        self.params
    }

    pub fn trace(&self) -> Option<&AdapterTrace> {
        self.trace.as_ref()
    }

    /// Computes unit prototypes (`K x D`) and records the trace.
    pub fn forward(&mut self, bank: &SentenceBank, beta: f64) -> Result<Vec<f64>> {
        let trace = trace_bank(&self.params, bank, beta)?;
        let protos = trace.prototypes();
        self.trace = Some(trace);
        Ok(protos)
    }

    /// Backpropagates `upstream = dL/dprototypes` (`K x D`) through the last forward pass.
    pub fn backward(&self, upstream: &[f64]) -> Result<AttentionGradients> {
        let trace = self.trace.as_ref().ok_or(Error::NoForwardTrace)?;
        let p = &self.params;
        let d = p.dim;
        if upstream.len() != trace.classes.len() * d {
            return Err(Error::DimMismatch {
                context: "upstream gradient length",
                expected: trace.classes.len() * d,
                found: upstream.len(),
            });
        }
        let beta = trace.beta;
        let mut grads = SelfAttentionParams::zeros(d, p.heads)?;
        let mut d_beta = 0.0;
        for (c, g) in trace.classes.iter().zip(upstream.chunks_exact(d)) {
            // d/du of u/|u|: (g - w (w.g)) / |u|
            let wg: f64 = c.proto.iter().zip(g).map(|(w, g)| w * g).sum();
            let d_blend: Vec<f64> = c
                .proto
                .iter()
                .zip(g)
                .map(|(w, g)| (g - w * wg) / c.blend_norm)
                .collect();
            d_beta += d_blend
                .iter()
                .zip(c.amean.iter().zip(&c.avg))
                .map(|(g, (a, v))| g * (a - v))
                .sum::<f64>();
            if beta == 0.0 {
                continue;
            }
            let len = c.seq.len;
            let row: Vec<f64> = d_blend.iter().map(|g| beta * g / len as f64).collect();
            let d_out: Vec<f64> = row.iter().copied().cycle().take(len * d).collect();
            backward_sequence(p, &c.seq, &d_out, &mut grads);
        }
        Ok(AttentionGradients {
            params: grads,
            beta: d_beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{mean_prototype, ClassBlock};

    fn toy_bank() -> SentenceBank {
        let b0 = EmbeddingMatrix::from_rows(&[[1.0f32, 0.2, 0.0, 0.1], [0.3, 1.0, 0.0, 0.0], [0.0, 0.1, 0.9, 0.4]])
            .unwrap();
        let b1 = EmbeddingMatrix::from_rows(&[[0.0f32, 0.0, 1.0, 0.5], [0.2, 0.0, 0.1, 1.0]]).unwrap();
        let block = |m: EmbeddingMatrix| {
            let texts = (0..m.rows()).map(|i| format!("t{i}")).collect();
            ClassBlock::new(texts, m, None).unwrap()
        };
        SentenceBank::new(vec!["a".into(), "b".into()], vec![block(b0), block(b1)]).unwrap()
    }

    #[test]
    fn uniform_identity_attention_averages_rows() {
        let p = SelfAttentionParams::uniform_identity(4, 1).unwrap();
        let x = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0, 3.0, 4.0], [3.0, 2.0, 1.0, 0.0], [2.0, 2.0, 2.0, 2.0]])
            .unwrap();
        let (out, attn) = attention_forward(&p, &x).unwrap();
        assert!(attn.values.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        for row in out.chunks_exact(4) {
            for (v, want) in row.iter().zip([2.0, 2.0, 2.0, 2.0]) {
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let cfg = AdapterConfig {
            seed: 3,
            ..Default::default()
        };
        let mut p = SelfAttentionParams::init(4, &cfg).unwrap();
        p.b_v = vec![0.1, -0.2, 0.3, 0.0];
        p.b_o = vec![0.5, 0.0, 0.0, -0.5];
        let x = EmbeddingMatrix::from_rows(&[[0.5f32, -1.0, 2.0, 0.25]]).unwrap();
        let (out, attn) = attention_forward(&p, &x).unwrap();
        assert_eq!(attn.values, vec![1.0]);
        let v = affine(&x.to_f64(), &p.w_v, &p.b_v, 1, 4, 4);
        let want = affine(&v, &p.w_o, &p.b_o, 1, 4, 4);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_zero_is_the_ensemble_prototype() {
        let bank = toy_bank();
        let p = SelfAttentionParams::init(4, &AdapterConfig::default()).unwrap();
        let adapted = adapted_classifier(&p, &bank, 0.0).unwrap();
        assert_eq!(adapted, mean_prototype(&bank).unwrap());
    }

    #[test]
    fn beta_one_with_uniform_identity_is_the_ensemble_prototype() {
        let bank = toy_bank();
        let p = SelfAttentionParams::uniform_identity(4, 1).unwrap();
        let adapted = adapted_classifier(&p, &bank, 1.0).unwrap();
        let mean = mean_prototype(&bank).unwrap();
        for (a, b) in adapted.values().iter().zip(mean.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_requires_forward() {
        let p = SelfAttentionParams::uniform_identity(4, 1).unwrap();
        let mut adapter = AttentionAdapter::new(p).unwrap();
        assert!(matches!(adapter.backward(&[0.0; 8]), Err(Error::NoForwardTrace)));
        adapter.forward(&toy_bank(), 0.5).unwrap();
        assert!(adapter.backward(&[0.0; 8]).is_ok());
        adapter.params_mut().b_o[0] = 1.0;
        assert!(matches!(adapter.backward(&[0.0; 8]), Err(Error::NoForwardTrace)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = SelfAttentionParams::init(4, &AdapterConfig::default()).unwrap();
        let mut adapter = AttentionAdapter::new(p).unwrap();
        adapter.forward(&toy_bank(), 0.7).unwrap();
        let g = adapter.backward(&[0.0; 8]).unwrap();
        assert!(g.params.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
        assert_eq!(g.beta, 0.0);
    }

    #[test]
    fn beta_gradient_is_projection_onto_adapted_minus_average() {
        let bank = toy_bank();
        let p = SelfAttentionParams::init(4, &AdapterConfig { seed: 9, ..Default::default() }).unwrap();
        let mut adapter = AttentionAdapter::new(p).unwrap();
        adapter.forward(&bank, 0.4).unwrap();
        let upstream = [0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.0, 0.2];
        let g = adapter.backward(&upstream).unwrap();
        let trace = adapter.trace().unwrap();
        // Chain through the renormalization by hand.
        let mut want = 0.0;
        for (c, up) in trace.classes.iter().zip(upstream.chunks(4)) {
            let wg: f64 = c.proto.iter().zip(up).map(|(w, u)| w * u).sum();
            for i in 0..4 {
                let du = (up[i] - c.proto[i] * wg) / c.blend_norm;
                want += du * (c.amean[i] - c.avg[i]);
            }
        }
        assert!((g.beta - want).abs() < 1e-12);
    }

    #[test]
    fn heads_must_divide_dim() {
        assert!(SelfAttentionParams::zeros(6, 4).is_err());
        assert!(SelfAttentionParams::zeros(8, 4).is_ok());
    }
}
