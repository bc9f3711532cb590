//! Bottleneck MLP adapter (linear, ReLU, linear) with a residual blend.
//!
//! Inputs are unit-normalized first; the blended output is re-normalized:
//! `out = normalize(alpha * mlp(x) + (1 - alpha) * x)`. The same function serves
//! image features (ratio `alpha`) and classifier rows (ratio `beta`).

use serde::{Deserialize, Serialize};

use super::{
    accumulate_affine_grads, affine, matmul_transposed, seeded_rng, uniform_init, AdapterConfig,
    Parameters,
};
use crate::embedding::{unit_vector, ClassifierWeights, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpAdapterParams {
    pub dim: usize,
    pub hidden: usize,
    /// `D x hidden`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden x D`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpAdapterParams {
    pub fn zeros(dim: usize, reduction: usize) -> Result<Self> {
        if dim == 0 || reduction == 0 || !dim.is_multiple_of(reduction) {
            return Err(Error::InvalidInput(format!(
                "reduction {reduction} must divide dim {dim}"
            )));
        }
        let hidden = dim / reduction;
        Ok(Self {
            dim,
            hidden,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * dim],
            b2: vec![0.0; dim],
        })
    }

    pub fn init(dim: usize, cfg: &AdapterConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(dim, cfg.reduction)?;
        let mut rng = seeded_rng(cfg.seed);
        p.w1 = uniform_init(&mut rng, dim * p.hidden, cfg.init_scale / (dim as f64).sqrt());
        p.w2 = uniform_init(&mut rng, p.hidden * dim, cfg.init_scale / (p.hidden as f64).sqrt());
        Ok(p)
    }

    pub fn reduction(&self) -> usize {
        self.dim / self.hidden
    }
}

impl Parameters for MlpAdapterParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

#[derive(Debug, Clone)]
struct MlpTrace {
    rows: usize,
    alpha: f64,
    x: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    mlp_out: Vec<f64>,
    blend_norms: Vec<f64>,
    out: Vec<f64>,
}

fn forward(p: &MlpAdapterParams, x: &[f64], rows: usize, alpha: f64) -> Result<MlpTrace> {
    let d = p.dim;
    let pre = affine(x, &p.w1, &p.b1, rows, d, p.hidden);
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mlp_out = affine(&hidden, &p.w2, &p.b2, rows, p.hidden, d);
    let mut out = Vec::with_capacity(rows * d);
    let mut blend_norms = Vec::with_capacity(rows);
    for i in 0..rows {
        let blend: Vec<f64> = mlp_out[i * d..(i + 1) * d]
            .iter()
            .zip(&x[i * d..(i + 1) * d])
            .map(|(a, f)| alpha * a + (1.0 - alpha) * f)
            .collect();
        let unit = unit_vector(&blend).ok_or(Error::ZeroRow { index: i })?;
        blend_norms.push(blend.iter().map(|v| v * v).sum::<f64>().sqrt());
        out.extend(unit);
    }
    Ok(MlpTrace {
        rows,
        alpha,
        x: x.to_vec(),
        pre,
        hidden,
        mlp_out,
        blend_norms,
        out,
    })
}

fn check(p: &MlpAdapterParams, dim: usize, alpha: f64) -> Result<()> {
    if dim != p.dim {
        return Err(Error::DimMismatch {
            context: "feature dim vs adapter dim",
            expected: p.dim,
            found: dim,
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("ratio {alpha} is outside [0, 1]")));
    }
    Ok(())
}

/// Adapts image features.
pub fn mlp_adapter_visual(
    p: &MlpAdapterParams,
    f: &EmbeddingMatrix,
    alpha: f64,
) -> Result<EmbeddingMatrix> {
    check(p, f.dim(), alpha)?;
    let t = forward(p, &f.normalized_f64()?, f.rows(), alpha)?;
    EmbeddingMatrix::from_f64(f.rows(), f.dim(), &t.out)
}

/// Adapts classifier rows (text side).
pub fn mlp_adapter_text(
    p: &MlpAdapterParams,
    w: &ClassifierWeights,
    beta: f64,
) -> Result<ClassifierWeights> {
    check(p, w.dim(), beta)?;
    let t = forward(p, &w.as_matrix().normalized_f64()?, w.classes(), beta)?;
    ClassifierWeights::from_unit_rows(w.classes(), w.dim(), &t.out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub params: MlpAdapterParams,
    pub alpha: f64,
}

/// MLP parameters plus the trace of their latest forward pass.
#[derive(Debug, Clone)]
pub struct MlpAdapter {
    params: MlpAdapterParams,
    trace: Option<MlpTrace>,
}

impl MlpAdapter {
    pub fn new(params: MlpAdapterParams) -> Self {
        Self {
            params,
            trace: None,
        }
    }

    pub fn params(&self) -> &MlpAdapterParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpAdapterParams {
        self.trace = None;
        &mut self.params
    }

    pub fn into_params(self) -> MlpAdapterParams {
        self.params
    }

    /// Adapted unit rows in `f64`, `rows x D`.
    pub fn forward(&mut self, f: &EmbeddingMatrix, alpha: f64) -> Result<Vec<f64>> {
        check(&self.params, f.dim(), alpha)?;
        let t = forward(&self.params, &f.normalized_f64()?, f.rows(), alpha)?;
        let out = t.out.clone();
        self.trace = Some(t);
        Ok(out)
    }

    pub fn backward(&self, upstream: &[f64]) -> Result<MlpGradients> {
        let t = self.trace.as_ref().ok_or(Error::NoForwardTrace)?;
        let p = &self.params;
        let d = p.dim;
        if upstream.len() != t.rows * d {
            return Err(Error::DimMismatch {
                context: "upstream gradient length",
                expected: t.rows * d,
                found: upstream.len(),
            });
        }
        let mut grads = MlpAdapterParams::zeros(d, p.reduction())?;
        let mut d_alpha = 0.0;
        let mut d_mlp = vec![0.0; t.rows * d];
        for i in 0..t.rows {
            let g = &upstream[i * d..(i + 1) * d];
            let w = &t.out[i * d..(i + 1) * d];
            let wg: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..d {
                let du = (g[j] - w[j] * wg) / t.blend_norms[i];
                d_alpha += du * (t.mlp_out[i * d + j] - t.x[i * d + j]);
                d_mlp[i * d + j] = t.alpha * du;
            }
        }
        accumulate_affine_grads(&t.hidden, &d_mlp, &mut grads.w2, &mut grads.b2, t.rows, p.hidden, d);
        let mut d_pre = matmul_transposed(&d_mlp, &p.w2, t.rows, p.hidden, d);
        for (g, &pre) in d_pre.iter_mut().zip(&t.pre) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        accumulate_affine_grads(&t.x, &d_pre, &mut grads.w1, &mut grads.b1, t.rows, d, p.hidden);
        Ok(MlpGradients {
            params: grads,
            alpha: d_alpha,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[[0.6f32, 0.8, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn alpha_zero_is_identity_on_unit_rows() {
        let p = MlpAdapterParams::init(4, &AdapterConfig::default()).unwrap();
        let f = unit_rows();
        assert_eq!(mlp_adapter_visual(&p, &f, 0.0).unwrap(), f);
    }

    #[test]
    fn zero_weights_collapse_to_bias() {
        let mut p = MlpAdapterParams::zeros(4, 2).unwrap();
        p.b2 = vec![0.0, 3.0, 4.0, 0.0];
        let out = mlp_adapter_visual(&p, &unit_rows(), 1.0).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[0.0, 0.6, 0.8, 0.0]);
        }
        let zero = MlpAdapterParams::zeros(4, 2).unwrap();
        assert!(matches!(
            mlp_adapter_visual(&zero, &unit_rows(), 1.0),
            Err(Error::ZeroRow { index: 0 })
        ));
    }

    #[test]
    fn reduction_must_divide_dim() {
        assert!(MlpAdapterParams::zeros(6, 4).is_err());
        assert_eq!(MlpAdapterParams::zeros(8, 4).unwrap().hidden, 2);
    }

    #[test]
    fn text_variant_shares_the_path() {
        let p = MlpAdapterParams::init(4, &AdapterConfig::default()).unwrap();
        let w = ClassifierWeights::new(2, 4, unit_rows().into_values(), true).unwrap();
        let a = mlp_adapter_text(&p, &w, 0.3).unwrap();
        let b = mlp_adapter_visual(&p, &unit_rows(), 0.3).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn backward_without_forward_fails() {
        let m = MlpAdapter::new(MlpAdapterParams::zeros(4, 2).unwrap());
        assert!(matches!(m.backward(&[0.0; 4]), Err(Error::NoForwardTrace)));
    }
}
