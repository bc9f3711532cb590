//! Random instances and plain double-loop references shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vdt_core::{
    synthetic::{synthetic_task, SyntheticConfig},
    AdapterConfig, ClassBlock, EmbeddingMatrix, LabeledFeatures, SelfAttentionParams, SentenceBank,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let values = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    EmbeddingMatrix::new(rows, dim, values).unwrap()
}

/// `k` classes with between 1 and `m_max` sentences each.
pub fn random_bank(rng: &mut ChaCha8Rng, k: usize, m_max: usize, dim: usize) -> SentenceBank {
    let names = (0..k).map(|c| format!("c{c}")).collect();
    let blocks = (0..k)
        .map(|_| {
            let m = rng.random_range(1..=m_max);
            let texts = (0..m).map(|i| format!("s{i}")).collect();
            ClassBlock::new(texts, gaussian_matrix(rng, m, dim), None).unwrap()
        })
        .collect();
    SentenceBank::new(names, blocks).unwrap()
}

/// Same number of sentences per class, with attribute names `a0, a1, ...`.
pub fn attributed_bank(rng: &mut ChaCha8Rng, k: usize, m: usize, dim: usize) -> SentenceBank {
    let attrs: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
    let names = (0..k).map(|c| format!("c{c}")).collect();
    let blocks = (0..k)
        .map(|_| ClassBlock::new(attrs.clone(), gaussian_matrix(rng, m, dim), Some(attrs.clone())).unwrap())
        .collect();
    SentenceBank::new(names, blocks).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, bank: &SentenceBank) -> LabeledFeatures {
    let k = bank.num_classes();
    let labels = (0..n).map(|i| i % k).collect();
    LabeledFeatures::new(gaussian_matrix(rng, n, bank.dim()), labels, bank.class_names().to_vec()).unwrap()
}

pub fn random_params(dim: usize, heads: usize, seed: u64) -> SelfAttentionParams {
    let cfg = AdapterConfig {
        heads,
        seed,
        init_scale: 2.0,
        ..Default::default()
    };
    let mut p = SelfAttentionParams::init(dim, &cfg).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for b in [&mut p.b_q, &mut p.b_k, &mut p.b_v, &mut p.b_o] {
        b.iter_mut().for_each(|v| *v = 0.1 * r.sample::<f64, _>(StandardNormal));
    }
    p
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let mut n = 0.0;
    for x in v {
        n += x * x;
    }
    let n = n.sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn rows64(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&x| x as f64).collect())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out.iter().map(|x| x / rows.len() as f64).collect()
}

pub fn reference_mean_prototypes(bank: &SentenceBank) -> Vec<Vec<f64>> {
    bank.blocks()
        .iter()
        .map(|b| {
            let units: Vec<Vec<f64>> = rows64(b.embeddings()).iter().map(|r| unit(r)).collect();
            unit(&mean_rows(&units))
        })
        .collect()
}

/// `cos(f_n, w_k) / tau` for every image and class.
pub fn reference_logits(features: &EmbeddingMatrix, protos: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    rows64(features)
        .iter()
        .map(|f| {
            let f = unit(f);
            protos.iter().map(|w| dot(&f, &unit(w)) / tau).collect()
        })
        .collect()
}

/// Per-class mean of per-sentence cosine similarity, over `tau`.
pub fn reference_score_ensemble(features: &EmbeddingMatrix, bank: &SentenceBank, tau: f64) -> Vec<Vec<f64>> {
    rows64(features)
        .iter()
        .map(|f| {
            let f = unit(f);
            bank.blocks()
                .iter()
                .map(|b| {
                    let rows = rows64(b.embeddings());
                    let mut s = 0.0;
                    for r in &rows {
                        s += dot(&f, &unit(r));
                    }
                    s / rows.len() as f64 / tau
                })
                .collect()
        })
        .collect()
}

pub fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

/// Projects `x` (`M x D`) through `w` (`D x D`, applied as `x w`) plus `b`.
fn project(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let d = b.len();
    x.iter()
        .map(|row| {
            (0..d)
                .map(|c| {
                    let mut s = b[c];
                    for a in 0..d {
                        s += row[a] * w[a * d + c];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Multi-head attention written out loop by loop; returns outputs and per-head maps.
pub fn reference_attention(p: &SelfAttentionParams, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d = p.dim;
    let dh = d / p.heads;
    let m = x.len();
    let q = project(x, &p.w_q, &p.b_q);
    let k = project(x, &p.w_k, &p.b_k);
    let v = project(x, &p.w_v, &p.b_v);
    let mut mixed = vec![vec![0.0; d]; m];
    let mut maps = Vec::new();
    for h in 0..p.heads {
        let mut map = vec![vec![0.0; m]; m];
        for i in 0..m {
            let mut s = vec![0.0; m];
            for j in 0..m {
                for c in h * dh..(h + 1) * dh {
                    s[j] += q[i][c] * k[j][c];
                }
                s[j] /= (dh as f64).sqrt();
            }
            let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - top).exp()).sum();
            for j in 0..m {
                map[i][j] = (s[j] - top).exp() / z;
                for c in h * dh..(h + 1) * dh {
                    mixed[i][c] += map[i][j] * v[j][c];
                }
            }
        }
        maps.push(map);
    }
    (project(&mixed, &p.w_o, &p.b_o), maps)
}

pub fn reference_adapted(p: &SelfAttentionParams, bank: &SentenceBank, beta: f64) -> Vec<Vec<f64>> {
    bank.blocks()
        .iter()
        .map(|b| {
            let x: Vec<Vec<f64>> = rows64(b.embeddings()).iter().map(|r| unit(r)).collect();
            let avg = mean_rows(&x);
            let (out, _) = reference_attention(p, &x);
            let amean = mean_rows(&out);
            let blend: Vec<f64> = amean.iter().zip(&avg).map(|(a, v)| beta * a + (1.0 - beta) * v).collect();
            unit(&blend)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(path).unwrap()
}

/// Outcome of the base-to-new synthetic benchmark for one seed.
pub struct SyntheticRun {
    pub train_accuracy: f64,
    pub baseline_new: f64,
    pub adapted_new: f64,
}

/// Trains on the base half of the default synthetic task and scores the new half.
pub fn synthetic_base_to_new(seed: u64) -> SyntheticRun {
    use vdt_core::{adapted_classifier, mean_prototype, split_base_new, train_adapter, zero_shot_eval, TrainConfig};
    let task = synthetic_task(&SyntheticConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let split = split_base_new(task.bank.class_names(), "synthetic", seed).unwrap();
    let train = task.train.restrict_to_classes(&split.base_classes).unwrap();
    let cfg = TrainConfig {
        seed,
        ..Default::default()
    };
    let (params, report) = train_adapter(&cfg, &train, &task.bank).unwrap();
    let test_new = task.test.restrict_to_classes(&split.new_classes).unwrap();
    let bank_new = task.bank.subset(&split.new_classes).unwrap();
    let tau = cfg.tau;
    SyntheticRun {
        train_accuracy: report.train_accuracy,
        baseline_new: zero_shot_eval(&test_new, &mean_prototype(&bank_new).unwrap(), tau).unwrap(),
        adapted_new: zero_shot_eval(&test_new, &adapted_classifier(&params, &bank_new, cfg.beta).unwrap(), tau).unwrap(),
    }
}
