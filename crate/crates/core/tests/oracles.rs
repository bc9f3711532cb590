mod common;

use common::*;
use vdt_core::ensemble::score_ensemble_logits;
use vdt_core::{
    adapted_classifier, attention_forward, logits, mean_prototype, mlp_adapter_visual, predict, AdapterConfig,
    ClassifierWeights, MlpAdapterParams,
};

fn weights_rows(w: &ClassifierWeights) -> Vec<Vec<f64>> {
    w.iter_rows().map(|r| r.iter().map(|&x| x as f64).collect()).collect()
}

#[test]
fn mean_prototype_matches_loops() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let bank = random_bank(&mut r, 1 + seed as usize % 6, 5, 2 + seed as usize % 15);
        let got = weights_rows(&mean_prototype(&bank).unwrap());
        for (g, want) in got.iter().zip(reference_mean_prototypes(&bank)) {
            assert!(max_abs_diff(g, &want) < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn logits_match_loops() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let bank = random_bank(&mut r, 2 + seed as usize % 5, 5, 4 + seed as usize % 13);
        let data = random_features(&mut r, 7, &bank);
        let w = mean_prototype(&bank).unwrap();
        let f = vdt_core::l2_normalize(data.features()).unwrap();
        let got = logits(&f, &w, 0.01).unwrap();
        let want = reference_logits(data.features(), &weights_rows(&w), 0.01);
        for (i, row) in want.iter().enumerate() {
            // logits are scaled by 1/tau = 100
            assert!(max_abs_diff(got.row(i), row) < 1e-4, "seed {seed}");
        }
    }
}

#[test]
fn score_ensemble_matches_loops() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let bank = random_bank(&mut r, 2 + seed as usize % 5, 5, 4 + seed as usize % 13);
        let data = random_features(&mut r, 9, &bank);
        let got = score_ensemble_logits(data.features(), &bank, 1.0).unwrap();
        let want = reference_score_ensemble(data.features(), &bank, 1.0);
        for (i, row) in want.iter().enumerate() {
            assert!(max_abs_diff(got.row(i), row) < 1e-6, "seed {seed}");
        }
        let preds = predict(&got).unwrap();
        let ref_preds: Vec<usize> = want.iter().map(|r| first_argmax(r)).collect();
        assert_eq!(preds, ref_preds);
    }
}

#[test]
fn attention_layer_matches_loops() {
    for (seed, heads) in [(0u64, 1usize), (1, 2), (2, 4), (3, 1), (4, 2)] {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, 5, 8);
        let p = random_params(8, heads, seed);
        let (out, maps) = attention_forward(&p, &x).unwrap();
        let (want, want_maps) = reference_attention(&p, &rows64(&x));
        assert!(max_abs_diff(&out, &want.concat()) < 1e-10);
        for h in 0..heads {
            assert!(max_abs_diff(maps.head(h), &want_maps[h].concat()) < 1e-12);
        }
    }
}

#[test]
fn adapted_classifier_matches_loops() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let heads = [1, 2, 4][seed as usize % 3];
        let bank = random_bank(&mut r, 4, 5, 8);
        let p = random_params(8, heads, seed);
        for beta in [0.0, 0.3, 1.0] {
            let got = weights_rows(&adapted_classifier(&p, &bank, beta).unwrap());
            for (g, want) in got.iter().zip(reference_adapted(&p, &bank, beta)) {
                assert!(max_abs_diff(g, &want) < 1e-6, "seed {seed} beta {beta}");
            }
        }
    }
}

#[test]
fn visual_mlp_matches_loops() {
    let mut r = rng(9);
    let f = gaussian_matrix(&mut r, 6, 8);
    let cfg = AdapterConfig {
        reduction: 2,
        seed: 3,
        ..Default::default()
    };
    let p = MlpAdapterParams::init(8, &cfg).unwrap();
    let alpha = 0.4;
    let got = mlp_adapter_visual(&p, &f, alpha).unwrap();
    for (i, row) in rows64(&f).iter().enumerate() {
        let x = unit(row);
        let mut hidden = vec![0.0; p.hidden];
        for j in 0..p.hidden {
            let mut s = p.b1[j];
            for a in 0..8 {
                s += x[a] * p.w1[a * p.hidden + j];
            }
            hidden[j] = s.max(0.0);
        }
        let mut blend = vec![0.0; 8];
        for c in 0..8 {
            let mut s = p.b2[c];
            for j in 0..p.hidden {
                s += hidden[j] * p.w2[j * 8 + c];
            }
            blend[c] = alpha * s + (1.0 - alpha) * x[c];
        }
        let want = unit(&blend);
        let have: Vec<f64> = got.row(i).iter().map(|&v| v as f64).collect();
        assert!(max_abs_diff(&have, &want) < 1e-6);
    }
}
