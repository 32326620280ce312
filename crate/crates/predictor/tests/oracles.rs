use ladder_core::EncodingRecipe;
use ladder_predictor::params::GruCell;
use ladder_predictor::{
    attention_forward, attention_weights, focal_loss, gru_forward, init_params, ladder_from_probs, FocalLossConfig,
    TagrnConfig, TagrnParams,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize(p: &mut TagrnParams, rng: &mut impl Rng) {
    for t in p.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0))
}

/// Affine map `x·W + b` by explicit loops.
fn affine(x: &[f64], w: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols()).map(|j| b[[0, j]] + (0..x.len()).map(|i| x[i] * w[[i, j]]).sum::<f64>()).collect()
}

#[test]
fn attention_matches_double_loop_reference() {
    let cfg = TagrnConfig { t_frames: 5, feature_dim: 8, heads: 2, ..TagrnConfig::new(2, 3) };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let mut params = init_params(&cfg, trial).unwrap();
        randomize(&mut params, &mut rng);
        let a = &params.attention;
        let x = random_matrix(&mut rng, 5, 8);
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| affine(r, &a.wq, &a.bq)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| affine(r, &a.wk, &a.bk)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| affine(r, &a.wv, &a.bv)).collect();
        let (t, d, n) = (5, 8, 2);
        let dh = d / n;
        let mut concat = vec![vec![0.0; d]; t];
        for h in 0..n {
            for i in 0..t {
                let mut logits = vec![0.0; t];
                for j in 0..t {
                    let mut dot = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        dot += q[i][c] * k[j][c];
                    }
                    logits[j] = dot / (d as f64).sqrt();
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for j in 0..t {
                    let w = (logits[j] - max).exp() / z;
                    for c in h * dh..(h + 1) * dh {
                        concat[i][c] += w * v[j][c];
                    }
                }
            }
        }
        let got = attention_forward(x.view(), a, &cfg).unwrap();
        for i in 0..t {
            let want = affine(&concat[i], &a.wo, &a.bo);
            for c in 0..d {
                assert!((got[[i, c]] - want[c]).abs() < 1e-12, "trial {trial} [{i},{c}]");
            }
        }
    }
}

#[test]
fn attention_weights_are_row_stochastic_and_equivariant() {
    let cfg = TagrnConfig { t_frames: 10, feature_dim: 16, heads: 4, ..TagrnConfig::new(2, 3) };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = init_params(&cfg, 2).unwrap();
    for _ in 0..100 {
        let x = random_matrix(&mut rng, 10, 16) * 3.0;
        for w in attention_weights(x.view(), &params.attention, &cfg).unwrap() {
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut rng);
        let xp = x.select(ndarray::Axis(0), &perm);
        let out = attention_forward(x.view(), &params.attention, &cfg).unwrap();
        let out_p = attention_forward(xp.view(), &params.attention, &cfg).unwrap();
        let want = out.select(ndarray::Axis(0), &perm);
        assert!((&out_p - &want).iter().all(|d| d.abs() < 1e-12));
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One GRU step with scalar loops over the `[h_prev, u]` layout.
fn scalar_step(cell: &GruCell, h: &[f64], u: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = h.iter().chain(u).copied().collect();
    let z: Vec<f64> = affine(&x, &cell.wz, &cell.bz).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(&x, &cell.wr, &cell.br).into_iter().map(sigmoid).collect();
    let xr: Vec<f64> = h.iter().zip(&r).map(|(h, r)| h * r).chain(u.iter().copied()).collect();
    let cand: Vec<f64> = affine(&xr, &cell.wh, &cell.bh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j]).collect()
}

#[test]
fn gru_matches_scalar_loop_reference() {
    let cfg = TagrnConfig { t_frames: 4, feature_dim: 6, heads: 2, gru_layers: 2, gru_hidden: 3, ..TagrnConfig::new(2, 3) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let mut params = init_params(&cfg, trial).unwrap();
        randomize(&mut params, &mut rng);
        let a = random_matrix(&mut rng, 4, 6);
        let mut input: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut fwd_last = vec![];
        let mut bwd_first = vec![];
        for layer in &params.gru {
            let mut fwd = vec![vec![0.0; 3]; 4];
            let mut h = vec![0.0; 3];
            for t in 0..4 {
                h = scalar_step(&layer[0], &h, &input[t]);
                fwd[t] = h.clone();
            }
            let mut bwd = vec![vec![0.0; 3]; 4];
            let mut h = vec![0.0; 3];
            for t in (0..4).rev() {
                h = scalar_step(&layer[1], &h, &input[t]);
                bwd[t] = h.clone();
            }
            fwd_last = fwd[3].clone();
            bwd_first = bwd[0].clone();
            input = (0..4).map(|t| fwd[t].iter().chain(&bwd[t]).copied().collect()).collect();
        }
        let f = gru_forward(a.view(), &params, &cfg).unwrap();
        let want: Vec<f64> = fwd_last.into_iter().chain(bwd_first).collect();
        for (g, w) in f.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "trial {trial}");
        }
    }
}

fn random_probs(rng: &mut impl Rng, b: usize, r: usize) -> (Array2<f64>, Array2<f64>) {
    let mut p = Array2::from_shape_fn((b, r), |_| rng.random_range(1e-3..1.0));
    for mut row in p.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    let mut y = Array2::zeros((b, r));
    for i in 0..b {
        y[[i, rng.random_range(0..r)]] = 1.0;
    }
    (p, y)
}

#[test]
fn focal_with_gamma_zero_is_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ce = FocalLossConfig::cross_entropy(7);
    for _ in 0..1000 {
        let (p, y) = random_probs(&mut rng, 10, 7);
        let want: f64 = -(&p.mapv(f64::ln) * &y).sum();
        assert!((focal_loss(&p, y.view(), &ce).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn focal_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let (p, y) = random_probs(&mut rng, 10, 7);
        let alpha: Vec<f64> = (0..7).map(|_| rng.random_range(0.1..3.0)).collect();
        let fl = FocalLossConfig { gamma: 2.0, alpha: alpha.clone() };
        let mut want = 0.0;
        for i in 0..10 {
            for c in 0..7 {
                want += y[[i, c]] * -alpha[c] * (1.0 - p[[i, c]]).powi(2) * p[[i, c]].ln();
            }
        }
        assert!((focal_loss(&p, y.view(), &fl).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn focal_loss_falls_as_confidence_rises() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
        let fl = FocalLossConfig { gamma, alpha: vec![1.0; 4] };
        for _ in 0..200 {
            let (mut p, y) = random_probs(&mut rng, 1, 4);
            let c = y.row(0).iter().position(|&v| v == 1.0).unwrap();
            let mut prev = focal_loss(&p, y.view(), &fl).unwrap();
            for _ in 0..20 {
                // raise p_c, rescale the others so the row still sums to 1
                let pc = p[[0, c]];
                let next = pc + (1.0 - pc) * rng.random_range(0.0..0.5);
                for j in 0..4 {
                    p[[0, j]] = if j == c { next } else { p[[0, j]] * (1.0 - next) / (1.0 - pc) };
                }
                let loss = focal_loss(&p, y.view(), &fl).unwrap();
                assert!(loss <= prev + 1e-15);
                prev = loss;
            }
        }
    }
}

#[test]
fn predicted_ladder_matches_row_scan() {
    let recipe = EncodingRecipe::dash_hevc();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        // coarse values so exact ties appear
        let p = Array2::from_shape_fn((10, 7), |_| rng.random_range(0..4) as f64);
        let want: Vec<usize> = p
            .rows()
            .into_iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (0..7).rev().find(|&j| row[j] == max).unwrap()
            })
            .collect();
        assert_eq!(ladder_from_probs(&p, &recipe).unwrap().class_indices(), want);
    }
}
