//! Multi-head self-attention over the frame axis, with no positional
//! encoding.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::params::AttentionParams;
use crate::{PredictorError, TagrnConfig};

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per head, `T×T`.
    weights: Vec<Array2<f64>>,
    /// Concatenated head outputs, `T×D`.
    heads: Array2<f64>,
}

pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn check_input(x: &ArrayView2<f64>, config: &TagrnConfig) -> Result<(), PredictorError> {
    if x.ncols() != config.feature_dim || x.nrows() == 0 {
        return Err(PredictorError::Shape(format!(
            "features are {}×{}, expected T×{}",
            x.nrows(),
            x.ncols(),
            config.feature_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite("attention input"));
    }
    Ok(())
}

pub(crate) fn forward_cached(x: ArrayView2<f64>, p: &AttentionParams, config: &TagrnConfig) -> (Array2<f64>, AttentionCache) {
    let q = x.dot(&p.wq) + &p.bq;
    let k = x.dot(&p.wk) + &p.bk;
    let v = x.dot(&p.wv) + &p.bv;
    let dh = config.head_dim();
    let scale = config.attention_scale();
    let mut heads = Array2::zeros(x.raw_dim());
    let mut weights = Vec::with_capacity(config.heads);
    for i in 0..config.heads {
        let cols = s![.., i * dh..(i + 1) * dh];
        let mut w = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut w);
        heads.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
        weights.push(w);
    }
    let out = heads.dot(&p.wo) + &p.bo;
    (out, AttentionCache { x: x.to_owned(), q, k, v, weights, heads })
}

/// `T×D` attention output for a `T×D` feature sequence.
pub fn attention_forward(x: ArrayView2<f64>, p: &AttentionParams, config: &TagrnConfig) -> Result<Array2<f64>, PredictorError> {
    check_input(&x, config)?;
    Ok(forward_cached(x, p, config).0)
}

/// Per-head `T×T` attention weights (each row a distribution over frames).
pub fn attention_weights(
    x: ArrayView2<f64>,
    p: &AttentionParams,
    config: &TagrnConfig,
) -> Result<Vec<Array2<f64>>, PredictorError> {
    check_input(&x, config)?;
    Ok(forward_cached(x, p, config).1.weights)
}

/// Accumulates parameter gradients into `grad` given `d_out = ∂L/∂A`.
pub(crate) fn backward(
    cache: &AttentionCache,
    d_out: &Array2<f64>,
    p: &AttentionParams,
    config: &TagrnConfig,
    grad: &mut AttentionParams,
) {
    grad.wo += &cache.heads.t().dot(d_out);
    let d_heads = d_out.dot(&p.wo.t());

    let dh = config.head_dim();
    let scale = config.attention_scale();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (i, w) in cache.weights.iter().enumerate() {
        let cols = s![.., i * dh..(i + 1) * dh];
        let d_head = d_heads.slice(cols);
        let dw = d_head.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&w.t().dot(&d_head));
        // softmax Jacobian per row: w ⊙ (dw − ⟨dw, w⟩)
        let inner = (&dw * w).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_logits = (dw - inner) * w * scale;
        dq.slice_mut(cols).assign(&d_logits.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&d_logits.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    grad.wq += &xt.dot(&dq);
    grad.wk += &xt.dot(&dk);
    grad.wv += &xt.dot(&dv);
    if config.attention_bias {
        grad.bo += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(t: usize) -> (TagrnConfig, AttentionParams, Array2<f64>) {
        let cfg = TagrnConfig { feature_dim: 8, heads: 2, gru_hidden: 3, ..TagrnConfig::new(2, 3) };
        let mut p = init_params(&cfg, 1).unwrap().attention;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for b in [&mut p.bq, &mut p.bk, &mut p.bv, &mut p.bo] {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((t, 8), |_| rng.random_range(-2.0..2.0));
        (cfg, p, x)
    }

    #[test]
    fn single_frame_passes_values_through() {
        let (cfg, p, x) = setup(1);
        let out = attention_forward(x.view(), &p, &cfg).unwrap();
        let v = x.dot(&p.wv) + &p.bv;
        let want = v.dot(&p.wo) + &p.bo;
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn zero_queries_average_values() {
        let (cfg, mut p, x) = setup(5);
        p.wq.fill(0.0);
        p.bq.fill(0.0);
        let (_, cache) = forward_cached(x.view(), &p, &cfg);
        let v = x.dot(&p.wv) + &p.bv;
        let mean = v.mean_axis(Axis(0)).unwrap();
        for row in cache.heads.rows() {
            assert!((&row - &mean).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (cfg, p, mut x) = setup(3);
        assert!(attention_forward(x.slice(s![.., ..7]), &p, &cfg).is_err());
        x[[1, 1]] = f64::NAN;
        assert!(matches!(attention_forward(x.view(), &p, &cfg), Err(PredictorError::NonFinite(_))));
    }
}
