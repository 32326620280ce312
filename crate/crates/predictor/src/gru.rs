//! Stacked bi-directional GRU. The sequence feature is the forward
//! direction's state after the last frame joined with the backward
//! direction's state after the first frame, both from the top layer.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{GruCell, TagrnParams};
use crate::{PredictorError, TagrnConfig};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Rows are indexed by processing step, not by frame.
#[derive(Debug, Clone)]
struct DirectionCache {
    /// `[h_prev, u]`
    x: Array2<f64>,
    /// `[r ⊙ h_prev, u]`
    xr: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    candidate: Array2<f64>,
    h_prev: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    layers: Vec<[DirectionCache; 2]>,
    /// `T×2H` output of every layer.
    outputs: Vec<Array2<f64>>,
}

fn frame_order(t: usize, backward: bool) -> Vec<usize> {
    if backward {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

fn run_direction(cell: &GruCell, input: ArrayView2<f64>, hidden: usize, backward: bool) -> (Array2<f64>, DirectionCache) {
    let (t, width) = (input.nrows(), hidden + input.ncols());
    let mut cache = DirectionCache {
        x: Array2::zeros((t, width)),
        xr: Array2::zeros((t, width)),
        z: Array2::zeros((t, hidden)),
        r: Array2::zeros((t, hidden)),
        candidate: Array2::zeros((t, hidden)),
        h_prev: Array2::zeros((t, hidden)),
    };
    let mut out = Array2::zeros((t, hidden));
    let mut h = Array1::<f64>::zeros(hidden);
    for (step, frame) in frame_order(t, backward).into_iter().enumerate() {
        let mut x = cache.x.row_mut(step);
        x.slice_mut(s![..hidden]).assign(&h);
        x.slice_mut(s![hidden..]).assign(&input.row(frame));
        let x = cache.x.row(step);
        let z = (x.dot(&cell.wz) + cell.bz.row(0)).mapv(sigmoid);
        let r = (x.dot(&cell.wr) + cell.br.row(0)).mapv(sigmoid);
        let mut xr = cache.xr.row_mut(step);
        xr.assign(&x);
        xr.slice_mut(s![..hidden]).zip_mut_with(&r, |v, r| *v *= r);
        let candidate = (cache.xr.row(step).dot(&cell.wh) + cell.bh.row(0)).mapv(f64::tanh);
        cache.h_prev.row_mut(step).assign(&h);
        h = &h + &(&z * &(&candidate - &h));
        cache.z.row_mut(step).assign(&z);
        cache.r.row_mut(step).assign(&r);
        cache.candidate.row_mut(step).assign(&candidate);
        out.row_mut(frame).assign(&h);
    }
    (out, cache)
}

pub(crate) fn forward_cached(a: ArrayView2<f64>, params: &TagrnParams, config: &TagrnConfig) -> (Array1<f64>, GruCache) {
    let hidden = config.gru_hidden;
    let mut layers = Vec::with_capacity(config.gru_layers);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(config.gru_layers);
    for layer in &params.gru {
        let input = outputs.last().map_or(a, |o| o.view());
        let (fwd, fwd_cache) = run_direction(&layer[0], input, hidden, false);
        let (bwd, bwd_cache) = run_direction(&layer[1], input, hidden, true);
        outputs.push(concatenate![Axis(1), fwd, bwd]);
        layers.push([fwd_cache, bwd_cache]);
    }
    let top = outputs.last().expect("at least one layer");
    let t = top.nrows();
    let f = concatenate![Axis(0), top.slice(s![t - 1, ..hidden]), top.slice(s![0, hidden..])];
    (f, GruCache { layers, outputs })
}

fn check(a: &ArrayView2<f64>, params: &TagrnParams, config: &TagrnConfig) -> Result<(), PredictorError> {
    if a.nrows() == 0 || a.ncols() != config.feature_dim || params.gru.len() != config.gru_layers {
        return Err(PredictorError::Shape(format!("GRU input {}×{} for config {config:?}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite("GRU input"));
    }
    Ok(())
}

/// Sequence feature `F` (length `2H`) for a `T×D` attention output.
pub fn gru_forward(a: ArrayView2<f64>, params: &TagrnParams, config: &TagrnConfig) -> Result<Array1<f64>, PredictorError> {
    check(&a, params, config)?;
    let (f, _) = forward_cached(a, params, config);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite("GRU state"));
    }
    Ok(f)
}

/// `T×2H` hidden states (forward then backward) of every layer.
pub fn gru_states(a: ArrayView2<f64>, params: &TagrnParams, config: &TagrnConfig) -> Result<Vec<Array2<f64>>, PredictorError> {
    check(&a, params, config)?;
    Ok(forward_cached(a, params, config).1.outputs)
}

/// Backpropagates one direction; returns `∂L/∂input` (`T×in`).
fn backward_direction(
    cell: &GruCell,
    cache: &DirectionCache,
    d_out: ArrayView2<f64>,
    backward: bool,
    grad: &mut GruCell,
) -> Array2<f64> {
    let (t, hidden) = d_out.dim();
    let input_dim = cache.x.ncols() - hidden;
    let mut d_input = Array2::zeros((t, input_dim));
    let mut da_z = Array2::zeros((t, hidden));
    let mut da_r = Array2::zeros((t, hidden));
    let mut da_h = Array2::zeros((t, hidden));
    let mut carry = Array1::<f64>::zeros(hidden);
    let order = frame_order(t, backward);
    for step in (0..t).rev() {
        let frame = order[step];
        let dh = &d_out.row(frame) + &carry;
        let (z, r) = (cache.z.row(step), cache.r.row(step));
        let (cand, h_prev) = (cache.candidate.row(step), cache.h_prev.row(step));

        let dz = &dh * &(&cand - &h_prev);
        let mut d_prev = &dh * &z.mapv(|z| 1.0 - z);
        let dah: Array1<f64> = &dh * &z * &cand.mapv(|c| 1.0 - c * c);
        let dxr = dah.dot(&cell.wh.t());
        let d_rh = dxr.slice(s![..hidden]);
        let mut du = dxr.slice(s![hidden..]).to_owned();
        d_prev += &(&d_rh * &r);
        let dr = &d_rh * &h_prev;

        let daz = &dz * &z.mapv(|z| z * (1.0 - z));
        let dar = &dr * &r.mapv(|r| r * (1.0 - r));
        let dx = daz.dot(&cell.wz.t()) + dar.dot(&cell.wr.t());
        d_prev += &dx.slice(s![..hidden]);
        du += &dx.slice(s![hidden..]);

        d_input.row_mut(frame).assign(&du);
        da_z.row_mut(step).assign(&daz);
        da_r.row_mut(step).assign(&dar);
        da_h.row_mut(step).assign(&dah);
        carry = d_prev;
    }
    let bias = |m: &Array2<f64>| m.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.wz += &cache.x.t().dot(&da_z);
    grad.wr += &cache.x.t().dot(&da_r);
    grad.wh += &cache.xr.t().dot(&da_h);
    grad.bz += &bias(&da_z);
    grad.br += &bias(&da_r);
    grad.bh += &bias(&da_h);
    d_input
}

/// Accumulates GRU gradients for `d_f = ∂L/∂F`; returns `∂L/∂A`.
pub(crate) fn backward(
    cache: &GruCache,
    d_f: ArrayView1<f64>,
    params: &TagrnParams,
    config: &TagrnConfig,
    grad: &mut TagrnParams,
) -> Array2<f64> {
    let hidden = config.gru_hidden;
    let t = cache.outputs[0].nrows();
    let mut d_out = Array2::zeros((t, 2 * hidden));
    d_out.slice_mut(s![t - 1, ..hidden]).assign(&d_f.slice(s![..hidden]));
    d_out.slice_mut(s![0, hidden..]).assign(&d_f.slice(s![hidden..]));
    for l in (0..config.gru_layers).rev() {
        let [fwd_grad, bwd_grad] = &mut grad.gru[l];
        let d_fwd = backward_direction(&params.gru[l][0], &cache.layers[l][0], d_out.slice(s![.., ..hidden]), false, fwd_grad);
        let d_bwd = backward_direction(&params.gru[l][1], &cache.layers[l][1], d_out.slice(s![.., hidden..]), true, bwd_grad);
        d_out = d_fwd + d_bwd;
    }
    d_out
}
