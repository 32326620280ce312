//! Classifier head, focal loss, and the full forward/backward pass.

use ladder_core::{BitrateLadder, EncodingRecipe};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, softmax_rows, AttentionCache};
use crate::gru::{self, GruCache};
use crate::params::TagrnParams;
use crate::{FocalLossConfig, PredictorError, TagrnConfig};

/// Lower clamp applied to a probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    Infer,
}

/// Inverted-dropout multipliers for `width` units: `0` or `1/(1-p)`.
fn dropout_mask(width: usize, p: f64, mode: Mode, seed: u64) -> Array1<f64> {
    if mode == Mode::Infer || p == 0.0 {
        return Array1::ones(width);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    Array1::from_shape_fn(width, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn head(f_dropped: &Array1<f64>, params: &TagrnParams, config: &TagrnConfig) -> Array2<f64> {
    let logits = f_dropped.dot(&params.classifier_w) + params.classifier_b.row(0);
    let mut p = logits.into_shape_with_order((config.tasks_b, config.classes_r)).expect("B·R logits");
    softmax_rows(&mut p);
    p
}

/// `B×R` class probabilities from the sequence feature `F`.
pub fn classify(f: &Array1<f64>, params: &TagrnParams, config: &TagrnConfig, mode: Mode, dropout_seed: u64) -> Array2<f64> {
    let mask = dropout_mask(f.len(), config.dropout_p, mode, dropout_seed);
    head(&(f * &mask), params, config)
}

fn check_targets(p: &Array2<f64>, y: &ArrayView2<f64>) -> Result<Vec<usize>, PredictorError> {
    if p.dim() != y.dim() {
        return Err(PredictorError::Shape(format!("P is {:?} but Y is {:?}", p.dim(), y.dim())));
    }
    y.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            match (ones.as_slice(), row.iter().all(|&v| v == 0.0 || v == 1.0)) {
                ([c], true) => Ok(*c),
                _ => Err(PredictorError::Shape(format!("row {i} of Y is not one-hot"))),
            }
        })
        .collect()
}

/// `Σ_i −α_c (1 − p_ic)^γ ln p_ic` over tasks `i` with true class `c`.
pub fn focal_loss(p: &Array2<f64>, y: ArrayView2<f64>, fl: &FocalLossConfig) -> Result<f64, PredictorError> {
    fl.validate(p.ncols())?;
    let truth = check_targets(p, &y)?;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let pc = p[[i, c]];
            -fl.alpha[c] * (1.0 - pc).powf(fl.gamma) * pc.max(LOG_FLOOR).ln()
        })
        .sum())
}

/// `∂L/∂logits`, `B×R`.
fn focal_logit_grad(p: &Array2<f64>, truth: &[usize], fl: &FocalLossConfig) -> Array2<f64> {
    let mut g = Array2::zeros(p.raw_dim());
    for (i, &c) in truth.iter().enumerate() {
        let pc = p[[i, c]];
        let q = 1.0 - pc;
        // d/dp of −α q^γ ln p, multiplied by p so it can scale the softmax Jacobian
        let log_term = if fl.gamma == 0.0 || q <= 0.0 { 0.0 } else { fl.gamma * q.powf(fl.gamma - 1.0) * pc * pc.max(LOG_FLOOR).ln() };
        let direct = if pc > LOG_FLOOR { q.powf(fl.gamma) } else { 0.0 };
        let scale = fl.alpha[c] * (log_term - direct);
        for j in 0..p.ncols() {
            let delta = if j == c { 1.0 } else { 0.0 };
            g[[i, j]] = scale * (delta - p[[i, j]]);
        }
    }
    g
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    attention: AttentionCache,
    gru: GruCache,
    mask: Array1<f64>,
    f_dropped: Array1<f64>,
    /// `B×R` class probabilities.
    pub probs: Array2<f64>,
}

fn check_features(x: &ArrayView2<f64>, config: &TagrnConfig) -> Result<(), PredictorError> {
    if x.nrows() == 0 || x.ncols() != config.feature_dim {
        return Err(PredictorError::Shape(format!(
            "features are {}×{}, model expects T×{}",
            x.nrows(),
            x.ncols(),
            config.feature_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite("features"));
    }
    Ok(())
}

pub fn forward(
    x: ArrayView2<f64>,
    params: &TagrnParams,
    config: &TagrnConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<Forward, PredictorError> {
    check_features(&x, config)?;
    let (a, attention) = attention::forward_cached(x, &params.attention, config);
    let (f, gru) = gru::forward_cached(a.view(), params, config);
    let mask = dropout_mask(f.len(), config.dropout_p, mode, dropout_seed);
    let f_dropped = &f * &mask;
    let probs = head(&f_dropped, params, config);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite("class probabilities"));
    }
    Ok(Forward { attention, gru, mask, f_dropped, probs })
}

/// `B×R` probabilities with dropout off.
pub fn predict_probs(x: ArrayView2<f64>, params: &TagrnParams, config: &TagrnConfig) -> Result<Array2<f64>, PredictorError> {
    Ok(forward(x, params, config, Mode::Infer, 0)?.probs)
}

/// Loss and gradient for one sequence.
#[derive(Debug, Clone)]
pub struct Gradient {
    /// Focal loss of this sequence (without the weight penalty).
    pub loss: f64,
    /// `λ‖θ‖²`
    pub penalty: f64,
    pub grads: TagrnParams,
    pub probs: Array2<f64>,
}

/// Analytic gradient of `focal_loss + λ‖θ‖²` for one training sequence in
/// train mode, with the dropout mask drawn from `dropout_seed`.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    params: &TagrnParams,
    config: &TagrnConfig,
    fl: &FocalLossConfig,
    weight_decay: f64,
    dropout_seed: u64,
) -> Result<Gradient, PredictorError> {
    let fwd = forward(x, params, config, Mode::Train, dropout_seed)?;
    fl.validate(config.classes_r)?;
    let truth = check_targets(&fwd.probs, &y)?;
    let loss = focal_loss(&fwd.probs, y, fl)?;
    let mut grads = params.zeros_like();

    let d_logits = focal_logit_grad(&fwd.probs, &truth, fl)
        .into_shape_with_order(config.tasks_b * config.classes_r)
        .expect("B·R");
    grads.classifier_w = fwd.f_dropped.view().insert_axis(Axis(1)).dot(&d_logits.view().insert_axis(Axis(0)));
    grads.classifier_b = d_logits.view().insert_axis(Axis(0)).to_owned();
    let d_f = params.classifier_w.dot(&d_logits) * &fwd.mask;

    let d_a = gru::backward(&fwd.gru, d_f.view(), params, config, &mut grads);
    attention::backward(&fwd.attention, &d_a, &params.attention, config, &mut grads.attention);

    let mut penalty = 0.0;
    if weight_decay > 0.0 {
        penalty = weight_decay * params.squared_norm();
        grads.scaled_add(2.0 * weight_decay, params);
        if !config.attention_bias {
            let a = &mut grads.attention;
            for b in [&mut a.bq, &mut a.bk, &mut a.bv, &mut a.bo] {
                b.fill(0.0);
            }
        }
    }
    Ok(Gradient { loss, penalty, grads, probs: fwd.probs })
}

/// Row-wise argmax of `P`; exact ties go to the later column (fewer pixels).
pub fn ladder_from_probs(p: &Array2<f64>, recipe: &EncodingRecipe) -> Result<BitrateLadder, PredictorError> {
    if p.dim() != (recipe.num_bitrates(), recipe.num_resolutions()) {
        return Err(PredictorError::Shape(format!(
            "P is {:?}, recipe is {}×{}",
            p.dim(),
            recipe.num_bitrates(),
            recipe.num_resolutions()
        )));
    }
    let indices: Vec<usize> = p
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v >= row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(BitrateLadder::from_indices(recipe, &indices)?)
}

pub fn predict_ladder(
    x: ArrayView2<f64>,
    params: &TagrnParams,
    config: &TagrnConfig,
    recipe: &EncodingRecipe,
) -> Result<BitrateLadder, PredictorError> {
    ladder_from_probs(&predict_probs(x, params, config)?, recipe)
}

/// `B×R` one-hot target matrix of a ladder.
pub fn one_hot_matrix(ladder: &BitrateLadder) -> Array2<f64> {
    let rows = ladder.one_hot();
    let r = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), r), |(i, j)| rows[i][j] as f64)
}
