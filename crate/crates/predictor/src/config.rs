use serde::{Deserialize, Serialize};

use crate::PredictorError;

/// Network shape. Row-vector convention throughout: a `D`-wide input times a
/// `D×D'` weight gives a `D'`-wide output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagrnConfig {
    pub t_frames: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub dropout_p: f64,
    pub tasks_b: usize,
    pub classes_r: usize,
    /// Scale attention logits by `1/√(D/n)` instead of `1/√D`.
    #[serde(default)]
    pub per_head_scale: bool,
    /// Learn biases on the attention projections (otherwise they stay zero).
    #[serde(default = "yes")]
    pub attention_bias: bool,
}

fn yes() -> bool {
    true
}

impl TagrnConfig {
    /// Default shape for `tasks_b` bitrates and `classes_r` resolutions.
    pub fn new(tasks_b: usize, classes_r: usize) -> Self {
        Self {
            t_frames: 10,
            feature_dim: 512,
            heads: 4,
            gru_layers: 2,
            gru_hidden: 256,
            dropout_p: 0.25,
            tasks_b,
            classes_r,
            per_head_scale: false,
            attention_bias: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }

    pub fn attention_scale(&self) -> f64 {
        let d = if self.per_head_scale { self.head_dim() } else { self.feature_dim };
        1.0 / (d as f64).sqrt()
    }

    /// Width of the input to GRU layer `layer`.
    pub fn gru_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.feature_dim
        } else {
            2 * self.gru_hidden
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |msg: String| Err(PredictorError::Config(msg));
        if self.t_frames == 0 || self.feature_dim == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return bad("t_frames, feature_dim, gru_hidden and gru_layers must be positive".into());
        }
        if self.heads == 0 || !self.feature_dim.is_multiple_of(self.heads) {
            return bad(format!("feature_dim {} is not divisible by {} heads", self.feature_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.tasks_b == 0 || self.classes_r < 2 {
            return bad(format!("need B ≥ 1 and R ≥ 2 (got B={}, R={})", self.tasks_b, self.classes_r));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub gamma: f64,
    /// Weight per class, indexed like the recipe resolutions.
    pub alpha: Vec<f64>,
}

impl FocalLossConfig {
    /// `γ = 2`, unit weights.
    pub fn new(classes_r: usize) -> Self {
        Self { gamma: 2.0, alpha: vec![1.0; classes_r] }
    }

    /// Plain cross-entropy (`γ = 0`, unit weights).
    pub fn cross_entropy(classes_r: usize) -> Self {
        Self { gamma: 0.0, alpha: vec![1.0; classes_r] }
    }

    /// Weights proportional to `1 / (count + 1)` per class, summed over all
    /// bitrates of a `B×R` histogram and scaled to mean 1.
    pub fn inverse_frequency(histogram: &[Vec<u32>], gamma: f64) -> Self {
        let r = histogram.first().map_or(0, Vec::len);
        let raw: Vec<f64> = (0..r)
            .map(|c| 1.0 / (histogram.iter().map(|row| row[c] as f64).sum::<f64>() + 1.0))
            .collect();
        let mean = raw.iter().sum::<f64>() / r.max(1) as f64;
        Self { gamma, alpha: raw.iter().map(|a| a / mean).collect() }
    }

    pub fn validate(&self, classes_r: usize) -> Result<(), PredictorError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(PredictorError::Config(format!("gamma {} must be finite and ≥ 0", self.gamma)));
        }
        if self.alpha.len() != classes_r {
            return Err(PredictorError::Config(format!("{} alpha weights for {classes_r} classes", self.alpha.len())));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(PredictorError::Config("alpha weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub momentum: f64,
    /// `λ` in the `λ‖θ‖²` penalty.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr_initial: 0.01, momentum: 0.9, weight_decay: 0.0005, batch_size: 8, seed: 0 }
    }
}

impl TrainConfig {
    /// Cosine annealing from `lr_initial` at epoch 0 towards 0 at `epochs`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let phase = std::f64::consts::PI * epoch as f64 / self.epochs as f64;
        self.lr_initial * (1.0 + phase.cos()) / 2.0
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr_initial > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PredictorError::Config(format!("invalid training settings {self:?}")))
        }
    }
}
