use ladder_core::seed::{derive_seed, derive_seed_str};
use ladder_core::BitrateLadder;
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{backward, one_hot_matrix, Gradient};
use crate::params::{init_params, TagrnParams};
use crate::{FeatureSequence, FocalLossConfig, PredictorError, TagrnConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean focal loss per sequence, measured in train mode during the epoch.
    pub mean_loss: f64,
    /// Fraction of `(sequence, bitrate)` cells whose argmax was correct.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn correct_cells(probs: &Array2<f64>, target: &Array2<f64>) -> usize {
    probs
        .rows()
        .into_iter()
        .zip(target.rows())
        .filter(|(p, y)| {
            let best = p.iter().enumerate().fold(0, |b, (j, &v)| if v >= p[b] { j } else { b });
            y[best] == 1.0
        })
        .count()
}

/// Mini-batch SGD with momentum (`v ← μv + g`, `θ ← θ − lr·v`), an `λ‖θ‖²`
/// penalty and a cosine schedule stepped per epoch.
///
/// Sample order is reshuffled every epoch from `train.seed`; each sample's
/// dropout mask is seeded from `(seed, epoch, position)`. Per-sample
/// gradients are computed in parallel and summed in batch order, so results
/// do not depend on the thread count.
pub fn train(
    dataset: &[(FeatureSequence, BitrateLadder)],
    config: &TagrnConfig,
    train: &TrainConfig,
    fl: &FocalLossConfig,
) -> Result<(TagrnParams, TrainHistory), PredictorError> {
    config.validate()?;
    train.validate()?;
    fl.validate(config.classes_r)?;
    if dataset.is_empty() {
        return Err(PredictorError::Config("empty training set".into()));
    }
    for (seq, ladder) in dataset {
        if seq.dim() != config.feature_dim || ladder.len() != config.tasks_b {
            return Err(PredictorError::Shape(format!("training sample {} does not match the model", seq.sequence_id)));
        }
    }
    let targets: Vec<Array2<f64>> = dataset.iter().map(|(_, l)| one_hot_matrix(l)).collect();
    let mut params = init_params(config, derive_seed_str(train.seed, "init"))?;
    let mut velocity = params.zeros_like();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..train.epochs {
        let lr = train.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, batch) in order.chunks(train.batch_size).enumerate() {
            let results: Vec<Result<Gradient, PredictorError>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let seed = derive_seed(train.seed, &[epoch as u64, (batch_no * train.batch_size + k) as u64]);
                    backward(dataset[i].0.values.view(), targets[i].view(), &params, config, fl, 0.0, seed)
                })
                .collect();
            let mut step = params.zeros_like();
            for (r, &i) in results.into_iter().zip(batch) {
                let g = r?;
                loss_sum += g.loss;
                correct += correct_cells(&g.probs, &targets[i]);
                step.scaled_add(1.0, &g.grads);
            }
            step.scale(1.0 / batch.len() as f64);
            if train.weight_decay > 0.0 {
                step.scaled_add(2.0 * train.weight_decay, &params);
                if !config.attention_bias {
                    let a = &mut step.attention;
                    for b in [&mut a.bq, &mut a.bk, &mut a.bv, &mut a.bo] {
                        b.fill(0.0);
                    }
                }
            }
            velocity.scale(train.momentum);
            velocity.scaled_add(1.0, &step);
            params.scaled_add(-lr, &velocity);
        }
        let mean_loss = loss_sum / dataset.len() as f64;
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(PredictorError::Diverged { epoch });
        }
        let train_accuracy = correct as f64 / (dataset.len() * config.tasks_b) as f64;
        info!("epoch {epoch}: lr {lr:.5} loss {mean_loss:.5} accuracy {train_accuracy:.4}");
        history.epochs.push(EpochRecord { epoch, learning_rate: lr, mean_loss, train_accuracy });
    }
    Ok((params, history))
}
