use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{PredictorError, TagrnConfig};

/// Query/key/value/output projections. Biases are `1×D` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
}

/// One GRU direction. Each gate weight maps `[h_prev, input]` (hidden first)
/// to the hidden width.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub wz: Array2<f64>,
    pub bz: Array2<f64>,
    pub wr: Array2<f64>,
    pub br: Array2<f64>,
    pub wh: Array2<f64>,
    pub bh: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagrnParams {
    pub attention: AttentionParams,
    /// `[forward, backward]` per layer, bottom layer first.
    pub gru: Vec<[GruCell; 2]>,
    /// `2H × B·R`
    pub classifier_w: Array2<f64>,
    pub classifier_b: Array2<f64>,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl TagrnParams {
    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &TagrnConfig) -> Self {
        let d = config.feature_dim;
        let h = config.gru_hidden;
        let z = |r: usize, c: usize| Array2::zeros((r, c));
        let cell = |input: usize| GruCell {
            wz: z(h + input, h),
            bz: z(1, h),
            wr: z(h + input, h),
            br: z(1, h),
            wh: z(h + input, h),
            bh: z(1, h),
        };
        Self {
            attention: AttentionParams {
                wq: z(d, d),
                bq: z(1, d),
                wk: z(d, d),
                bk: z(1, d),
                wv: z(d, d),
                bv: z(1, d),
                wo: z(d, d),
                bo: z(1, d),
            },
            gru: (0..config.gru_layers)
                .map(|l| [cell(config.gru_input_dim(l)), cell(config.gru_input_dim(l))])
                .collect(),
            classifier_w: z(2 * h, config.tasks_b * config.classes_r),
            classifier_b: z(1, config.tasks_b * config.classes_r),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Named tensors in declared (serialization) order.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let a = &self.attention;
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("attention.wq".into(), &a.wq),
            ("attention.bq".into(), &a.bq),
            ("attention.wk".into(), &a.wk),
            ("attention.bk".into(), &a.bk),
            ("attention.wv".into(), &a.wv),
            ("attention.bv".into(), &a.bv),
            ("attention.wo".into(), &a.wo),
            ("attention.bo".into(), &a.bo),
        ];
        for (l, layer) in self.gru.iter().enumerate() {
            for (cell, dir) in layer.iter().zip(DIRECTIONS) {
                let name = |t: &str| format!("gru.{l}.{dir}.{t}");
                out.extend([
                    (name("wz"), &cell.wz),
                    (name("bz"), &cell.bz),
                    (name("wr"), &cell.wr),
                    (name("br"), &cell.br),
                    (name("wh"), &cell.wh),
                    (name("bh"), &cell.bh),
                ]);
            }
        }
        out.push(("classifier.w".into(), &self.classifier_w));
        out.push(("classifier.b".into(), &self.classifier_b));
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`TagrnParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let a = &mut self.attention;
        let mut out = vec![&mut a.wq, &mut a.bq, &mut a.wk, &mut a.bk, &mut a.wv, &mut a.bv, &mut a.wo, &mut a.bo];
        for layer in self.gru.iter_mut() {
            for cell in layer.iter_mut() {
                out.extend([&mut cell.wz, &mut cell.bz, &mut cell.wr, &mut cell.br, &mut cell.wh, &mut cell.bh]);
            }
        }
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `Σ θ²` over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    /// `self += k · other`, tensor by tensor.
    pub fn scaled_add(&mut self, k: f64, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(k, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * k);
        }
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &TagrnConfig) -> Result<(), PredictorError> {
        let want = Self::zeros(config);
        let (got, exp) = (self.named_tensors(), want.named_tensors());
        if got.len() != exp.len() {
            return Err(PredictorError::Shape(format!("{} tensors, config implies {}", got.len(), exp.len())));
        }
        for ((name, a), (_, b)) in got.iter().zip(&exp) {
            if a.dim() != b.dim() {
                return Err(PredictorError::Shape(format!("{name} is {:?}, config implies {:?}", a.dim(), b.dim())));
            }
        }
        Ok(())
    }
}

fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|t| t.starts_with('b'))
}

/// Weights uniform in `±1/√fan_in` (fan-in = rows), biases zero, drawn in
/// declared tensor order from a ChaCha8 stream seeded with `seed`.
pub fn init_params(config: &TagrnConfig, seed: u64) -> Result<TagrnParams, PredictorError> {
    config.validate()?;
    let mut params = TagrnParams::zeros(config);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, tensor) in names.iter().zip(params.tensors_mut()) {
        if is_bias(name) {
            continue;
        }
        let bound = 1.0 / (tensor.nrows() as f64).sqrt();
        tensor.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TagrnConfig {
        TagrnConfig { t_frames: 4, feature_dim: 8, heads: 2, gru_hidden: 5, tasks_b: 3, classes_r: 4, ..TagrnConfig::new(3, 4) }
    }

    #[test]
    fn shapes_and_counts() {
        let mut p = TagrnParams::zeros(&tiny());
        assert_eq!(p.gru[0][0].wz.dim(), (13, 5));
        assert_eq!(p.gru[1][1].wh.dim(), (15, 5));
        assert_eq!(p.classifier_w.dim(), (10, 12));
        let per_layer = |input: usize| 2 * 3 * ((5 + input) * 5 + 5);
        assert_eq!(p.num_params(), 4 * (64 + 8) + per_layer(8) + per_layer(10) + 10 * 12 + 12);
        assert_eq!(p.named_tensors().len(), p.tensors_mut().len());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = tiny();
        let a = init_params(&cfg, 7).unwrap();
        assert_eq!(a, init_params(&cfg, 7).unwrap());
        assert_ne!(a, init_params(&cfg, 8).unwrap());
        for (name, t) in a.named_tensors() {
            if is_bias(&name) {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            } else {
                let bound = 1.0 / (t.nrows() as f64).sqrt();
                assert!(t.iter().all(|v| v.abs() <= bound), "{name}");
                assert!(t.iter().any(|&v| v != 0.0), "{name}");
            }
        }
        a.check_shapes(&cfg).unwrap();
        assert!(a.check_shapes(&TagrnConfig { gru_hidden: 6, ..cfg }).is_err());
    }
}
