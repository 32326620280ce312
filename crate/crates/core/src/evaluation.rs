//! Classification metrics over ladders and BD studies against ground-truth
//! hulls.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bd::{bd_quality, bd_rate, ladder_curve, BDOptions};
use crate::files::LadderFileEntry;
use crate::hull::hull_curve;
use crate::model::{BitrateLadder, EncodingRecipe, LadderEntry, ModelError, RDSurface, Resolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{pred} predicted ladders for {truth} ground-truth ladders")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("ladder {0} does not match the recipe")]
    RecipeMismatch(usize),
    #[error("confusion tensor is empty")]
    Empty,
    #[error("fixed ladder mapping has no entry for {0} Kbps")]
    UncoveredBitrate(u32),
    #[error("fixed ladder resolution {0} is not in the recipe")]
    UnknownResolution(Resolution),
    #[error("fixed ladder mapping lists {0} Kbps more than once")]
    DuplicateBitrate(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-task `true × predicted` counts, `B×R×R`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTensor {
    pub tasks: usize,
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionTensor {
    pub fn new(tasks: usize, classes: usize) -> Self {
        Self { tasks, classes, counts: vec![0; tasks * classes * classes] }
    }

    pub fn from_ladders(
        pred: &[BitrateLadder],
        truth: &[BitrateLadder],
        recipe: &EncodingRecipe,
    ) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
        }
        let (b, r) = (recipe.num_bitrates(), recipe.num_resolutions());
        let mut out = Self::new(b, r);
        for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
            let shape_ok = |l: &BitrateLadder| l.len() == b && l.one_hot().iter().all(|row| row.len() == r);
            if !shape_ok(p) || !shape_ok(t) {
                return Err(EvalError::RecipeMismatch(i));
            }
            for (task, (pc, tc)) in p.class_indices().into_iter().zip(t.class_indices()).enumerate() {
                out.add(task, tc, pc);
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, task: usize, truth: usize, pred: usize) {
        let i = self.index(task, truth, pred);
        self.counts[i] += 1;
    }

    fn index(&self, task: usize, truth: usize, pred: usize) -> usize {
        (task * self.classes + truth) * self.classes + pred
    }

    pub fn get(&self, task: usize, truth: usize, pred: usize) -> u64 {
        self.counts[self.index(task, truth, pred)]
    }

    pub fn task_total(&self, task: usize) -> u64 {
        let n = self.classes * self.classes;
        self.counts[task * n..(task + 1) * n].iter().sum()
    }

    fn check(&self) -> Result<(), EvalError> {
        if self.tasks == 0 || self.classes == 0 || (0..self.tasks).all(|t| self.task_total(t) == 0) {
            return Err(EvalError::Empty);
        }
        Ok(())
    }

    /// `(support, predicted, correct)` for each class of one task.
    fn class_stats(&self, task: usize) -> Vec<(u64, u64, u64)> {
        (0..self.classes)
            .map(|c| {
                let support = (0..self.classes).map(|p| self.get(task, c, p)).sum();
                let predicted = (0..self.classes).map(|t| self.get(task, t, c)).sum();
                (support, predicted, self.get(task, c, c))
            })
            .collect()
    }

    fn mean_over_tasks(&self, per_task: impl Fn(&[(u64, u64, u64)]) -> f64) -> Result<f64, EvalError> {
        self.check()?;
        let active: Vec<usize> = (0..self.tasks).filter(|&t| self.task_total(t) > 0).collect();
        let sum: f64 = active.iter().map(|&t| per_task(&self.class_stats(t))).sum();
        Ok(sum / active.len() as f64)
    }
}

/// Fraction of `(sequence, bitrate)` cells predicted correctly.
pub fn accuracy(pred: &[BitrateLadder], truth: &[BitrateLadder]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    let mut cells = 0usize;
    let mut hits = 0usize;
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(EvalError::RecipeMismatch(i));
        }
        cells += p.len();
        hits += p.entries().iter().zip(t.entries()).filter(|(a, b)| a == b).count();
    }
    if cells == 0 {
        return Err(EvalError::Empty);
    }
    Ok(hits as f64 / cells as f64)
}

/// Macro F1 over the classes with support, averaged uniformly over tasks.
pub fn f_score(confusion: &ConfusionTensor) -> Result<f64, EvalError> {
    confusion.mean_over_tasks(|stats| {
        let scored: Vec<f64> = stats
            .iter()
            .filter(|s| s.0 > 0)
            .map(|&(support, predicted, correct)| {
                let recall = correct as f64 / support as f64;
                let precision = if predicted > 0 { correct as f64 / predicted as f64 } else { 0.0 };
                if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                }
            })
            .collect();
        scored.iter().sum::<f64>() / scored.len() as f64
    })
}

/// Geometric mean of per-class recall over classes with support, averaged
/// uniformly over tasks.
pub fn g_mean(confusion: &ConfusionTensor) -> Result<f64, EvalError> {
    confusion.mean_over_tasks(|stats| {
        let recalls: Vec<f64> =
            stats.iter().filter(|s| s.0 > 0).map(|&(support, _, correct)| correct as f64 / support as f64).collect();
        if recalls.contains(&0.0) {
            return 0.0;
        }
        (recalls.iter().map(|r| r.ln()).sum::<f64>() / recalls.len() as f64).exp()
    })
}

/// Content-agnostic bitrate → resolution mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedLadderConfig {
    pub entries: Vec<LadderFileEntry>,
}

impl Default for FixedLadderConfig {
    /// Monotone DASH-style assignment for the 240–5800 Kbps preset set.
    fn default() -> Self {
        let map: [(u32, u32, u32); 10] = [
            (240, 384, 216),
            (375, 480, 270),
            (550, 640, 360),
            (750, 768, 432),
            (1000, 960, 540),
            (1500, 960, 540),
            (2300, 1280, 720),
            (3000, 1280, 720),
            (4300, 1920, 1080),
            (5800, 1920, 1080),
        ];
        Self {
            entries: map
                .iter()
                .map(|&(bitrate_kbps, width, height)| LadderFileEntry { bitrate_kbps, width, height })
                .collect(),
        }
    }
}

pub fn fixed_ladder(recipe: &EncodingRecipe, mapping: &FixedLadderConfig) -> Result<BitrateLadder, EvalError> {
    let mut by_rate = BTreeMap::new();
    for e in &mapping.entries {
        if by_rate.insert(e.bitrate_kbps, Resolution::new(e.width, e.height)).is_some() {
            return Err(EvalError::DuplicateBitrate(e.bitrate_kbps));
        }
    }
    let entries = recipe
        .target_bitrates_kbps
        .iter()
        .map(|&b| {
            let resolution = *by_rate.get(&b).ok_or(EvalError::UncoveredBitrate(b))?;
            if recipe.resolution_index(resolution).is_none() {
                return Err(EvalError::UnknownResolution(resolution));
            }
            Ok(LadderEntry { bitrate_kbps: b, resolution })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitrateLadder::from_entries(recipe, entries)?)
}

/// Per-bitrate most frequent class of a histogram; ties go to the lower
/// resolution.
pub fn majority_ladder(histogram: &[Vec<u32>], recipe: &EncodingRecipe) -> Result<BitrateLadder, EvalError> {
    let indices: Vec<usize> = histogram
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, &c) in row.iter().enumerate() {
                if c >= row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(BitrateLadder::from_indices(recipe, &indices)?)
}

/// One evaluated sequence: its surface and ground-truth ladder.
#[derive(Debug, Clone)]
pub struct StudySequence {
    pub surface: RDSurface,
    pub ground_truth: BitrateLadder,
}

/// Per target bitrate, the `(actual rate, quality)` of each plotted column.
pub type PlotRows = Vec<(u32, Vec<Option<(f64, f64)>>)>;

/// A named set of ladders, keyed by sequence id.
#[derive(Debug, Clone)]
pub struct StudyMethod {
    pub name: String,
    pub ladders: BTreeMap<String, BitrateLadder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub sequence_id: String,
    pub method: String,
    pub bd_rate_percent: Option<f64>,
    pub bd_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_bd_rate_percent: Option<f64>,
    pub mean_bd_quality: Option<f64>,
    pub bd_rate_count: usize,
    pub bd_quality_count: usize,
    pub failed_sequences: usize,
    pub accuracy: Option<f64>,
    pub f_score: Option<f64>,
    pub g_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub methods: Vec<String>,
    pub rows: Vec<StudyRow>,
    pub summary: Vec<MethodSummary>,
    /// Per sequence, `(target bitrate, [(actual rate, quality)] per column)`
    /// with the hull first and then each method.
    #[serde(skip)]
    pub plot_data: BTreeMap<String, PlotRows>,
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

/// Compares every method's ladder curve against the ground-truth hull of
/// each sequence. Per-sequence failures are recorded in the rows and never
/// abort the study. Rows are ordered by sequence id, then method order.
pub fn run_study(
    recipe: &EncodingRecipe,
    sequences: &[StudySequence],
    methods: &[StudyMethod],
    options: &BDOptions,
) -> StudyReport {
    let mut ordered: Vec<&StudySequence> = sequences.iter().collect();
    ordered.sort_by(|a, b| a.surface.sequence_id.cmp(&b.surface.sequence_id));
    let mut rows = Vec::new();
    let mut plot_data = BTreeMap::new();
    for seq in ordered {
        let id = &seq.surface.sequence_id;
        let hull = hull_curve(&seq.surface, &seq.ground_truth);
        let mut plot: PlotRows =
            recipe.target_bitrates_kbps.iter().map(|&b| (b, Vec::new())).collect();
        let push_column = |plot: &mut PlotRows, curve: Option<&crate::RDCurve>| {
            for (b, cols) in plot.iter_mut() {
                cols.push(curve.and_then(|c| c.point_at(*b)).map(|p| (p.actual_bitrate_kbps, p.quality)));
            }
        };
        push_column(&mut plot, hull.as_ref().ok());
        for method in methods {
            let mut row = StudyRow {
                sequence_id: id.clone(),
                method: method.name.clone(),
                bd_rate_percent: None,
                bd_quality: None,
                failures: Vec::new(),
            };
            let curve = match (&hull, method.ladders.get(id)) {
                (Err(e), _) => {
                    row.failures.push(format!("hull: {e}"));
                    None
                }
                (_, None) => {
                    row.failures.push("no ladder for this sequence".into());
                    None
                }
                (Ok(_), Some(ladder)) => match ladder_curve(ladder, &seq.surface) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        row.failures.push(format!("ladder: {e}"));
                        None
                    }
                },
            };
            if let (Ok(h), Some(c)) = (&hull, &curve) {
                match bd_rate(c, h, options) {
                    Ok(v) => row.bd_rate_percent = Some(v),
                    Err(e) => row.failures.push(format!("bd_rate: {e}")),
                }
                match bd_quality(c, h, options) {
                    Ok(v) => row.bd_quality = Some(v),
                    Err(e) => row.failures.push(format!("bd_quality: {e}")),
                }
            }
            push_column(&mut plot, curve.as_ref());
            rows.push(row);
        }
        plot_data.insert(id.clone(), plot);
    }

    let truth: BTreeMap<&str, &BitrateLadder> =
        sequences.iter().map(|s| (s.surface.sequence_id.as_str(), &s.ground_truth)).collect();
    let summary = methods
        .iter()
        .map(|m| {
            let mine = || rows.iter().filter(|r| r.method == m.name);
            let (mean_bd_rate_percent, bd_rate_count) = mean(mine().filter_map(|r| r.bd_rate_percent));
            let (mean_bd_quality, bd_quality_count) = mean(mine().filter_map(|r| r.bd_quality));
            let (mut pred, mut gt) = (Vec::new(), Vec::new());
            for (id, ladder) in &m.ladders {
                if let Some(t) = truth.get(id.as_str()) {
                    pred.push(ladder.clone());
                    gt.push((*t).clone());
                }
            }
            let confusion = ConfusionTensor::from_ladders(&pred, &gt, recipe).ok();
            MethodSummary {
                method: m.name.clone(),
                mean_bd_rate_percent,
                mean_bd_quality,
                bd_rate_count,
                bd_quality_count,
                failed_sequences: mine().filter(|r| !r.failures.is_empty()).count(),
                accuracy: accuracy(&pred, &gt).ok(),
                f_score: confusion.as_ref().and_then(|c| f_score(c).ok()),
                g_mean: confusion.as_ref().and_then(|c| g_mean(c).ok()),
            }
        })
        .collect();

    StudyReport { methods: methods.iter().map(|m| m.name.clone()).collect(), rows, summary, plot_data }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StudyReport {
    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-sequence rows as CSV.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("sequence_id,method,bd_rate_percent,bd_quality,failures\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},\"{}\"",
                r.sequence_id,
                r.method,
                opt(r.bd_rate_percent),
                opt(r.bd_quality),
                r.failures.join("; ").replace('"', "'")
            )
            .unwrap();
        }
        out
    }

    /// Per-sequence `(bitrate, quality)` columns for the hull and each method.
    pub fn plot_csv(&self, sequence_id: &str) -> Option<String> {
        let rows = self.plot_data.get(sequence_id)?;
        let mut out = String::from("target_bitrate_kbps,hull_bitrate,hull_quality");
        for m in &self.methods {
            write!(out, ",{m}_bitrate,{m}_quality").unwrap();
        }
        out.push('\n');
        for (b, cols) in rows {
            write!(out, "{b}").unwrap();
            for c in cols {
                match c {
                    Some((rate, q)) => write!(out, ",{rate},{q}").unwrap(),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        Some(out)
    }
}
