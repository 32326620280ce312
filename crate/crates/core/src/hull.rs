//! Ground-truth ladders: at every preset bitrate, pick the resolution whose
//! encode reached the highest quality.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BitrateLadder, EncodingRecipe, ModelError, RDCurve, RDSurface, Resolution};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Fewest pixels wins an exact quality tie.
    #[default]
    LowestResolution,
    HighestResolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullOptions {
    pub tie_break: TieBreak,
    /// When false, a bitrate with no encoded point inherits the choice of
    /// the nearest covered bitrate below it (or above, at the bottom).
    pub require_full_coverage: bool,
}

impl Default for HullOptions {
    fn default() -> Self {
        Self { tie_break: TieBreak::LowestResolution, require_full_coverage: true }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HullError {
    #[error("surface {0} has no points")]
    EmptySurface(String),
    #[error("no resolution was encoded at {0} Kbps")]
    UncoveredBitrate(u32),
    #[error("surface resolution {0} is not in the recipe")]
    UnknownResolution(Resolution),
    #[error("ladder entry {resolution} at {bitrate_kbps} Kbps has no point in the surface")]
    Unresolvable { bitrate_kbps: u32, resolution: Resolution },
    #[error("ladder {index} does not match the recipe ({what})")]
    RecipeMismatch { index: usize, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Resolution column of highest quality among the points encoded at
/// `bitrate_kbps`, or `None` when nothing was encoded there.
fn best_column(surface: &RDSurface, recipe: &EncodingRecipe, bitrate_kbps: u32, tie_break: TieBreak) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    // recipe order runs from most to fewest pixels
    for (col, &res) in recipe.resolutions.iter().enumerate() {
        let Some(p) = surface.lookup(res, bitrate_kbps) else { continue };
        let better = match best {
            None => true,
            Some((_, q)) => match tie_break {
                TieBreak::LowestResolution => p.quality >= q,
                TieBreak::HighestResolution => p.quality > q,
            },
        };
        if better {
            best = Some((col, p.quality));
        }
    }
    best.map(|(col, _)| col)
}

/// Per-bitrate quality argmax over the resolutions encoded at that bitrate.
pub fn build_ladder(
    surface: &RDSurface,
    recipe: &EncodingRecipe,
    options: HullOptions,
) -> Result<BitrateLadder, HullError> {
    recipe.validate().map_err(ModelError::from)?;
    if surface.num_points() == 0 {
        return Err(HullError::EmptySurface(surface.sequence_id.clone()));
    }
    if let Some(r) = surface.curves.keys().find(|r| recipe.resolution_index(**r).is_none()) {
        return Err(HullError::UnknownResolution(*r));
    }
    let mut columns: Vec<Option<usize>> = recipe
        .target_bitrates_kbps
        .iter()
        .map(|&b| best_column(surface, recipe, b, options.tie_break))
        .collect();
    if let Some(i) = columns.iter().position(Option::is_none) {
        if options.require_full_coverage {
            return Err(HullError::UncoveredBitrate(recipe.target_bitrates_kbps[i]));
        }
        let first = columns.iter().flatten().copied().next().expect("non-empty surface");
        let mut carry = first;
        for c in columns.iter_mut() {
            match c {
                Some(v) => carry = *v,
                None => *c = Some(carry),
            }
        }
    }
    let indices: Vec<usize> = columns.into_iter().map(|c| c.expect("filled")).collect();
    Ok(BitrateLadder::from_indices(recipe, &indices)?)
}

/// The composite curve obtained by following `ladder` through `surface`.
pub fn follow_ladder(ladder: &BitrateLadder, surface: &RDSurface) -> Result<RDCurve, HullError> {
    let points = ladder
        .entries()
        .iter()
        .map(|e| {
            surface.lookup(e.resolution, e.bitrate_kbps).copied().ok_or(HullError::Unresolvable {
                bitrate_kbps: e.bitrate_kbps,
                resolution: e.resolution,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RDCurve::composite(points)?)
}

/// Quality-vs-bitrate envelope traced by the ground-truth ladder.
pub fn hull_curve(surface: &RDSurface, ladder: &BitrateLadder) -> Result<RDCurve, HullError> {
    follow_ladder(ladder, surface)
}

/// `B×R` counts of the resolution chosen at each bitrate across `ladders`.
pub fn class_histogram(ladders: &[BitrateLadder], recipe: &EncodingRecipe) -> Result<Vec<Vec<u32>>, HullError> {
    let (b, r) = (recipe.num_bitrates(), recipe.num_resolutions());
    let mut counts = vec![vec![0u32; r]; b];
    for (index, ladder) in ladders.iter().enumerate() {
        let mismatch = |what: String| HullError::RecipeMismatch { index, what };
        if ladder.len() != b {
            return Err(mismatch(format!("{} bitrates, recipe has {b}", ladder.len())));
        }
        for (i, e) in ladder.entries().iter().enumerate() {
            if e.bitrate_kbps != recipe.target_bitrates_kbps[i] {
                return Err(mismatch(format!("entry {i} is {} Kbps", e.bitrate_kbps)));
            }
            let col = recipe
                .resolution_index(e.resolution)
                .ok_or_else(|| mismatch(format!("unknown resolution {}", e.resolution)))?;
            counts[i][col] += 1;
        }
    }
    Ok(counts)
}

/// Histogram as CSV with header `bitrate_kbps,res_0,...,res_{R-1}`.
pub fn histogram_csv(counts: &[Vec<u32>], recipe: &EncodingRecipe) -> String {
    let mut out = String::from("bitrate_kbps");
    for j in 0..recipe.num_resolutions() {
        write!(out, ",res_{j}").unwrap();
    }
    out.push('\n');
    for (row, &b) in counts.iter().zip(&recipe.target_bitrates_kbps) {
        write!(out, "{b}").unwrap();
        for c in row {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RDPoint;

    fn pt(r: Resolution, b: u32, q: f64) -> RDPoint {
        RDPoint { resolution: r, target_bitrate_kbps: b, actual_bitrate_kbps: b as f64, quality: q }
    }

    fn small_recipe() -> EncodingRecipe {
        EncodingRecipe {
            resolutions: vec![Resolution::new(640, 360), Resolution::new(480, 270), Resolution::new(384, 216)],
            target_bitrates_kbps: vec![240, 375],
            codec_profile: String::new(),
        }
    }

    #[test]
    fn argmax_over_present_points() {
        let recipe = EncodingRecipe::dash_hevc();
        let (r360, r270, r216) = (recipe.resolutions[4], recipe.resolutions[5], recipe.resolutions[6]);
        let mut pts = vec![pt(r216, 240, 70.0), pt(r270, 240, 75.0), pt(r360, 240, 73.0)];
        pts.extend(recipe.target_bitrates_kbps[1..].iter().map(|&b| pt(recipe.resolutions[0], b, 90.0)));
        let s = RDSurface::from_points("s", "vmaf", &recipe, pts).unwrap();
        let ladder = build_ladder(&s, &recipe, HullOptions::default()).unwrap();
        assert_eq!(ladder.entries()[0].resolution, r270);
        assert!(ladder.entries()[1..].iter().all(|e| e.resolution == recipe.resolutions[0]));
    }

    #[test]
    fn ties_follow_option() {
        let recipe = small_recipe();
        let pts: Vec<_> = recipe
            .resolutions
            .iter()
            .flat_map(|&r| [pt(r, 240, 50.0), pt(r, 375, 60.0)])
            .collect();
        let s = RDSurface::from_points("s", "vmaf", &recipe, pts).unwrap();
        let low = build_ladder(&s, &recipe, HullOptions::default()).unwrap();
        assert_eq!(low.class_indices(), vec![2, 2]);
        let opts = HullOptions { tie_break: TieBreak::HighestResolution, ..Default::default() };
        assert_eq!(build_ladder(&s, &recipe, opts).unwrap().class_indices(), vec![0, 0]);
    }

    #[test]
    fn uncovered_bitrate_handling() {
        let recipe = small_recipe();
        let s = RDSurface::from_points("s", "vmaf", &recipe, vec![pt(recipe.resolutions[1], 240, 50.0)]).unwrap();
        assert_eq!(build_ladder(&s, &recipe, HullOptions::default()).unwrap_err(), HullError::UncoveredBitrate(375));
        let lenient = HullOptions { require_full_coverage: false, ..Default::default() };
        assert_eq!(build_ladder(&s, &recipe, lenient).unwrap().class_indices(), vec![1, 1]);
        let empty = RDSurface::from_points("e", "vmaf", &recipe, vec![]).unwrap();
        assert!(matches!(build_ladder(&empty, &recipe, HullOptions::default()), Err(HullError::EmptySurface(_))));
    }

    #[test]
    fn single_resolution_hull_is_that_curve() {
        let recipe = small_recipe();
        let r = recipe.resolutions[0];
        let s = RDSurface::from_points("s", "vmaf", &recipe, vec![pt(r, 240, 40.0), pt(r, 375, 55.0)]).unwrap();
        let ladder = build_ladder(&s, &recipe, HullOptions::default()).unwrap();
        let hull = hull_curve(&s, &ladder).unwrap();
        assert_eq!(hull.points, s.curves[&r].points);
    }

    #[test]
    fn histogram_counts_and_csv() {
        let recipe = small_recipe();
        let l = BitrateLadder::from_indices(&recipe, &[2, 0]).unwrap();
        let counts = class_histogram(&vec![l; 10], &recipe).unwrap();
        assert_eq!(counts, vec![vec![0, 0, 10], vec![10, 0, 0]]);
        assert_eq!(histogram_csv(&counts, &recipe), "bitrate_kbps,res_0,res_1,res_2\n240,0,0,10\n375,10,0,0\n");
        let other = BitrateLadder::from_indices(&EncodingRecipe::dash_hevc(), &[0; 10]).unwrap();
        assert!(matches!(class_histogram(&[other], &recipe), Err(HullError::RecipeMismatch { index: 0, .. })));
    }
}
