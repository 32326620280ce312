//! Domain types shared by every stage of the ladder pipeline.
//!
//! Resolution columns follow the recipe ordering everywhere: index 0 is the
//! largest pixel count.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frame size in pixels. Identity is `(width, height)`; names such as
/// "1080p" are display aliases only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
}

impl Resolution {
    pub const MIN_SIDE: u32 = 16;

    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Pixel count in megapixels.
    pub fn megapixels(&self) -> f64 {
        self.pixels() as f64 / 1e6
    }

    /// Short display alias, e.g. `1080p`.
    pub fn alias(&self) -> String {
        format!("{}p", self.height)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// A single recipe violation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecipeViolation {
    #[error("resolution set is empty")]
    EmptyResolutions,
    #[error("bitrate set is empty")]
    EmptyBitrates,
    #[error("R ≥ 2 required (got {0})")]
    TooFewResolutions(usize),
    #[error("B ≥ 2 required (got {0})")]
    TooFewBitrates(usize),
    #[error("resolution {0} is smaller than 16 pixels on a side")]
    ResolutionTooSmall(Resolution),
    #[error("duplicate resolution {0}")]
    DuplicateResolution(Resolution),
    #[error("duplicate pixel count for resolution {0}")]
    DuplicatePixelCount(Resolution),
    #[error("resolutions not descending by pixel count at index {0}")]
    ResolutionOrder(usize),
    #[error("bitrate must be positive")]
    ZeroBitrate,
    #[error("duplicate bitrate {0}")]
    DuplicateBitrate(u32),
    #[error("bitrates not ascending at index {0}")]
    NonAscendingBitrates(usize),
}

/// Every violation found in a recipe, in discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid recipe: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct RecipeReport(pub Vec<RecipeViolation>);

/// The resolution set `R` and the preset bitrate set `B` shared by a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingRecipe {
    pub resolutions: Vec<Resolution>,
    pub target_bitrates_kbps: Vec<u32>,
    #[serde(default)]
    pub codec_profile: String,
}

impl EncodingRecipe {
    /// Seven resolutions from 1080p down to 216p and the ten multi-codec DASH
    /// bitrates from 240 to 5800 Kbps, encoded with HEVC.
    pub fn dash_hevc() -> Self {
        Self {
            resolutions: vec![
                Resolution::new(1920, 1080),
                Resolution::new(1280, 720),
                Resolution::new(960, 540),
                Resolution::new(768, 432),
                Resolution::new(640, 360),
                Resolution::new(480, 270),
                Resolution::new(384, 216),
            ],
            target_bitrates_kbps: vec![240, 375, 550, 750, 1000, 1500, 2300, 3000, 4300, 5800],
            codec_profile: "x265-2pass".to_string(),
        }
    }

    pub fn num_resolutions(&self) -> usize {
        self.resolutions.len()
    }

    pub fn num_bitrates(&self) -> usize {
        self.target_bitrates_kbps.len()
    }

    pub fn resolution_index(&self, resolution: Resolution) -> Option<usize> {
        self.resolutions.iter().position(|r| *r == resolution)
    }

    pub fn bitrate_index(&self, bitrate_kbps: u32) -> Option<usize> {
        self.target_bitrates_kbps.binary_search(&bitrate_kbps).ok()
    }

    pub fn violations(&self) -> Vec<RecipeViolation> {
        let mut out = Vec::new();
        let r = self.resolutions.len();
        let b = self.target_bitrates_kbps.len();
        if r == 0 {
            out.push(RecipeViolation::EmptyResolutions);
        } else if r < 2 {
            out.push(RecipeViolation::TooFewResolutions(r));
        }
        if b == 0 {
            out.push(RecipeViolation::EmptyBitrates);
        } else if b < 2 {
            out.push(RecipeViolation::TooFewBitrates(b));
        }
        for (i, res) in self.resolutions.iter().enumerate() {
            if res.width < Resolution::MIN_SIDE || res.height < Resolution::MIN_SIDE {
                out.push(RecipeViolation::ResolutionTooSmall(*res));
            }
            if self.resolutions[..i].contains(res) {
                out.push(RecipeViolation::DuplicateResolution(*res));
            } else if self.resolutions[..i].iter().any(|o| o.pixels() == res.pixels()) {
                out.push(RecipeViolation::DuplicatePixelCount(*res));
            } else if i > 0 && self.resolutions[i - 1].pixels() < res.pixels() {
                out.push(RecipeViolation::ResolutionOrder(i));
            }
        }
        for (i, &rate) in self.target_bitrates_kbps.iter().enumerate() {
            if rate == 0 {
                out.push(RecipeViolation::ZeroBitrate);
            }
            if i > 0 {
                let prev = self.target_bitrates_kbps[i - 1];
                if prev == rate {
                    out.push(RecipeViolation::DuplicateBitrate(rate));
                } else if prev > rate {
                    out.push(RecipeViolation::NonAscendingBitrates(i));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), RecipeReport> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(RecipeReport(v))
        }
    }
}

/// Returns the recipe unchanged when it satisfies every invariant.
pub fn validate_recipe(recipe: EncodingRecipe) -> Result<EncodingRecipe, RecipeReport> {
    recipe.validate().map(|_| recipe)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Recipe(#[from] RecipeReport),
    #[error("resolution {0} is not part of the recipe")]
    UnknownResolution(Resolution),
    #[error("bitrate {0} Kbps is not part of the recipe")]
    UnknownBitrate(u32),
    #[error("duplicate point at {resolution} / {bitrate_kbps} Kbps")]
    DuplicatePoint { resolution: Resolution, bitrate_kbps: u32 },
    #[error("point at {resolution} / {bitrate_kbps} Kbps has {what}")]
    InvalidPoint { resolution: Resolution, bitrate_kbps: u32, what: &'static str },
    #[error("curve for {curve} contains a point at {point}")]
    MixedCurve { curve: Resolution, point: Resolution },
    #[error("curve target bitrates are not strictly ascending")]
    CurveOrder,
    #[error("ladder has {got} entries, recipe has {want} bitrates")]
    LadderLength { got: usize, want: usize },
    #[error("ladder entry {index} is for {got} Kbps, expected {want} Kbps")]
    LadderBitrate { index: usize, got: u32, want: u32 },
    #[error("one-hot row {0} does not contain exactly one 1")]
    OneHotRow(usize),
    #[error("one-hot matrix is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    OneHotShape { rows: usize, cols: usize, want_rows: usize, want_cols: usize },
}

/// One encode of a sequence: the target preset, the bitrate actually
/// produced, and the measured quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub resolution: Resolution,
    pub target_bitrate_kbps: u32,
    pub actual_bitrate_kbps: f64,
    pub quality: f64,
}

impl RDPoint {
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |what| ModelError::InvalidPoint {
            resolution: self.resolution,
            bitrate_kbps: self.target_bitrate_kbps,
            what,
        };
        if self.target_bitrate_kbps == 0 {
            return Err(bad("a zero target bitrate"));
        }
        if !(self.actual_bitrate_kbps.is_finite() && self.actual_bitrate_kbps > 0.0) {
            return Err(bad("a non-positive actual bitrate"));
        }
        if !(0.0..=100.0).contains(&self.quality) {
            return Err(bad("quality outside [0, 100]"));
        }
        Ok(())
    }
}

/// Quality-vs-bitrate points sorted by target bitrate.
///
/// `resolution` is `Some` for a single-resolution encode curve and `None` for
/// composite curves (hulls, ladder curves) whose points each keep their own
/// resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    pub resolution: Option<Resolution>,
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    /// Builds a single-resolution curve, sorting points by target bitrate.
    pub fn new(resolution: Resolution, mut points: Vec<RDPoint>) -> Result<Self, ModelError> {
        points.sort_by_key(|p| p.target_bitrate_kbps);
        for p in &points {
            if p.resolution != resolution {
                return Err(ModelError::MixedCurve { curve: resolution, point: p.resolution });
            }
            p.check()?;
        }
        check_strictly_ascending(&points)?;
        Ok(Self { resolution: Some(resolution), points })
    }

    /// Builds a composite curve from points that may differ in resolution.
    pub fn composite(mut points: Vec<RDPoint>) -> Result<Self, ModelError> {
        points.sort_by_key(|p| p.target_bitrate_kbps);
        for p in &points {
            p.check()?;
        }
        check_strictly_ascending(&points)?;
        Ok(Self { resolution: None, points })
    }

    pub fn point_at(&self, target_bitrate_kbps: u32) -> Option<&RDPoint> {
        self.points
            .binary_search_by_key(&target_bitrate_kbps, |p| p.target_bitrate_kbps)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(actual bitrate, quality)` pairs in target-bitrate order.
    pub fn rate_quality(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.actual_bitrate_kbps, p.quality)).collect()
    }
}

fn check_strictly_ascending(points: &[RDPoint]) -> Result<(), ModelError> {
    if let Some(w) = points.windows(2).find(|w| w[0].target_bitrate_kbps == w[1].target_bitrate_kbps) {
        return Err(ModelError::DuplicatePoint {
            resolution: w[1].resolution,
            bitrate_kbps: w[1].target_bitrate_kbps,
        });
    }
    Ok(())
}

pub const DEFAULT_QUALITY_METRIC: &str = "vmaf";

/// The RD characteristic of one sequence: a curve per encoded resolution.
///
/// Pairs excluded by the probe bounds are simply absent. A surface where some
/// target bitrate has no point at any resolution is kept but flagged through
/// [`RDSurface::uncovered_bitrates`].
#[derive(Debug, Clone, PartialEq)]
pub struct RDSurface {
    pub sequence_id: String,
    pub quality_metric: String,
    pub curves: BTreeMap<Resolution, RDCurve>,
    uncovered: Vec<u32>,
}

impl RDSurface {
    pub fn from_points(
        sequence_id: impl Into<String>,
        quality_metric: impl Into<String>,
        recipe: &EncodingRecipe,
        points: Vec<RDPoint>,
    ) -> Result<Self, ModelError> {
        recipe.validate()?;
        let mut grouped: BTreeMap<Resolution, Vec<RDPoint>> = BTreeMap::new();
        for p in points {
            if recipe.resolution_index(p.resolution).is_none() {
                return Err(ModelError::UnknownResolution(p.resolution));
            }
            if recipe.bitrate_index(p.target_bitrate_kbps).is_none() {
                return Err(ModelError::UnknownBitrate(p.target_bitrate_kbps));
            }
            grouped.entry(p.resolution).or_default().push(p);
        }
        let curves = grouped
            .into_iter()
            .map(|(res, pts)| RDCurve::new(res, pts).map(|c| (res, c)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        let uncovered = recipe
            .target_bitrates_kbps
            .iter()
            .copied()
            .filter(|&b| curves.values().all(|c| c.point_at(b).is_none()))
            .collect();
        Ok(Self {
            sequence_id: sequence_id.into(),
            quality_metric: quality_metric.into(),
            curves,
            uncovered,
        })
    }

    /// Target bitrates with no encoded point at any resolution.
    pub fn uncovered_bitrates(&self) -> &[u32] {
        &self.uncovered
    }

    pub fn is_complete(&self) -> bool {
        self.uncovered.is_empty()
    }

    pub fn lookup(&self, resolution: Resolution, target_bitrate_kbps: u32) -> Option<&RDPoint> {
        self.curves.get(&resolution)?.point_at(target_bitrate_kbps)
    }

    pub fn points(&self) -> impl Iterator<Item = &RDPoint> {
        self.curves.values().flat_map(|c| c.points.iter())
    }

    pub fn num_points(&self) -> usize {
        self.curves.values().map(RDCurve::len).sum()
    }

    /// Points ordered by (recipe resolution index, target bitrate).
    pub fn ordered_points(&self, recipe: &EncodingRecipe) -> Vec<RDPoint> {
        recipe
            .resolutions
            .iter()
            .filter_map(|r| self.curves.get(r))
            .flat_map(|c| c.points.iter().copied())
            .collect()
    }
}

/// Returns the unique stored point for `(resolution, target_bitrate)`, or
/// `None` when that pair was never encoded.
pub fn surface_lookup(surface: &RDSurface, resolution: Resolution, target_bitrate_kbps: u32) -> Option<RDPoint> {
    surface.lookup(resolution, target_bitrate_kbps).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub bitrate_kbps: u32,
    pub resolution: Resolution,
}

/// One resolution per preset bitrate, together with its `B×R` one-hot form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitrateLadder {
    entries: Vec<LadderEntry>,
    one_hot: Vec<Vec<u8>>,
}

impl BitrateLadder {
    pub fn from_entries(recipe: &EncodingRecipe, entries: Vec<LadderEntry>) -> Result<Self, ModelError> {
        let b = recipe.num_bitrates();
        if entries.len() != b {
            return Err(ModelError::LadderLength { got: entries.len(), want: b });
        }
        let mut one_hot = vec![vec![0u8; recipe.num_resolutions()]; b];
        for (i, (entry, &want)) in entries.iter().zip(&recipe.target_bitrates_kbps).enumerate() {
            if entry.bitrate_kbps != want {
                return Err(ModelError::LadderBitrate { index: i, got: entry.bitrate_kbps, want });
            }
            let col = recipe
                .resolution_index(entry.resolution)
                .ok_or(ModelError::UnknownResolution(entry.resolution))?;
            one_hot[i][col] = 1;
        }
        Ok(Self { entries, one_hot })
    }

    /// Builds a ladder from one resolution column index per bitrate row.
    pub fn from_indices(recipe: &EncodingRecipe, indices: &[usize]) -> Result<Self, ModelError> {
        let b = recipe.num_bitrates();
        if indices.len() != b {
            return Err(ModelError::LadderLength { got: indices.len(), want: b });
        }
        let entries = indices
            .iter()
            .zip(&recipe.target_bitrates_kbps)
            .enumerate()
            .map(|(i, (&col, &bitrate_kbps))| {
                recipe
                    .resolutions
                    .get(col)
                    .map(|&resolution| LadderEntry { bitrate_kbps, resolution })
                    .ok_or(ModelError::OneHotRow(i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(recipe, entries)
    }

    pub fn from_one_hot(recipe: &EncodingRecipe, one_hot: &[Vec<u8>]) -> Result<Self, ModelError> {
        let (want_rows, want_cols) = (recipe.num_bitrates(), recipe.num_resolutions());
        if one_hot.len() != want_rows || one_hot.iter().any(|r| r.len() != want_cols) {
            return Err(ModelError::OneHotShape {
                rows: one_hot.len(),
                cols: one_hot.first().map_or(0, Vec::len),
                want_rows,
                want_cols,
            });
        }
        let mut indices = Vec::with_capacity(want_rows);
        for (i, row) in one_hot.iter().enumerate() {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j).collect();
            if ones.len() != 1 || row.iter().any(|&v| v > 1) {
                return Err(ModelError::OneHotRow(i));
            }
            indices.push(ones[0]);
        }
        Self::from_indices(recipe, &indices)
    }

    pub fn entries(&self) -> &[LadderEntry] {
        &self.entries
    }

    pub fn one_hot(&self) -> &[Vec<u8>] {
        &self.one_hot
    }

    /// Chosen resolution column per bitrate row.
    pub fn class_indices(&self) -> Vec<usize> {
        self.one_hot
            .iter()
            .map(|row| row.iter().position(|&v| v == 1).expect("validated one-hot row"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bjøntegaard deltas between a test and a reference curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BDResult {
    pub bd_rate_percent: f64,
    pub bd_quality: f64,
    /// Overlapping `log10` bitrate interval of the two curves.
    pub overlap_interval: (f64, f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(res: Resolution, b: u32, q: f64) -> RDPoint {
        RDPoint { resolution: res, target_bitrate_kbps: b, actual_bitrate_kbps: b as f64, quality: q }
    }

    #[test]
    fn dash_recipe_is_valid() {
        let recipe = validate_recipe(EncodingRecipe::dash_hevc()).unwrap();
        assert_eq!(recipe.num_resolutions(), 7);
        assert_eq!(recipe.num_bitrates(), 10);
        assert_eq!(recipe.resolutions[0].alias(), "1080p");
        assert_eq!(recipe.resolutions[6].alias(), "216p");
    }

    #[test]
    fn duplicate_bitrate_is_reported() {
        let mut recipe = EncodingRecipe::dash_hevc();
        recipe.target_bitrates_kbps = vec![240, 240];
        let err = validate_recipe(recipe).unwrap_err();
        assert_eq!(err.0, vec![RecipeViolation::DuplicateBitrate(240)]);
        assert!(err.to_string().contains("duplicate bitrate"));
    }

    #[test]
    fn single_resolution_is_rejected() {
        let mut recipe = EncodingRecipe::dash_hevc();
        recipe.resolutions.truncate(1);
        let err = validate_recipe(recipe).unwrap_err();
        assert!(err.to_string().contains("R ≥ 2 required"));
    }

    #[test]
    fn multiple_violations_are_collected() {
        let recipe = EncodingRecipe {
            resolutions: vec![Resolution::new(640, 360), Resolution::new(1280, 720), Resolution::new(640, 360)],
            target_bitrates_kbps: vec![500, 400],
            codec_profile: String::new(),
        };
        let v = recipe.violations();
        assert!(v.contains(&RecipeViolation::ResolutionOrder(1)));
        assert!(v.contains(&RecipeViolation::DuplicateResolution(Resolution::new(640, 360))));
        assert!(v.contains(&RecipeViolation::NonAscendingBitrates(1)));
        let empty = EncodingRecipe { resolutions: vec![], target_bitrates_kbps: vec![], codec_profile: String::new() };
        assert_eq!(empty.violations(), vec![RecipeViolation::EmptyResolutions, RecipeViolation::EmptyBitrates]);
    }

    #[test]
    fn lookup_respects_exclusions() {
        let recipe = EncodingRecipe::dash_hevc();
        let r216 = Resolution::new(384, 216);
        let r1080 = Resolution::new(1920, 1080);
        let mut pts: Vec<RDPoint> = recipe
            .target_bitrates_kbps
            .iter()
            .filter(|&&b| b <= 1000)
            .map(|&b| point(r216, b, 50.0))
            .collect();
        pts.extend(recipe.target_bitrates_kbps.iter().map(|&b| point(r1080, b, 60.0)));
        let s = RDSurface::from_points("seq", DEFAULT_QUALITY_METRIC, &recipe, pts).unwrap();
        assert!(surface_lookup(&s, r216, 2300).is_none());
        assert_eq!(surface_lookup(&s, r1080, 5800).unwrap().target_bitrate_kbps, 5800);
        assert!(s.is_complete());
    }

    #[test]
    fn incomplete_surface_is_flagged() {
        let recipe = EncodingRecipe::dash_hevc();
        let r = Resolution::new(384, 216);
        let s = RDSurface::from_points("s", "vmaf", &recipe, vec![point(r, 240, 40.0)]).unwrap();
        assert!(!s.is_complete());
        assert_eq!(s.uncovered_bitrates().len(), 9);
    }

    #[test]
    fn surface_rejects_bad_points() {
        let recipe = EncodingRecipe::dash_hevc();
        let r = Resolution::new(384, 216);
        let dup = vec![point(r, 240, 40.0), point(r, 240, 41.0)];
        assert!(matches!(
            RDSurface::from_points("s", "vmaf", &recipe, dup),
            Err(ModelError::DuplicatePoint { .. })
        ));
        let off_grid = vec![point(r, 241, 40.0)];
        assert_eq!(
            RDSurface::from_points("s", "vmaf", &recipe, off_grid).unwrap_err(),
            ModelError::UnknownBitrate(241)
        );
        let bad_q = vec![point(r, 240, 101.0)];
        assert!(RDSurface::from_points("s", "vmaf", &recipe, bad_q).is_err());
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let recipe = EncodingRecipe::dash_hevc();
        let idx = [6, 5, 4, 3, 2, 2, 1, 1, 0, 0];
        let ladder = BitrateLadder::from_indices(&recipe, &idx).unwrap();
        for row in ladder.one_hot() {
            assert_eq!(row.iter().map(|&v| v as u32).sum::<u32>(), 1);
        }
        assert_eq!(ladder.class_indices(), idx);
        let bad = vec![vec![0u8; 7]; 10];
        assert_eq!(BitrateLadder::from_one_hot(&recipe, &bad).unwrap_err(), ModelError::OneHotRow(0));
    }

    #[test]
    fn resolution_serializes_as_w_h() {
        let json = serde_json::to_string(&Resolution::new(1920, 1080)).unwrap();
        assert_eq!(json, r#"{"w":1920,"h":1080}"#);
    }
}
