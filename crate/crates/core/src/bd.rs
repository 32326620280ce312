//! Bjøntegaard delta metrics between two RD curves.
//!
//! BD-Rate fits `ln(rate)` as a function of quality and reports the average
//! rate difference over the shared quality range; BD-Quality fits quality as
//! a function of `ln(rate)` and reports the average quality difference over
//! the shared rate range. Integrals use composite Simpson's rule split at the
//! interpolation knots, which is exact for the piecewise cubics fitted here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hull::{follow_ladder, HullError};
use crate::model::{BDResult, BitrateLadder, RDCurve, RDSurface};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Monotone piecewise cubic Hermite (Fritsch–Carlson slopes).
    #[default]
    PiecewiseCubicHermite,
    /// Least-squares cubic polynomial, as in the original BD method.
    CubicPolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BDOptions {
    pub interpolation: Interpolation,
    pub min_points: usize,
    pub integration_samples: usize,
}

impl Default for BDOptions {
    fn default() -> Self {
        Self { interpolation: Interpolation::PiecewiseCubicHermite, min_points: 4, integration_samples: 1000 }
    }
}

impl BDOptions {
    pub fn validate(&self) -> Result<(), BdError> {
        if self.min_points < 2 {
            return Err(BdError::Options("min_points must be at least 2"));
        }
        if self.interpolation == Interpolation::CubicPolynomial && self.min_points < 4 {
            return Err(BdError::Options("cubic polynomial fitting requires min_points ≥ 4"));
        }
        if self.integration_samples < 100 {
            return Err(BdError::Options("integration_samples must be at least 100"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BdError {
    #[error("invalid options: {0}")]
    Options(&'static str),
    #[error("{which} curve has {got} usable points, need {need}")]
    TooFewPoints { which: &'static str, got: usize, need: usize },
    #[error("{which} curve has a non-positive or non-finite rate")]
    InvalidRate { which: &'static str },
    #[error("{which} curve rate is not strictly increasing in quality")]
    NonMonotonic { which: &'static str },
    #[error("curves do not overlap in {0}")]
    NoOverlap(&'static str),
    #[error(transparent)]
    Ladder(#[from] HullError),
}

/// Piecewise cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing with at least two entries.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len());
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x, y, d }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// One-sided three-point end slope, kept shape-preserving.
fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Least-squares cubic in a centred and scaled variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFit {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl CubicFit {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let (lo, hi) = (x[0], x[x.len() - 1]);
        let center = 0.5 * (lo + hi);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let mut ata = [[0.0f64; 4]; 4];
        let mut aty = [0.0f64; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let u = (xi - center) / scale;
            let pow = [1.0, u, u * u, u * u * u];
            for r in 0..4 {
                aty[r] += pow[r] * yi;
                for c in 0..4 {
                    ata[r][c] += pow[r] * pow[c];
                }
            }
        }
        Self { coeffs: solve4(ata, aty), center, scale }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }
}

/// Gaussian elimination with partial pivoting on a 4×4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
enum Fit {
    Pchip(Pchip),
    Cubic(CubicFit),
}

impl Fit {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Fit::Pchip(p) => p.eval(t),
            Fit::Cubic(c) => c.eval(t),
        }
    }

    fn knots(&self) -> &[f64] {
        match self {
            Fit::Pchip(p) => p.knots(),
            Fit::Cubic(_) => &[],
        }
    }
}

/// Composite Simpson's rule over `[lo, hi]` with roughly `samples`
/// subintervals, split at `breaks` so each panel lies inside one cubic piece.
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], samples: usize) -> f64 {
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let span = hi - lo;
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut n = ((samples as f64 * (b - a) / span).round() as usize).max(2);
        n += n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
        }
        total += s * h / 3.0;
    }
    total
}

/// Axis a curve is fitted along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// `ln(rate)` as a function of quality.
    RateOverQuality,
    /// quality as a function of `ln(rate)`.
    QualityOverRate,
}

fn prepare(curve: &RDCurve, which: &'static str, axis: Axis, options: &BDOptions) -> Result<(Vec<f64>, Vec<f64>), BdError> {
    let pts = curve.rate_quality();
    if pts.len() < options.min_points {
        return Err(BdError::TooFewPoints { which, got: pts.len(), need: options.min_points });
    }
    if pts.iter().any(|&(r, q)| !(r.is_finite() && r > 0.0) || !q.is_finite()) {
        return Err(BdError::InvalidRate { which });
    }
    // (x, y) on the fitting axis; exact duplicates in x collapse to the point
    // of largest y (largest rate for BD-Rate, best quality for BD-Quality).
    let mut xy: Vec<(f64, f64)> = match axis {
        Axis::RateOverQuality => pts.iter().map(|&(r, q)| (q, r.ln())).collect(),
        Axis::QualityOverRate => pts.iter().map(|&(r, q)| (r.ln(), q)).collect(),
    };
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(xy.len());
    for p in xy {
        match dedup.last_mut() {
            Some(last) if last.0 == p.0 => last.1 = p.1,
            _ => dedup.push(p),
        }
    }
    let need = match options.interpolation {
        Interpolation::PiecewiseCubicHermite => 2,
        Interpolation::CubicPolynomial => 4,
    };
    if dedup.len() < need {
        return Err(BdError::TooFewPoints { which, got: dedup.len(), need });
    }
    if axis == Axis::RateOverQuality
        && options.interpolation == Interpolation::PiecewiseCubicHermite
        && dedup.windows(2).any(|w| w[1].1 <= w[0].1)
    {
        return Err(BdError::NonMonotonic { which });
    }
    Ok(dedup.into_iter().unzip())
}

fn fit(x: Vec<f64>, y: Vec<f64>, interpolation: Interpolation) -> Fit {
    match interpolation {
        Interpolation::PiecewiseCubicHermite => Fit::Pchip(Pchip::new(x, y)),
        Interpolation::CubicPolynomial => Fit::Cubic(CubicFit::new(&x, &y)),
    }
}

struct Fitted {
    test: Fit,
    reference: Fit,
    lo: f64,
    hi: f64,
}

fn fit_pair(test: &RDCurve, reference: &RDCurve, axis: Axis, options: &BDOptions) -> Result<Fitted, BdError> {
    options.validate()?;
    let (tx, ty) = prepare(test, "test", axis, options)?;
    let (rx, ry) = prepare(reference, "reference", axis, options)?;
    let lo = tx[0].max(rx[0]);
    let hi = tx[tx.len() - 1].min(rx[rx.len() - 1]);
    if !(lo < hi) {
        return Err(BdError::NoOverlap(match axis {
            Axis::RateOverQuality => "quality",
            Axis::QualityOverRate => "rate",
        }));
    }
    Ok(Fitted { test: fit(tx, ty, options.interpolation), reference: fit(rx, ry, options.interpolation), lo, hi })
}

fn mean_difference(f: &Fitted, samples: usize) -> f64 {
    let mut breaks = f.test.knots().to_vec();
    breaks.extend_from_slice(f.reference.knots());
    let t = integrate(|x| f.test.eval(x), f.lo, f.hi, &breaks, samples);
    let r = integrate(|x| f.reference.eval(x), f.lo, f.hi, &breaks, samples);
    (t - r) / (f.hi - f.lo)
}

/// Average rate difference of `test` against `reference` at equal quality,
/// in percent. Positive means `test` needs more bits.
pub fn bd_rate(test: &RDCurve, reference: &RDCurve, options: &BDOptions) -> Result<f64, BdError> {
    let f = fit_pair(test, reference, Axis::RateOverQuality, options)?;
    Ok(100.0 * (mean_difference(&f, options.integration_samples).exp() - 1.0))
}

/// Average quality difference (`test − reference`) at equal rate.
pub fn bd_quality(test: &RDCurve, reference: &RDCurve, options: &BDOptions) -> Result<f64, BdError> {
    let f = fit_pair(test, reference, Axis::QualityOverRate, options)?;
    Ok(mean_difference(&f, options.integration_samples))
}

/// Both deltas plus the shared `log10` rate interval.
pub fn bd(test: &RDCurve, reference: &RDCurve, options: &BDOptions) -> Result<BDResult, BdError> {
    let bd_quality_value = bd_quality(test, reference, options)?;
    let bd_rate_percent = bd_rate(test, reference, options)?;
    let f = fit_pair(test, reference, Axis::QualityOverRate, options)?;
    let ln10 = std::f64::consts::LN_10;
    Ok(BDResult { bd_rate_percent, bd_quality: bd_quality_value, overlap_interval: (f.lo / ln10, f.hi / ln10) })
}

/// Samples of both fitted quality-vs-rate functions over the shared rate
/// range, as `(rate_kbps, test_quality, reference_quality)`.
pub fn fitted_samples(
    test: &RDCurve,
    reference: &RDCurve,
    options: &BDOptions,
    count: usize,
) -> Result<Vec<(f64, f64, f64)>, BdError> {
    let f = fit_pair(test, reference, Axis::QualityOverRate, options)?;
    let n = count.max(2);
    Ok((0..n)
        .map(|i| {
            let x = f.lo + (f.hi - f.lo) * i as f64 / (n - 1) as f64;
            (x.exp(), f.test.eval(x), f.reference.eval(x))
        })
        .collect())
}

/// `(actual bitrate, quality)` at each preset bitrate, following the
/// ladder's resolution choices through the surface.
pub fn ladder_curve(ladder: &BitrateLadder, surface: &RDSurface) -> Result<RDCurve, BdError> {
    Ok(follow_ladder(ladder, surface)?)
}
