//! Probabilistic scores: CRPS, interval score and calibration score.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{CamulError, Result};
use crate::exec::{map_indexed, Execution};

pub const DEFAULT_IS_HALF_WIDTH: f64 = 0.5;
pub const SIMPSON_NODES: usize = 101;
/// Standard deviation floor for degenerate ensembles in the interval score.
pub const IS_STD_FLOOR: f64 = 1e-6;

/// Confidence grid `0.05, 0.10, ..., 0.95`.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Sample CRPS in energy form, `E|X - y| - ½ E|X - X'|`, with the second
/// expectation over all `S²` ordered pairs.
pub fn crps_samples(samples: &[f64], y: f64) -> f64 {
    let n = samples.len();
    if n == 0 {
        return f64::NAN;
    }
    let nf = n as f64;
    let abs_err = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / nf;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_i Σ_k |x_i - x_k| = 2 Σ_i (2i - n + 1) x_(i) for ascending x_(i).
    let pair_sum: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - nf + 1.0) * x).sum::<f64>() * 2.0;
    (abs_err - 0.5 * pair_sum / (nf * nf)).max(0.0)
}

/// Closed-form CRPS of `N(mean, std²)` at `y`.
pub fn crps_gaussian(mean: f64, std: f64, y: f64) -> f64 {
    if std <= 0.0 {
        return (y - mean).abs();
    }
    let z = (y - mean) / std;
    let n = Normal::standard();
    std * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// Composite Simpson rule with `nodes` (odd, ≥ 3) equally spaced nodes.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count >= 3");
    let intervals = nodes - 1;
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals)
        .map(|i| {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(a + i as f64 * h)
        })
        .sum();
    h / 3.0 * (f(a) + inner + f(b))
}

/// `-∫_{y-L}^{y+L} log p(x) dx` for an arbitrary density.
pub fn interval_score_density(density: impl Fn(f64) -> f64, y: f64, half_width: f64) -> Result<f64> {
    if !(half_width > 0.0) {
        return Err(CamulError::InvalidConfig("interval half-width must be positive".into()));
    }
    Ok(-simpson(|x| density(x).ln(), y - half_width, y + half_width, SIMPSON_NODES))
}

/// How the interval score reconstructs a density from samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    /// Gaussian with the ensemble's mean and population std.
    #[default]
    GaussianMoments,
    /// Gaussian kernel density with Silverman's bandwidth.
    Kernel,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn floored_std(std: f64) -> f64 {
    if std < IS_STD_FLOOR {
        warn!("degenerate ensemble (std {std:e}); flooring at {IS_STD_FLOOR:e}");
        IS_STD_FLOOR
    } else {
        std
    }
}

/// Interval score of a sample ensemble with a reconstructed density.
pub fn interval_score_with(samples: &[f64], y: f64, half_width: f64, method: DensityMethod) -> Result<f64> {
    if samples.is_empty() {
        return Err(CamulError::Empty("ensemble".into()));
    }
    if !(half_width > 0.0) {
        return Err(CamulError::InvalidConfig("interval half-width must be positive".into()));
    }
    let (mean, std) = mean_std(samples);
    match method {
        DensityMethod::GaussianMoments => {
            let std = floored_std(std);
            let norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - std.ln();
            // Integrate the log-density directly; exp then ln would underflow far in the tails.
            let log_p = |x: f64| norm - 0.5 * ((x - mean) / std).powi(2);
            Ok(-simpson(log_p, y - half_width, y + half_width, SIMPSON_NODES))
        }
        DensityMethod::Kernel => {
            let n = samples.len() as f64;
            let bw = floored_std(1.06 * std * n.powf(-0.2));
            let density = |x: f64| {
                samples.iter().map(|s| (-0.5 * ((x - s) / bw).powi(2)).exp()).sum::<f64>()
                    / (n * bw * (2.0 * std::f64::consts::PI).sqrt())
            };
            interval_score_density(|x| density(x).max(f64::MIN_POSITIVE), y, half_width)
        }
    }
}

pub fn interval_score(samples: &[f64], y: f64, half_width: f64) -> Result<f64> {
    interval_score_with(samples, y, half_width, DensityMethod::GaussianMoments)
}

/// Linear-interpolation quantile of ascending `sorted` at `p ∈ [0, 1]`
/// (position `(S - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `[q_{(1-c)/2}, q_{(1+c)/2}]` of ascending `sorted`.
pub fn central_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    (quantile_sorted(sorted, (1.0 - level) / 2.0), quantile_sorted(sorted, (1.0 + level) / 2.0))
}

fn check_levels(levels: &[f64]) -> Result<()> {
    match levels.iter().find(|&&c| !(c > 0.0 && c < 1.0)) {
        Some(&bad) => Err(CamulError::InvalidLevel(bad)),
        None => Ok(()),
    }
}

/// Fraction of cases whose truth lies inside the central interval, per level.
pub fn calibration_curve(ensembles: &[Vec<f64>], truths: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if ensembles.is_empty() {
        return Err(CamulError::Empty("forecast list".into()));
    }
    if ensembles.len() != truths.len() {
        return Err(crate::error::shape_err("truths", ensembles.len(), truths.len()));
    }
    check_levels(levels)?;
    let mut hits = vec![0usize; levels.len()];
    for (samples, &y) in ensembles.iter().zip(truths) {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        for (h, &c) in hits.iter_mut().zip(levels) {
            let (lo, hi) = central_interval(&sorted, c);
            if lo <= y && y <= hi {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / truths.len() as f64).collect())
}

/// Trapezoid estimate of `∫_0^1 |k(c) - c| dc` over `levels`, with `k(0) = 0`
/// and `k(1) = 1` appended.
pub fn calibration_score(curve: &[f64], levels: &[f64]) -> Result<f64> {
    if curve.len() != levels.len() {
        return Err(crate::error::shape_err("calibration curve", levels.len(), curve.len()));
    }
    check_levels(levels)?;
    let mut points: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    points.extend(levels.iter().zip(curve).map(|(&c, &k)| (c, (k - c).abs())));
    points.push((1.0, 0.0));
    Ok(points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub is_half_width: f64,
    pub levels: Vec<f64>,
    pub density: DensityMethod,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { is_half_width: DEFAULT_IS_HALF_WIDTH, levels: default_levels(), density: DensityMethod::default() }
    }
}

/// Scores of one (series, time) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub series_id: String,
    pub target_index: usize,
    pub truth: f64,
    pub crps: f64,
    pub interval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub series_id: String,
    pub cells: usize,
    pub crps: f64,
    pub interval_score: f64,
    pub calibration_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cells: usize,
    pub crps: f64,
    pub interval_score: f64,
    pub calibration_score: f64,
    pub levels: Vec<f64>,
    pub calibration_curve: Vec<f64>,
    pub is_half_width: f64,
    pub density: DensityMethod,
    pub per_series: Vec<SeriesScore>,
    pub per_cell: Vec<CellScore>,
}

/// One forecast cell to be scored.
pub struct Cell<'a> {
    pub series_id: &'a str,
    pub target_index: usize,
    pub samples: Vec<f64>,
    pub truth: f64,
    /// Affine map into the units the interval score is measured in.
    pub is_scale: (f64, f64),
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Scores every cell and aggregates overall and per series.
pub fn evaluate(cells: &[Cell], config: &MetricConfig, exec: Execution) -> Result<EvalResult> {
    if cells.is_empty() {
        return Err(CamulError::Empty("evaluation cells".into()));
    }
    let scored = map_indexed(exec, cells.len(), |i| {
        let c = &cells[i];
        let (shift, scale) = c.is_scale;
        let std_samples: Vec<f64> = c.samples.iter().map(|x| (x - shift) / scale).collect();
        let is = interval_score_with(&std_samples, (c.truth - shift) / scale, config.is_half_width, config.density)?;
        Ok(CellScore {
            series_id: c.series_id.to_string(),
            target_index: c.target_index,
            truth: c.truth,
            crps: crps_samples(&c.samples, c.truth),
            interval_score: is,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let ensembles: Vec<Vec<f64>> = cells.iter().map(|c| c.samples.clone()).collect();
    let truths: Vec<f64> = cells.iter().map(|c| c.truth).collect();
    let curve = calibration_curve(&ensembles, &truths, &config.levels)?;
    let cs = calibration_score(&curve, &config.levels)?;

    let mut series: Vec<&str> = Vec::new();
    for c in cells {
        if !series.contains(&c.series_id) {
            series.push(c.series_id);
        }
    }
    let per_series = series
        .iter()
        .map(|&id| {
            let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].series_id == id).collect();
            let ens: Vec<Vec<f64>> = idx.iter().map(|&i| ensembles[i].clone()).collect();
            let tr: Vec<f64> = idx.iter().map(|&i| truths[i]).collect();
            let curve = calibration_curve(&ens, &tr, &config.levels)?;
            Ok(SeriesScore {
                series_id: id.to_string(),
                cells: idx.len(),
                crps: mean(idx.iter().map(|&i| scored[i].crps)),
                interval_score: mean(idx.iter().map(|&i| scored[i].interval_score)),
                calibration_score: calibration_score(&curve, &config.levels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalResult {
        cells: cells.len(),
        crps: mean(scored.iter().map(|c| c.crps)),
        interval_score: mean(scored.iter().map(|c| c.interval_score)),
        calibration_score: cs,
        levels: config.levels.clone(),
        calibration_curve: curve,
        is_half_width: config.is_half_width,
        density: config.density,
        per_series,
        per_cell: scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_crps(x: &[f64], y: f64) -> f64 {
        let n = x.len() as f64;
        let a = x.iter().map(|v| (v - y).abs()).sum::<f64>() / n;
        let mut b = 0.0;
        for p in x {
            for q in x {
                b += (p - q).abs();
            }
        }
        a - 0.5 * b / (n * n)
    }

    #[test]
    fn crps_hand_cases() {
        assert_eq!(crps_samples(&[0.0, 2.0], 1.0), 0.5);
        assert_eq!(crps_samples(&[3.0; 5], 3.0), 0.0);
        let x = [0.3, -1.2, 4.0, 2.2, 2.2, 0.0, 7.5];
        assert_abs_diff_eq!(crps_samples(&x, 1.1), brute_crps(&x, 1.1), epsilon = 1e-12);
    }

    #[test]
    fn crps_gaussian_at_mean() {
        let expected = 2.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(crps_gaussian(0.0, 1.0, 0.0), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(crps_gaussian(1.0, 3.0, 1.0), 3.0 * expected, epsilon = 1e-12);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 5);
        // [x⁴/4 - x² + x] from -1 to 2 = 2 - (-1.75).
        assert_abs_diff_eq!(v, 3.75, epsilon = 1e-12);
    }

    #[test]
    fn interval_score_closed_forms() {
        let norm = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let is = interval_score_density(norm, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(is, (2.0 * std::f64::consts::PI).ln() + 1.0 / 3.0, epsilon = 1e-6);
        let l = 0.8;
        let uni = interval_score_density(|_| 1.0 / (2.0 * l), 3.0, l).unwrap();
        assert_abs_diff_eq!(uni, 2.0 * l * (2.0 * l).ln(), epsilon = 1e-12);
        assert!(interval_score_density(norm, 0.0, 0.0).is_err());
    }

    #[test]
    fn interval_score_grows_away_from_mean() {
        let samples = [-1.0, 0.0, 1.0, -0.5, 0.5];
        let a = interval_score(&samples, 0.0, 0.5).unwrap();
        let b = interval_score(&samples, 0.7, 0.5).unwrap();
        let c = interval_score(&samples, 1.4, 0.5).unwrap();
        assert!(a < b && b < c);
        assert!(interval_score(&[2.0, 2.0], 2.0, 0.5).unwrap().is_finite());
    }

    #[test]
    fn quantiles_linear_interpolation() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = central_interval(&s, 0.9);
        assert_abs_diff_eq!(lo, 5.95, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 95.05, epsilon = 1e-12);
        let (lo, hi) = central_interval(&s, 0.0);
        assert_eq!(lo, hi);
        assert_abs_diff_eq!(lo, 50.5, epsilon = 1e-12);
    }

    #[test]
    fn calibration_trivial_curves() {
        let levels = default_levels();
        let ens = vec![vec![1.0, 2.0, 3.0]; 4];
        assert_eq!(calibration_curve(&ens, &[2.0; 4], &levels).unwrap(), vec![1.0; 19]);
        assert_eq!(calibration_curve(&ens, &[9.0; 4], &levels).unwrap(), vec![0.0; 19]);
        assert!(calibration_curve(&ens, &[9.0; 4], &[1.0]).is_err());
    }

    #[test]
    fn calibration_score_trapezoid() {
        let levels = default_levels();
        assert_abs_diff_eq!(calibration_score(&levels, &levels).unwrap(), 0.0, epsilon = 1e-15);
        // k = 1 on the interior grid: |1 - c| falls linearly from 0.95 at c = 0.05
        // to 0.05 at c = 0.95 with both ends pinned to 0. Hand trapezoid:
        // 0.05 * 0.95 / 2 + 0.9 * (0.95 + 0.05) / 2 + 0.05 * 0.05 / 2 = 0.475.
        let ones = vec![1.0; 19];
        assert_abs_diff_eq!(calibration_score(&ones, &levels).unwrap(), 0.475, epsilon = 1e-12);
        // Piecewise: |k - c| = 0.1 at 0.5 only.
        let mut k = levels.clone();
        k[9] += 0.1;
        assert_abs_diff_eq!(calibration_score(&k, &levels).unwrap(), 0.1 * 0.05, epsilon = 1e-12);
    }
}
