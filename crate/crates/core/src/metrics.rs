//! Precision and accuracy statistics.
//!
//! Precision is CEP: the radius of the circle around the estimate centroid
//! holding a given fraction of estimates. Accuracy is the mean distance to
//! the true position. Order statistics use the `ceil(fraction * n)`-th
//! smallest value with no interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Point2};

/// Below this many estimates a CEP is flagged as low-sample.
pub const MIN_CEP_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("fraction {0} must lie in (0, 1)")]
    BadFraction(f64),
    #[error("paired inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cep {
    pub radius: f64,
    pub fraction: f64,
    pub center: Point2,
    pub n_samples: usize,
    pub low_sample: bool,
}

fn centroid(points: &[Point2]) -> Point2 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point2::new(sx / n, sy / n)
}

/// `ceil(fraction * n)`-th smallest of `values` (1-based), values must be nonempty.
fn order_statistic(values: &mut [f64], fraction: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    // Guard against 0.68 * 100 = 68.00000000000001 style rounding.
    let k = ((fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    values[k.min(n) - 1]
}

/// CEP about the sample centroid.
pub fn cep(estimates: &[Point2], fraction: f64) -> Result<Cep, MetricsError> {
    if estimates.is_empty() {
        return Err(MetricsError::Empty);
    }
    cep_about(estimates, centroid(estimates), fraction)
}

/// CEP about an arbitrary center, e.g. the true position.
pub fn cep_about(estimates: &[Point2], center: Point2, fraction: f64) -> Result<Cep, MetricsError> {
    if estimates.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MetricsError::BadFraction(fraction));
    }
    let mut d: Vec<f64> = estimates.iter().map(|p| distance(*p, center)).collect();
    Ok(Cep {
        radius: order_statistic(&mut d, fraction),
        fraction,
        center,
        n_samples: estimates.len(),
        low_sample: estimates.len() < MIN_CEP_SAMPLES,
    })
}

/// Mean distance from the estimates to the truth.
pub fn accuracy(estimates: &[Point2], truth: Point2) -> Result<f64, MetricsError> {
    if estimates.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(estimates.iter().map(|p| distance(*p, truth)).sum::<f64>() / estimates.len() as f64)
}

/// Empirical CDF: the k-th sorted value carries fraction k/n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl CdfSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest value whose cumulative fraction reaches `p`.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.fractions
            .iter()
            .position(|&f| f >= p - 1e-12)
            .map(|i| self.values[i])
    }
}

pub fn cdf(values: &[f64]) -> Result<CdfSeries, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let fractions = (1..=v.len()).map(|k| k as f64 / n).collect();
    Ok(CdfSeries {
        values: v,
        fractions,
    })
}

/// Median with the usual midpoint rule for even counts.
pub fn median(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Linear-interpolated quantile (type 7), used for interquartile ranges.
pub fn quantile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cdf_tdoa: CdfSeries,
    pub cdf_coop: CdfSeries,
    pub median_tdoa: f64,
    pub median_coop: f64,
    pub max_tdoa: f64,
    pub max_coop: f64,
    /// Share of TDOA-only CEPs larger than the largest cooperative CEP.
    pub fraction_tdoa_above_coop_max: f64,
}

/// Compare paired per-configuration CEPs of the two algorithms.
pub fn compare_algorithms(cep_tdoa: &[f64], cep_coop: &[f64]) -> Result<Comparison, MetricsError> {
    if cep_tdoa.len() != cep_coop.len() {
        return Err(MetricsError::LengthMismatch(cep_tdoa.len(), cep_coop.len()));
    }
    let cdf_tdoa = cdf(cep_tdoa)?;
    let cdf_coop = cdf(cep_coop)?;
    let max_tdoa = *cdf_tdoa.values.last().expect("nonempty");
    let max_coop = *cdf_coop.values.last().expect("nonempty");
    let above = cep_tdoa.iter().filter(|&&v| v > max_coop).count();
    Ok(Comparison {
        median_tdoa: median(cep_tdoa)?,
        median_coop: median(cep_coop)?,
        max_tdoa,
        max_coop,
        fraction_tdoa_above_coop_max: above as f64 / cep_tdoa.len() as f64,
        cdf_tdoa,
        cdf_coop,
    })
}
