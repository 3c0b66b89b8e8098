//! Summary statistics for Monte Carlo output.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; `None` with fewer than two values.
    pub se: Option<f64>,
    pub count: usize,
}

impl MeanSe {
    /// Summed in input order, so results do not depend on how values were produced.
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / count as f64
        };
        let se = sample_sd(values).map(|sd| sd / (count as f64).sqrt());
        Self { mean, se, count }
    }

    pub fn se_or_zero(&self) -> f64 {
        self.se.unwrap_or(0.0)
    }

    /// `|self − other| / sqrt(se₁² + se₂²)`.
    pub fn z_distance(&self, other: &MeanSe) -> f64 {
        let combined = (self.se_or_zero().powi(2) + other.se_or_zero().powi(2)).sqrt();
        (self.mean - other.mean).abs() / combined
    }
}

/// Sample standard deviation with the `n − 1` divisor.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
