//! Correlation, error and histogram primitives.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 paired values, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("correlation is undefined for a series with zero variance")]
    ZeroVariance,
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("bin width {0} does not divide [0, 1] into whole bins")]
    BadBinWidth(f64),
}

/// Two equal-length series of finite reals, e.g. predictions and gold scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() {
            return Err(StatsError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(StatsError::TooShort(x.len()));
        }
        if let Some(i) = x.iter().zip(&y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        Ok(PairedSeries { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Product-moment correlation, computed on mean-centred values.
pub fn pearson(s: &PairedSeries) -> Result<f64, StatsError> {
    pearson_slices(&s.x, &s.y)
}

fn pearson_slices(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Rank correlation: Pearson of the average-rank transforms.
pub fn spearman(s: &PairedSeries) -> Result<f64, StatsError> {
    pearson_slices(&average_ranks(&s.x), &average_ranks(&s.y))
}

pub fn mse(s: &PairedSeries) -> f64 {
    s.x.iter().zip(&s.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64
}

/// Counts of values in `[0, 1]` over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Lower and upper edge of bin `idx`.
    pub fn edges(&self, idx: usize) -> (f64, f64) {
        let n = self.counts.len() as f64;
        (idx as f64 / n, (idx + 1) as f64 / n)
    }
}

/// Bins values in `[0, 1]`. Value `v` lands in bin `floor(v / width)`, with
/// `1.0` folded into the top bin.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram, StatsError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(StatsError::BadBinWidth(bin_width));
    }
    let n_bins = (1.0 / bin_width).round();
    if (n_bins * bin_width - 1.0).abs() > 1e-9 {
        return Err(StatsError::BadBinWidth(bin_width));
    }
    let n_bins = n_bins as usize;
    let mut counts = vec![0; n_bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(StatsError::OutOfRange(v));
        }
        // multiplying by the integer bin count avoids 0.3 / 0.1 = 2.999...
        let idx = ((v * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    (m, var.sqrt())
}
