//! Interval estimates, rank statistics and run aggregation.

mod inference;
mod report;

use thiserror::Error;

pub use inference::*;
pub use report::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("interval over zero trials")]
    ZeroTrials,
    #[error("{k} successes out of {n} trials")]
    SuccessesExceedTrials { k: u64, n: u64 },
    #[error("empty accuracy pool")]
    EmptyPool,
    #[error("{n} pairs; at least {min} required")]
    TooFewPairs { n: usize, min: usize },
    #[error("one variable is constant; correlation undefined")]
    DegenerateVariance,
    #[error("{0} groups; at least 2 required")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
}

/// Percentage rounded half-up to one decimal, e.g. 0.7425 -> 74.3.
pub fn percent_1dp(fraction: f64) -> f64 {
    ((fraction * 1000.0) + 1e-9).round() / 10.0
}

/// Arithmetic mean, `None` when empty.
pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Midpoint of the two central values for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() == 1 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}
