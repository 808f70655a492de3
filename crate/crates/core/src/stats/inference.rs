use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::StatsError;

pub const Z_95: f64 = 1.96;

/// Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub k: u64,
    pub n: u64,
    /// Observed proportion `k / n`.
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
}

pub fn wilson_ci(k: u64, n: u64) -> Result<WilsonInterval, StatsError> {
    wilson_ci_z(k, n, Z_95)
}

pub fn wilson_ci_z(k: u64, n: u64, z: f64) -> Result<WilsonInterval, StatsError> {
    if n == 0 {
        return Err(StatsError::ZeroTrials);
    }
    if k > n {
        return Err(StatsError::SuccessesExceedTrials { k, n });
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(WilsonInterval {
        k,
        n,
        point: p,
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
        z,
    })
}

/// Wilson interval for the share of `accuracies` at or above `tau`.
pub fn ge_tau_rate(accuracies: &[f64], tau: f64) -> Result<WilsonInterval, StatsError> {
    if accuracies.is_empty() {
        return Err(StatsError::EmptyPool);
    }
    let k = accuracies.iter().filter(|&&a| a >= tau).count();
    wilson_ci(k as u64, accuracies.len() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub rate: WilsonInterval,
}

/// τ ∈ {0.25, 0.30, …, 0.60}.
pub fn default_tau_grid() -> Vec<f64> {
    (5..=12).map(|i| f64::from(i * 5) / 100.0).collect()
}

pub fn tau_sweep(pool: &[f64], taus: &[f64]) -> Result<Vec<SweepRow>, StatsError> {
    if pool.is_empty() {
        return Err(StatsError::EmptyPool);
    }
    taus.iter()
        .map(|&tau| Ok(SweepRow { tau, rate: ge_tau_rate(pool, tau)? }))
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub rho: f64,
    pub p_value: f64,
}

/// Spearman's ρ (Pearson correlation of average ranks) with a two-tailed
/// p-value from the t approximation.
pub fn spearman(pairs: &[(f64, f64)]) -> Result<Correlation, StatsError> {
    let n = pairs.len();
    if n < 3 {
        return Err(StatsError::TooFewPairs { n, min: 3 });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = pearson(&average_ranks(&x), &average_ranks(&y)).ok_or(StatsError::DegenerateVariance)?;
    Ok(Correlation {
        n,
        rho,
        p_value: spearman_p_value(rho, n),
    })
}

/// Two-tailed p for t = ρ·√((n−2)/(1−ρ²)) on n−2 degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho.abs() * (df / (1.0 - r2)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).min(1.0)
}

/// Kendall's τ-b.
pub fn kendall_tau(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs { n, min: 2 });
    }
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = pairs[i].0 - pairs[j].0;
            let dy = pairs[i].1 - pairs[j].1;
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tied_x += 1,
                (false, true) => tied_y += 1,
                (false, false) if (dx > 0.0) == (dy > 0.0) => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let n0 = concordant + discordant;
    let denom = (((n0 + tied_x) * (n0 + tied_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Kruskal–Wallis H with tie correction; p from the χ² survival function.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(StatsError::EmptyGroup(i));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let ranks = average_ranks(&all);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);

    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    // all values tied: no rank information at all
    let h = if correction <= 0.0 { 0.0 } else { h_raw / correction };
    let h = if h < 1e-12 { 0.0 } else { h };
    let df = groups.len() - 1;
    Ok(KruskalWallis {
        h,
        df,
        p_value: kruskal_wallis_p(h, df),
    })
}

pub fn kruskal_wallis_p(h: f64, df: usize) -> f64 {
    if h <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df > 0").sf(h)
}
