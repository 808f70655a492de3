use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mean, median, percent_1dp, sample_sd, wilson_ci, WilsonInterval};
use crate::admission::{DatasetId, FailureClass, ThresholdPolicy};
use crate::record::CandidateRecord;

/// One row of the per-cycle table. Accuracy fields are absent when no
/// candidate of the cycle reported an accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: u32,
    pub generated: usize,
    /// Delta applied and the candidate went on to training.
    pub trained: usize,
    pub apply_failures: usize,
    /// Trained candidates that reported an accuracy.
    pub evaluated: usize,
    pub valid_rate: f64,
    pub mean_acc: Option<f64>,
    pub best_acc: Option<f64>,
    pub ge_tau: usize,
    pub ge_tau_rate: Option<f64>,
    pub avg_lines: Option<f64>,
    pub admitted: usize,
}

/// Row for one cycle. Mean, best and the ≥τ share cover trained candidates
/// that reported an accuracy; average lines cover every parsed output.
pub fn aggregate_cycle(cycle: u32, records: &[&CandidateRecord], tau: f64) -> CycleStats {
    let generated = records.len();
    let trained = records.iter().filter(|r| r.trained()).count();
    let accs: Vec<f64> = records.iter().filter_map(|r| r.accuracy()).collect();
    let ge_tau = accs.iter().filter(|&&a| a >= tau).count();
    let lines: Vec<f64> = records
        .iter()
        .filter(|r| r.parsed)
        .map(|r| r.lines as f64)
        .collect();
    CycleStats {
        cycle,
        generated,
        trained,
        apply_failures: records.iter().filter(|r| r.is_apply_failure()).count(),
        evaluated: accs.len(),
        valid_rate: if generated == 0 { 0.0 } else { trained as f64 / generated as f64 },
        mean_acc: mean(&accs),
        best_acc: accs.iter().copied().reduce(f64::max),
        ge_tau,
        ge_tau_rate: (!accs.is_empty()).then(|| ge_tau as f64 / accs.len() as f64),
        avg_lines: mean(&lines),
        admitted: records.iter().filter(|r| r.admitted()).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: DatasetId,
    pub n: usize,
    pub mean: f64,
    pub best: f64,
    pub median: f64,
    /// Count at or above the fixed τ.
    pub ge_tau_fixed: usize,
    /// Threshold the policy assigns this dataset, if it has one.
    pub policy_tau: Option<f64>,
    pub ge_tau_policy: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tau: f64,
    pub policy: ThresholdPolicy,
    pub per_cycle: Vec<CycleStats>,
    pub per_dataset: Vec<DatasetRow>,
    pub generated: usize,
    pub trained: usize,
    pub apply_failures: usize,
    pub valid_rate: Option<WilsonInterval>,
    /// Over every trained accuracy, not the mean of cycle means.
    pub grand_mean: Option<f64>,
    pub best: Option<f64>,
    pub ge_tau_rate: Option<WilsonInterval>,
    pub sd_of_cycle_means: Option<f64>,
    pub avg_lines: Option<f64>,
    /// Candidates that passed the accuracy gate and reached the novelty gate.
    pub above_threshold: usize,
    pub admitted: usize,
    pub failure_histogram: BTreeMap<FailureClass, usize>,
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.generated == 0
    }
}

/// Trained-pool accuracies in ledger order.
pub fn accuracy_pool(records: &[CandidateRecord]) -> Vec<f64> {
    records.iter().filter_map(CandidateRecord::accuracy).collect()
}

pub fn aggregate_run(records: &[CandidateRecord], tau: f64, policy: &ThresholdPolicy) -> RunReport {
    let mut by_cycle: BTreeMap<u32, Vec<&CandidateRecord>> = BTreeMap::new();
    for r in records {
        by_cycle.entry(r.cycle).or_default().push(r);
    }
    let per_cycle: Vec<CycleStats> = by_cycle
        .iter()
        .map(|(&c, recs)| aggregate_cycle(c, recs, tau))
        .collect();

    let mut by_dataset: BTreeMap<DatasetId, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(a) = r.accuracy() {
            by_dataset.entry(r.dataset).or_default().push(a);
        }
    }
    let per_dataset = by_dataset
        .into_iter()
        .map(|(dataset, accs)| {
            let policy_tau = policy.threshold(dataset).ok();
            DatasetRow {
                dataset,
                n: accs.len(),
                mean: mean(&accs).unwrap_or(0.0),
                best: accs.iter().copied().fold(0.0, f64::max),
                median: median(&accs).unwrap_or(0.0),
                ge_tau_fixed: accs.iter().filter(|&&a| a >= tau).count(),
                policy_tau,
                ge_tau_policy: policy_tau.map(|t| accs.iter().filter(|&&a| a >= t).count()),
            }
        })
        .collect();

    let pool = accuracy_pool(records);
    let generated = records.len();
    let trained = records.iter().filter(|r| r.trained()).count();
    let cycle_means: Vec<f64> = per_cycle.iter().filter_map(|c| c.mean_acc).collect();
    let lines: Vec<f64> = records
        .iter()
        .filter(|r| r.parsed)
        .map(|r| r.lines as f64)
        .collect();
    let mut failure_histogram = BTreeMap::new();
    for f in records.iter().filter_map(|r| r.failure) {
        *failure_histogram.entry(f).or_insert(0) += 1;
    }

    RunReport {
        tau,
        policy: policy.clone(),
        per_cycle,
        per_dataset,
        generated,
        trained,
        apply_failures: records.iter().filter(|r| r.is_apply_failure()).count(),
        valid_rate: wilson_ci(trained as u64, generated as u64).ok(),
        grand_mean: mean(&pool),
        best: pool.iter().copied().reduce(f64::max),
        ge_tau_rate: wilson_ci(
            pool.iter().filter(|&&a| a >= tau).count() as u64,
            pool.len() as u64,
        )
        .ok(),
        sd_of_cycle_means: sample_sd(&cycle_means),
        avg_lines: mean(&lines),
        above_threshold: records
            .iter()
            .filter(|r| r.decision.is_some_and(|d| d.novelty.is_some()))
            .count(),
        admitted: records.iter().filter(|r| r.admitted()).count(),
        failure_histogram,
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.1}", percent_1dp(v)))
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.1}", (v * 10.0 + 1e-9).round() / 10.0))
}

fn interval(w: &Option<WilsonInterval>) -> String {
    match w {
        Some(w) => format!(
            "{} [{}, {}] ({}/{})",
            pct(Some(w.point)),
            pct(Some(w.lo)),
            pct(Some(w.hi)),
            w.k,
            w.n
        ),
        None => "-".to_string(),
    }
}

fn tau_label(tau: f64) -> String {
    let p = percent_1dp(tau);
    if p.fract() == 0.0 {
        format!("≥{p:.0}")
    } else {
        format!("≥{p:.1}")
    }
}

/// Aligned plain-text tables. A function of the report alone, so a report
/// re-read from JSON renders identically.
pub fn render_text(report: &RunReport) -> String {
    if report.is_empty() {
        return "no records\n".to_string();
    }
    let mut s = String::new();
    let ge = tau_label(report.tau);

    let _ = writeln!(
        s,
        "{:>4} {:>5} {:>5} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "Cyc.", "Gen.", "Tr.", "Valid", "Mean", "Best", ge, "Ln."
    );
    for c in &report.per_cycle {
        let _ = writeln!(
            s,
            "{:>4} {:>5} {:>5} {:>6} {:>6} {:>6} {:>6} {:>6}",
            c.cycle,
            c.generated,
            c.trained,
            pct(Some(c.valid_rate)),
            pct(c.mean_acc),
            pct(c.best_acc),
            pct(c.ge_tau_rate),
            num(c.avg_lines),
        );
    }
    s.push('\n');

    let _ = writeln!(s, "Generated        {}", report.generated);
    let _ = writeln!(s, "Trained          {}", report.trained);
    let _ = writeln!(s, "Apply failures   {}", report.apply_failures);
    let _ = writeln!(s, "Valid rate       {}", interval(&report.valid_rate));
    let _ = writeln!(
        s,
        "Mean acc.        {} ± {} (SD of cycle means)",
        pct(report.grand_mean),
        pct(report.sd_of_cycle_means)
    );
    let _ = writeln!(s, "Best acc.        {}", pct(report.best));
    let _ = writeln!(s, "{:<17}{}", format!("{ge} rate"), interval(&report.ge_tau_rate));
    let _ = writeln!(s, "Avg. lines       {}", num(report.avg_lines));
    let _ = writeln!(
        s,
        "Admitted         {} of {} above threshold",
        report.admitted, report.above_threshold
    );
    s.push('\n');

    let _ = writeln!(
        s,
        "{:<11} {:>5} {:>6} {:>6} {:>6} {:>7} {:>12}",
        "Dataset", "N", "Mean", "Best", "Median", ge, "Per-dataset τ"
    );
    for d in &report.per_dataset {
        let fixed = d.ge_tau_fixed as f64 / d.n as f64;
        let policy = match (d.policy_tau, d.ge_tau_policy) {
            (Some(t), Some(k)) => format!("{} ({})", pct(Some(k as f64 / d.n as f64)), pct(Some(t))),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<11} {:>5} {:>6} {:>6} {:>6} {:>7} {:>12}",
            d.dataset.name(),
            d.n,
            pct(Some(d.mean)),
            pct(Some(d.best)),
            pct(Some(d.median)),
            pct(Some(fixed)),
            policy,
        );
    }

    if !report.failure_histogram.is_empty() {
        s.push('\n');
        let _ = writeln!(s, "Failures");
        for (class, count) in &report.failure_histogram {
            let _ = writeln!(s, "  {:<24} {count:>5}", class.name());
        }
    }
    s
}
