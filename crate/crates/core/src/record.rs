//! Per-candidate ledger records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::{AdmissionDecision, DatasetId, FailureClass};
use crate::diff::UnifiedDiff;
use crate::output::{HpValue, OutputWarning};
use crate::protocol::EvalResult;

pub fn candidate_id(cycle: u32, index: u32) -> String {
    format!("c{cycle:02}-{index:03}")
}

/// Everything known about one generated candidate.
///
/// `patched_source` present implies `delta` present; `decision` present
/// implies `eval` present; `failure` is absent exactly for admitted
/// candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate_id: String,
    pub cycle: u32,
    pub index: u32,
    pub baseline_id: String,
    pub dataset: DatasetId,
    pub raw_output: String,
    /// Line count of the raw generator output.
    pub lines: usize,
    /// The tagged sections could be extracted.
    pub parsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hp: Option<BTreeMap<String, HpValue>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<OutputWarning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<UnifiedDiff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patched_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<AdmissionDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureClass>,
    /// Human-readable reason for a parse or apply failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_stderr: Option<String>,
}

impl CandidateRecord {
    pub fn admitted(&self) -> bool {
        self.decision.is_some_and(|d| d.admitted)
    }

    /// The delta applied, so the candidate went on to training.
    pub fn trained(&self) -> bool {
        self.patched_source.is_some()
    }

    /// First-epoch accuracy of a trained candidate, if the worker reported one.
    pub fn accuracy(&self) -> Option<f64> {
        if !self.trained() {
            return None;
        }
        self.eval.as_ref().and_then(EvalResult::trained_accuracy)
    }

    pub fn is_apply_failure(&self) -> bool {
        self.failure.is_some_and(FailureClass::is_apply_failure)
    }

    /// Checks the record's internal consistency.
    pub fn check(&self) -> Result<(), String> {
        if self.patched_source.is_some() && self.delta.is_none() {
            return Err(format!("{}: patched source without delta", self.candidate_id));
        }
        if self.decision.is_some() && self.eval.is_none() {
            return Err(format!("{}: decision without evaluation", self.candidate_id));
        }
        if self.admitted() == self.failure.is_some() {
            return Err(format!("{}: admitted iff no failure", self.candidate_id));
        }
        if self.trained() == self.is_apply_failure() {
            return Err(format!("{}: trained iff not an apply failure", self.candidate_id));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads a JSONL ledger. A truncated final line (interrupted write) is
/// dropped; malformed lines elsewhere are errors.
pub fn read_ledger(path: &Path) -> Result<Vec<CandidateRecord>, LedgerError> {
    let display = path.display().to_string();
    let io_err = |source| LedgerError::Io {
        path: display.clone(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err)?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if Some(i) == last && e.is_eof() => break,
            Err(source) => {
                return Err(LedgerError::Json {
                    path: display,
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

pub fn write_record<W: Write>(out: &mut W, record: &CandidateRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    out.flush()
}
