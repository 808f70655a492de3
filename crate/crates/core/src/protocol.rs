//! Wire format between the engine and evaluator workers: one JSON request on
//! the worker's stdin, one JSON result line on its stdout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::{DatasetId, FailureClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Simulate,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub candidate_id: String,
    pub patched_source: String,
    pub dataset: DatasetId,
    /// The baseline's stored hyperparameters, never the generated ones.
    #[serde(default)]
    pub hp: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub transform_ref: String,
    pub eval_seed: u64,
    #[serde(default)]
    pub mode: EvalMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureClass>,
    /// Measured by the gateway; absent from ledgers so they stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("status ok without an accuracy in [0, 1]")]
    OkWithoutAccuracy,
    #[error("status failed without a failure class")]
    FailedWithoutClass,
}

impl EvalResult {
    pub fn ok(accuracy: f64) -> Self {
        EvalResult {
            status: EvalStatus::Ok,
            accuracy: Some(accuracy),
            failure: None,
            wall_seconds: None,
        }
    }

    pub fn failed(failure: FailureClass) -> Self {
        EvalResult {
            status: EvalStatus::Failed,
            accuracy: None,
            failure: Some(failure),
            wall_seconds: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let acc_ok = self.accuracy.is_none_or(|a| (0.0..=1.0).contains(&a));
        match self.status {
            EvalStatus::Ok if self.accuracy.is_some() && acc_ok => Ok(()),
            EvalStatus::Ok => Err(ProtocolError::OkWithoutAccuracy),
            EvalStatus::Failed if self.failure.is_some() && acc_ok => Ok(()),
            EvalStatus::Failed => Err(ProtocolError::FailedWithoutClass),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }

    /// The trained accuracy, if the worker reported one.
    pub fn trained_accuracy(&self) -> Option<f64> {
        self.accuracy
    }
}
