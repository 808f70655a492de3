//! Failure taxonomy, accuracy thresholds and the two-gate admission decision.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{ApplyError, DiffError};
use crate::output::OutputError;

pub const DEFAULT_TAU_ACC: f64 = 0.40;

/// Name of the built-in per-dataset threshold table.
pub const EXTENDED_POLICY: &str = "per-dataset-extended";

/// Why a candidate did not make it into the corpus. Exactly one per failed
/// candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureClass {
    #[serde(alias = "apply_context_mismatch")]
    ApplyContextMismatch,
    #[serde(alias = "apply_malformed_patch")]
    ApplyMalformedPatch,
    #[serde(alias = "apply_hallucinated_ref")]
    ApplyHallucinatedRef,
    #[serde(alias = "syntax_error")]
    SyntaxError,
    #[serde(alias = "shape_runtime")]
    ShapeRuntime,
    #[serde(alias = "unused_hyperparameters")]
    UnusedHyperparameters,
    #[serde(alias = "duplicate")]
    Duplicate,
    #[serde(alias = "name_type_error")]
    NameTypeError,
    #[serde(alias = "timeout")]
    Timeout,
    #[serde(alias = "resource_error")]
    ResourceError,
    #[serde(alias = "below_accuracy_threshold")]
    BelowAccuracyThreshold,
    #[serde(alias = "below_novelty_threshold")]
    BelowNoveltyThreshold,
}

impl FailureClass {
    pub const ALL: [FailureClass; 12] = [
        FailureClass::ApplyContextMismatch,
        FailureClass::ApplyMalformedPatch,
        FailureClass::ApplyHallucinatedRef,
        FailureClass::SyntaxError,
        FailureClass::ShapeRuntime,
        FailureClass::UnusedHyperparameters,
        FailureClass::Duplicate,
        FailureClass::NameTypeError,
        FailureClass::Timeout,
        FailureClass::ResourceError,
        FailureClass::BelowAccuracyThreshold,
        FailureClass::BelowNoveltyThreshold,
    ];

    /// The delta never produced a patched source.
    pub fn is_apply_failure(self) -> bool {
        matches!(
            self,
            FailureClass::ApplyContextMismatch
                | FailureClass::ApplyMalformedPatch
                | FailureClass::ApplyHallucinatedRef
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureClass::ApplyContextMismatch => "ApplyContextMismatch",
            FailureClass::ApplyMalformedPatch => "ApplyMalformedPatch",
            FailureClass::ApplyHallucinatedRef => "ApplyHallucinatedRef",
            FailureClass::SyntaxError => "SyntaxError",
            FailureClass::ShapeRuntime => "ShapeRuntime",
            FailureClass::UnusedHyperparameters => "UnusedHyperparameters",
            FailureClass::Duplicate => "Duplicate",
            FailureClass::NameTypeError => "NameTypeError",
            FailureClass::Timeout => "Timeout",
            FailureClass::ResourceError => "ResourceError",
            FailureClass::BelowAccuracyThreshold => "BelowAccuracyThreshold",
            FailureClass::BelowNoveltyThreshold => "BelowNoveltyThreshold",
        }
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<&OutputError> for FailureClass {
    fn from(_: &OutputError) -> Self {
        FailureClass::ApplyMalformedPatch
    }
}

impl From<&DiffError> for FailureClass {
    fn from(_: &DiffError) -> Self {
        FailureClass::ApplyMalformedPatch
    }
}

impl From<&ApplyError> for FailureClass {
    fn from(e: &ApplyError) -> Self {
        match e {
            ApplyError::ContextMismatch { .. } => FailureClass::ApplyContextMismatch,
            ApplyError::OutOfRange { .. } => FailureClass::ApplyHallucinatedRef,
            ApplyError::OverlappingHunks { .. } => FailureClass::ApplyMalformedPatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdmissionError {
    #[error("dataset {0} has no threshold in the per-dataset policy")]
    UnknownDataset(String),
    #[error("unknown dataset name {0:?}")]
    BadDatasetName(String),
    #[error("unknown threshold policy {0:?}")]
    UnknownPolicy(String),
    #[error("threshold {tau} for {what} is outside (0, 1)")]
    ThresholdOutOfRange { what: String, tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "CIFAR-10", alias = "cifar10", alias = "cifar-10")]
    Cifar10,
    #[serde(rename = "CIFAR-100", alias = "cifar100", alias = "cifar-100")]
    Cifar100,
    #[serde(rename = "SVHN", alias = "svhn")]
    Svhn,
    #[serde(rename = "MNIST", alias = "mnist")]
    Mnist,
    #[serde(rename = "CelebA", alias = "celeba")]
    CelebA,
    #[serde(rename = "ImageNette", alias = "imagenette")]
    ImageNette,
}

impl DatasetId {
    pub const ALL: [DatasetId; 6] = [
        DatasetId::Cifar10,
        DatasetId::Cifar100,
        DatasetId::Svhn,
        DatasetId::Mnist,
        DatasetId::CelebA,
        DatasetId::ImageNette,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Cifar10 => "CIFAR-10",
            DatasetId::Cifar100 => "CIFAR-100",
            DatasetId::Svhn => "SVHN",
            DatasetId::Mnist => "MNIST",
            DatasetId::CelebA => "CelebA",
            DatasetId::ImageNette => "ImageNette",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = AdmissionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        DatasetId::ALL
            .into_iter()
            .find(|d| {
                d.name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .map(|c| c.to_ascii_lowercase())
                    .eq(key.chars())
            })
            .ok_or_else(|| AdmissionError::BadDatasetName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Fixed,
    PerDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: PolicyMode,
    #[serde(default = "default_tau_acc")]
    pub fixed_tau: f64,
    #[serde(default)]
    pub per_dataset: BTreeMap<DatasetId, f64>,
}

fn default_tau_acc() -> f64 {
    DEFAULT_TAU_ACC
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::fixed(DEFAULT_TAU_ACC)
    }
}

impl ThresholdPolicy {
    pub fn fixed(tau: f64) -> Self {
        ThresholdPolicy {
            mode: PolicyMode::Fixed,
            fixed_tau: tau,
            per_dataset: BTreeMap::new(),
        }
    }

    pub fn per_dataset(map: BTreeMap<DatasetId, f64>) -> Self {
        ThresholdPolicy {
            mode: PolicyMode::PerDataset,
            fixed_tau: DEFAULT_TAU_ACC,
            per_dataset: map,
        }
    }

    /// CIFAR-10 0.40, CIFAR-100 0.20, SVHN 0.70, extended with MNIST 0.25,
    /// CelebA 0.70 and ImageNette 0.50.
    pub fn extended() -> Self {
        ThresholdPolicy::per_dataset(BTreeMap::from([
            (DatasetId::Cifar10, 0.40),
            (DatasetId::Cifar100, 0.20),
            (DatasetId::Svhn, 0.70),
            (DatasetId::Mnist, 0.25),
            (DatasetId::CelebA, 0.70),
            (DatasetId::ImageNette, 0.50),
        ]))
    }

    /// `"fixed"` or the name of a built-in table.
    pub fn named(name: &str) -> Result<Self, AdmissionError> {
        match name {
            "fixed" => Ok(ThresholdPolicy::default()),
            EXTENDED_POLICY | "per-dataset" | "per_dataset" => Ok(ThresholdPolicy::extended()),
            other => Err(AdmissionError::UnknownPolicy(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), AdmissionError> {
        let check = |what: String, tau: f64| {
            if tau > 0.0 && tau < 1.0 {
                Ok(())
            } else {
                Err(AdmissionError::ThresholdOutOfRange { what, tau })
            }
        };
        check("fixed_tau".into(), self.fixed_tau)?;
        for (d, &t) in &self.per_dataset {
            check(d.to_string(), t)?;
        }
        Ok(())
    }

    pub fn threshold(&self, dataset: DatasetId) -> Result<f64, AdmissionError> {
        accuracy_threshold(dataset, self)
    }
}

pub fn accuracy_threshold(dataset: DatasetId, policy: &ThresholdPolicy) -> Result<f64, AdmissionError> {
    match policy.mode {
        PolicyMode::Fixed => Ok(policy.fixed_tau),
        PolicyMode::PerDataset => policy
            .per_dataset
            .get(&dataset)
            .copied()
            .ok_or_else(|| AdmissionError::UnknownDataset(dataset.to_string())),
    }
}

/// Outcome of the accuracy and novelty gates. `novelty` is absent when the
/// accuracy gate already rejected the candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub admitted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureClass>,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty: Option<f64>,
    pub threshold: f64,
}

/// Accuracy gate, then novelty gate, both inclusive. `novelty` is only
/// called once the accuracy gate has passed.
pub fn decide_with(
    accuracy: f64,
    threshold: f64,
    novelty: impl FnOnce() -> f64,
    tau_nov: f64,
) -> AdmissionDecision {
    if accuracy < threshold {
        return AdmissionDecision {
            admitted: false,
            failure: Some(FailureClass::BelowAccuracyThreshold),
            accuracy,
            novelty: None,
            threshold,
        };
    }
    let n = novelty();
    let admitted = n >= tau_nov;
    AdmissionDecision {
        admitted,
        failure: (!admitted).then_some(FailureClass::BelowNoveltyThreshold),
        accuracy,
        novelty: Some(n),
        threshold,
    }
}

pub fn decide(
    accuracy: f64,
    dataset: DatasetId,
    novelty: f64,
    policy: &ThresholdPolicy,
    tau_nov: f64,
) -> Result<AdmissionDecision, AdmissionError> {
    let threshold = accuracy_threshold(dataset, policy)?;
    Ok(decide_with(accuracy, threshold, || novelty, tau_nov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::novelty::DEFAULT_TAU_NOV;

    #[test]
    fn thresholds() {
        let ext = ThresholdPolicy::extended();
        assert_eq!(accuracy_threshold(DatasetId::Cifar100, &ext).unwrap(), 0.20);
        assert_eq!(accuracy_threshold(DatasetId::Mnist, &ext).unwrap(), 0.25);
        assert_eq!(accuracy_threshold(DatasetId::Svhn, &ext).unwrap(), 0.70);
        let fixed = ThresholdPolicy::default();
        for d in DatasetId::ALL {
            assert_eq!(accuracy_threshold(d, &fixed).unwrap(), 0.40);
        }
        let partial = ThresholdPolicy::per_dataset(BTreeMap::from([(DatasetId::Cifar10, 0.4)]));
        assert_eq!(
            accuracy_threshold(DatasetId::Svhn, &partial),
            Err(AdmissionError::UnknownDataset("SVHN".into()))
        );
    }

    #[test]
    fn decision_examples() {
        let fixed = ThresholdPolicy::default();
        let d = decide(0.65, DatasetId::Cifar10, 0.95, &fixed, DEFAULT_TAU_NOV).unwrap();
        assert!(d.admitted && d.failure.is_none());

        let d = decide(0.39, DatasetId::Cifar10, 0.99, &fixed, DEFAULT_TAU_NOV).unwrap();
        assert_eq!(d.failure, Some(FailureClass::BelowAccuracyThreshold));
        assert_eq!(d.novelty, None);

        let d = decide(0.25, DatasetId::Cifar100, 0.95, &fixed, DEFAULT_TAU_NOV).unwrap();
        assert!(!d.admitted);
        let ext = ThresholdPolicy::extended();
        let d = decide(0.25, DatasetId::Cifar100, 0.95, &ext, DEFAULT_TAU_NOV).unwrap();
        assert!(d.admitted);

        let d = decide(0.5, DatasetId::Cifar10, 0.5, &fixed, DEFAULT_TAU_NOV).unwrap();
        assert_eq!(d.failure, Some(FailureClass::BelowNoveltyThreshold));
    }

    #[test]
    fn gates_are_inclusive() {
        let d = decide(0.40, DatasetId::Cifar10, 0.90, &ThresholdPolicy::default(), 0.90).unwrap();
        assert!(d.admitted);
    }

    #[test]
    fn novelty_not_computed_after_accuracy_rejection() {
        let d = decide_with(0.1, 0.4, || panic!("novelty computed"), 0.9);
        assert!(!d.admitted);
    }

    #[test]
    fn failure_class_wire_names() {
        assert_eq!(
            serde_json::to_string(&FailureClass::SyntaxError).unwrap(),
            "\"SyntaxError\""
        );
        let parsed: FailureClass = serde_json::from_str("\"shape_runtime\"").unwrap();
        assert_eq!(parsed, FailureClass::ShapeRuntime);
        for c in FailureClass::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{c}\""));
        }
    }

    #[test]
    fn apply_errors_map_to_classes() {
        let cm = ApplyError::ContextMismatch {
            hunk_index: 0,
            line: 1,
            expected: String::new(),
            found: String::new(),
        };
        assert_eq!(FailureClass::from(&cm), FailureClass::ApplyContextMismatch);
        let oor = ApplyError::OutOfRange {
            hunk_index: 0,
            old_start: 90,
            old_len: 3,
            source_lines: 10,
        };
        assert_eq!(FailureClass::from(&oor), FailureClass::ApplyHallucinatedRef);
        assert_eq!(
            FailureClass::from(&DiffError::EmptyDiff),
            FailureClass::ApplyMalformedPatch
        );
        assert!(FailureClass::from(&OutputError::MissingDeltaTag).is_apply_failure());
    }

    #[test]
    fn dataset_names() {
        for d in DatasetId::ALL {
            assert_eq!(d.name().parse::<DatasetId>().unwrap(), d);
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(serde_json::from_str::<DatasetId>(&json).unwrap(), d);
        }
        assert_eq!("cifar100".parse::<DatasetId>().unwrap(), DatasetId::Cifar100);
        assert_eq!("Image-Nette".parse::<DatasetId>().unwrap(), DatasetId::ImageNette);
        assert!("imagenet".parse::<DatasetId>().is_err());
    }

    #[test]
    fn policy_json() {
        let p: ThresholdPolicy =
            serde_json::from_str(r#"{"mode":"per_dataset","per_dataset":{"CIFAR-10":0.4,"svhn":0.7}}"#)
                .unwrap();
        assert_eq!(p.threshold(DatasetId::Svhn).unwrap(), 0.7);
        assert!(p.validate().is_ok());
        assert!(ThresholdPolicy::fixed(1.0).validate().is_err());
        assert_eq!(ThresholdPolicy::named(EXTENDED_POLICY).unwrap(), ThresholdPolicy::extended());
        assert!(ThresholdPolicy::named("bogus").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn raising_thresholds_never_admits_more(
                acc in 0.0f64..=1.0,
                nov in 0.0f64..=1.0,
                t1 in 0.01f64..0.99,
                dt in 0.0f64..0.5,
                n1 in 0.0f64..=1.0,
                dn in 0.0f64..0.5,
            ) {
                let lo = decide_with(acc, t1, || nov, n1);
                let hi = decide_with(acc, (t1 + dt).min(0.99), || nov, (n1 + dn).min(1.0));
                prop_assert!(!hi.admitted || lo.admitted);
                prop_assert_eq!(lo.admitted, lo.failure.is_none());
                if acc < t1 {
                    prop_assert_eq!(lo.failure, Some(FailureClass::BelowAccuracyThreshold));
                }
            }
        }
    }
}
