use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::admission::{DatasetId, ThresholdPolicy};
use crate::gateway::{PromptConstraints, SamplingParams};
use crate::novelty::DEFAULT_TAU_NOV;
use crate::protocol::EvalMode;

/// A run configuration as read from JSON. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cycles: u32,
    pub per_cycle: u32,
    pub global_seed: u64,
    pub tau_nov: f64,
    pub policy: PolicySpec,
    pub generator: Option<GeneratorSpec>,
    pub evaluator: EvaluatorSpec,
    pub sampling: SamplingParams,
    pub constraints: PromptConstraints,
    /// `manifest.json` of a baseline pool; the bundled pool when absent.
    pub baselines: Option<PathBuf>,
    /// Restricts the pool to these datasets.
    pub datasets: Option<Vec<DatasetId>>,
    /// Draw a dataset uniformly first, then a baseline within it.
    pub balanced_sampling: bool,
    pub output_dir: PathBuf,
    /// How far (in lines) a hunk may sit from its declared position.
    pub fuzz: usize,
    /// Whitespace-normalize sources before shingling.
    pub normalize: bool,
    /// Also score novelty against the initial baselines, not just against
    /// admitted candidates.
    pub novelty_against_baselines: bool,
    pub minhash_seed: u64,
    /// Command run after every cycle with the cycle index appended.
    pub fine_tune_hook: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cycles: 22,
            per_cycle: 50,
            global_seed: 42,
            tau_nov: DEFAULT_TAU_NOV,
            policy: PolicySpec::default(),
            generator: None,
            evaluator: EvaluatorSpec::default(),
            sampling: SamplingParams::default(),
            constraints: PromptConstraints::default(),
            baselines: None,
            datasets: None,
            balanced_sampling: false,
            output_dir: PathBuf::from("run"),
            fuzz: 3,
            normalize: true,
            novelty_against_baselines: false,
            minhash_seed: 1,
            fine_tune_hook: None,
        }
    }
}

/// Either a built-in policy name or an explicit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Named(String),
    Explicit(ThresholdPolicy),
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Named("fixed".into())
    }
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<ThresholdPolicy, PipelineError> {
        let policy = match self {
            PolicySpec::Named(name) => ThresholdPolicy::named(name).map_err(|e| bad("policy", e))?,
            PolicySpec::Explicit(p) => p.clone(),
        };
        policy.validate().map_err(|e| bad("policy", e))?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Replay {
        path: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_http_timeout")]
        timeout_secs: f64,
    },
    Synthetic {
        #[serde(default = "default_corrupt_rate")]
        corrupt_rate: f64,
        #[serde(default = "default_syntax_rate")]
        syntax_error_rate: f64,
        /// Also write every output to this replay file.
        #[serde(default)]
        record: Option<PathBuf>,
    },
}

fn default_http_timeout() -> f64 {
    120.0
}

fn default_corrupt_rate() -> f64 {
    0.25
}

fn default_syntax_rate() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSpec {
    /// Worker command line, split on whitespace. The CLI fills in its own
    /// built-in worker when this is absent.
    pub command: Option<String>,
    pub timeout_secs: f64,
    /// Concurrent worker processes.
    pub workers: usize,
    pub mode: EvalMode,
    /// Passed to the worker as `DELTANAS_WORKER_CONFIG`.
    pub worker_config: Option<PathBuf>,
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec {
            command: None,
            timeout_secs: 600.0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            mode: EvalMode::Simulate,
            worker_config: None,
        }
    }
}

fn bad(field: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::BadConfig {
        field: field.to_string(),
        message: e.to_string(),
    }
}

impl PipelineConfig {
    /// Parses JSON text. Errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "config".to_string() } else { path };
            bad(&field, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.baselines {
            fix(p);
        }
        if let Some(p) = &mut self.evaluator.worker_config {
            fix(p);
        }
        match &mut self.generator {
            Some(GeneratorSpec::Replay { path }) => fix(path),
            Some(GeneratorSpec::Synthetic { record: Some(p), .. }) => fix(p),
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.cycles < 1 {
            return Err(bad("cycles", "must be at least 1"));
        }
        if self.per_cycle < 1 {
            return Err(bad("per_cycle", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau_nov) {
            return Err(bad("tau_nov", format!("{} outside [0, 1]", self.tau_nov)));
        }
        self.policy.resolve()?;
        match &self.generator {
            None => return Err(bad("generator", "missing generator spec")),
            Some(GeneratorSpec::Http { timeout_secs, .. }) if !(timeout_secs.is_finite() && *timeout_secs > 0.0) => {
                return Err(bad("generator.timeout_secs", "must be positive"))
            }
            Some(GeneratorSpec::Synthetic {
                corrupt_rate,
                syntax_error_rate,
                ..
            }) => {
                for (name, r) in [("corrupt_rate", corrupt_rate), ("syntax_error_rate", syntax_error_rate)] {
                    if !(0.0..=1.0).contains(r) {
                        return Err(bad(&format!("generator.{name}"), format!("{r} outside [0, 1]")));
                    }
                }
            }
            _ => {}
        }
        let t = self.evaluator.timeout_secs;
        if !(t.is_finite() && t > 0.0) {
            return Err(bad("evaluator.timeout_secs", "must be positive"));
        }
        if self.evaluator.workers == 0 {
            return Err(bad("evaluator.workers", "must be at least 1"));
        }
        self.sampling.validate().map_err(|e| bad("sampling", e))?;
        if matches!(&self.datasets, Some(d) if d.is_empty()) {
            return Err(bad("datasets", "empty dataset list"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_minimal_config() {
        let cfg = PipelineConfig::from_json(r#"{"generator": {"kind": "synthetic"}}"#).unwrap();
        assert_eq!((cfg.cycles, cfg.per_cycle, cfg.global_seed), (22, 50, 42));
        assert_eq!(cfg.tau_nov, 0.90);
        assert_eq!(cfg.evaluator.timeout_secs, 600.0);
        assert_eq!(cfg.policy.resolve().unwrap(), ThresholdPolicy::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match PipelineConfig::from_json(text).and_then(|c| c.validate()) {
            Err(PipelineError::BadConfig { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("{}"), "generator");
        assert_eq!(field(r#"{"generator":{"kind":"synthetic"},"cycles":0}"#), "cycles");
        assert_eq!(field(r#"{"generator":{"kind":"synthetic"},"evaluator":{"timeout_secs":"x"}}"#), "evaluator.timeout_secs");
        assert_eq!(field(r#"{"generator":{"kind":"synthetic"},"policy":"nope"}"#), "policy");
        assert_eq!(field(r#"{"generator":{"kind":"carrier-pigeon"}}"#), "generator.kind");
        assert_eq!(field(r#"{"generator":{"kind":"synthetic"},"cylces":3}"#), "cylces");
    }

    #[test]
    fn explicit_policy_and_relative_paths() {
        let mut cfg = PipelineConfig::from_json(
            r#"{"generator":{"kind":"replay","path":"r.jsonl"},
                "policy":{"mode":"per_dataset","per_dataset":{"CIFAR-100":0.2}},
                "output_dir":"out"}"#,
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/out"));
        assert_eq!(
            cfg.generator,
            Some(GeneratorSpec::Replay {
                path: "/cfg/r.jsonl".into()
            })
        );
        let p = cfg.policy.resolve().unwrap();
        assert_eq!(p.threshold(DatasetId::Cifar100).unwrap(), 0.2);
    }
}
