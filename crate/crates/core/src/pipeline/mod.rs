//! The search loop: sample a baseline, generate, patch, evaluate, filter,
//! grow the corpus, repeat for every cycle, persisting as it goes.

mod config;
mod state;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{EvaluatorSpec, GeneratorSpec, PipelineConfig, PolicySpec};
pub use state::{read_corpus, read_hooks, CorpusRecord, HookEvent, RunPaths};

use crate::admission::{decide_with, FailureClass, ThresholdPolicy};
use crate::baselines::{self, BaselineError, BaselineRecord};
use crate::diff::{apply_diff, parse_diff};
use crate::exec::{self, ExecMode};
use crate::gateway::{
    Evaluation, Generator, GeneratorError, GeneratorRequest, HttpGenerator, RecordingGenerator, ReplayGenerator,
    SpawnFailure, SubprocessEvaluator, SyntheticGenerator, WorkerCommand,
};
use crate::hashing::mix64;
use crate::novelty::{Fingerprinter, MinHashSignature, NoveltyError};
use crate::output::parse_generator_output;
use crate::protocol::EvalRequest;
use crate::record::{candidate_id, write_record, CandidateRecord, LedgerError};
use crate::stats::{aggregate_cycle, aggregate_run, CycleStats, RunReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad config field `{field}`: {message}")]
    BadConfig { field: String, message: String },
    #[error("{0} already holds a run; resume it or pick another output directory")]
    OutputExists(PathBuf),
    #[error("ledger does not match the config: {0}")]
    LedgerMismatch(String),
    #[error("generator unavailable: {0}")]
    Generator(#[from] GeneratorError),
    #[error("evaluator unavailable: {0}")]
    Spawn(#[from] SpawnFailure),
    #[error(transparent)]
    Baselines(#[from] BaselineError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corpus: {0}")]
    Corpus(#[from] NoveltyError),
    #[error("baseline pool is empty")]
    EmptyPool,
}

impl PipelineError {
    /// Configuration and usage problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::BadConfig { .. } | PipelineError::OutputExists(_) | PipelineError::LedgerMismatch(_)
        )
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

/// Per-cycle seed: SplitMix64 of the global seed XOR the cycle index
/// rotated into the high half.
pub fn derive_cycle_seed(global_seed: u64, cycle: u32) -> u64 {
    mix64(global_seed ^ u64::from(cycle).rotate_left(32))
}

/// Uniform draw from the pool, or uniform over datasets then uniform within
/// the chosen dataset when `balanced`.
pub fn sample_baseline<'a, R: Rng>(
    pool: &'a [BaselineRecord],
    rng: &mut R,
    balanced: bool,
) -> Result<&'a BaselineRecord, PipelineError> {
    if !balanced {
        return pool.choose(rng).ok_or(PipelineError::EmptyPool);
    }
    let datasets: BTreeSet<_> = pool.iter().map(|b| b.dataset).collect();
    let datasets: Vec<_> = datasets.into_iter().collect();
    let d = *datasets.choose(rng).ok_or(PipelineError::EmptyPool)?;
    let members: Vec<&BaselineRecord> = pool.iter().filter(|b| b.dataset == d).collect();
    Ok(members.choose(rng).copied().expect("dataset drawn from pool"))
}

/// Everything the loop needs besides the config.
pub struct Engine {
    pub config: PipelineConfig,
    pub policy: ThresholdPolicy,
    pub generator: Box<dyn Generator>,
    pub evaluator: SubprocessEvaluator,
    pub initial_pool: Vec<BaselineRecord>,
    pub fingerprinter: Fingerprinter,
    pub mode: ExecMode,
}

impl Engine {
    /// Validates the config and builds the generator, evaluator and pool.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let policy = config.policy.resolve()?;
        let mut pool = match &config.baselines {
            Some(path) => baselines::load_manifest(path)?,
            None => baselines::builtin(),
        };
        if let Some(keep) = &config.datasets {
            pool.retain(|b| keep.contains(&b.dataset));
        }
        baselines::validate(&pool).map_err(|e| PipelineError::BadConfig {
            field: "datasets".into(),
            message: e.to_string(),
        })?;
        for b in &pool {
            policy.threshold(b.dataset).map_err(|e| PipelineError::BadConfig {
                field: "policy".into(),
                message: e.to_string(),
            })?;
        }

        let command = config
            .evaluator
            .command
            .as_deref()
            .and_then(WorkerCommand::parse)
            .ok_or_else(|| PipelineError::BadConfig {
                field: "evaluator.command".into(),
                message: "missing worker command".into(),
            })?
            .with_env_override();
        let mut evaluator =
            SubprocessEvaluator::new(command, Duration::from_secs_f64(config.evaluator.timeout_secs));
        if let Some(p) = &config.evaluator.worker_config {
            evaluator
                .env
                .push((crate::worker::WORKER_CONFIG_ENV.into(), p.display().to_string()));
        }

        let generator: Box<dyn Generator> = match config.generator.clone().expect("validated") {
            GeneratorSpec::Replay { path } => Box::new(ReplayGenerator::open(&path)?),
            GeneratorSpec::Http { endpoint, timeout_secs } => {
                Box::new(HttpGenerator::new(endpoint, Duration::from_secs_f64(timeout_secs)))
            }
            GeneratorSpec::Synthetic {
                corrupt_rate,
                syntax_error_rate,
                record,
            } => {
                let g = SyntheticGenerator {
                    corrupt_rate,
                    syntax_error_rate,
                };
                match record {
                    Some(path) => Box::new(RecordingGenerator::new(g, &path)?),
                    None => Box::new(g),
                }
            }
        };

        Ok(Engine {
            fingerprinter: Fingerprinter::new(config.minhash_seed, config.normalize),
            policy,
            generator,
            evaluator,
            initial_pool: pool,
            mode: ExecMode::default(),
            config,
        })
    }

    /// Runs every remaining cycle. With `resume`, completed cycles in the
    /// output directory are kept and the loop continues after them;
    /// otherwise the directory must not already hold a ledger.
    pub fn run(&mut self, resume: bool, progress: &mut dyn FnMut(&CycleStats)) -> Result<RunReport, PipelineError> {
        let paths = RunPaths::new(&self.config.output_dir);
        std::fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;
        if !resume && paths.ledger.exists() {
            return Err(PipelineError::OutputExists(paths.dir.clone()));
        }
        let mut state = state::RunState::restore(self, &paths)?;
        let mut ledger = state::open_append(&paths.ledger)?;
        let mut timings = state::open_append(&paths.timings)?;

        for cycle in state.next_cycle..self.config.cycles {
            let stats = self.run_cycle(cycle, &mut state, &mut ledger, &mut timings)?;
            state.finish_cycle(self, &paths, cycle)?;
            progress(&stats);
        }

        let report = aggregate_run(&state.records, self.policy.fixed_tau, &self.policy);
        state::write_report(&paths, &report)?;
        Ok(report)
    }

    fn run_cycle(
        &mut self,
        cycle: u32,
        state: &mut state::RunState,
        ledger: &mut BufWriter<File>,
        timings: &mut BufWriter<File>,
    ) -> Result<CycleStats, PipelineError> {
        let cfg = &self.config;
        let cycle_seed = derive_cycle_seed(cfg.global_seed, cycle);
        let mut rng = ChaCha8Rng::seed_from_u64(cycle_seed);

        // Generation is sequential; a dead generator stops the cycle after
        // whatever was already produced has been processed and persisted.
        let mut drafts = Vec::with_capacity(cfg.per_cycle as usize);
        let mut abort: Option<PipelineError> = None;
        for index in 0..cfg.per_cycle {
            let baseline = sample_baseline(&state.pool, &mut rng, cfg.balanced_sampling)?.clone();
            let request = GeneratorRequest {
                cycle,
                index,
                baseline_id: baseline.baseline_id.clone(),
                baseline_source: baseline.source.clone(),
                dataset: baseline.dataset,
                params: cfg.sampling,
                constraints: cfg.constraints.clone(),
                seed: mix64(cycle_seed ^ mix64(u64::from(index) + 1)),
            };
            match self.generator.generate(&request) {
                Ok(text) => drafts.push((index, baseline, text)),
                Err(e) => {
                    abort = Some(e.into());
                    break;
                }
            }
        }

        let fuzz = cfg.fuzz;
        let fp = &self.fingerprinter;
        let prepared: Vec<Prepared> = exec::map(self.mode, &drafts, |(index, baseline, text)| {
            prepare(cycle, *index, baseline, text, fuzz, fp)
        });

        let eval_mode = if cfg.evaluator.workers > 1 { self.mode } else { ExecMode::Sequential };
        let evaluator = &self.evaluator;
        let eval_cfg = (cfg.global_seed, cfg.evaluator.mode);
        let evaluations: Vec<Option<Result<Evaluation, SpawnFailure>>> =
            exec::with_pool(eval_mode, cfg.evaluator.workers, || {
                exec::map(eval_mode, &prepared, |p| {
                    let source = p.record.patched_source.as_ref()?;
                    let request = EvalRequest {
                        candidate_id: p.record.candidate_id.clone(),
                        patched_source: source.clone(),
                        dataset: p.record.dataset,
                        hp: p.baseline.hp.clone(),
                        transform_ref: p.baseline.transform_ref.clone(),
                        eval_seed: eval_cfg.0,
                        mode: eval_cfg.1,
                    };
                    Some(evaluator.evaluate(&request))
                })
            });

        // Single writer: decisions, corpus growth and ledger appends happen
        // in index order so that earlier admissions count against later
        // candidates of the same cycle.
        let mut cycle_records = Vec::with_capacity(prepared.len());
        for (p, evaluation) in prepared.into_iter().zip(evaluations) {
            let mut rec = p.record;
            match evaluation {
                None => {}
                Some(Err(e)) => {
                    abort.get_or_insert(e.into());
                    break;
                }
                Some(Ok(ev)) => {
                    state::write_timing(timings, &rec.candidate_id, cycle, ev.wall_seconds)?;
                    let mut result = ev.result;
                    result.wall_seconds = None;
                    rec.worker_stderr = (!ev.stderr.trim().is_empty()).then_some(ev.stderr);
                    match result.trained_accuracy() {
                        None => rec.failure = Some(result.failure.unwrap_or(FailureClass::ShapeRuntime)),
                        Some(acc) => {
                            let threshold = self.policy.threshold(rec.dataset).expect("policy covers the pool");
                            let novelty = || match &p.signature {
                                Some(sig) => state.novelty(sig, self.mode),
                                None => 0.0,
                            };
                            let decision = decide_with(acc, threshold, novelty, cfg.tau_nov);
                            rec.failure = decision.failure;
                            rec.decision = Some(decision);
                        }
                    }
                    rec.eval = Some(result);
                }
            }
            if rec.admitted() {
                let sig = p.signature.clone().expect("admission implies a signature");
                state.admit(&rec, &p.baseline, sig)?;
            }
            write_record(ledger, &rec).map_err(io_err(&state.ledger_path))?;
            cycle_records.push(rec);
        }
        timings.flush().map_err(io_err(&state.ledger_path))?;

        let refs: Vec<&CandidateRecord> = cycle_records.iter().collect();
        let stats = aggregate_cycle(cycle, &refs, self.policy.fixed_tau);
        state.records.extend(cycle_records);
        match abort {
            Some(e) => Err(e),
            None => Ok(stats),
        }
    }
}

/// A candidate after parsing and patching, before evaluation.
struct Prepared {
    record: CandidateRecord,
    baseline: BaselineRecord,
    signature: Option<MinHashSignature>,
}

fn prepare(cycle: u32, index: u32, baseline: &BaselineRecord, text: &str, fuzz: usize, fp: &Fingerprinter) -> Prepared {
    let mut rec = CandidateRecord {
        candidate_id: candidate_id(cycle, index),
        cycle,
        index,
        baseline_id: baseline.baseline_id.clone(),
        dataset: baseline.dataset,
        raw_output: text.to_string(),
        lines: crate::output::count_lines(text),
        parsed: false,
        hp: None,
        warnings: Vec::new(),
        delta: None,
        patched_source: None,
        eval: None,
        decision: None,
        failure: None,
        error: None,
        worker_stderr: None,
    };
    let mut signature = None;
    let outcome = parse_generator_output(text)
        .map_err(|e| (FailureClass::from(&e), e.to_string()))
        .and_then(|out| {
            rec.parsed = true;
            rec.hp = out.hp;
            rec.warnings = out.warnings;
            parse_diff(&out.delta_text).map_err(|e| (FailureClass::from(&e), e.to_string()))
        })
        .and_then(|diff| {
            let patched = apply_diff(&baseline.source, &diff, fuzz);
            rec.delta = Some(diff);
            patched.map_err(|e| (FailureClass::from(&e), e.to_string()))
        });
    match outcome {
        Ok(patched) => {
            // Too short to shingle means nothing distinctive: zero novelty.
            signature = fp.fingerprint(&patched).ok();
            rec.patched_source = Some(patched);
        }
        Err((class, msg)) => {
            rec.failure = Some(class);
            rec.error = Some(msg);
        }
    }
    Prepared {
        record: rec,
        baseline: baseline.clone(),
        signature,
    }
}

/// Convenience wrapper: build an engine and run it.
pub fn run_pipeline(config: PipelineConfig, resume: bool) -> Result<RunReport, PipelineError> {
    Engine::from_config(config)?.run(resume, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admission::DatasetId;

    #[test]
    fn cycle_seeds_are_distinct_and_stable() {
        assert_eq!(derive_cycle_seed(42, 3), derive_cycle_seed(42, 3));
        assert_ne!(derive_cycle_seed(42, 0), derive_cycle_seed(42, 1));
        let seeds: BTreeSet<u64> = (0..22).map(|c| derive_cycle_seed(42, c)).collect();
        assert_eq!(seeds.len(), 22);
    }

    #[test]
    fn sampling() {
        let pool = baselines::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = &pool[..1];
        assert_eq!(sample_baseline(one, &mut rng, false).unwrap().baseline_id, pool[0].baseline_id);
        assert!(matches!(sample_baseline(&[], &mut rng, true), Err(PipelineError::EmptyPool)));

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_baseline(&pool, &mut rng, false).unwrap().baseline_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));

        // Skew the pool towards MNIST; balanced mode must still be even.
        let mut skewed = pool.clone();
        for i in 0..10 {
            let mut b = pool.iter().find(|b| b.dataset == DatasetId::Mnist).unwrap().clone();
            b.baseline_id = format!("extra{i}");
            skewed.push(b);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..600 {
            *counts
                .entry(sample_baseline(&skewed, &mut rng, true).unwrap().dataset)
                .or_insert(0) += 1;
        }
        for d in DatasetId::ALL {
            let c = counts[&d];
            assert!((75..=125).contains(&c), "{d}: {c}");
        }
    }
}
