//! Run state and its on-disk layout.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{io_err, Engine, PipelineError};
use crate::admission::DatasetId;
use crate::baselines::BaselineRecord;
use crate::exec::ExecMode;
use crate::gateway::WorkerCommand;
use crate::novelty::{novelty_score, CorpusIndex, MinHashSignature};
use crate::record::{read_ledger, write_record, CandidateRecord};
use crate::stats::{render_text, RunReport};

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub ledger: PathBuf,
    pub corpus: PathBuf,
    pub signatures: PathBuf,
    pub timings: PathBuf,
    pub hooks: PathBuf,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            ledger: dir.join("ledger.jsonl"),
            corpus: dir.join("corpus.jsonl"),
            signatures: dir.join("corpus.signatures.jsonl"),
            timings: dir.join("timings.jsonl"),
            hooks: dir.join("hooks.jsonl"),
            report_json: dir.join("report.json"),
            report_txt: dir.join("report.txt"),
        }
    }
}

/// One admitted candidate, as listed in `corpus.jsonl`. Its signature lives
/// in the sibling `corpus.signatures.jsonl` under the same `entry_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub entry_id: String,
    pub origin: String,
    pub parent_id: String,
    pub dataset: DatasetId,
    pub accuracy: f64,
    pub cycle: u32,
    pub patched_source: String,
}

/// One line of `hooks.jsonl`: the post-cycle fine-tune hook fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookEvent {
    pub cycle: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

#[derive(Serialize, Deserialize)]
struct TimingLine {
    candidate_id: String,
    cycle: u32,
    wall_seconds: f64,
}

pub(super) struct RunState {
    pub pool: Vec<BaselineRecord>,
    /// Admissions of the current cycle; they join the pool at the barrier.
    pending: Vec<BaselineRecord>,
    corpus: CorpusIndex,
    corpus_records: Vec<CorpusRecord>,
    baseline_corpus: Option<CorpusIndex>,
    pub records: Vec<CandidateRecord>,
    pub next_cycle: u32,
    pub ledger_path: PathBuf,
}

impl RunState {
    /// Fresh state, or the state after the last complete cycle on disk.
    /// Partial cycles are discarded from every file.
    pub fn restore(engine: &Engine, paths: &RunPaths) -> Result<Self, PipelineError> {
        let cfg = &engine.config;
        let fp = &engine.fingerprinter;
        let baseline_corpus = if cfg.novelty_against_baselines {
            let sources: Vec<&str> = engine.initial_pool.iter().map(|b| b.source.as_str()).collect();
            let sigs = fp.fingerprint_all(engine.mode, &sources);
            let mut index = CorpusIndex::new(cfg.minhash_seed);
            for (b, sig) in engine.initial_pool.iter().zip(sigs) {
                if let Ok(sig) = sig {
                    index.add(format!("baseline:{}", b.baseline_id), sig)?;
                }
            }
            Some(index)
        } else {
            None
        };
        let mut state = RunState {
            pool: engine.initial_pool.clone(),
            pending: Vec::new(),
            corpus: CorpusIndex::new(cfg.minhash_seed),
            corpus_records: Vec::new(),
            baseline_corpus,
            records: Vec::new(),
            next_cycle: 0,
            ledger_path: paths.ledger.clone(),
        };

        let records = if paths.ledger.exists() {
            read_ledger(&paths.ledger)?
        } else {
            Vec::new()
        };
        let n = cfg.per_cycle as usize;
        for (i, r) in records.iter().enumerate() {
            if r.cycle as usize != i / n || r.index as usize != i % n {
                return Err(PipelineError::LedgerMismatch(format!(
                    "record {} is {} but per_cycle = {n} expects cycle {} index {}",
                    i + 1,
                    r.candidate_id,
                    i / n,
                    i % n
                )));
            }
        }
        let complete = (records.len() / n) as u32;
        if complete > cfg.cycles {
            return Err(PipelineError::LedgerMismatch(format!(
                "ledger holds {complete} cycles but cycles = {}",
                cfg.cycles
            )));
        }
        let kept: Vec<CandidateRecord> = records.into_iter().take(complete as usize * n).collect();

        // Replay admissions cycle by cycle so the pool grows exactly as it
        // did originally.
        let admitted: Vec<&CandidateRecord> = kept.iter().filter(|r| r.admitted()).collect();
        let sources: Vec<&str> = admitted
            .iter()
            .map(|r| r.patched_source.as_deref().unwrap_or_default())
            .collect();
        let sigs = fp.fingerprint_all(engine.mode, &sources);
        let mut sigs = admitted.iter().map(|r| r.candidate_id.as_str()).zip(sigs);
        for cycle in 0..complete {
            for r in kept.iter().filter(|r| r.cycle == cycle && r.admitted()) {
                let (id, sig) = sigs.next().expect("one signature per admission");
                debug_assert_eq!(id, r.candidate_id);
                let parent = state
                    .pool
                    .iter()
                    .find(|b| b.baseline_id == r.baseline_id)
                    .cloned()
                    .ok_or_else(|| PipelineError::LedgerMismatch(format!("unknown baseline {}", r.baseline_id)))?;
                state.admit(r, &parent, sig?)?;
            }
            state.pool.append(&mut state.pending);
        }

        rewrite_lines(&paths.ledger, &kept, write_record)?;
        let timings: Vec<TimingLine> = read_lines(&paths.timings)?;
        let timings: Vec<TimingLine> = timings.into_iter().filter(|t| t.cycle < complete).collect();
        rewrite_lines(&paths.timings, &timings, json_line)?;
        let mut hooks: Vec<HookEvent> = read_lines(&paths.hooks)?;
        hooks.retain(|h| h.cycle < complete);
        hooks.dedup_by_key(|h| h.cycle);
        rewrite_lines(&paths.hooks, &hooks, json_line)?;
        state.records = kept;
        state.next_cycle = complete;

        // A crash between the last ledger line of a cycle and its hook
        // leaves that hook unfired.
        for cycle in 0..complete {
            if !hooks.iter().any(|h| h.cycle == cycle) {
                fire_hook(cfg.fine_tune_hook.as_deref(), cycle, paths)?;
            }
        }
        state.write_corpus(paths)?;
        Ok(state)
    }

    /// Novelty against the admitted corpus (and the baselines, if enabled).
    pub fn novelty(&self, sig: &MinHashSignature, mode: ExecMode) -> f64 {
        let against = |c: &CorpusIndex| novelty_score(sig, c, mode).expect("one permutation family");
        let n = against(&self.corpus);
        match &self.baseline_corpus {
            Some(b) => n.min(against(b)),
            None => n,
        }
    }

    pub fn admit(
        &mut self,
        rec: &CandidateRecord,
        parent: &BaselineRecord,
        sig: MinHashSignature,
    ) -> Result<(), PipelineError> {
        let source = rec.patched_source.clone().expect("admitted candidates were trained");
        self.corpus.add(rec.candidate_id.clone(), sig)?;
        self.corpus_records.push(CorpusRecord {
            entry_id: rec.candidate_id.clone(),
            origin: "generated".into(),
            parent_id: parent.baseline_id.clone(),
            dataset: rec.dataset,
            accuracy: rec.accuracy().unwrap_or_default(),
            cycle: rec.cycle,
            patched_source: source.clone(),
        });
        self.pending.push(BaselineRecord {
            baseline_id: rec.candidate_id.clone(),
            dataset: rec.dataset,
            source,
            hp: parent.hp.clone(),
            transform_ref: parent.transform_ref.clone(),
        });
        Ok(())
    }

    /// Cycle barrier: admissions join the pool, the corpus is persisted and
    /// the fine-tune hook fires.
    pub fn finish_cycle(&mut self, engine: &Engine, paths: &RunPaths, cycle: u32) -> Result<(), PipelineError> {
        self.pool.append(&mut self.pending);
        self.write_corpus(paths)?;
        fire_hook(engine.config.fine_tune_hook.as_deref(), cycle, paths)
    }

    fn write_corpus(&self, paths: &RunPaths) -> Result<(), PipelineError> {
        rewrite_lines(&paths.corpus, &self.corpus_records, json_line)?;
        let tmp = paths.signatures.with_extension("jsonl.tmp");
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        self.corpus.write_jsonl(BufWriter::new(file)).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &paths.signatures).map_err(io_err(&paths.signatures))
    }
}

fn fire_hook(command: Option<&str>, cycle: u32, paths: &RunPaths) -> Result<(), PipelineError> {
    let exit_code = match command.and_then(WorkerCommand::parse) {
        None => None,
        Some(cmd) => {
            let status = Command::new(&cmd.program)
                .args(&cmd.args)
                .arg(cycle.to_string())
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .status()
                .map_err(io_err(&cmd.program))?;
            status.code()
        }
    };
    let event = HookEvent {
        cycle,
        command: command.map(str::to_string),
        exit_code,
    };
    let mut out = open_append(&paths.hooks)?;
    json_line(&mut out, &event).map_err(io_err(&paths.hooks))?;
    out.flush().map_err(io_err(&paths.hooks))
}

pub(super) fn open_append(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(io_err(path))
}

pub(super) fn write_timing(
    out: &mut BufWriter<File>,
    candidate_id: &str,
    cycle: u32,
    wall_seconds: f64,
) -> Result<(), PipelineError> {
    let line = TimingLine {
        candidate_id: candidate_id.to_string(),
        cycle,
        wall_seconds,
    };
    json_line(out, &line).map_err(|source| PipelineError::Io {
        path: PathBuf::from("timings.jsonl"),
        source,
    })
}

pub(super) fn write_report(paths: &RunPaths, report: &RunReport) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(&paths.report_json, json).map_err(io_err(&paths.report_json))?;
    std::fs::write(&paths.report_txt, render_text(report)).map_err(io_err(&paths.report_txt))
}

fn json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// Replaces `path` with one line per item, via a temporary file.
fn rewrite_lines<T>(
    path: &Path,
    items: &[T],
    write: impl Fn(&mut BufWriter<File>, &T) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    let mut out = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
    for item in items {
        write(&mut out, item).map_err(io_err(&tmp))?;
    }
    out.flush().map_err(io_err(&tmp))?;
    drop(out);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Parses a JSONL side file, stopping at the first unreadable line (a torn
/// final write). A missing file reads as empty.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(_) => break,
        }
    }
    Ok(out)
}

/// Reads `hooks.jsonl` from a run directory.
pub fn read_hooks(dir: &Path) -> Result<Vec<HookEvent>, PipelineError> {
    read_lines(&RunPaths::new(dir).hooks)
}

/// Loads `corpus.signatures.jsonl` from a run directory.
pub fn read_corpus(dir: &Path, permutation_seed: u64) -> Result<CorpusIndex, PipelineError> {
    let path = RunPaths::new(dir).signatures;
    let file = File::open(&path).map_err(io_err(&path))?;
    CorpusIndex::read_jsonl(BufReader::new(file), permutation_seed).map_err(|e| PipelineError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    })
}
