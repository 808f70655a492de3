use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deltanas::admission::ThresholdPolicy;
use deltanas::diff::{apply_diff, compute_diff, parse_diff};
use deltanas::exec::ExecMode;
use deltanas::novelty::{admit_novel, jaccard_estimate, CorpusIndex, Fingerprinter, DEFAULT_TAU_NOV};
use deltanas::output::parse_generator_output;
use deltanas::pipeline::{read_corpus, Engine, GeneratorSpec, PipelineConfig, PipelineError, PolicySpec};
use deltanas::record::read_ledger;
use deltanas::stats::{
    accuracy_pool, aggregate_run, default_tau_grid, kendall_tau, percent_1dp, render_text, spearman, tau_sweep,
    RunReport,
};
use deltanas::worker::{run_worker, WorkerConfig};

#[derive(Parser)]
#[command(name = "deltanas", version, about = "Delta-based architecture search engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once per process
enum Cmd {
    /// Run the search loop and write ledger, corpus and report.
    Run(RunArgs),
    /// Aggregate a ledger into the per-cycle and per-dataset tables.
    Report {
        /// ledger.jsonl, or report.json with --from-json
        path: PathBuf,
        /// Accuracy threshold for the "≥" columns.
        #[arg(long, default_value_t = 0.40)]
        tau: f64,
        /// fixed | per-dataset-extended
        #[arg(long, default_value = "fixed")]
        policy: String,
        /// Print the report as JSON instead of tables.
        #[arg(long)]
        json: bool,
        /// Re-render a saved report.json.
        #[arg(long)]
        from_json: bool,
    },
    /// Share of trained candidates at or above each threshold.
    Sweep {
        ledger: PathBuf,
        /// Comma-separated thresholds; defaults to 0.25..0.60 in steps of 0.05.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Spearman and Kendall correlation of a two-column file.
    Correlate { pairs: PathBuf },
    /// Apply a unified diff (or generator output containing one) to a file.
    DiffApply {
        source: PathBuf,
        patch: PathBuf,
        #[arg(long, default_value_t = 3)]
        fuzz: usize,
    },
    /// Unified diff between two files.
    DiffMake { old: PathBuf, new: PathBuf },
    /// Novelty of a file against a corpus.
    DedupScore {
        file: PathBuf,
        /// Run directory, signature JSONL, or plain source files.
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU_NOV)]
        tau_nov: f64,
        #[arg(long, default_value_t = 1)]
        minhash_seed: u64,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Built-in simulate-mode evaluator: one request on stdin, one result on stdout.
    Worker,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed for sampling and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cycles to run.
    #[arg(long)]
    cycles: Option<u32>,
    /// Candidates generated per cycle.
    #[arg(long)]
    per_cycle: Option<u32>,
    /// Fixed accuracy threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Novelty threshold; candidates below it are rejected as duplicates.
    #[arg(long)]
    tau_nov: Option<f64>,
    /// fixed | per-dataset-extended
    #[arg(long)]
    policy: Option<String>,
    /// Per-candidate evaluation timeout.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Concurrent worker processes.
    #[arg(long)]
    workers: Option<usize>,
    /// Replay recorded generator outputs from this JSONL file.
    #[arg(long, conflicts_with_all = ["endpoint", "synthetic"])]
    replay: Option<PathBuf>,
    /// HTTP generator endpoint.
    #[arg(long, conflicts_with = "synthetic")]
    endpoint: Option<String>,
    /// Use the offline synthetic generator.
    #[arg(long)]
    synthetic: bool,
    /// With --synthetic, also record outputs to this replay file.
    #[arg(long, requires = "synthetic")]
    record: Option<PathBuf>,
    /// Worker command line; defaults to this binary's `worker` subcommand.
    #[arg(long)]
    worker_cmd: Option<String>,
    /// Directory for ledger, corpus and report.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Continue after the last complete cycle in the output directory.
    #[arg(long)]
    resume: bool,
    /// No per-cycle progress on stderr.
    #[arg(long)]
    quiet: bool,
}

/// Exit status 1 for usage and configuration problems, 2 for failures at
/// run time.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Cmd::Worker => return worker(),
        Cmd::Run(args) => run(args),
        Cmd::Report {
            path,
            tau,
            policy,
            json,
            from_json,
        } => report(&path, tau, &policy, json, from_json),
        Cmd::Sweep { ledger, taus } => sweep(&ledger, taus),
        Cmd::Correlate { pairs } => correlate(&pairs),
        Cmd::DiffApply { source, patch, fuzz } => diff_apply(&source, &patch, fuzz),
        Cmd::DiffMake { old, new } => diff_make(&old, &new),
        Cmd::DedupScore {
            file,
            corpus,
            tau_nov,
            minhash_seed,
            no_normalize,
        } => dedup_score(&file, &corpus, tau_nov, minhash_seed, !no_normalize),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn worker() -> ExitCode {
    let config = match WorkerConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            WorkerConfig::default()
        }
    };
    let stdin = io::stdin();
    let code = run_worker(&mut stdin.lock(), &mut io::stdout().lock(), &mut io::stderr().lock(), &config);
    ExitCode::from(code as u8)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.global_seed = v;
    }
    if let Some(v) = args.cycles {
        cfg.cycles = v;
    }
    if let Some(v) = args.per_cycle {
        cfg.per_cycle = v;
    }
    if let Some(v) = args.tau_nov {
        cfg.tau_nov = v;
    }
    if let Some(name) = args.policy {
        cfg.policy = PolicySpec::Named(name);
    }
    if let Some(tau) = args.tau {
        cfg.policy = PolicySpec::Explicit(ThresholdPolicy::fixed(tau));
    }
    if let Some(v) = args.timeout_secs {
        cfg.evaluator.timeout_secs = v;
    }
    if let Some(v) = args.workers {
        cfg.evaluator.workers = v;
    }
    if let Some(path) = args.replay {
        cfg.generator = Some(GeneratorSpec::Replay { path });
    }
    if let Some(endpoint) = args.endpoint {
        cfg.generator = Some(GeneratorSpec::Http {
            endpoint,
            timeout_secs: 120.0,
        });
    }
    if args.synthetic {
        cfg.generator = Some(GeneratorSpec::Synthetic {
            corrupt_rate: 0.25,
            syntax_error_rate: 0.05,
            record: args.record,
        });
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = v;
    }
    if let Some(cmd) = args.worker_cmd {
        cfg.evaluator.command = Some(cmd);
    }
    if cfg.evaluator.command.is_none() {
        let exe = std::env::current_exe().map_err(runtime)?;
        cfg.evaluator.command = Some(format!("{} worker", exe.display()));
    }

    let out_dir = cfg.output_dir.clone();
    let mut engine = Engine::from_config(cfg)?;
    let quiet = args.quiet;
    let report = engine.run(args.resume, &mut |s| {
        if !quiet {
            eprintln!(
                "cycle {:>2}: generated {} trained {} admitted {}",
                s.cycle, s.generated, s.trained, s.admitted
            );
        }
    })?;
    print!("{}", render_text(&report));
    if !quiet {
        eprintln!("artifacts in {}", out_dir.display());
    }
    Ok(())
}

fn policy_named(name: &str, tau: f64) -> Result<ThresholdPolicy, Failure> {
    match name {
        "fixed" => Ok(ThresholdPolicy::fixed(tau)),
        other => ThresholdPolicy::named(other).map_err(usage),
    }
}

fn report(path: &Path, tau: f64, policy: &str, json: bool, from_json: bool) -> Result<(), Failure> {
    let report: RunReport = if from_json {
        let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?
    } else {
        let policy = policy_named(policy, tau)?;
        let records = read_ledger(path).map_err(runtime)?;
        aggregate_run(&records, tau, &policy)
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", render_text(&report));
    }
    Ok(())
}

fn sweep(ledger: &Path, taus: Option<Vec<f64>>) -> Result<(), Failure> {
    let records = read_ledger(ledger).map_err(runtime)?;
    let pool = accuracy_pool(&records);
    if pool.is_empty() {
        println!("no records");
        return Ok(());
    }
    let taus = taus.unwrap_or_else(default_tau_grid);
    let rows = tau_sweep(&pool, &taus).map_err(usage)?;
    println!("{:>6}  {:>6}  {:>11}  {:>16}", "τ", "rate", "k/n", "95% CI");
    for row in rows {
        let w = row.rate;
        println!(
            "{:>6.2}  {:>6.1}  {:>11}  [{:.1}, {:.1}]",
            row.tau,
            percent_1dp(w.point),
            format!("{}/{}", w.k, w.n),
            percent_1dp(w.lo),
            percent_1dp(w.hi)
        );
    }
    Ok(())
}

fn correlate(path: &Path) -> Result<(), Failure> {
    let file = std::fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(runtime)?;
        let body = line.split('#').next().unwrap_or_default().trim();
        if body.is_empty() {
            continue;
        }
        let cols: Vec<&str> = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parse = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        match cols.as_slice() {
            [x, y] => match (parse(x), parse(y)) {
                (Some(x), Some(y)) => pairs.push((x, y)),
                _ => return Err(usage(format!("line {}: expected two numbers", i + 1))),
            },
            _ => return Err(usage(format!("line {}: expected two columns", i + 1))),
        }
    }
    let s = spearman(&pairs).map_err(usage)?;
    let tau = kendall_tau(&pairs).map_err(usage)?;
    println!("n        {}", s.n);
    println!("spearman {:.4}", s.rho);
    println!("p        {:.4}", s.p_value);
    println!("kendall  {:.4}", tau);
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn diff_apply(source: &Path, patch: &Path, fuzz: usize) -> Result<(), Failure> {
    let src = read(source)?;
    let text = read(patch)?;
    let delta = if text.contains("<delta>") {
        parse_generator_output(&text).map_err(runtime)?.delta_text
    } else {
        text
    };
    let diff = parse_diff(&delta).map_err(runtime)?;
    let patched = apply_diff(&src, &diff, fuzz).map_err(runtime)?;
    io::stdout().write_all(patched.as_bytes()).map_err(runtime)
}

fn diff_make(old: &Path, new: &Path) -> Result<(), Failure> {
    let mut diff = compute_diff(&read(old)?, &read(new)?);
    diff.old_name = old.display().to_string();
    diff.new_name = new.display().to_string();
    print!("{}", diff.render());
    Ok(())
}

fn dedup_score(file: &Path, corpus: &[PathBuf], tau_nov: f64, seed: u64, normalize: bool) -> Result<(), Failure> {
    let fp = Fingerprinter::new(seed, normalize);
    let sig = fp.fingerprint(&read(file)?).map_err(runtime)?;
    let mut index = CorpusIndex::new(seed);
    for path in corpus {
        if path.is_dir() {
            for e in read_corpus(path, seed)?.entries() {
                index.add(e.entry_id.clone(), e.signature.clone()).map_err(runtime)?;
            }
        } else if path.extension().is_some_and(|x| x == "jsonl") {
            let f = std::fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let loaded = CorpusIndex::read_jsonl(BufReader::new(f), seed).map_err(runtime)?;
            for e in loaded.entries() {
                index.add(e.entry_id.clone(), e.signature.clone()).map_err(runtime)?;
            }
        } else {
            let s = fp.fingerprint(&read(path)?).map_err(runtime)?;
            index.add(path.display().to_string(), s).map_err(runtime)?;
        }
    }
    let mut nearest: Option<(&str, f64)> = None;
    for e in index.entries() {
        let j = jaccard_estimate(&sig, &e.signature).map_err(runtime)?;
        if nearest.is_none_or(|(_, best)| j > best) {
            nearest = Some((&e.entry_id, j));
        }
    }
    let novelty = deltanas::novelty::novelty_score(&sig, &index, ExecMode::default()).map_err(runtime)?;
    println!("novelty  {novelty:.4}");
    if let Some((id, j)) = nearest {
        println!("nearest  {id} ({j:.4})");
    }
    println!(
        "verdict  {}",
        if admit_novel(novelty, tau_nov) { "novel" } else { "duplicate" }
    );
    Ok(())
}
