//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use deltanas::pipeline::{GeneratorSpec, PipelineConfig, PipelineError};
use deltanas::stats::RunReport;

pub const BIN: &str = env!("CARGO_BIN_EXE_deltanas");

/// The CLI's own simulate-mode worker.
pub fn worker_cmd() -> String {
    format!("{BIN} worker")
}

pub fn config(output_dir: &Path, generator: GeneratorSpec, cycles: u32, per_cycle: u32) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        cycles,
        per_cycle,
        generator: Some(generator),
        output_dir: output_dir.to_path_buf(),
        ..PipelineConfig::default()
    };
    cfg.evaluator.command = Some(worker_cmd());
    cfg.evaluator.workers = 8;
    cfg
}

pub fn synthetic(corrupt_rate: f64, syntax_error_rate: f64, record: Option<PathBuf>) -> GeneratorSpec {
    GeneratorSpec::Synthetic {
        corrupt_rate,
        syntax_error_rate,
        record,
    }
}

pub fn run(cfg: PipelineConfig) -> Result<RunReport, PipelineError> {
    deltanas::pipeline::run_pipeline(cfg, false)
}

/// Runs the synthetic generator once with recording on and returns the
/// replay file, so later runs can use a fixed set of outputs.
pub fn record_replay(dir: &Path, cycles: u32, per_cycle: u32, seed: u64) -> PathBuf {
    let replay = dir.join("replay.jsonl");
    let mut cfg = config(&dir.join("recording"), synthetic(0.25, 0.05, Some(replay.clone())), cycles, per_cycle);
    cfg.global_seed = seed;
    run(cfg).expect("recording run");
    replay
}

/// A single-baseline manifest, so every candidate patches the same file.
pub fn single_baseline_manifest(dir: &Path, dataset: &str, source: &str) -> PathBuf {
    fs::write(dir.join("only.py"), source).unwrap();
    let manifest = serde_json::json!([{
        "baseline_id": "only",
        "dataset": dataset,
        "file": "only.py",
        "hp": {"batch": 64, "lr": 0.01, "momentum": 0.9},
        "transform_ref": "norm_32",
    }]);
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

pub fn write_replay(path: &Path, texts: impl IntoIterator<Item = ((u32, u32), String)>) {
    let lines: Vec<String> = texts
        .into_iter()
        .map(|((cycle, index), text)| {
            serde_json::json!({"cycle": cycle, "index": index, "output_text": text}).to_string()
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Generator output wrapping `delta` in the expected tags.
pub fn tagged(delta: &str) -> String {
    format!(
        "Adds a layer.\n<hp>{{\"batch\": 64, \"lr\": 0.01, \"momentum\": 0.9}}</hp>\n<tr>transforms.ToTensor()</tr>\n<delta>\n{delta}</delta>\n"
    )
}

/// A worker that crashes, hangs or prints garbage depending on the last
/// digit of the candidate id, and otherwise defers to the real worker.
pub fn misbehaving_worker(dir: &Path) -> String {
    let script = dir.join("worker.sh");
    fs::write(
        &script,
        format!(
            r#"req=$(cat)
case "$req" in
  *'0","patched_source'*|*'4","patched_source'*|*'8","patched_source'*) echo dying >&2; exit 3 ;;
  *'1","patched_source'*|*'5","patched_source'*|*'9","patched_source'*) sleep 30 ;;
  *'2","patched_source'*|*'6","patched_source'*) echo '{{"status": "ok", "accuracy": '; echo 'not json' ;;
  *) printf '%s\n' "$req" | {BIN} worker ;;
esac
"#
        ),
    )
    .unwrap();
    format!("sh {}", script.display())
}
