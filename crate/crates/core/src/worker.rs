//! Built-in simulate-mode evaluator worker.
//!
//! It speaks the same stdin/stdout protocol as an external worker and runs
//! the cheap static checks, then scores the candidate with a deterministic
//! draw around a per-dataset prior instead of training it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admission::{DatasetId, FailureClass};
use crate::hashing::{hash_str_seeded, mix64};
use crate::protocol::{EvalMode, EvalRequest, EvalResult};

/// Environment variable naming a JSON [`WorkerConfig`] file.
pub const WORKER_CONFIG_ENV: &str = "DELTANAS_WORKER_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mean: f64,
    /// Scores fall in `mean ± spread` before clamping to [0, 1].
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    pub seed: u64,
    pub priors: BTreeMap<DatasetId, Prior>,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        let priors = [
            (DatasetId::Mnist, 0.985, 0.015),
            (DatasetId::CelebA, 0.887, 0.08),
            (DatasetId::Svhn, 0.784, 0.25),
            (DatasetId::Cifar10, 0.646, 0.30),
            (DatasetId::ImageNette, 0.607, 0.25),
            (DatasetId::Cifar100, 0.264, 0.20),
        ]
        .into_iter()
        .map(|(d, mean, spread)| (d, Prior { mean, spread }))
        .collect();
        WorkerConfig { seed: 0, priors }
    }
}

impl WorkerConfig {
    /// Reads the file named by `DELTANAS_WORKER_CONFIG`, or the defaults.
    /// Priors missing from the file keep their defaults.
    pub fn from_env() -> Result<Self, String> {
        match std::env::var_os(WORKER_CONFIG_ENV) {
            None => Ok(WorkerConfig::default()),
            Some(p) => WorkerConfig::load(Path::new(&p)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: WorkerConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for (d, p) in WorkerConfig::default().priors {
            cfg.priors.entry(d).or_insert(p);
        }
        Ok(cfg)
    }
}

/// Unbalanced `()[]{}` outside strings and comments. A coarse stand-in for
/// compiling the source.
pub fn check_brackets(source: &str) -> Result<(), String> {
    let mut stack = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let mut quote: Option<char> = None;
        let mut escaped = false;
        for ch in line.chars() {
            if let Some(q) = quote {
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == q {
                    quote = None;
                }
                continue;
            }
            match ch {
                '#' => break,
                '\'' | '"' => quote = Some(ch),
                '(' | '[' | '{' => stack.push((ch, lineno + 1)),
                ')' | ']' | '}' => {
                    let want = match ch {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    match stack.pop() {
                        Some((open, _)) if open == want => {}
                        _ => return Err(format!("line {}: unmatched '{ch}'", lineno + 1)),
                    }
                }
                _ => {}
            }
        }
    }
    match stack.last() {
        Some((open, line)) => Err(format!("line {line}: '{open}' is never closed")),
        None => Ok(()),
    }
}

const MODULE_METHODS: &[&str] = &[
    "apply", "children", "cuda", "eval", "modules", "named_parameters", "parameters", "state_dict", "to",
    "train", "zero_grad",
];

/// First `self.name(` call whose `name` is never assigned, defined as a
/// method, or inherited from `nn.Module`.
pub fn undefined_attribute(source: &str) -> Option<String> {
    let mut known: BTreeSet<&str> = MODULE_METHODS.iter().copied().collect();
    for line in source.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("def ") {
            known.insert(ident(rest));
        }
        let mut s = t;
        while let Some(pos) = s.find("self.") {
            let name = ident(&s[pos + 5..]);
            let after = s[pos + 5 + name.len()..].trim_start();
            if after.starts_with('=') && !after.starts_with("==") {
                known.insert(name);
            }
            s = &s[pos + 5..];
        }
    }
    for line in source.lines() {
        let mut s = line;
        while let Some(pos) = s.find("self.") {
            let name = ident(&s[pos + 5..]);
            if s[pos + 5 + name.len()..].starts_with('(') && !known.contains(name) {
                return Some(name.to_string());
            }
            s = &s[pos + 5..];
        }
    }
    None
}

fn ident(s: &str) -> &str {
    let end = s
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(s.len());
    &s[..end]
}

/// Scores one request. The string beside the result is a diagnostic for
/// the worker's stderr. `Err` means the request cannot be served at all.
/// Deterministic in (source, dataset, eval seed, config seed).
pub fn simulate(request: &EvalRequest, config: &WorkerConfig) -> Result<(EvalResult, Option<String>), String> {
    if request.mode == EvalMode::Real {
        return Err("real mode needs an external training worker".into());
    }
    if let Err(msg) = check_brackets(&request.patched_source) {
        return Ok((EvalResult::failed(FailureClass::SyntaxError), Some(msg)));
    }
    if let Some(name) = undefined_attribute(&request.patched_source) {
        return Ok((
            EvalResult::failed(FailureClass::NameTypeError),
            Some(format!("self.{name} is undefined")),
        ));
    }
    let prior = config
        .priors
        .get(&request.dataset)
        .ok_or_else(|| format!("no prior for dataset {}", request.dataset))?;
    let salt = mix64(config.seed) ^ request.eval_seed ^ request.dataset as u64;
    let u = (hash_str_seeded(&request.patched_source, salt) >> 11) as f64 / (1u64 << 53) as f64;
    let acc = (prior.mean + (u - 0.5) * 2.0 * prior.spread).clamp(0.0, 1.0);
    Ok((EvalResult::ok(acc), None))
}

/// Reads one request, writes one result line. Returns the process exit code:
/// 0 for any well-formed request, 1 when the request itself is unusable.
pub fn run_worker(input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write, config: &WorkerConfig) -> i32 {
    let mut line = String::new();
    let outcome = input
        .read_line(&mut line)
        .map_err(|e| e.to_string())
        .and_then(|_| serde_json::from_str::<EvalRequest>(line.trim()).map_err(|e| e.to_string()))
        .and_then(|req| simulate(&req, config));
    let (result, note, code) = match outcome {
        Ok((result, note)) => (result, note, 0),
        Err(msg) => (EvalResult::failed(FailureClass::ResourceError), Some(msg), 1),
    };
    if let Some(note) = note {
        let _ = writeln!(err, "{note}");
    }
    let _ = serde_json::to_writer(&mut *out, &result);
    let _ = out.write_all(b"\n");
    let _ = out.flush();
    code
}
