use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::DatasetId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.35,
            top_k: 50,
            top_p: 0.9,
            max_new_tokens: 1024,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(format!("temperature {} outside (0, 2]", self.temperature));
        }
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        Ok(())
    }
}

/// Guidance embedded in the prompt. Reported on, never enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConstraints {
    pub max_delta_lines: usize,
    pub batch_range: (u32, u32),
    pub lr_range: (f64, f64),
}

impl Default for PromptConstraints {
    fn default() -> Self {
        PromptConstraints {
            max_delta_lines: 30,
            batch_range: (16, 128),
            lr_range: (0.001, 0.01),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRequest {
    pub cycle: u32,
    pub index: u32,
    pub baseline_id: String,
    pub baseline_source: String,
    pub dataset: DatasetId,
    pub params: SamplingParams,
    pub constraints: PromptConstraints,
    /// Per-candidate seed for generators that sample locally.
    pub seed: u64,
}

impl GeneratorRequest {
    pub fn prompt(&self) -> String {
        let c = &self.constraints;
        format!(
            "Improve the following PyTorch model for {dataset}.\n\
             Reply with three blocks:\n\
             <hp>{{\"batch\": ..., \"lr\": ..., \"momentum\": ...}}</hp> with batch in [{b0}, {b1}] and lr in [{l0}, {l1}],\n\
             <tr>the data transform code</tr>,\n\
             <delta>a unified diff against baseline.py of at most {max} lines</delta>.\n\n\
             baseline.py:\n{src}",
            dataset = self.dataset,
            b0 = c.batch_range.0,
            b1 = c.batch_range.1,
            l0 = c.lr_range.0,
            l1 = c.lr_range.1,
            max = c.max_delta_lines,
            src = self.baseline_source,
        )
    }
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("replay has no output for cycle {cycle}, index {index}")]
    ReplayExhausted { cycle: u32, index: u32 },
    #[error("replay file {path}: {msg}")]
    BadReplay { path: String, msg: String },
    #[error("generator endpoint: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Generator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, GeneratorError>;
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub cycle: u32,
    pub index: u32,
    pub output_text: String,
}

/// Serves recorded outputs by `(cycle, index)`. Lookups do not consume, so
/// the same key always yields the same text.
#[derive(Debug, Clone, Default)]
pub struct ReplayGenerator {
    outputs: HashMap<(u32, u32), String>,
}

impl ReplayGenerator {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        ReplayGenerator {
            outputs: records
                .into_iter()
                .map(|r| ((r.cycle, r.index), r.output_text))
                .collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, GeneratorError> {
        let bad = |msg: String| GeneratorError::BadReplay {
            path: path.display().to_string(),
            msg,
        };
        let file = File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(ReplayGenerator::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

impl Generator for ReplayGenerator {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<String, GeneratorError> {
        self.outputs
            .get(&(req.cycle, req.index))
            .cloned()
            .ok_or(GeneratorError::ReplayExhausted {
                cycle: req.cycle,
                index: req.index,
            })
    }
}

#[derive(Serialize)]
struct HttpBody<'a> {
    prompt: &'a str,
    temperature: f64,
    top_k: u32,
    top_p: f64,
    max_new_tokens: u32,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

/// POSTs `{prompt, temperature, top_k, top_p, max_new_tokens}` and expects
/// `{text}` back.
pub struct HttpGenerator {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpGenerator {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl Generator for HttpGenerator {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<String, GeneratorError> {
        let prompt = req.prompt();
        let body = HttpBody {
            prompt: &prompt,
            temperature: req.params.temperature,
            top_k: req.params.top_k,
            top_p: req.params.top_p,
            max_new_tokens: req.params.max_new_tokens,
        };
        let reply: HttpReply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| GeneratorError::Endpoint(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| GeneratorError::Endpoint(format!("bad response body: {e}")))?;
        Ok(reply.text)
    }
}

/// Passes requests through and appends every output to a replay file.
pub struct RecordingGenerator<G> {
    inner: G,
    out: File,
}

impl<G: Generator> RecordingGenerator<G> {
    pub fn new(inner: G, path: &Path) -> Result<Self, GeneratorError> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingGenerator { inner, out })
    }
}

impl<G: Generator> Generator for RecordingGenerator<G> {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<String, GeneratorError> {
        let text = self.inner.generate(req)?;
        let rec = ReplayRecord {
            cycle: req.cycle,
            index: req.index,
            output_text: text.clone(),
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(text)
    }
}

impl Generator for Box<dyn Generator> {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<String, GeneratorError> {
        (**self).generate(req)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn request(cycle: u32, index: u32) -> GeneratorRequest {
        GeneratorRequest {
            cycle,
            index,
            baseline_id: "b".into(),
            baseline_source: "import torch\n".into(),
            dataset: DatasetId::Cifar10,
            params: SamplingParams::default(),
            constraints: PromptConstraints::default(),
            seed: 1,
        }
    }

    #[test]
    fn replay_serves_keys_then_exhausts() {
        let mut g = ReplayGenerator::from_records((0..3).map(|i| ReplayRecord {
            cycle: 0,
            index: i,
            output_text: format!("out{i}"),
        }));
        for i in 0..3 {
            assert_eq!(g.generate(&request(0, i)).unwrap(), format!("out{i}"));
        }
        assert!(matches!(
            g.generate(&request(0, 3)),
            Err(GeneratorError::ReplayExhausted { cycle: 0, index: 3 })
        ));
        assert_eq!(g.generate(&request(0, 1)).unwrap(), "out1");
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let inner = ReplayGenerator::from_records([ReplayRecord {
            cycle: 2,
            index: 5,
            output_text: "<delta>\nx\n</delta>".into(),
        }]);
        let mut rec = RecordingGenerator::new(inner, &path).unwrap();
        let text = rec.generate(&request(2, 5)).unwrap();
        let mut replay = ReplayGenerator::open(&path).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.generate(&request(2, 5)).unwrap(), text);
    }

    #[test]
    fn params_and_prompt() {
        let p = SamplingParams::default();
        assert!(p.validate().is_ok());
        assert!(SamplingParams { temperature: 0.0, ..p }.validate().is_err());
        assert!(SamplingParams { temperature: 2.5, ..p }.validate().is_err());
        let prompt = request(0, 0).prompt();
        assert!(prompt.contains("CIFAR-10") && prompt.contains("at most 30 lines"));
        assert!(prompt.ends_with("import torch\n"));
    }
}
