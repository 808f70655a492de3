use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generator::{Generator, GeneratorError, GeneratorRequest};
use crate::diff::compute_diff;
use crate::hashing::hash_str_seeded;

const ACTIVATIONS: [&str; 5] = ["relu", "gelu", "silu", "elu", "leaky_relu"];
const BATCHES: [u32; 4] = [16, 32, 64, 128];
const TRANSFORM: &str = "import torchvision.transforms as transforms
def transform(norm):
    return transforms.Compose([
        transforms.ToTensor(),
        transforms.Normalize(*norm)])
";

/// Offline stand-in for a model endpoint. It edits the baseline with a few
/// architecture mutations and emits the tagged output a real model would,
/// deliberately damaging a fraction of the deltas so every failure path of
/// the pipeline gets traffic. Output is a pure function of the request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticGenerator {
    /// Fraction of outputs whose delta cannot be applied.
    pub corrupt_rate: f64,
    /// Fraction of outputs whose patched code has unbalanced brackets.
    pub syntax_error_rate: f64,
}

impl Default for SyntheticGenerator {
    fn default() -> Self {
        SyntheticGenerator {
            corrupt_rate: 0.25,
            syntax_error_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Corruption {
    ContextMismatch,
    OutOfRange,
    MalformedHeader,
    MissingDeltaTag,
}

impl Generator for SyntheticGenerator {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<String, GeneratorError> {
        Ok(self.render(req))
    }
}

impl SyntheticGenerator {
    pub fn render(&self, req: &GeneratorRequest) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed ^ hash_str_seeded(&req.baseline_id, 0x5eed));
        let old = &req.baseline_source;
        let mut lines: Vec<String> = old.lines().map(str::to_string).collect();

        let mutations = rng.gen_range(1..=3);
        for _ in 0..mutations {
            mutate(&mut lines, &mut rng);
        }
        if rng.gen_bool(self.syntax_error_rate) {
            insert_after_init(&mut lines, "        self.head = nn.Sequential(".to_string());
        }
        let mut new = lines.join("\n");
        if old.ends_with('\n') {
            new.push('\n');
        }
        if new == *old {
            insert_after_init(&mut lines, format!("        # variant {}", rng.gen::<u32>()));
            new = lines.join("\n") + if old.ends_with('\n') { "\n" } else { "" };
        }

        let mut diff = compute_diff(old, &new);
        diff.old_name = "baseline.py".into();
        diff.new_name = "improved.py".into();

        let corruption = rng.gen_bool(self.corrupt_rate).then(|| {
            *[
                Corruption::ContextMismatch,
                Corruption::OutOfRange,
                Corruption::MalformedHeader,
                Corruption::MissingDeltaTag,
            ]
            .choose(&mut rng)
            .expect("non-empty")
        });
        let source_lines = old.lines().count();
        let mut delta = match corruption {
            Some(Corruption::OutOfRange) => {
                for h in &mut diff.hunks {
                    h.old_start += source_lines + 40;
                    h.new_start += source_lines + 40;
                }
                diff.render()
            }
            _ => diff.render(),
        };
        match corruption {
            Some(Corruption::ContextMismatch) => delta = damage_context(&delta),
            Some(Corruption::MalformedHeader) => delta = delta.replacen("@@ -", "@@ ~", 1),
            _ => {}
        }

        let c = &req.constraints;
        let batch = BATCHES
            .iter()
            .copied()
            .filter(|b| (c.batch_range.0..=c.batch_range.1).contains(b))
            .collect::<Vec<_>>()
            .choose(&mut rng)
            .copied()
            .unwrap_or(c.batch_range.0);
        let lr = (rng.gen_range(c.lr_range.0..=c.lr_range.1) * 10_000.0).round() / 10_000.0;
        let momentum = [0.8, 0.9, 0.95].choose(&mut rng).copied().unwrap_or(0.9);

        let mut out = format!(
            "Here is an improved {} model.\n\n<hp>\n{{\"batch\": {batch}, \"lr\": {lr}, \"momentum\": {momentum}}}\n</hp>\n\n<tr>\n{TRANSFORM}</tr>\n\n",
            req.dataset
        );
        if corruption == Some(Corruption::MissingDeltaTag) {
            out.push_str("```diff\n");
            out.push_str(&delta);
            out.push_str("```\n");
        } else {
            out.push_str("<delta>\n");
            out.push_str(&delta);
            out.push_str("</delta>\n");
        }
        out
    }
}

/// Rewrites the first context line so the hunk no longer matches its source.
fn damage_context(delta: &str) -> String {
    let mut damaged = false;
    let mut out = String::with_capacity(delta.len() + 16);
    for line in delta.split_inclusive('\n') {
        let body = line.strip_suffix('\n').unwrap_or(line);
        if !damaged && (body.starts_with(' ') || (body.starts_with('-') && !body.starts_with("---"))) {
            out.push_str(body);
            out.push_str("  # stale");
            out.push('\n');
            damaged = true;
        } else {
            out.push_str(line);
        }
    }
    out
}

fn insert_after_init(lines: &mut Vec<String>, line: String) {
    let at = lines
        .iter()
        .position(|l| l.trim() == "super().__init__()")
        .map(|i| i + 1)
        .unwrap_or(lines.len());
    lines.insert(at, line);
}

fn indices(lines: &[String], pred: impl Fn(&str) -> bool) -> Vec<usize> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| pred(l))
        .map(|(i, _)| i)
        .collect()
}

fn mutate(lines: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    match rng.gen_range(0..5) {
        0 => add_batchnorm(lines, rng),
        1 => add_dropout(lines, rng),
        2 => swap_activation(lines, rng),
        3 => widen_kernel(lines, rng),
        _ => swap_pooling(lines),
    }
}

/// `self.convK = nn.Conv2d(a, w, ...)` gains a following `self.bnK` and the
/// forward pass wraps `self.convK(x)` in it.
fn add_batchnorm(lines: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    let candidates: Vec<(usize, String, String)> = indices(lines, |l| l.contains("= nn.Conv2d("))
        .into_iter()
        .filter_map(|i| {
            let l = lines[i].trim();
            let name = l.strip_prefix("self.")?.split(' ').next()?.to_string();
            let args = l.split("Conv2d(").nth(1)?;
            let width = args.split(',').nth(1)?.trim().to_string();
            let bn = format!("bn_{name}");
            let exists = lines.iter().any(|x| x.contains(&format!("self.{bn} =")));
            (!exists).then_some((i, name, width))
        })
        .collect();
    let Some((i, name, width)) = candidates.choose(rng).cloned() else {
        return;
    };
    lines.insert(i + 1, format!("        self.bn_{name} = nn.BatchNorm2d({width})"));
    let call = format!("self.{name}(x)");
    for l in lines.iter_mut() {
        if l.contains(&call) && !l.contains("= nn.") {
            *l = l.replace(&call, &format!("self.bn_{name}({call})"));
        }
    }
}

fn add_dropout(lines: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    if lines.iter().any(|l| l.contains("self.drop =")) {
        return;
    }
    let Some(fc) = lines.iter().position(|l| l.contains("self.fc = nn.Linear(")) else {
        return;
    };
    let Some(ret) = lines.iter().position(|l| l.trim() == "return self.fc(x)") else {
        return;
    };
    let p = [0.1, 0.2, 0.3, 0.5].choose(rng).copied().unwrap_or(0.2);
    lines[ret] = lines[ret].replace("self.fc(x)", "self.fc(self.drop(x))");
    lines.insert(fc, format!("        self.drop = nn.Dropout({p})"));
}

fn swap_activation(lines: &mut [String], rng: &mut ChaCha8Rng) {
    let sites = indices(lines, |l| ACTIVATIONS.iter().any(|a| l.contains(&format!("F.{a}("))));
    let Some(&i) = sites.choose(rng) else {
        return;
    };
    let Some(current) = ACTIVATIONS.iter().find(|a| lines[i].contains(&format!("F.{a}("))) else {
        return;
    };
    let others: Vec<&&str> = ACTIVATIONS.iter().filter(|a| *a != current).collect();
    let next = others.choose(rng).expect("five activations");
    lines[i] = lines[i].replacen(&format!("F.{current}("), &format!("F.{next}("), 1);
}

fn widen_kernel(lines: &mut [String], rng: &mut ChaCha8Rng) {
    let sites = indices(lines, |l| l.contains("= nn.Conv2d(") && l.contains(", 3, padding=1)"));
    if let Some(&i) = sites.choose(rng) {
        lines[i] = lines[i].replace(", 3, padding=1)", ", 5, padding=2)");
    }
}

fn swap_pooling(lines: &mut [String]) {
    for l in lines.iter_mut() {
        if l.contains("nn.MaxPool2d(") {
            *l = l.replace("nn.MaxPool2d(", "nn.AvgPool2d(");
            return;
        }
        if l.contains("nn.AvgPool2d(") {
            *l = l.replace("nn.AvgPool2d(", "nn.MaxPool2d(");
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{apply_diff, parse_diff};
    use crate::gateway::generator::tests::request;
    use crate::output::parse_generator_output;

    const BASELINE: &str = include_str!("../../assets/baselines/cifar10_wide.py");

    fn req(index: u32) -> GeneratorRequest {
        let mut r = request(0, index);
        r.baseline_source = BASELINE.to_string();
        r.seed = crate::hashing::mix64(index as u64);
        r
    }

    #[test]
    fn deterministic_per_request() {
        let g = SyntheticGenerator::default();
        assert_eq!(g.render(&req(7)), g.render(&req(7)));
        assert_ne!(g.render(&req(7)), g.render(&req(8)));
    }

    #[test]
    fn clean_outputs_apply() {
        let g = SyntheticGenerator {
            corrupt_rate: 0.0,
            syntax_error_rate: 0.0,
        };
        for i in 0..200 {
            let text = g.render(&req(i));
            let out = parse_generator_output(&text).unwrap();
            assert!(out.hp.is_some() && out.transform_code.is_some());
            let diff = parse_diff(&out.delta_text).unwrap();
            let patched = apply_diff(BASELINE, &diff, 0).unwrap();
            assert_ne!(patched, BASELINE);
        }
    }

    #[test]
    fn corrupted_outputs_never_apply() {
        let g = SyntheticGenerator {
            corrupt_rate: 1.0,
            syntax_error_rate: 0.0,
        };
        for i in 0..200 {
            let text = g.render(&req(i));
            let applied = parse_generator_output(&text)
                .ok()
                .and_then(|o| parse_diff(&o.delta_text).ok())
                .and_then(|d| apply_diff(BASELINE, &d, 3).ok());
            assert!(applied.is_none(), "output {i} applied:\n{text}");
        }
    }

    #[test]
    fn default_failure_share_is_near_a_quarter() {
        let g = SyntheticGenerator::default();
        let failed = (0..1000)
            .filter(|&i| {
                let text = g.render(&req(i));
                parse_generator_output(&text)
                    .ok()
                    .and_then(|o| parse_diff(&o.delta_text).ok())
                    .and_then(|d| apply_diff(BASELINE, &d, 3).ok())
                    .is_none()
            })
            .count();
        assert!((200..=300).contains(&failed), "{failed}");
    }
}
