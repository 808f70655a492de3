//! Extraction of the `<hp>`, `<tr>` and `<delta>` sections from raw
//! generator text.
//!
//! Generator output is not well-formed XML (it is usually surrounded by
//! prose, code fences or chat boilerplate), so tags are located by a literal
//! scan rather than by an XML parser.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OutputError {
    #[error("no <delta> tag in generator output")]
    MissingDeltaTag,
    #[error("<{tag}> opened at byte {offset} is never closed")]
    UnclosedTag { tag: &'static str, offset: usize },
    #[error("more than one <{tag}> block in generator output")]
    DuplicateTag { tag: &'static str },
}

/// A value from the `<hp>` block. Numbers are kept as decimals, anything
/// else as its string form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Number(f64),
    Text(String),
}

/// Non-fatal findings recorded while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputWarning {
    HpAbsent,
    TrAbsent,
    /// `<hp>` was present but its body was not a key/value object; dropped.
    HpMalformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub raw_text: String,
    pub hp: Option<BTreeMap<String, HpValue>>,
    pub transform_code: Option<String>,
    pub delta_text: String,
    pub total_lines: usize,
    pub warnings: Vec<OutputWarning>,
}

/// Number of newline-delimited lines: 0 for empty text, otherwise one more
/// than the number of `\n` characters.
pub fn count_lines(text: &str) -> usize {
    if text.is_empty() {
        0
    } else {
        1 + text.bytes().filter(|&b| b == b'\n').count()
    }
}

/// Approximate token count of an output of `lines` lines (4 tokens/line).
pub fn estimate_tokens(lines: f64) -> u64 {
    if lines <= 0.0 {
        return 0;
    }
    (4.0 * lines).round() as u64
}

struct Section<'a> {
    body: &'a str,
}

/// Finds the single `<tag>…</tag>` section. `Ok(None)` when the tag is absent.
fn find_section<'a>(text: &'a str, tag: &'static str) -> Result<Option<Section<'a>>, OutputError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = text.find(&open) else {
        return Ok(None);
    };
    let body_start = start + open.len();
    let Some(rel_end) = text[body_start..].find(&close) else {
        return Err(OutputError::UnclosedTag { tag, offset: start });
    };
    let body_end = body_start + rel_end;
    let body = &text[body_start..body_end];
    if body.contains(&open) || text[body_end + close.len()..].contains(&open) {
        return Err(OutputError::DuplicateTag { tag });
    }
    Ok(Some(Section { body }))
}

/// Drops the line break right after an opening tag so the body starts at
/// its first real line.
fn strip_leading_break(body: &str) -> &str {
    body.strip_prefix("\r\n")
        .or_else(|| body.strip_prefix('\n'))
        .unwrap_or(body)
}

fn parse_hp(body: &str) -> Option<BTreeMap<String, HpValue>> {
    let value: serde_json::Value = serde_json::from_str(body.trim()).ok()?;
    let obj = value.as_object()?;
    let map = obj
        .iter()
        .map(|(k, v)| {
            let hv = match v {
                serde_json::Value::Number(n) => n
                    .as_f64()
                    .map(HpValue::Number)
                    .unwrap_or_else(|| HpValue::Text(n.to_string())),
                serde_json::Value::String(s) => match s.trim().parse::<f64>() {
                    Ok(x) if x.is_finite() => HpValue::Number(x),
                    _ => HpValue::Text(s.clone()),
                },
                other => HpValue::Text(other.to_string()),
            };
            (k.clone(), hv)
        })
        .collect();
    Some(map)
}

/// Parses raw generator text into its tagged sections.
pub fn parse_generator_output(text: &str) -> Result<GeneratorOutput, OutputError> {
    let delta = find_section(text, "delta")?.ok_or(OutputError::MissingDeltaTag)?;
    let hp_section = find_section(text, "hp")?;
    let tr_section = find_section(text, "tr")?;

    let mut warnings = Vec::new();
    let hp = match hp_section {
        None => {
            warnings.push(OutputWarning::HpAbsent);
            None
        }
        Some(s) => {
            let parsed = parse_hp(s.body);
            if parsed.is_none() {
                warnings.push(OutputWarning::HpMalformed);
            }
            parsed
        }
    };
    let transform_code = match tr_section {
        None => {
            warnings.push(OutputWarning::TrAbsent);
            None
        }
        Some(s) => Some(strip_leading_break(s.body).to_string()),
    };

    Ok(GeneratorOutput {
        raw_text: text.to_string(),
        hp,
        transform_code,
        delta_text: strip_leading_break(delta.body).to_string(),
        total_lines: count_lines(text),
        warnings,
    })
}
