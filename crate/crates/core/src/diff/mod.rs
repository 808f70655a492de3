//! Unified diffs: parsing, application, generation and counting.
//!
//! Only the single-file text subset is supported: optional `---`/`+++`
//! headers followed by `@@` hunks. No timestamps, index lines, renames or
//! binary patches.

mod apply;
mod compute;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use apply::apply_diff;
pub use compute::compute_diff;
pub use parse::parse_diff;

pub const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("diff contains no hunks")]
    EmptyDiff,
    #[error("malformed hunk header at line {line}: {text:?}")]
    MalformedHunkHeader { line: usize, text: String },
    #[error("invalid line prefix inside hunk at line {line}: {text:?}")]
    InvalidLinePrefix { line: usize, text: String },
    #[error(
        "hunk {hunk_index} declares -{declared_old}/+{declared_new} lines but its body \
         has -{found_old}/+{found_new}"
    )]
    LengthMismatch {
        hunk_index: usize,
        declared_old: usize,
        declared_new: usize,
        found_old: usize,
        found_new: usize,
    },
    #[error("hunk {hunk_index} has no added or deleted lines")]
    NoChanges { hunk_index: usize },
    #[error("second file header at line {line}; only single-file diffs are supported")]
    MultipleFiles { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error(
        "hunk {hunk_index}: context mismatch at source line {line}: expected {expected:?}, \
         found {found:?}"
    )]
    ContextMismatch {
        hunk_index: usize,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("hunk {hunk_index} addresses lines {old_start}..+{old_len} but the source has {source_lines}")]
    OutOfRange {
        hunk_index: usize,
        old_start: usize,
        old_len: usize,
        source_lines: usize,
    },
    #[error("hunk {hunk_index} overlaps or precedes the previous hunk")]
    OverlappingHunks { hunk_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Context,
    Add,
    Delete,
}

impl LineKind {
    fn prefix(self) -> char {
        match self {
            LineKind::Context => ' ',
            LineKind::Add => '+',
            LineKind::Delete => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
}

impl HunkLine {
    pub fn new(kind: LineKind, text: impl Into<String>) -> Self {
        HunkLine {
            kind,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    /// 1-based; for `old_len == 0` the line *after which* the hunk inserts.
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    /// Trailing text after the closing `@@`, e.g. `class Net(nn.Module):`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    pub lines: Vec<HunkLine>,
    /// The last old-side line of this hunk is the end of a file without a
    /// trailing newline.
    #[serde(default)]
    pub old_missing_newline: bool,
    #[serde(default)]
    pub new_missing_newline: bool,
}

impl Hunk {
    pub fn old_lines(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.kind != LineKind::Add)
            .map(|l| l.text.as_str())
    }

    pub fn new_lines(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.kind != LineKind::Delete)
            .map(|l| l.text.as_str())
    }

    /// 0-based index of the first source line this hunk replaces.
    pub(crate) fn old_index(&self) -> usize {
        if self.old_len == 0 {
            self.old_start
        } else {
            self.old_start - 1
        }
    }

    fn count(&self, kind: LineKind) -> usize {
        self.lines.iter().filter(|l| l.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedDiff {
    pub old_name: String,
    pub new_name: String,
    pub hunks: Vec<Hunk>,
}

impl UnifiedDiff {
    pub fn empty() -> Self {
        UnifiedDiff {
            old_name: "a".into(),
            new_name: "b".into(),
            hunks: Vec::new(),
        }
    }

    pub fn stats(&self) -> DiffStats {
        diff_stats(self)
    }

    /// Serializes to unified-diff text.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

fn fmt_range(start: usize, len: usize) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

impl fmt::Display for UnifiedDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "--- {}", self.old_name)?;
        writeln!(f, "+++ {}", self.new_name)?;
        for h in &self.hunks {
            write!(
                f,
                "@@ -{} +{} @@",
                fmt_range(h.old_start, h.old_len),
                fmt_range(h.new_start, h.new_len)
            )?;
            if let Some(s) = &h.section {
                write!(f, " {s}")?;
            }
            writeln!(f)?;
            let last_old = h
                .old_missing_newline
                .then(|| h.lines.iter().rposition(|l| l.kind != LineKind::Add))
                .flatten();
            let last_new = h
                .new_missing_newline
                .then(|| h.lines.iter().rposition(|l| l.kind != LineKind::Delete))
                .flatten();
            for (i, line) in h.lines.iter().enumerate() {
                writeln!(f, "{}{}", line.kind.prefix(), line.text)?;
                if Some(i) == last_old || Some(i) == last_new {
                    writeln!(f, "{NO_NEWLINE_MARKER}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffStats {
    pub hunk_count: usize,
    pub added: usize,
    pub deleted: usize,
    pub context: usize,
}

pub fn diff_stats(diff: &UnifiedDiff) -> DiffStats {
    diff.hunks.iter().fold(
        DiffStats {
            hunk_count: diff.hunks.len(),
            ..DiffStats::default()
        },
        |mut acc, h| {
            acc.added += h.count(LineKind::Add);
            acc.deleted += h.count(LineKind::Delete);
            acc.context += h.count(LineKind::Context);
            acc
        },
    )
}

/// A text split on `\n`. A preceding `\r` stays part of its line, so the
/// split is lossless; `crlf` records the convention of the first line break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct SourceText<'a> {
    pub lines: Vec<&'a str>,
    pub crlf: bool,
    /// Whether the last line is terminated. Vacuously true for empty text.
    pub trailing_newline: bool,
}

impl<'a> SourceText<'a> {
    pub fn parse(text: &'a str) -> Self {
        if text.is_empty() {
            return SourceText {
                lines: Vec::new(),
                crlf: false,
                trailing_newline: true,
            };
        }
        let crlf = text
            .find('\n')
            .is_some_and(|i| i > 0 && text.as_bytes()[i - 1] == b'\r');
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline {
            &text[..text.len() - 1]
        } else {
            text
        };
        SourceText {
            lines: body.split('\n').collect(),
            crlf,
            trailing_newline,
        }
    }
}
