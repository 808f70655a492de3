use std::borrow::Cow;

use super::{ApplyError, LineKind, SourceText, UnifiedDiff};

/// Applies `diff` to `source`.
///
/// Hunks are applied in order against the original line numbering. Every
/// context and deleted line must match the source. `fuzz` is the
/// largest line offset tolerated between a hunk's declared position and the
/// position where its old lines actually match; with `fuzz == 0` the hunk must
/// match exactly where it says.
///
/// A trailing `\r` is ignored when matching, and context lines are copied
/// from the source, so the source's line-ending convention is kept. Its trailing-newline state is
/// kept too unless an end-of-file hunk carries `\ No newline` markers.
pub fn apply_diff(source: &str, diff: &UnifiedDiff, fuzz: usize) -> Result<String, ApplyError> {
    let src = SourceText::parse(source);
    let n = src.lines.len();
    // An LF-authored diff patched into a CRLF file gets CRLF added lines.
    let adapt_eol = src.crlf && !diff.hunks.iter().flat_map(|h| &h.lines).any(|l| l.text.ends_with('\r'));
    let mut out: Vec<Cow<str>> = Vec::with_capacity(n);
    let mut last_adapted = false;
    let mut cursor = 0usize;
    let mut prev_declared_end = 0usize;
    let mut trailing_newline = src.trailing_newline;

    for (hunk_index, hunk) in diff.hunks.iter().enumerate() {
        let declared = hunk.old_index();
        if hunk_index > 0 && declared < prev_declared_end {
            return Err(ApplyError::OverlappingHunks { hunk_index });
        }
        prev_declared_end = declared + hunk.old_len;

        let old: Vec<&str> = hunk.old_lines().collect();
        let matches_at = |pos: usize| {
            pos >= cursor
                && pos + old.len() <= n
                && src.lines[pos..pos + old.len()]
                    .iter()
                    .zip(&old)
                    .all(|(a, b)| same_line(a, b))
        };

        let mut found = None;
        for delta in 0..=fuzz {
            if matches_at(declared + delta) {
                found = Some(declared + delta);
                break;
            }
            if delta > 0 && delta <= declared && matches_at(declared - delta) {
                found = Some(declared - delta);
                break;
            }
        }

        let pos = match found {
            Some(p) => p,
            None if declared + old.len() > n => {
                return Err(ApplyError::OutOfRange {
                    hunk_index,
                    old_start: hunk.old_start,
                    old_len: hunk.old_len,
                    source_lines: n,
                })
            }
            None if declared < cursor => return Err(ApplyError::OverlappingHunks { hunk_index }),
            None => {
                let (offset, (expected, found)) = old
                    .iter()
                    .zip(&src.lines[declared..])
                    .enumerate()
                    .find(|(_, (a, b))| !same_line(a, b))
                    .expect("some line differs when no position matched");
                return Err(ApplyError::ContextMismatch {
                    hunk_index,
                    line: declared + offset + 1,
                    expected: strip_cr(expected).to_string(),
                    found: strip_cr(found).to_string(),
                });
            }
        };

        out.extend(src.lines[cursor..pos].iter().map(|l| Cow::Borrowed(*l)));
        let mut k = pos;
        for line in &hunk.lines {
            match line.kind {
                // context comes from the source so its bytes survive
                LineKind::Context => {
                    out.push(Cow::Borrowed(src.lines[k]));
                    last_adapted = false;
                    k += 1;
                }
                LineKind::Delete => k += 1,
                LineKind::Add if adapt_eol && !line.text.ends_with('\r') => {
                    out.push(Cow::Owned(format!("{}\r", line.text)));
                    last_adapted = true;
                }
                LineKind::Add => {
                    out.push(Cow::Borrowed(line.text.as_str()));
                    last_adapted = false;
                }
            }
        }
        cursor = pos + old.len();

        if cursor == n && (hunk.old_missing_newline || hunk.new_missing_newline) {
            trailing_newline = !hunk.new_missing_newline;
        }
    }
    if cursor < n {
        out.extend(src.lines[cursor..].iter().map(|l| Cow::Borrowed(*l)));
        last_adapted = false;
    }

    if out.is_empty() {
        return Ok(String::new());
    }
    if !trailing_newline && last_adapted {
        // the adapted `\r` belongs to a line break that is not there
        if let Some(Cow::Owned(last)) = out.last_mut() {
            last.pop();
        }
    }
    let mut text = out.join("\n");
    if trailing_newline {
        text.push('\n');
    }
    Ok(text)
}

fn strip_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

/// Lines match when equal up to a trailing `\r`.
fn same_line(a: &str, b: &str) -> bool {
    a == b || strip_cr(a) == strip_cr(b)
}

#[cfg(test)]
mod tests {
    use super::super::tests::fixture;
    use super::super::{parse_diff, Hunk, HunkLine};
    use super::*;

    #[test]
    fn golden_examples() {
        for name in ["add_batchnorm", "add_dropout", "widen_conv"] {
            let base = fixture(&format!("{name}_baseline.py"));
            let expected = fixture(&format!("{name}_expected.py"));
            let diff = parse_diff(&fixture(&format!("{name}.diff"))).unwrap();
            assert_eq!(apply_diff(&base, &diff, 0).unwrap(), expected, "{name}");
        }
    }

    #[test]
    fn dropout_lines_land_at_stated_offsets() {
        let base = fixture("add_dropout_baseline.py");
        let diff = parse_diff(&fixture("add_dropout.diff")).unwrap();
        let out = apply_diff(&base, &diff, 0).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[17], "        self.dropout = nn.Dropout(0.3)");
        assert_eq!(lines[27], "        x = self.dropout(x)");
    }

    #[test]
    fn zero_hunks_is_identity() {
        for src in ["", "a", "a\nb\n", "x\r\ny"] {
            assert_eq!(apply_diff(src, &UnifiedDiff::empty(), 0).unwrap(), src);
        }
    }

    #[test]
    fn missing_context_line() {
        let diff = parse_diff(
            "@@ -2,2 +2,3 @@\n         self.conv1 = nn.Conv2d(3, 64, 3)\n+        self.bn = nn.BatchNorm2d(64)\n     x\n",
        )
        .unwrap();
        let src = "class Net:\n        self.conv1 = nn.Conv2d(3, 32, 3)\n    x\n";
        let err = apply_diff(src, &diff, 0).unwrap_err();
        assert_eq!(
            err,
            ApplyError::ContextMismatch {
                hunk_index: 0,
                line: 2,
                expected: "        self.conv1 = nn.Conv2d(3, 64, 3)".into(),
                found: "        self.conv1 = nn.Conv2d(3, 32, 3)".into(),
            }
        );
    }

    #[test]
    fn hallucinated_line_numbers() {
        let diff = parse_diff("@@ -40,2 +40,2 @@\n a\n-b\n+c\n").unwrap();
        assert!(matches!(
            apply_diff("a\nb\n", &diff, 0),
            Err(ApplyError::OutOfRange { hunk_index: 0, source_lines: 2, .. })
        ));
    }

    #[test]
    fn overlapping_hunks() {
        let diff = parse_diff("@@ -1,2 +1,2 @@\n a\n-b\n+B\n@@ -2,2 +2,2 @@\n-b\n+B\n c\n").unwrap();
        assert_eq!(
            apply_diff("a\nb\nc\n", &diff, 0),
            Err(ApplyError::OverlappingHunks { hunk_index: 1 })
        );
        let reversed = parse_diff("@@ -3 +3 @@\n-c\n+C\n@@ -1 +1 @@\n-a\n+A\n").unwrap();
        assert_eq!(
            apply_diff("a\nb\nc\n", &reversed, 0),
            Err(ApplyError::OverlappingHunks { hunk_index: 1 })
        );
    }

    #[test]
    fn fuzz_allows_small_offsets_only() {
        let diff = parse_diff("@@ -2,2 +2,2 @@\n b\n-c\n+C\n").unwrap();
        let src = "x\na\nb\nc\n";
        assert!(matches!(
            apply_diff(src, &diff, 0),
            Err(ApplyError::ContextMismatch { .. })
        ));
        assert_eq!(apply_diff(src, &diff, 1).unwrap(), "x\na\nb\nC\n");
        let far = "x\ny\nz\na\nb\nc\n";
        assert!(apply_diff(far, &diff, 1).is_err());
        assert_eq!(apply_diff(far, &diff, 3).unwrap(), "x\ny\nz\na\nb\nC\n");
    }

    #[test]
    fn line_endings_preserved() {
        let diff = parse_diff("@@ -1,2 +1,2 @@\n a\n-b\n+c\n").unwrap();
        assert_eq!(apply_diff("a\r\nb\r\n", &diff, 0).unwrap(), "a\r\nc\r\n");
        assert_eq!(apply_diff("a\nb", &diff, 0).unwrap(), "a\nc");
    }

    #[test]
    fn markers_control_final_newline() {
        let add_nl = parse_diff("@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+a\n").unwrap();
        assert_eq!(apply_diff("a", &add_nl, 0).unwrap(), "a\n");
        let drop_nl = parse_diff("@@ -1 +1 @@\n-a\n+a\n\\ No newline at end of file\n").unwrap();
        assert_eq!(apply_diff("a\n", &drop_nl, 0).unwrap(), "a");
    }

    #[test]
    fn insert_into_empty_source() {
        let diff = UnifiedDiff {
            hunks: vec![Hunk {
                old_start: 0,
                old_len: 0,
                new_start: 1,
                new_len: 2,
                section: None,
                lines: vec![HunkLine::new(LineKind::Add, "x"), HunkLine::new(LineKind::Add, "y")],
                old_missing_newline: false,
                new_missing_newline: false,
            }],
            ..UnifiedDiff::empty()
        };
        assert_eq!(apply_diff("", &diff, 0).unwrap(), "x\ny\n");
    }
}
