use super::{Hunk, HunkLine, LineKind, SourceText, UnifiedDiff};

const CONTEXT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal(usize, usize),
    Delete(usize),
    Insert(usize),
}

/// A line as compared by the diff: its text plus whether it is an
/// unterminated final line, so a newline-only change still shows up.
#[derive(PartialEq, Eq)]
struct Key<'a>(&'a str, bool);

fn keys<'a>(src: &SourceText<'a>) -> Vec<Key<'a>> {
    let n = src.lines.len();
    src.lines
        .iter()
        .enumerate()
        .map(|(i, l)| Key(l, i + 1 == n && !src.trailing_newline))
        .collect()
}

/// Longest-common-subsequence edit script. Common prefix and suffix are
/// trimmed before the quadratic table is built over the middle.
fn edit_script(a: &[Key<'_>], b: &[Key<'_>]) -> Vec<Op> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];
    let (n, m) = (am.len(), bm.len());

    // table[i][j] = LCS length of am[i..] and bm[j..]
    let width = m + 1;
    let mut table = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * width + j] = if am[i] == bm[j] {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }

    let mut ops: Vec<Op> = (0..prefix).map(|k| Op::Equal(k, k)).collect();
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && am[i] == bm[j] {
            ops.push(Op::Equal(prefix + i, prefix + j));
            i += 1;
            j += 1;
        } else if j == m || (i < n && table[(i + 1) * width + j] >= table[i * width + j + 1]) {
            ops.push(Op::Delete(prefix + i));
            i += 1;
        } else {
            ops.push(Op::Insert(prefix + j));
            j += 1;
        }
    }
    ops.extend((0..suffix).map(|k| Op::Equal(prefix + n + k, prefix + m + k)));
    ops
}

/// Line diff of `old` against `new` with three lines of context, such that
/// `apply_diff(old, &compute_diff(old, new), 0) == new`.
pub fn compute_diff(old: &str, new: &str) -> UnifiedDiff {
    let a_src = SourceText::parse(old);
    let b_src = SourceText::parse(new);
    let a = keys(&a_src);
    let b = keys(&b_src);
    let ops = edit_script(&a, &b);

    // group changed ops into hunks, merging when the gap is within 2*CONTEXT
    let changes: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| !matches!(op, Op::Equal(..)))
        .map(|(i, _)| i)
        .collect();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &c in &changes {
        match groups.last_mut() {
            Some((_, end)) if c - *end <= 2 * CONTEXT + 1 => *end = c,
            _ => groups.push((c, c)),
        }
    }

    let mut diff = UnifiedDiff::empty();
    for (first, last) in groups {
        let start = first.saturating_sub(CONTEXT);
        let end = (last + CONTEXT + 1).min(ops.len());
        let slice = &ops[start..end];

        // positions in each file before the first op of the hunk
        let (old_before, new_before) = ops[..start].iter().fold((0, 0), |(o, n), op| match op {
            Op::Equal(..) => (o + 1, n + 1),
            Op::Delete(_) => (o + 1, n),
            Op::Insert(_) => (o, n + 1),
        });

        let mut lines = Vec::with_capacity(slice.len());
        let (mut old_len, mut new_len) = (0, 0);
        for op in slice {
            match *op {
                Op::Equal(i, _) => {
                    lines.push(HunkLine::new(LineKind::Context, a_src.lines[i]));
                    old_len += 1;
                    new_len += 1;
                }
                Op::Delete(i) => {
                    lines.push(HunkLine::new(LineKind::Delete, a_src.lines[i]));
                    old_len += 1;
                }
                Op::Insert(j) => {
                    lines.push(HunkLine::new(LineKind::Add, b_src.lines[j]));
                    new_len += 1;
                }
            }
        }
        let reaches_old_end = old_before + old_len == a_src.lines.len();
        let reaches_new_end = new_before + new_len == b_src.lines.len();
        diff.hunks.push(Hunk {
            old_start: if old_len == 0 { old_before } else { old_before + 1 },
            old_len,
            new_start: if new_len == 0 { new_before } else { new_before + 1 },
            new_len,
            section: None,
            lines,
            old_missing_newline: reaches_old_end && old_len > 0 && !a_src.trailing_newline,
            new_missing_newline: reaches_new_end && new_len > 0 && !b_src.trailing_newline,
        });
    }
    diff
}

#[cfg(test)]
mod tests {
    use super::super::{apply_diff, parse_diff};
    use super::*;

    #[test]
    fn identical_texts_give_no_hunks() {
        let t = "a\nb\nc\n";
        assert!(compute_diff(t, t).hunks.is_empty());
    }

    #[test]
    fn single_substitution() {
        let d = compute_diff("A\nB\nC\n", "A\nX\nC\n");
        assert_eq!(d.hunks.len(), 1);
        let h = &d.hunks[0];
        assert_eq!(
            h.lines,
            vec![
                HunkLine::new(LineKind::Context, "A"),
                HunkLine::new(LineKind::Delete, "B"),
                HunkLine::new(LineKind::Add, "X"),
                HunkLine::new(LineKind::Context, "C"),
            ]
        );
        assert_eq!((h.old_start, h.old_len, h.new_start, h.new_len), (1, 3, 1, 3));
    }

    #[test]
    fn distant_changes_split_into_hunks() {
        let old: String = (0..40).map(|i| format!("l{i}\n")).collect();
        let new = old.replace("l3\n", "L3\n").replace("l30\n", "L30\n");
        let d = compute_diff(&old, &new);
        assert_eq!(d.hunks.len(), 2);
        assert_eq!(apply_diff(&old, &d, 0).unwrap(), new);
    }

    #[test]
    fn matches_gnu_diff_output() {
        // `diff -u` output for the same pair, headers replaced
        let old = "a\nb\nc\nd\ne\nf\ng\nh\n";
        let new = "a\nb\nc\nD\ne\nf\ng\nh\ni\n";
        let expected = "--- a\n+++ b\n@@ -1,8 +1,9 @@\n a\n b\n c\n-d\n+D\n e\n f\n g\n h\n+i\n";
        assert_eq!(compute_diff(old, new).render(), expected);
    }

    #[test]
    fn newline_only_change() {
        for (o, n) in [("a\n", "a"), ("a", "a\n"), ("", "a"), ("a", ""), ("x\na", "x\nb")] {
            let d = compute_diff(o, n);
            assert_eq!(apply_diff(o, &d, 0).unwrap(), n, "{o:?} -> {n:?}");
            let reparsed = parse_diff(&d.render()).unwrap();
            assert_eq!(apply_diff(o, &reparsed, 0).unwrap(), n, "{o:?} -> {n:?} via text");
        }
    }
}
