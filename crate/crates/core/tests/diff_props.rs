use deltanas::diff::{apply_diff, compute_diff, parse_diff};
use proptest::prelude::*;

const ALPHABET: [&str; 7] = ["a", "b", "c", "    x = 1", "", "def f():", "  "];

fn join(lines: &[String], eol: &str, trailing: bool) -> String {
    let mut s = lines.join(eol);
    if trailing && !lines.is_empty() {
        s.push_str(eol);
    }
    s
}

fn lines() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(ALPHABET.to_vec()).prop_map(String::from), 0..40)
}

fn eol(crlf: bool) -> &'static str {
    if crlf {
        "\r\n"
    } else {
        "\n"
    }
}

/// Two texts over a small line alphabet, so diffs see plenty of repeats.
/// Line endings and final newlines vary independently.
fn pair() -> impl Strategy<Value = (String, String)> {
    (lines(), lines(), any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(a, b, crlf_a, crlf_b, ta, tb)| (join(&a, eol(crlf_a), ta), join(&b, eol(crlf_b), tb)),
    )
}

/// A text and a lightly edited copy of it.
fn edited() -> impl Strategy<Value = (String, String)> {
    (
        lines(),
        prop::collection::vec((0..40usize, 0..3usize, prop::sample::select(vec!["a", "z", "    y = 2", ""])), 0..6),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(base, edits, crlf, ta, tb)| {
            let mut out = base.clone();
            for (at, op, line) in edits {
                let at = at.min(out.len());
                match op {
                    0 => out.insert(at, line.to_string()),
                    1 if at < out.len() => {
                        out.remove(at);
                    }
                    _ if at < out.len() => out[at] = line.to_string(),
                    _ => out.push(line.to_string()),
                }
            }
            (join(&base, eol(crlf), ta), join(&out, eol(crlf), tb))
        })
}

fn occurrences(text: &str, block: &[&str]) -> usize {
    let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    lines.windows(block.len()).filter(|w| w.iter().zip(block).all(|(a, b)| *a == b.strip_suffix('\r').unwrap_or(b))).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn apply_inverts_compute((old, new) in pair()) {
        let diff = compute_diff(&old, &new);
        prop_assert_eq!(apply_diff(&old, &diff, 0).unwrap(), new);
    }

    #[test]
    fn small_edits_round_trip_through_text((old, new) in edited()) {
        let diff = compute_diff(&old, &new);
        if diff.hunks.is_empty() {
            prop_assert_eq!(&old, &new);
        } else {
            let reparsed = parse_diff(&diff.render()).unwrap();
            prop_assert_eq!(&reparsed, &diff);
            prop_assert_eq!(apply_diff(&old, &reparsed, 0).unwrap(), new);
        }
    }

    #[test]
    fn fuzz_absorbs_shifted_sources(
        (old, new) in edited(),
        shift in 1usize..4,
    ) {
        let diff = compute_diff(&old, &new);
        // Pure insertions carry no old-side lines to search for, so there
        // is nothing for the offset search to anchor on.
        prop_assume!(!diff.hunks.is_empty() && diff.hunks.iter().all(|h| h.old_len > 0));
        // A header that no longer appears anywhere else in the file keeps
        // the search from locking onto an earlier identical block.
        // Offset search can only promise the right spot when the hunk's old
        // block occurs once in the file.
        prop_assume!(diff.hunks.iter().all(|h| occurrences(&old, &h.old_lines().collect::<Vec<_>>()) == 1));
        let nl = if old.contains('\r') { "\r\n" } else { "\n" };
        let header: String = (0..shift).map(|i| format!("# header {i}{nl}")).collect();
        let shifted_old = format!("{header}{old}");
        let shifted_new = format!("{header}{new}");
        prop_assert_eq!(apply_diff(&shifted_old, &diff, shift).unwrap(), shifted_new);
    }

    #[test]
    fn lf_diff_applies_to_crlf_copy((old, new) in edited()) {
        prop_assume!(!old.contains('\r'));
        let diff = compute_diff(&old, &new);
        let to_crlf = |s: &str| s.replace('\n', "\r\n");
        let patched = apply_diff(&to_crlf(&old), &diff, 0).unwrap();
        // a CRLF-less source has no convention to adopt
        if to_crlf(&old).contains("\r\n") {
            prop_assert_eq!(patched, to_crlf(&new));
        } else {
            prop_assert_eq!(patched, new);
        }
    }

    #[test]
    fn stats_match_line_counts((old, new) in pair()) {
        let diff = compute_diff(&old, &new);
        let stats = diff.stats();
        let added: usize = diff.hunks.iter().map(|h| h.new_len).sum();
        let removed: usize = diff.hunks.iter().map(|h| h.old_len).sum();
        prop_assert_eq!(stats.hunk_count, diff.hunks.len());
        prop_assert_eq!(stats.added + stats.context, added);
        prop_assert_eq!(stats.deleted + stats.context, removed);
    }
}
