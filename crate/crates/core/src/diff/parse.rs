use super::{DiffError, Hunk, HunkLine, LineKind, UnifiedDiff};

struct Header {
    old_start: usize,
    old_len: usize,
    new_start: usize,
    new_len: usize,
    section: Option<String>,
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_header(line: &str) -> Option<Header> {
    let rest = line.strip_prefix("@@ ")?;
    let (ranges, tail) = rest.split_once(" @@")?;
    let (old, new) = ranges.trim().split_once(' ')?;
    let (old_start, old_len) = parse_range(old.strip_prefix('-')?)?;
    let (new_start, new_len) = parse_range(new.trim().strip_prefix('+')?)?;
    if (old_start == 0 && old_len != 0) || (new_start == 0 && new_len != 0) {
        return None;
    }
    let section = tail.trim();
    Some(Header {
        old_start,
        old_len,
        new_start,
        new_len,
        section: (!section.is_empty()).then(|| section.to_string()),
    })
}

fn file_name(rest: &str) -> String {
    // drop a trailing tab-separated timestamp
    rest.split('\t').next().unwrap_or(rest).trim().to_string()
}

fn is_file_header(line: &str) -> bool {
    line.starts_with("--- ") || line.starts_with("+++ ")
}

/// Parses unified-diff text.
///
/// Lines before the first header or hunk are ignored, as are non-diff lines
/// between hunks (LLM output often carries fences or commentary). Within a
/// hunk the declared line counts are authoritative: a body that ends early or
/// runs long is a [`DiffError::LengthMismatch`].
pub fn parse_diff(text: &str) -> Result<UnifiedDiff, DiffError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if text.ends_with('\n') {
        lines.pop();
    }
    // A `\r` on hunk headers means the whole text went through a CRLF
    // conversion; otherwise a `\r` is part of the line content.
    let transported_crlf = lines.iter().any(|l| l.starts_with("@@") && l.ends_with('\r'));
    if transported_crlf {
        for l in &mut lines {
            *l = l.strip_suffix('\r').unwrap_or(l);
        }
    }

    let mut diff = UnifiedDiff::empty();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("--- ") {
            if !diff.hunks.is_empty() {
                return Err(DiffError::MultipleFiles { line: lineno });
            }
            diff.old_name = file_name(rest);
            i += 1;
            continue;
        }
        if let Some(rest) = line.strip_prefix("+++ ") {
            if !diff.hunks.is_empty() {
                return Err(DiffError::MultipleFiles { line: lineno });
            }
            diff.new_name = file_name(rest);
            i += 1;
            continue;
        }
        if line.starts_with("@@") {
            let header = parse_header(line).ok_or_else(|| DiffError::MalformedHunkHeader {
                line: lineno,
                text: line.to_string(),
            })?;
            let hunk_index = diff.hunks.len();
            let (hunk, next) = parse_body(&lines, i + 1, header, hunk_index)?;
            diff.hunks.push(hunk);
            i = next;
            continue;
        }
        if !diff.hunks.is_empty()
            && (line.starts_with(' ') || line.starts_with('+') || line.starts_with('-'))
        {
            let h = diff.hunks.last().expect("non-empty");
            let extra = lines[i..]
                .iter()
                .take_while(|l| {
                    !l.starts_with("@@")
                        && !is_file_header(l)
                        && (l.starts_with(' ') || l.starts_with('+') || l.starts_with('-'))
                })
                .fold((0, 0), |(o, n), l| match l.as_bytes()[0] {
                    b' ' => (o + 1, n + 1),
                    b'-' => (o + 1, n),
                    _ => (o, n + 1),
                });
            return Err(DiffError::LengthMismatch {
                hunk_index: diff.hunks.len() - 1,
                declared_old: h.old_len,
                declared_new: h.new_len,
                found_old: h.old_len + extra.0,
                found_new: h.new_len + extra.1,
            });
        }
        i += 1;
    }

    if diff.hunks.is_empty() {
        return Err(DiffError::EmptyDiff);
    }
    for (idx, h) in diff.hunks.iter().enumerate() {
        if h.lines.iter().all(|l| l.kind == LineKind::Context) {
            return Err(DiffError::NoChanges { hunk_index: idx });
        }
    }
    Ok(diff)
}

fn parse_body(
    lines: &[&str],
    mut i: usize,
    header: Header,
    hunk_index: usize,
) -> Result<(Hunk, usize), DiffError> {
    let mut remaining_old = header.old_len;
    let mut remaining_new = header.new_len;
    let mut body: Vec<HunkLine> = Vec::new();
    let mut old_missing_newline = false;
    let mut new_missing_newline = false;

    let mismatch = |remaining_old: usize, remaining_new: usize, extra_old: usize, extra_new: usize| {
        DiffError::LengthMismatch {
            hunk_index,
            declared_old: header.old_len,
            declared_new: header.new_len,
            found_old: header.old_len - remaining_old + extra_old,
            found_new: header.new_len - remaining_new + extra_new,
        }
    };

    let mark_missing = |body: &[HunkLine], old: &mut bool, new: &mut bool| {
        if let Some(prev) = body.last() {
            match prev.kind {
                LineKind::Context => {
                    *old = true;
                    *new = true;
                }
                LineKind::Delete => *old = true,
                LineKind::Add => *new = true,
            }
        }
    };

    while remaining_old > 0 || remaining_new > 0 {
        let Some(&line) = lines.get(i) else {
            return Err(mismatch(remaining_old, remaining_new, 0, 0));
        };
        if line.starts_with("@@") {
            return Err(mismatch(remaining_old, remaining_new, 0, 0));
        }
        let (kind, text) = match line.as_bytes().first() {
            None => (LineKind::Context, ""),
            // blank context line whose leading space was dropped
            Some(b'\r') if line == "\r" => (LineKind::Context, line),
            Some(b' ') => (LineKind::Context, &line[1..]),
            Some(b'+') => (LineKind::Add, &line[1..]),
            Some(b'-') => (LineKind::Delete, &line[1..]),
            Some(b'\\') => {
                mark_missing(&body, &mut old_missing_newline, &mut new_missing_newline);
                i += 1;
                continue;
            }
            Some(_) => {
                return Err(DiffError::InvalidLinePrefix {
                    line: i + 1,
                    text: line.to_string(),
                })
            }
        };
        match kind {
            LineKind::Context if remaining_old > 0 && remaining_new > 0 => {
                remaining_old -= 1;
                remaining_new -= 1;
            }
            LineKind::Delete if remaining_old > 0 => remaining_old -= 1,
            LineKind::Add if remaining_new > 0 => remaining_new -= 1,
            _ => {
                let (eo, en) = match kind {
                    LineKind::Context => (1, 1),
                    LineKind::Delete => (1, 0),
                    LineKind::Add => (0, 1),
                };
                return Err(mismatch(remaining_old, remaining_new, eo, en));
            }
        }
        body.push(HunkLine::new(kind, text));
        i += 1;
    }
    while let Some(line) = lines.get(i) {
        if !line.starts_with('\\') {
            break;
        }
        mark_missing(&body, &mut old_missing_newline, &mut new_missing_newline);
        i += 1;
    }

    Ok((
        Hunk {
            old_start: header.old_start,
            old_len: header.old_len,
            new_start: header.new_start,
            new_len: header.new_len,
            section: header.section,
            lines: body,
            old_missing_newline,
            new_missing_newline,
        },
        i,
    ))
}
