use std::ops::Range;

use super::{materialize, Chunk};
use crate::corpus::CleanDocument;

/// Paragraph break, line break, sentence end, word boundary; below the last
/// level the text is hard-cut.
pub(crate) const SEPARATORS: [&str; 4] = ["\n\n", "\n", ". ", " "];

/// Recursive character splitting with greedy merging.
///
/// A span longer than `max_chars` is split on the coarsest separator present,
/// descending the hierarchy only for pieces that are still too long. The
/// resulting fragments are then merged left to right while the merged span
/// fits in `max_chars`.
pub fn recursive_chunk(doc: &CleanDocument, max_chars: usize) -> Vec<Chunk> {
    let chars: Vec<char> = doc.text.chars().collect();
    let ranges = recursive_ranges(&chars, 0..chars.len(), max_chars, 0);
    materialize(doc, &chars, &ranges)
}

/// Fragment and merge `range`, starting the separator search at `level`.
pub(crate) fn recursive_ranges(chars: &[char], range: Range<usize>, max_chars: usize, level: usize) -> Vec<Range<usize>> {
    let max_chars = max_chars.max(1);
    let mut fragments = Vec::new();
    fragment(chars, range, max_chars, level, &mut fragments);
    merge(&fragments, max_chars)
}

fn fragment(chars: &[char], range: Range<usize>, max_chars: usize, level: usize, out: &mut Vec<Range<usize>>) {
    if range.len() <= max_chars {
        if !range.is_empty() {
            out.push(range);
        }
        return;
    }
    let Some(sep) = SEPARATORS.get(level) else {
        let mut start = range.start;
        while start < range.end {
            let end = (start + max_chars).min(range.end);
            out.push(start..end);
            start = end;
        }
        return;
    };
    let pieces = split_keeping_separator(chars, range.clone(), sep);
    if pieces.len() == 1 {
        fragment(chars, range, max_chars, level + 1, out);
        return;
    }
    for piece in pieces {
        fragment(chars, piece, max_chars, level + 1, out);
    }
}

/// Split after each occurrence of `sep`; the separator stays with the piece
/// before it.
fn split_keeping_separator(chars: &[char], range: Range<usize>, sep: &str) -> Vec<Range<usize>> {
    let sep: Vec<char> = sep.chars().collect();
    let mut pieces = Vec::new();
    let mut start = range.start;
    let mut i = range.start;
    while i + sep.len() <= range.end {
        if chars[i..i + sep.len()] == sep[..] {
            let end = i + sep.len();
            pieces.push(start..end);
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < range.end {
        pieces.push(start..range.end);
    }
    pieces
}

fn merge(fragments: &[Range<usize>], max_chars: usize) -> Vec<Range<usize>> {
    let mut merged: Vec<Range<usize>> = Vec::new();
    for f in fragments {
        match merged.last_mut() {
            Some(cur) if cur.end == f.start && f.end - cur.start <= max_chars => cur.end = f.end,
            _ => merged.push(f.clone()),
        }
    }
    merged
}
