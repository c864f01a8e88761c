use serde::{Deserialize, Serialize};

use super::{trim_range, Chunk};
use crate::corpus::CleanDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    WrongDocument,
    Order,
    Overlap,
    OutOfBounds,
    Empty,
    TextMismatch,
    Oversize,
    Coverage,
}

impl ViolationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WrongDocument => "wrong_document",
            Self::Order => "order",
            Self::Overlap => "overlap",
            Self::OutOfBounds => "out_of_bounds",
            Self::Empty => "empty",
            Self::TextMismatch => "text_mismatch",
            Self::Oversize => "oversize",
            Self::Coverage => "coverage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub chunk_id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub first_violation: Option<Violation>,
}

/// Check a chunk list against its source document.
pub fn validate_chunks(chunks: &[Chunk], doc: &CleanDocument, max_chars: usize) -> ValidationReport {
    match first_violation(chunks, doc, max_chars) {
        None => ValidationReport { passed: true, first_violation: None },
        Some(v) => ValidationReport { passed: false, first_violation: Some(v) },
    }
}

fn first_violation(chunks: &[Chunk], doc: &CleanDocument, max_chars: usize) -> Option<Violation> {
    let chars: Vec<char> = doc.text.chars().collect();
    let violation = |kind, c: &Chunk, detail: String| Some(Violation { kind, chunk_id: Some(c.chunk_id.clone()), detail });

    let mut prev_end = 0usize;
    for (i, c) in chunks.iter().enumerate() {
        if c.doc_id != doc.doc_id {
            return violation(ViolationKind::WrongDocument, c, format!("doc_id {} != {}", c.doc_id, doc.doc_id));
        }
        if c.seq != i {
            return violation(ViolationKind::Order, c, format!("seq {} at position {i}", c.seq));
        }
        if c.span_start > c.span_end || c.span_end > chars.len() {
            return violation(
                ViolationKind::OutOfBounds,
                c,
                format!("span {}..{} in a {}-char document", c.span_start, c.span_end, chars.len()),
            );
        }
        if i > 0 && c.span_start < prev_end {
            return violation(ViolationKind::Overlap, c, format!("starts at {} before previous end {prev_end}", c.span_start));
        }
        if c.text.is_empty() {
            return violation(ViolationKind::Empty, c, String::new());
        }
        let at_span: String = match trim_range(&chars, c.span()) {
            Some(r) => chars[r].iter().collect(),
            None => String::new(),
        };
        if at_span != c.text.trim() {
            return violation(ViolationKind::TextMismatch, c, "text differs from document span".into());
        }
        let len = c.char_len();
        if len > max_chars {
            return violation(ViolationKind::Oversize, c, format!("{len} chars > {max_chars}"));
        }
        prev_end = c.span_end;
    }

    let mut covered = vec![false; chars.len()];
    for c in chunks {
        covered[c.span()].iter_mut().for_each(|x| *x = true);
    }
    if let Some(pos) = (0..chars.len()).find(|&i| !covered[i] && !chars[i].is_whitespace()) {
        return Some(Violation {
            kind: ViolationKind::Coverage,
            chunk_id: None,
            detail: format!("char {pos} ({:?}) not covered", chars[pos]),
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{chunk_id, recursive_chunk};

    fn doc() -> CleanDocument {
        CleanDocument { doc_id: "d".into(), text: "alpha beta gamma delta".into(), redaction_count: 0 }
    }

    fn chunk(seq: usize, start: usize, end: usize) -> Chunk {
        let text: String = doc().text.chars().skip(start).take(end - start).collect();
        Chunk { chunk_id: chunk_id("d", seq), doc_id: "d".into(), seq, text, span_start: start, span_end: end }
    }

    #[test]
    fn producer_output_passes() {
        let d = doc();
        assert!(validate_chunks(&recursive_chunk(&d, 64), &d, 64).passed);
    }

    #[test]
    fn overlap_detected() {
        let r = validate_chunks(&[chunk(0, 0, 10), chunk(1, 6, 22)], &doc(), 64);
        assert!(!r.passed);
        assert_eq!(r.first_violation.unwrap().kind, ViolationKind::Overlap);
    }

    #[test]
    fn oversize_detected() {
        let r = validate_chunks(&[chunk(0, 0, 22)], &doc(), 21);
        assert_eq!(r.first_violation.unwrap().kind.as_str(), "oversize");
    }

    #[test]
    fn coverage_gap_detected() {
        let r = validate_chunks(&[chunk(0, 0, 5), chunk(1, 11, 22)], &doc(), 64);
        assert_eq!(r.first_violation.unwrap().kind, ViolationKind::Coverage);
    }

    #[test]
    fn text_mismatch_detected() {
        let mut c = chunk(0, 0, 22);
        c.text = "alpha beta gamma DELTA".into();
        assert_eq!(validate_chunks(&[c], &doc(), 64).first_violation.unwrap().kind, ViolationKind::TextMismatch);
    }
}
