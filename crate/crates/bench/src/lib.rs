//! Shared inputs for the criterion benches.

use retrievalbench_core::corpus::CleanDocument;
use retrievalbench_core::embedder::{EmbeddingVector, HashProjection};

const WORDS: &[&str] = &[
    "budget", "zoning", "permit", "library", "transit", "water", "parks", "housing", "bond", "audit", "sewer",
    "council", "hearing", "variance", "grant", "paving", "school", "police", "fire", "tax", "lease", "bridge",
];

/// Deterministic pseudo-sentence text of about `chars` characters.
pub fn synthetic_text(chars: usize, salt: usize) -> String {
    let mut out = String::with_capacity(chars + 16);
    let mut i = salt;
    while out.len() < chars {
        out.push_str(WORDS[(i * 7 + i / 3) % WORDS.len()]);
        i += 1;
        out.push_str(if i % 11 == 0 { ". " } else if i % 47 == 0 { ".\n\n" } else { " " });
    }
    out.trim_end().to_string()
}

pub fn synthetic_document(chars: usize) -> CleanDocument {
    CleanDocument { doc_id: "bench".into(), text: synthetic_text(chars, 0), redaction_count: 0 }
}

/// `n` ids and hash-projection vectors over distinct synthetic passages.
pub fn synthetic_vectors(n: usize, dim: usize) -> (Vec<String>, Vec<EmbeddingVector>) {
    let p = HashProjection::new(dim, 42);
    let ids = (0..n).map(|i| format!("bench:{i:05}")).collect();
    let vectors = (0..n).map(|i| p.embed(&format!("{} item{i}", synthetic_text(120, i)))).collect();
    (ids, vectors)
}

pub fn synthetic_queries(n: usize, dim: usize) -> Vec<EmbeddingVector> {
    let p = HashProjection::new(dim, 42);
    (0..n).map(|i| p.embed(&synthetic_text(40, i * 13 + 5))).collect()
}
