use std::ops::Range;

use super::recursive::{recursive_ranges, SEPARATORS};
use super::{materialize, trim_range, Chunk, ChunkError, ChunkingStrategy};
use crate::corpus::CleanDocument;
use crate::embedder::{cosine, TextEmbedder};

/// Sentence spans: a sentence ends at `.`, `!` or `?` followed by whitespace
/// (or end of text). Spans are trimmed; blank ones are dropped.
pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    sentence_ranges(&chars)
}

fn sentence_ranges(chars: &[char]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let terminal = matches!(chars[i], '.' | '!' | '?');
        let boundary = terminal && !chars.get(i + 1).is_some_and(|c| !c.is_whitespace());
        if boundary {
            if let Some(r) = trim_range(chars, start..i + 1) {
                out.push(r);
            }
            start = i + 1;
        }
    }
    if let Some(r) = trim_range(chars, start..chars.len()) {
        out.push(r);
    }
    out
}

/// Embedding-similarity boundary detection over sentences.
///
/// Sentences accumulate into the current chunk. A boundary goes before the next
/// sentence when its cosine to the accumulated chunk text is below the
/// threshold and the chunk already holds `min_sentences`, or unconditionally
/// when appending it would exceed `max_chars`. Sentences longer than
/// `max_chars` are first cut at word boundaries (then hard-cut).
pub fn semantic_chunk(
    doc: &CleanDocument,
    embed: &dyn TextEmbedder,
    params: &ChunkingStrategy,
) -> Result<Vec<Chunk>, ChunkError> {
    let ChunkingStrategy::Semantic { similarity_threshold, min_sentences, max_chars } = *params else {
        return Err(ChunkError::InvalidStrategy("semantic_chunk needs a Semantic strategy".into()));
    };
    let chars: Vec<char> = doc.text.chars().collect();

    let mut units: Vec<Range<usize>> = Vec::new();
    for s in sentence_ranges(&chars) {
        if s.len() <= max_chars {
            units.push(s);
        } else {
            let word_level = SEPARATORS.len() - 1;
            units.extend(
                recursive_ranges(&chars, s, max_chars, word_level)
                    .into_iter()
                    .filter_map(|r| trim_range(&chars, r)),
            );
        }
    }

    let text_of = |r: &Range<usize>| chars[r.clone()].iter().collect::<String>();
    let embed_err = |i: usize, r: &Range<usize>, source| ChunkError::Embedding {
        doc_id: doc.doc_id.clone(),
        sentence_index: i,
        sentence: text_of(r),
        source,
    };

    let mut ranges: Vec<Range<usize>> = Vec::new();
    let mut current: Option<(Range<usize>, usize)> = None;
    for (i, unit) in units.iter().enumerate() {
        let Some((cur, count)) = current.as_mut() else {
            current = Some((unit.clone(), 1));
            continue;
        };
        let split = if unit.end - cur.start > max_chars {
            true
        } else if *count >= min_sentences {
            let batch = [text_of(cur), text_of(unit)];
            let vs = embed.embed_batch(&batch).map_err(|e| embed_err(i, unit, e))?;
            let sim = cosine(&vs[0], &vs[1]).map_err(|e| embed_err(i, unit, e))?;
            f64::from(sim) < similarity_threshold
        } else {
            false
        };
        if split {
            ranges.push(cur.clone());
            current = Some((unit.clone(), 1));
        } else {
            cur.end = unit.end;
            *count += 1;
        }
    }
    if let Some((cur, _)) = current {
        ranges.push(cur);
    }
    Ok(materialize(doc, &chars, &ranges))
}
