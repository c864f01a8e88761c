use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{tokenize, EmbedError, EmbeddingVector, TextEmbedder};
use crate::seed::{combine, fnv1a64, rng};

/// Seeded bag-of-words random projection.
///
/// Each distinct content token maps to a pseudorandom Gaussian direction
/// derived from `(seed, token)`; a text embeds as the term-frequency weighted
/// sum of its token directions, normalized. Word order is ignored.
#[derive(Debug, Clone)]
pub struct HashProjection {
    dim: usize,
    seed: u64,
}

impl HashProjection {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        hash_embed(self.seed, self.dim, text)
    }
}

impl TextEmbedder for HashProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

fn token_direction(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut g = rng(combine(seed, fnv1a64(token.as_bytes())));
    let raw: Vec<f64> = (0..dim).map(|_| g.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

pub fn hash_embed(seed: u64, dim: usize, text: &str) -> EmbeddingVector {
    let mut tf: BTreeMap<String, u32> = BTreeMap::new();
    for t in tokenize(text) {
        *tf.entry(t).or_default() += 1;
    }
    if tf.is_empty() {
        let fallback = token_direction(seed, "", dim);
        return EmbeddingVector::from_f64(&fallback).expect("fallback direction is unit");
    }
    let mut acc = vec![0.0f64; dim];
    for (token, count) in &tf {
        let dir = token_direction(seed, token, dim);
        let w = f64::from(*count);
        for (a, d) in acc.iter_mut().zip(&dir) {
            *a += w * d;
        }
    }
    match EmbeddingVector::from_f64(&acc) {
        Ok(v) => v,
        // Cancellation to exactly zero is practically impossible but stay total.
        Err(_) => EmbeddingVector::from_f64(&token_direction(seed, "", dim)).expect("fallback direction is unit"),
    }
}
