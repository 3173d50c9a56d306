//! Deterministic text embedding.
//!
//! A hashed bag of character trigrams. Nothing here is learned; the point
//! is a fixed, platform-independent vector that makes cosine similarity
//! between short strings meaningful.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

pub const EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zero() -> Self {
        EmbeddingVector { values: vec![0.0; EMBED_DIM] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Embeds text as an L2-normalized hashed trigram bag.
///
/// Input is lowercased first, so case never affects similarity. Empty or
/// all-whitespace input maps to the zero vector. Inputs shorter than three
/// scalars hash as a single gram.
pub fn embed(text: &str) -> EmbeddingVector {
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    if chars.iter().all(|c| c.is_whitespace()) {
        return EmbeddingVector::zero();
    }
    let mut values = vec![0.0; EMBED_DIM];
    let mut bump = |gram: &str| {
        let h = fnv1a64(gram.as_bytes());
        let bucket = (h % EMBED_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    };
    if chars.len() < 3 {
        bump(&lowered);
    } else {
        let mut gram = String::new();
        for w in chars.windows(3) {
            gram.clear();
            gram.extend(w);
            bump(&gram);
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Signed buckets can cancel exactly on contrived input. Fall back
        // to a one-hot bucket so non-empty text keeps unit norm.
        let mut values = vec![0.0; EMBED_DIM];
        values[(fnv1a64(lowered.as_bytes()) % EMBED_DIM as u64) as usize] = 1.0;
        return EmbeddingVector { values };
    }
    for v in &mut values {
        *v /= norm;
    }
    EmbeddingVector { values }
}

/// Cosine similarity. Zero vectors compare as 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "cosine: dimension mismatch {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}
