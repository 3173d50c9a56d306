//! Attribution profiles over question tokens.
//!
//! Raw integrated-gradient style attributions arrive from the model
//! adapter. Here they are normalized into a distribution, summarized by
//! entropy and mined for candidate keywords.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::types::TokenRecord;

/// Normalized view of one question's attributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionProfile {
    /// Question tokens with their raw attribution attached.
    pub tokens: Vec<TokenRecord>,
    /// `|raw|` rescaled to sum to one.
    pub normalized: Vec<f64>,
    /// Shannon entropy of `normalized`, in nats.
    pub entropy: f64,
    /// Mean of the raw attribution values.
    pub mean_attribution: f64,
    /// 1-based positions of candidate keyword tokens, ascending.
    pub candidates: Vec<usize>,
}

fn check_finite(raw: &[f64]) -> Result<()> {
    for (i, v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("attribution[{i}] is not finite: {v}")));
        }
    }
    Ok(())
}

/// Rescales absolute attributions into a distribution.
///
/// An all-zero vector maps to the uniform distribution rather than failing,
/// since a model reporting no attribution anywhere still has to produce a
/// usable profile.
pub fn normalize_attributions(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Contract("cannot normalize an empty attribution list".into()));
    }
    check_finite(raw)?;
    let total: f64 = raw.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
    }
    Ok(raw.iter().map(|v| v.abs() / total).collect())
}

/// Shannon entropy in nats of a probability vector, with 0 ln 0 read as 0.
pub fn attribution_entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("probability vector sums to {sum}, not 1")));
    }
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Contract("probability vector has a negative entry".into()));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// 1-based positions whose raw attribution strictly exceeds the raw mean.
///
/// The comparison runs on raw values, so positive rescaling leaves the
/// candidate set unchanged. All-equal input yields the empty set.
pub fn candidate_tokens(question_tokens: &[TokenRecord], raw: &[f64]) -> Result<Vec<usize>> {
    if question_tokens.len() != raw.len() {
        return Err(Error::Contract(format!(
            "attribution length {} does not match {} question tokens",
            raw.len(),
            question_tokens.len()
        )));
    }
    candidate_positions(raw)
}

/// [`candidate_tokens`] without the token list, for callers that only
/// hold the raw vector.
pub fn candidate_positions(raw: &[f64]) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Err(Error::Contract("cannot rank an empty attribution list".into()));
    }
    check_finite(raw)?;
    // The float mean of identical values can land a hair off the value
    // itself; mathematically no element exceeds it, so short-circuit.
    if raw.iter().all(|&v| v == raw[0]) {
        return Ok(Vec::new());
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > mean)
        .map(|(i, _)| i + 1)
        .collect())
}

/// Builds the full profile for a question.
///
/// The attribution vector must have exactly one value per question token.
pub fn build_profile(question: &str, raw: &[f64]) -> Result<AttributionProfile> {
    let mut tokens = tokenize(question);
    if tokens.len() != raw.len() {
        return Err(Error::Contract(format!(
            "attribution length {} does not match {} question tokens",
            raw.len(),
            tokens.len()
        )));
    }
    let candidates = candidate_tokens(&tokens, raw)?;
    let normalized = normalize_attributions(raw)?;
    for (tok, &v) in tokens.iter_mut().zip(raw) {
        tok.attribution = Some(v);
    }
    let mean_attribution = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(AttributionProfile {
        entropy: attribution_entropy(&normalized)?,
        candidates,
        tokens,
        normalized,
        mean_attribution,
    })
}
