//! Record types shared across the engine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("document id must be non-empty".into()));
        }
        if self.text.is_empty() {
            return Err(Error::Validation(format!("document {}: text must be non-empty", self.id)));
        }
        Ok(())
    }
}

/// One token together with whatever per-token statistics are known.
///
/// `position` is 1-based. Statistics are optional because question tokens
/// carry attributions while generated tokens carry logprob and attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub surface: String,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<f64>,
    #[serde(default)]
    pub hallucinated: bool,
}

impl TokenRecord {
    /// Bare token with no statistics attached.
    pub fn new(surface: impl Into<String>, position: usize) -> Self {
        TokenRecord {
            surface: surface.into(),
            position,
            logprob: None,
            attention: None,
            attribution: None,
            hallucinated: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.position == 0 {
            return Err(Error::Validation(format!("token {:?}: position must be >= 1", self.surface)));
        }
        if let Some(a) = self.attention {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Validation(format!(
                    "token {:?}: attention {} outside [0, 1]",
                    self.surface, a
                )));
            }
        }
        Ok(())
    }
}

/// One question with its reference answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl QAExample {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::Validation("question must be non-empty".into()));
        }
        if self.answers.is_empty() {
            return Err(Error::Validation(format!(
                "question {:?}: at least one reference answer is required",
                self.question
            )));
        }
        Ok(())
    }
}

/// Cumulative per-trace statistics.
///
/// `rc` counts retrieval events, `gc` generation passes, `hc` real-time
/// hallucination flags, `tc` emitted tokens and `sc` generated sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub rc: u64,
    pub gc: u64,
    pub hc: u64,
    pub tc: u64,
    pub sc: u64,
}

/// Component-wise means over a batch of counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterMeans {
    pub rc: f64,
    pub gc: f64,
    pub hc: f64,
    pub tc: f64,
    pub sc: f64,
}

impl Counters {
    /// Component-wise sum.
    pub fn merge(&self, other: &Counters) -> Counters {
        Counters {
            rc: self.rc + other.rc,
            gc: self.gc + other.gc,
            hc: self.hc + other.hc,
            tc: self.tc + other.tc,
            sc: self.sc + other.sc,
        }
    }

    /// Component-wise mean over a batch. Empty input yields all zeros.
    pub fn mean(batch: &[Counters]) -> CounterMeans {
        if batch.is_empty() {
            return CounterMeans::default();
        }
        let total = batch.iter().fold(Counters::default(), |acc, c| acc.merge(c));
        let n = batch.len() as f64;
        CounterMeans {
            rc: total.rc as f64 / n,
            gc: total.gc as f64 / n,
            hc: total.hc as f64 / n,
            tc: total.tc as f64 / n,
            sc: total.sc as f64 / n,
        }
    }
}
