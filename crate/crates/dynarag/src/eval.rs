//! Answer-quality metrics (EM, token F1, precision, recall) and efficiency
//! aggregation over generation traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::GenerationTrace;
use crate::types::{CounterMeans, Counters, QAExample};

/// How predictions are compared against references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Free-form answers, scored with the standard QA normalizer.
    #[default]
    Extractive,
    /// Yes/no questions: the prediction collapses to its last "yes" or
    /// "no" token before scoring.
    YesNo,
}

/// Scores for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub question: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub failed: bool,
}

/// Dataset-level means plus the per-example rows they come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ExampleResult>,
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counters: CounterMeans,
    pub failed_count: usize,
    pub config_fingerprint: String,
}

/// Standard QA normalization: lowercase, drop punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Strict exact match against any reference, after normalization.
/// Empty references never match.
pub fn exact_match(prediction: &str, references: &[String]) -> bool {
    let p = normalize_answer(prediction);
    references.iter().any(|r| normalize_answer(r) == p)
}

/// Token-level F1, precision and recall over normalized token multisets,
/// taking the best-F1 reference. Either side empty scores zero.
///
/// Unlike exact match, articles stay in the multisets: every word of the
/// prediction counts toward precision.
pub fn token_f1(prediction: &str, references: &[String]) -> (f64, f64, f64) {
    let pred_tokens = f1_tokens(prediction);
    let mut best = (0.0, 0.0, 0.0);
    for reference in references {
        let scores = f1_of(&pred_tokens, &f1_tokens(reference));
        if scores.0 > best.0 {
            best = scores;
        }
    }
    best
}

/// Lowercased, punctuation-free tokens with articles kept.
fn f1_tokens(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    stripped.split_whitespace().map(str::to_string).collect()
}

fn f1_of(pred: &[String], reference: &[String]) -> (f64, f64, f64) {
    if pred.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut counts = std::collections::BTreeMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return (0.0, 0.0, 0.0);
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    (f1, precision, recall)
}

/// Collapses a free-form prediction to its last "yes" or "no" token, or
/// the empty string when neither occurs.
pub fn yes_no_label(prediction: &str) -> String {
    normalize_answer(prediction)
        .split_whitespace()
        .rev()
        .find(|w| *w == "yes" || *w == "no")
        .unwrap_or("")
        .to_string()
}

/// Scores traces against their dataset. Rows must align by index; a count
/// or question mismatch is an evaluation error naming the row.
pub fn evaluate(
    traces: &[GenerationTrace],
    dataset: &[QAExample],
    mode: EvalMode,
) -> Result<EvalReport> {
    if traces.len() != dataset.len() {
        return Err(Error::Evaluation(format!(
            "{} traces do not align with {} dataset rows",
            traces.len(),
            dataset.len()
        )));
    }
    let mut rows = Vec::with_capacity(traces.len());
    let mut failed_count = 0usize;
    for (i, (trace, example)) in traces.iter().zip(dataset).enumerate() {
        if trace.question != example.question {
            return Err(Error::Evaluation(format!(
                "row {i}: trace question {:?} does not match dataset question {:?}",
                trace.question, example.question
            )));
        }
        let prediction = match mode {
            EvalMode::Extractive => trace.final_answer.clone(),
            EvalMode::YesNo => yes_no_label(&trace.final_answer),
        };
        let em = exact_match(&prediction, &example.answers);
        let (f1, precision, recall) = token_f1(&prediction, &example.answers);
        if trace.failed {
            failed_count += 1;
        }
        rows.push(ExampleResult {
            question: example.question.clone(),
            prediction,
            em: if em { 1.0 } else { 0.0 },
            f1,
            precision,
            recall,
            failed: trace.failed,
        });
    }
    let n = rows.len().max(1) as f64;
    let counters: Vec<Counters> = traces.iter().map(|t| t.counters).collect();
    Ok(EvalReport {
        em: rows.iter().map(|r| r.em).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        counters: Counters::mean(&counters),
        failed_count,
        config_fingerprint: traces
            .first()
            .map(|t| t.config_fingerprint.clone())
            .unwrap_or_default(),
        rows,
    })
}

impl EvalReport {
    /// Renders the report as an aligned two-column text table.
    pub fn render_table(&self) -> String {
        let rows = [
            ("examples".to_string(), self.rows.len().to_string()),
            ("failed".to_string(), self.failed_count.to_string()),
            ("em".to_string(), format!("{:.4}", self.em)),
            ("f1".to_string(), format!("{:.4}", self.f1)),
            ("precision".to_string(), format!("{:.4}", self.precision)),
            ("recall".to_string(), format!("{:.4}", self.recall)),
            ("rc_mean".to_string(), format!("{:.4}", self.counters.rc)),
            ("gc_mean".to_string(), format!("{:.4}", self.counters.gc)),
            ("hc_mean".to_string(), format!("{:.4}", self.counters.hc)),
            ("tc_mean".to_string(), format!("{:.4}", self.counters.tc)),
            ("sc_mean".to_string(), format!("{:.4}", self.counters.sc)),
            ("config".to_string(), self.config_fingerprint.clone()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}
