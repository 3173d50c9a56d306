//! Boundary to the language model.
//!
//! The engine never touches model internals. It asks an adapter for the
//! next token (with logprob, attention and next-distribution entropy) and
//! for per-token attribution vectors over a question. Two implementations
//! ship: a scripted deterministic mock and an HTTP client, plus a stub
//! server that serves a mock scenario over the HTTP protocol.

mod http;
mod mock;
mod stub;

pub use http::HttpAdapter;
pub use mock::{MockAdapter, Scenario, ScriptedAttribution, ScriptedGeneration, ScriptedStep};
pub use stub::StubServer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::types::TokenRecord;

/// One generated token with its statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStep {
    /// The token, with `logprob` and `attention` present.
    pub token: TokenRecord,
    /// Entropy of the model's next-token distribution, in nats.
    pub next_dist_entropy: f64,
    /// True when the model considers the output finished.
    pub is_end: bool,
}

/// Language-model boundary.
///
/// Callers own the token budget: the adapter has no notion of max_tokens
/// and must not be asked for more steps once the budget is spent.
pub trait ModelAdapter: Send + Sync {
    /// Produces the next token for `prompt` given the tokens emitted so
    /// far in this pass.
    fn generate_step(&self, prompt: &str, emitted: &[TokenRecord]) -> Result<GenerationStep>;

    /// Attribution values over the question, one per question token.
    fn attributions(&self, question: &str) -> Result<Vec<f64>>;
}

/// Builds an adapter from a CLI-style spec string.
///
/// `mock:PATH` loads a scenario file; `http://...` or `https://...`
/// connects to a model server.
pub fn from_spec(spec: &str) -> Result<Box<dyn ModelAdapter>> {
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(Box::new(MockAdapter::from_file(std::path::Path::new(path))?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpAdapter::new(spec)));
    }
    Err(Error::Config(format!("adapter spec must be mock:PATH or an http(s) URL, got {spec:?}")))
}

/// Rejects out-of-range step statistics; shared by every adapter boundary.
fn check_step_values(surface: &str, logprob: f64, attention: f64, entropy: f64) -> Result<()> {
    if surface.is_empty() {
        return Err(Error::Validation("step token surface is empty".into()));
    }
    if !logprob.is_finite() || logprob > 0.0 {
        return Err(Error::Validation(format!("step logprob must be finite and <= 0: {logprob}")));
    }
    if !(0.0..=1.0).contains(&attention) {
        return Err(Error::Validation(format!("step attention must be in [0,1]: {attention}")));
    }
    if !entropy.is_finite() || entropy < 0.0 {
        return Err(Error::Validation(format!("step entropy must be finite and >= 0: {entropy}")));
    }
    Ok(())
}

/// Rejects attribution vectors that do not line up with the question.
fn check_attribution_len(question: &str, values: &[f64]) -> Result<()> {
    let n = tokenize(question).len();
    if n == 0 {
        return Err(Error::Validation("question has no tokens".into()));
    }
    if values.len() != n {
        return Err(Error::Contract(format!(
            "adapter returned {} attribution values for a {n}-token question",
            values.len()
        )));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("attribution[{i}] is not finite: {v}")));
        }
    }
    Ok(())
}

/// Wire shapes of the HTTP protocol, shared by client and stub server.
pub(crate) mod wire {
    use serde::{Deserialize, Serialize};

    use crate::types::TokenRecord;

    #[derive(Debug, Serialize, Deserialize)]
    pub struct StepRequest {
        pub prompt: String,
        pub emitted: Vec<TokenRecord>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct StepResponse {
        pub token: String,
        pub logprob: f64,
        pub attention: f64,
        pub entropy: f64,
        pub is_end: bool,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct AttributionRequest {
        pub question: String,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct AttributionResponse {
        pub attributions: Vec<f64>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct ErrorResponse {
        pub error: String,
    }
}
