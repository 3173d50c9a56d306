//! HTTP client for a model server speaking the generation protocol.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{check_attribution_len, check_step_values, wire, GenerationStep, ModelAdapter};
use crate::error::{Error, Result};
use crate::types::TokenRecord;

/// Talks to a server exposing POST /generate_step and POST /attributions.
///
/// Transport failures are retried once (2 attempts total); a malformed or
/// non-2xx response is surfaced immediately with a body snippet.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    base: String,
    agent: ureq::Agent,
}

impl HttpAdapter {
    pub fn new(base_url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpAdapter { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{route}", self.base);
        let mut transport_err = None;
        for _ in 0..2 {
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Adapter(format!("{url}: reading response: {e}")))?;
                    if !status.is_success() {
                        return Err(Error::Adapter(format!(
                            "{url}: status {status}: {}",
                            snippet(&text)
                        )));
                    }
                    return serde_json::from_str(&text).map_err(|e| {
                        Error::Adapter(format!(
                            "{url}: malformed response ({e}): {}",
                            snippet(&text)
                        ))
                    });
                }
                Err(e) => transport_err = Some(e),
            }
        }
        Err(Error::Adapter(format!(
            "{url}: transport failure after 2 attempts: {}",
            transport_err.expect("loop ran")
        )))
    }
}

impl ModelAdapter for HttpAdapter {
    fn generate_step(&self, prompt: &str, emitted: &[TokenRecord]) -> Result<GenerationStep> {
        let request =
            wire::StepRequest { prompt: prompt.to_string(), emitted: emitted.to_vec() };
        let resp: wire::StepResponse = self.post("/generate_step", &request)?;
        check_step_values(&resp.token, resp.logprob, resp.attention, resp.entropy)
            .map_err(|e| Error::Adapter(format!("server returned a bad step: {e}")))?;
        let mut token = TokenRecord::new(resp.token, emitted.len() + 1);
        token.logprob = Some(resp.logprob);
        token.attention = Some(resp.attention);
        Ok(GenerationStep { token, next_dist_entropy: resp.entropy, is_end: resp.is_end })
    }

    fn attributions(&self, question: &str) -> Result<Vec<f64>> {
        let request = wire::AttributionRequest { question: question.to_string() };
        let resp: wire::AttributionResponse = self.post("/attributions", &request)?;
        check_attribution_len(question, &resp.attributions)?;
        Ok(resp.attributions)
    }
}

/// First 200 chars of a response body, newlines flattened.
fn snippet(text: &str) -> String {
    let flat: String = text.chars().take(200).map(|c| if c == '\n' { ' ' } else { c }).collect();
    if text.chars().count() > 200 {
        format!("{flat}...")
    } else {
        flat
    }
}
