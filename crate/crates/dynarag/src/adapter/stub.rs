//! Reference server exposing a mock scenario over the HTTP protocol.
//!
//! Integration tests run the HTTP client against this stub to prove the
//! two adapters are interchangeable.

use std::io::Cursor;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;

use super::{wire, MockAdapter, ModelAdapter, Scenario};
use crate::error::{Error, Result};

/// A running stub server; drops cleanly by unblocking its worker thread.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    url: String,
}

impl StubServer {
    /// Binds `addr` ("127.0.0.1:0" picks a free port) and serves the
    /// scenario until the value is dropped.
    pub fn start(addr: &str, scenario: Scenario) -> Result<StubServer> {
        let adapter = MockAdapter::new(scenario)?;
        let server = tiny_http::Server::http(addr)
            .map_err(|e| Error::Adapter(format!("stub server bind {addr}: {e}")))?;
        let server = Arc::new(server);
        let ip = server.server_addr().to_ip().expect("tcp listener has an ip address");
        let url = format!("http://{ip}");
        let worker = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            while let Ok(mut request) = worker.recv() {
                let response = respond(&adapter, &mut request);
                let _ = request.respond(response);
            }
        });
        Ok(StubServer { server, handle: Some(handle), url })
    }

    /// Base URL, e.g. `http://127.0.0.1:43012`.
    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn respond(adapter: &MockAdapter, request: &mut tiny_http::Request) -> HttpResponse {
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        return json_response(400, &wire::ErrorResponse { error: "unreadable body".into() });
    }
    let route = (request.method().clone(), request.url().to_string());
    match (route.0, route.1.as_str()) {
        (tiny_http::Method::Post, "/generate_step") => {
            let parsed: wire::StepRequest = match serde_json::from_str(&body) {
                Ok(r) => r,
                Err(e) => {
                    return json_response(
                        400,
                        &wire::ErrorResponse { error: format!("bad request: {e}") },
                    )
                }
            };
            match adapter.generate_step(&parsed.prompt, &parsed.emitted) {
                Ok(step) => json_response(
                    200,
                    &wire::StepResponse {
                        token: step.token.surface,
                        logprob: step.token.logprob.unwrap_or(0.0),
                        attention: step.token.attention.unwrap_or(0.0),
                        entropy: step.next_dist_entropy,
                        is_end: step.is_end,
                    },
                ),
                Err(e) => json_response(422, &wire::ErrorResponse { error: e.to_string() }),
            }
        }
        (tiny_http::Method::Post, "/attributions") => {
            let parsed: wire::AttributionRequest = match serde_json::from_str(&body) {
                Ok(r) => r,
                Err(e) => {
                    return json_response(
                        400,
                        &wire::ErrorResponse { error: format!("bad request: {e}") },
                    )
                }
            };
            match adapter.attributions(&parsed.question) {
                Ok(values) => json_response(200, &wire::AttributionResponse { attributions: values }),
                Err(e) => json_response(422, &wire::ErrorResponse { error: e.to_string() }),
            }
        }
        (method, url) => json_response(
            404,
            &wire::ErrorResponse { error: format!("no route {method} {url}") },
        ),
    }
}

type HttpResponse = tiny_http::Response<Cursor<Vec<u8>>>;

fn json_response<T: Serialize>(status: u16, payload: &T) -> HttpResponse {
    let body = serde_json::to_string(payload).expect("wire types serialize");
    tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(
            "Content-Type: application/json".parse::<tiny_http::Header>().expect("static header"),
        )
}
