//! Minimal JSON-over-HTTP adapter for remote or local model servers.
//!
//! Request (POST to the endpoint):
//!
//! ```json
//! {"prompt": "...", "seed": 7, "width": 512, "height": 512, "params": {"temperature": "0"}}
//! ```
//!
//! Response: `{"image": "<base64 PNG>", "attention": [...]}` where the
//! optional `attention` array holds `{"layer": 0, "weights": [[...]]}` or
//! `{"layer": 0, "heads": [[[...]]]}` entries. Status 429 and 5xx are
//! treated as transient, other 4xx as a rejected prompt.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{deterministic_params, Backend, GenerationError, GenerationRequest};
use crate::diagnostics::AttentionTrace;
use crate::suite::Prompt;

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    seed: u64,
    width: u32,
    height: u32,
    params: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct WireAttention {
    layer: usize,
    #[serde(default)]
    weights: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    heads: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Deserialize)]
struct WireResponse {
    image: String,
    #[serde(default)]
    attention: Option<Vec<WireAttention>>,
}

pub struct HttpBackend {
    id: String,
    endpoint: String,
    agent: ureq::Agent,
    deterministic: bool,
    width: u32,
    height: u32,
    token: Option<String>,
    calls: AtomicUsize,
}

impl HttpBackend {
    pub fn new(id: &str, endpoint: &str, timeout: Duration, deterministic: bool) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout_read(timeout)
            .timeout_write(timeout)
            .build();
        Self {
            id: id.to_string(),
            endpoint: endpoint.to_string(),
            agent,
            deterministic,
            width: 256,
            height: 256,
            token: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Sends `Authorization: Bearer <token>` with every request.
    pub fn with_token(mut self, token: String) -> Self {
        self.token = Some(token);
        self
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<WireResponse, GenerationError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let payload = serde_json::to_string(body).expect("request serializes");
        let mut request = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = request.send_string(&payload);
        match response {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| GenerationError::BackendUnavailable(format!("unreadable response: {e}")))?;
                serde_json::from_str::<WireResponse>(&text)
                    .map_err(|e| GenerationError::BackendUnavailable(format!("unreadable response: {e}")))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.trim());
                if code == 429 || code >= 500 {
                    Err(GenerationError::BackendUnavailable(msg))
                } else {
                    Err(GenerationError::BackendRejectedPrompt(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    Err(GenerationError::Timeout(msg))
                } else {
                    Err(GenerationError::BackendUnavailable(msg))
                }
            }
        }
    }
}

fn decode_image(b64: &str) -> Result<Vec<u8>, GenerationError> {
    base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| GenerationError::BackendUnavailable(format!("bad image payload: {e}")))
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }

    fn render(&self, request: &GenerationRequest<'_>) -> Result<Vec<u8>, GenerationError> {
        let wire = WireRequest {
            prompt: &request.prompt.text,
            seed: request.seed,
            width: request.width,
            height: request.height,
            params: request.params,
        };
        decode_image(&self.post(&wire)?.image)
    }

    fn capture_attention(&self, prompt: &Prompt, seed: u64) -> Result<Vec<AttentionTrace>, GenerationError> {
        let mut params = deterministic_params();
        params.insert("capture_attention".into(), "true".into());
        let wire = WireRequest {
            prompt: &prompt.text,
            seed,
            width: self.width,
            height: self.height,
            params: &params,
        };
        let attention = self.post(&wire)?.attention.ok_or_else(|| {
            GenerationError::CapabilityUnsupported(format!("{} returned no attention payload", self.id))
        })?;
        let first = prompt.components.first().cloned().unwrap_or_default();
        let second = prompt.components.get(1).cloned().unwrap_or_else(|| first.clone());
        let pair = (first, second);
        let kind = prompt.group_profile.kind();
        attention
            .into_iter()
            .map(|a| {
                let heads = match (a.heads, a.weights) {
                    (Some(h), _) => h,
                    (None, Some(w)) => vec![w],
                    (None, None) => {
                        return Err(GenerationError::BackendUnavailable(format!(
                            "attention layer {} has no weights",
                            a.layer
                        )))
                    }
                };
                AttentionTrace::from_heads(&prompt.id, a.layer, &heads, pair.clone(), kind)
                    .map_err(|e| GenerationError::BackendUnavailable(format!("bad attention payload: {e}")))
            })
            .collect()
    }

    fn invocations(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
