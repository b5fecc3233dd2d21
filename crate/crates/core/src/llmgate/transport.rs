//! Transport implementations: an OpenAI-compatible chat-completion HTTP
//! client and a deterministic canned-response mock. Every send is a
//! fresh single-message conversation, so prompts run in mutual
//! isolation.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ModelEndpoint, TransportError};

pub trait Transport {
    /// Sends one prompt as a fresh conversation and returns the full
    /// response text.
    fn send(&mut self, prompt: &str) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model_id: String,
    temperature: Option<f64>,
    api_key: String,
}

// Manual impl so the secret can never reach logs through `{:?}`.
impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("model_id", &self.model_id)
            .field("temperature", &self.temperature)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpTransport {
    /// Reads the secret from the endpoint's named environment variable;
    /// the value lives only in this struct and the request header.
    pub fn new(endpoint: &ModelEndpoint) -> Result<HttpTransport, TransportError> {
        let var = endpoint.credentials_env.as_deref().ok_or_else(|| {
            TransportError::Config(format!(
                "endpoint `{}` has no credentials_env configured",
                endpoint.name
            ))
        })?;
        let api_key = std::env::var(var).map_err(|_| {
            TransportError::Config(format!("environment variable `{var}` is not set"))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_seconds))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            url: format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/')),
            model_id: endpoint.model_id.clone(),
            temperature: endpoint.temperature,
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl Transport for HttpTransport {
    fn send(&mut self, prompt: &str) -> Result<String, TransportError> {
        let mut body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout(e.to_string())
                } else {
                    TransportError::Protocol(e.to_string())
                }
            })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        match status.as_u16() {
            200 => {
                let parsed: ChatResponse = serde_json::from_str(&text)
                    .map_err(|e| TransportError::Protocol(format!("bad response body: {e}")))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| TransportError::Protocol("response has no choices".to_string()))
            }
            401 | 403 => Err(TransportError::Auth(format!("HTTP {status}"))),
            408 => Err(TransportError::Timeout(format!("HTTP {status}"))),
            429 => Err(TransportError::RateLimit(format!("HTTP {status}"))),
            s if s >= 500 => Err(TransportError::Server(format!("HTTP {status}"))),
            _ => Err(TransportError::Protocol(format!("HTTP {status}: {text}"))),
        }
    }
}

/// Deterministic transport returning canned responses, cycling through
/// the list across sends.
pub struct MockTransport {
    responses: Vec<String>,
    cursor: usize,
    pub sends: usize,
}

impl MockTransport {
    pub fn new(responses: Vec<String>) -> Result<MockTransport, TransportError> {
        if responses.is_empty() {
            return Err(TransportError::Config(
                "mock endpoint has no canned responses".to_string(),
            ));
        }
        Ok(MockTransport { responses, cursor: 0, sends: 0 })
    }

    /// Loads one canned response per file, in the given order.
    pub fn from_files(paths: &[std::path::PathBuf]) -> Result<MockTransport, TransportError> {
        let mut responses = Vec::with_capacity(paths.len());
        for path in paths {
            let text = std::fs::read_to_string(path).map_err(|e| {
                TransportError::Config(format!("cannot read mock response {}: {e}", path.display()))
            })?;
            responses.push(text);
        }
        MockTransport::new(responses)
    }
}

impl Transport for MockTransport {
    fn send(&mut self, _prompt: &str) -> Result<String, TransportError> {
        let response = self.responses[self.cursor % self.responses.len()].clone();
        self.cursor += 1;
        self.sends += 1;
        Ok(response)
    }
}
