//! Provider-agnostic LLM access with the re-execution retry policy and
//! full per-attempt archiving. Credentials are read from named
//! environment variables at transport construction and are never
//! serialized into records or logs.

mod transport;

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::{PromptVariant, RenderedPrompt};
use crate::validate::ValidationReport;

pub use transport::{HttpTransport, MockTransport, Transport};

/// Validation failures trigger regeneration up to this many times by
/// default (1 initial attempt + 3 regenerations).
pub const DEFAULT_MAX_REGENERATIONS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("authentication: {0}")]
    Auth(String),
    #[error("rate limit: {0}")]
    RateLimit(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("server: {0}")]
    Server(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl TransportError {
    /// Transient failures are retried with backoff; the rest surface
    /// immediately.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            TransportError::RateLimit(_) | TransportError::Timeout(_) | TransportError::Server(_)
        )
    }
}

/// One configured model endpoint. `credentials_env` names the
/// environment variable holding the secret; the secret itself is never
/// stored here.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    /// "openai" (OpenAI-compatible chat completions) or "mock".
    pub provider: String,
    pub model_id: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub credentials_env: Option<String>,
    /// None sends no temperature field (provider default parameters).
    #[serde(default)]
    pub temperature: Option<f64>,
    /// P1/P2 prompts require this flag: most models cannot emit full raw
    /// results or similarity matrices.
    #[serde(default)]
    pub supports_large_output: bool,
    /// Canned response files for provider = "mock", cycled per attempt.
    #[serde(default)]
    pub mock_responses: Vec<PathBuf>,
    #[serde(default = "default_timeout_seconds")]
    pub timeout_seconds: u64,
}

fn default_timeout_seconds() -> u64 {
    120
}

#[derive(Deserialize)]
struct EndpointsDoc {
    endpoint: Vec<ModelEndpoint>,
}

/// Parses an endpoints TOML document (`[[endpoint]]` tables). Paths in
/// `mock_responses` are resolved relative to `base_dir`.
pub fn parse_endpoints(text: &str, base_dir: &Path) -> Result<Vec<ModelEndpoint>, TransportError> {
    let doc: EndpointsDoc =
        toml::from_str(text).map_err(|e| TransportError::Config(format!("endpoints file: {e}")))?;
    let mut endpoints = doc.endpoint;
    for ep in &mut endpoints {
        match ep.provider.as_str() {
            "mock" => {
                if ep.mock_responses.is_empty() {
                    return Err(TransportError::Config(format!(
                        "mock endpoint `{}` lists no mock_responses",
                        ep.name
                    )));
                }
                for p in &mut ep.mock_responses {
                    if p.is_relative() {
                        *p = base_dir.join(&p);
                    }
                }
            }
            "openai" => {
                if ep.base_url.is_empty() {
                    return Err(TransportError::Config(format!(
                        "endpoint `{}` needs a base_url",
                        ep.name
                    )));
                }
                if ep.credentials_env.is_none() {
                    return Err(TransportError::Config(format!(
                        "endpoint `{}` needs credentials_env",
                        ep.name
                    )));
                }
            }
            other => {
                return Err(TransportError::Config(format!(
                    "endpoint `{}` has unknown provider `{other}`",
                    ep.name
                )));
            }
        }
    }
    Ok(endpoints)
}

impl ModelEndpoint {
    pub fn open_transport(&self) -> Result<Box<dyn Transport>, TransportError> {
        match self.provider.as_str() {
            "mock" => Ok(Box::new(MockTransport::from_files(&self.mock_responses)?)),
            "openai" => Ok(Box::new(HttpTransport::new(self)?)),
            other => Err(TransportError::Config(format!("unknown provider `{other}`"))),
        }
    }
}

/// Backoff policy for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub transport_retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy { transport_retries: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: usize) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry as u32)
    }
}

/// Sends one prompt, retrying transient failures with exponential
/// backoff up to the policy's limit. Every call is a fresh conversation.
pub fn generate(
    transport: &mut dyn Transport,
    prompt: &str,
    policy: &RetryPolicy,
) -> Result<String, TransportError> {
    let mut retry = 0usize;
    loop {
        match transport.send(prompt) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_transient() && retry < policy.transport_retries => {
                std::thread::sleep(policy.delay(retry));
                retry += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationOutcome {
    Pass,
    Fail { codes: Vec<String> },
}

/// One archived generation attempt: exactly what was sent back by the
/// model and how validation judged it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub study_id: String,
    pub variant: PromptVariant,
    pub model_id: String,
    pub trial_index: usize,
    pub attempt_index: usize,
    pub prompt_checksum: String,
    pub raw_response: String,
    pub timestamp: u64,
    pub validation_outcome: ValidationOutcome,
}

/// Identifies one (study, variant, model, trial) cell for archiving.
#[derive(Debug, Clone)]
pub struct CellRef {
    pub study_id: String,
    pub variant: PromptVariant,
    pub model_id: String,
    pub trial_index: usize,
}

/// Attempt archive rooted at a directory: one JSON file per attempt at
/// `<study>/<variant>/<model>/trial-N/attempt-M.json`.
#[derive(Debug, Clone)]
pub struct Archive {
    pub root: PathBuf,
}

impl Archive {
    pub fn new(root: impl Into<PathBuf>) -> Archive {
        Archive { root: root.into() }
    }

    pub fn attempt_path(&self, cell: &CellRef, attempt_index: usize) -> PathBuf {
        self.root
            .join(&cell.study_id)
            .join(cell.variant.tag())
            .join(&cell.model_id)
            .join(format!("trial-{}", cell.trial_index))
            .join(format!("attempt-{attempt_index}.json"))
    }

    fn write(&self, cell: &CellRef, record: &GenerationRecord) -> Result<(), GateError> {
        let path = self.attempt_path(cell, record.attempt_index);
        let dir = path.parent().expect("attempt path has a parent");
        std::fs::create_dir_all(dir)
            .map_err(|e| GateError::Archive(format!("{}: {e}", dir.display())))?;
        let mut body = serde_json::to_string_pretty(record)
            .map_err(|e| GateError::Archive(e.to_string()))?;
        body.push('\n');
        std::fs::write(&path, body)
            .map_err(|e| GateError::Archive(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("validation not passed after {attempts} attempts; codes per attempt: {summary}")]
    Exhausted { attempts: usize, summary: String, records: Vec<GenerationRecord> },
    #[error("archive: {0}")]
    Archive(String),
}

/// A validated, fully-archived generation.
#[derive(Debug)]
pub struct Validated<T> {
    pub value: T,
    pub report: ValidationReport,
    pub records: Vec<GenerationRecord>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Generate → extract payload → validate, regenerating from scratch on
/// validation failure up to `max_regenerations` times. Every attempt is
/// archived (when an archive is given), pass or fail; the raw response
/// stored is byte-identical to what validation consumed the payload
/// from.
pub fn generate_validated<T>(
    transport: &mut dyn Transport,
    prompt: &RenderedPrompt,
    cell: &CellRef,
    validator: impl Fn(&str) -> (T, ValidationReport),
    max_regenerations: usize,
    policy: &RetryPolicy,
    archive: Option<&Archive>,
) -> Result<Validated<T>, GateError> {
    let mut records: Vec<GenerationRecord> = Vec::new();
    let total_attempts = 1 + max_regenerations;
    for attempt_index in 1..=total_attempts {
        let raw_response = match generate(transport, &prompt.text, policy) {
            Ok(text) => text,
            Err(e) => return Err(GateError::Transport(e)),
        };
        let payload = crate::validate::extract_payload(&raw_response);
        let (value, report) = validator(&payload);
        let outcome = if report.pass() {
            ValidationOutcome::Pass
        } else {
            ValidationOutcome::Fail {
                codes: report.errors.iter().map(|e| e.code.to_string()).collect(),
            }
        };
        let record = GenerationRecord {
            study_id: cell.study_id.clone(),
            variant: cell.variant,
            model_id: cell.model_id.clone(),
            trial_index: cell.trial_index,
            attempt_index,
            prompt_checksum: prompt.checksum(),
            raw_response,
            timestamp: now_unix(),
            validation_outcome: outcome,
        };
        if let Some(archive) = archive {
            archive.write(cell, &record)?;
        }
        records.push(record);
        if report.pass() {
            return Ok(Validated { value, report, records });
        }
    }
    let summary = records
        .iter()
        .map(|r| match &r.validation_outcome {
            ValidationOutcome::Pass => "PASS".to_string(),
            ValidationOutcome::Fail { codes } => codes.join("+"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    Err(GateError::Exhausted { attempts: total_attempts, summary, records })
}
