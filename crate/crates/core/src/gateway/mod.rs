//! The single choke-point for model calls.
//!
//! Every request names a prompt template and binds its variables. In stub
//! mode the answer is computed locally and deterministically; in live mode
//! the rendered prompt goes to an OpenAI-compatible endpoint with a
//! per-attempt timeout and exponential backoff between retries. Callers
//! decide how to degrade when a call fails.

mod live;
mod stub;
mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PrincipleCatalog;

pub use live::HttpTransport;
pub use stub::{stub_cues, stub_materials, StubBackend};
pub use templates::{placeholders, render_prompt, TemplateError, TemplateId};

pub const API_KEY_ENV: &str = "FEEDSTACK_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "FEEDSTACK_LLM_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl CompletionRequest {
    pub fn new<K, V>(template_id: TemplateId, variables: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        let (max_tokens, temperature) = match template_id {
            TemplateId::AssistantReply => (600, 0.7),
            TemplateId::Materials => (700, 0.0),
            TemplateId::Cues => (200, 0.7),
            TemplateId::Detect => (400, 0.0),
        };
        Self {
            template_id,
            variables: variables.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            max_tokens,
            temperature,
        }
    }

    /// Detection and materials stay at temperature 0.
    pub fn with_temperature(mut self, temperature: f32) -> Self {
        if !matches!(self.template_id, TemplateId::Detect | TemplateId::Materials) {
            self.temperature = temperature;
        }
        self
    }

    pub fn prompt(&self) -> Result<String, TemplateError> {
        render_prompt(self.template_id, &self.variables)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Stub,
    Live,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" => Ok(GatewayMode::Stub),
            "live" => Ok(GatewayMode::Live),
            other => Err(format!("unknown gateway mode {other:?}")),
        }
    }
}

fn default_api_key_ref() -> String {
    API_KEY_ENV.to_string()
}
fn default_timeout_ms() -> u64 {
    20_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_model() -> String {
    "gpt-4o-mini".to_string()
}

/// The `gateway` section of the service config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub mode: GatewayMode,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_ref")]
    pub api_key_ref: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_model")]
    pub model: String,
    /// Also run model-backed mention detection next to the lexicon.
    #[serde(default)]
    pub detect: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Stub,
            endpoint: None,
            api_key_ref: default_api_key_ref(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            model: default_model(),
            detect: false,
        }
    }
}

impl GatewayConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    /// Applies `FEEDSTACK_LLM_BASE_URL` from `env` over the configured
    /// endpoint.
    pub fn with_env(mut self, env: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(url) = env(BASE_URL_ENV).filter(|u| !u.is_empty()) {
            self.endpoint = Some(url);
        }
        self
    }

    /// Checks the config and, in live mode, resolves the API key.
    pub fn validate(&self, env: impl Fn(&str) -> Option<String>) -> Result<Option<String>, GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        match self.mode {
            GatewayMode::Stub => Ok(None),
            GatewayMode::Live => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config(format!(
                        "live mode needs an endpoint (config or {BASE_URL_ENV})"
                    )));
                }
                match env(&self.api_key_ref).filter(|k| !k.is_empty()) {
                    Some(key) => Ok(Some(key)),
                    None => Err(GatewayError::Config(format!("live mode needs {} to be set", self.api_key_ref))),
                }
            }
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Sleep before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << retry.min(16)))
    }

    /// Upper bound on the wall-clock time of one `complete` call.
    pub fn budget(&self) -> Duration {
        let attempts = u64::from(self.max_retries) + 1;
        let backoff: Duration = (0..self.max_retries).map(|r| self.backoff(r)).sum();
        self.timeout() * attempts as u32 + backoff
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("model call timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote error {status}: {body}")]
    Remote { status: u16, body: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("gateway config: {0}")]
    Config(String),
}

impl GatewayError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::Transport(_) => "transport",
            GatewayError::Remote { .. } => "remote_error",
            GatewayError::Template(_) => "template",
            GatewayError::Config(_) => "config",
        }
    }

    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Timeout { .. } | GatewayError::Transport(_) | GatewayError::Remote { .. }
        )
    }
}

/// One attempt at a remote completion.
pub trait Transport: Send + Sync {
    fn send(&self, prompt: &str, request: &CompletionRequest, timeout: Duration) -> Result<String, GatewayError>;
}

enum Backend {
    Stub(StubBackend),
    Remote(Arc<dyn Transport>),
}

pub struct Gateway {
    config: GatewayConfig,
    backend: Backend,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let backend = match self.backend {
            Backend::Stub(_) => "stub",
            Backend::Remote(_) => "remote",
        };
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("backend", &backend)
            .finish()
    }
}

impl Gateway {
    /// Stub gateway keyed to the shipped catalog.
    pub fn stub() -> Self {
        Self::stub_for(&PrincipleCatalog::default_catalog())
    }

    pub fn stub_for(catalog: &PrincipleCatalog) -> Self {
        Self {
            config: GatewayConfig::stub(),
            backend: Backend::Stub(StubBackend::new(catalog)),
        }
    }

    /// Builds a gateway from config, reading the API key from the process
    /// environment in live mode.
    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        let env = |name: &str| std::env::var(name).ok();
        let config = config.with_env(env);
        let key = config.validate(env)?;
        Ok(match config.mode {
            GatewayMode::Stub => Self {
                config,
                backend: Backend::Stub(StubBackend::default()),
            },
            GatewayMode::Live => {
                let transport = HttpTransport::new(
                    config.endpoint.clone().unwrap_or_default(),
                    key.unwrap_or_default(),
                    config.model.clone(),
                );
                Self {
                    config,
                    backend: Backend::Remote(Arc::new(transport)),
                }
            }
        })
    }

    /// Live-style gateway over an arbitrary transport (used for fault
    /// injection).
    pub fn with_transport(config: GatewayConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        if config.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        Ok(Self {
            config,
            backend: Backend::Remote(transport),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn is_stub(&self) -> bool {
        matches!(self.backend, Backend::Stub(_))
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let prompt = request.prompt()?;
        let transport = match &self.backend {
            Backend::Stub(stub) => return Ok(stub.respond(request)),
            Backend::Remote(transport) => transport,
        };
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            match transport.send(&prompt, request, self.config.timeout()) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_retryable() && attempt + 1 < attempts => {
                    tracing::debug!(template = %request.template_id, attempt, error = %err, "retrying model call");
                    thread::sleep(self.config.backoff(attempt));
                    attempt += 1;
                }
                Err(err) => {
                    tracing::warn!(template = %request.template_id, attempts = attempt + 1, error = %err, "model call failed");
                    return Err(err);
                }
            }
        }
    }
}

/// One-shot completion under `config`.
pub fn complete(request: &CompletionRequest, config: &GatewayConfig) -> Result<String, GatewayError> {
    Gateway::from_config(config.clone())?.complete(request)
}
