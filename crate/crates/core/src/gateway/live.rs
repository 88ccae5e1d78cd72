//! OpenAI-compatible chat-completions transport.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionRequest, GatewayError, Transport};

pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    model: String,
}

impl HttpTransport {
    pub fn new(endpoint: String, api_key: String, model: String) -> Self {
        Self {
            endpoint,
            api_key,
            model,
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

fn map_error(err: ureq::Error, timeout: Duration) -> GatewayError {
    match err {
        ureq::Error::Timeout(_) => GatewayError::Timeout {
            after_ms: timeout.as_millis() as u64,
        },
        ureq::Error::StatusCode(status) => GatewayError::Remote {
            status,
            body: String::new(),
        },
        other => GatewayError::Transport(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn send(&self, prompt: &str, request: &CompletionRequest, timeout: Duration) -> Result<String, GatewayError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let mut response = agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| map_error(e, timeout))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| map_error(e, timeout))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Remote { status, body: text });
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| GatewayError::Remote {
            status,
            body: format!("unparseable response: {e}"),
        })?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Remote {
                status,
                body: "response has no message content".into(),
            })
    }
}
