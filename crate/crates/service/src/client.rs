//! Blocking client for the `/v1` API.

use std::io::{BufRead, BufReader, Read};
use std::thread;
use std::time::{Duration, Instant};

use feedstack_core::EventFrame;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::{
    ArtifactResponse, CreateSessionRequest, CreateSessionResponse, PostMessageRequest, PostMessageResponse,
    SnapshotView, ToggleRequest, ToggleResponse,
};
use crate::error::ApiError;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("server answered {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("gave up waiting after {0:?}")]
    Timeout(Duration),
}

impl From<ureq::Error> for ClientError {
    fn from(err: ureq::Error) -> Self {
        ClientError::Http(err.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    agent: ureq::Agent,
}

/// Raw status and body, for callers that inspect errors themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: String,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Sends a request and returns the raw response.
    pub fn raw(&self, method: &str, path: &str, body: Option<&str>) -> Result<RawResponse, ClientError> {
        let url = self.url(path);
        let response = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            ("DELETE", _) => self.agent.delete(&url).call(),
            ("POST", Some(body)) => self
                .agent
                .post(&url)
                .header("Content-Type", "application/json")
                .send(body),
            ("POST", None) => self.agent.post(&url).send_empty(),
            ("PUT", Some(body)) => self.agent.put(&url).header("Content-Type", "application/json").send(body),
            ("PUT", None) => self.agent.put(&url).send_empty(),
            (other, _) => return Err(ClientError::Http(format!("unsupported method {other}"))),
        }?;
        read_raw(response)
    }

    fn call<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<String>) -> Result<T, ClientError> {
        decode(self.raw(method, path, body.as_deref())?)
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<CreateSessionResponse, ClientError> {
        self.call("POST", "/v1/sessions", Some(to_json(req)))
    }

    pub fn post_message(&self, session_id: &str, req: &PostMessageRequest) -> Result<PostMessageResponse, ClientError> {
        self.call("POST", &format!("/v1/sessions/{session_id}/messages"), Some(to_json(req)))
    }

    pub fn toggle(&self, session_id: &str, principle_id: &str, enabled: bool) -> Result<ToggleResponse, ClientError> {
        let req = ToggleRequest {
            principle_id: principle_id.to_string(),
            enabled,
        };
        self.call("POST", &format!("/v1/sessions/{session_id}/toggles"), Some(to_json(&req)))
    }

    pub fn snapshot(&self, session_id: &str) -> Result<SnapshotView, ClientError> {
        self.call("GET", &format!("/v1/sessions/{session_id}"), None)
    }

    /// Canonical export bytes, unparsed.
    pub fn export(&self, session_id: &str) -> Result<String, ClientError> {
        let raw = self.raw("GET", &format!("/v1/sessions/{session_id}/export"), None)?;
        check(&raw)?;
        Ok(raw.body)
    }

    /// Every logged frame after `from_seq`, without following.
    pub fn events(&self, session_id: &str, from_seq: u64) -> Result<Vec<EventFrame>, ClientError> {
        self.follow(session_id, from_seq, false)?.collect()
    }

    /// Opens the event stream. With `follow` the iterator blocks for new
    /// frames until the connection closes.
    pub fn follow(&self, session_id: &str, from_seq: u64, follow: bool) -> Result<EventReader, ClientError> {
        let url = self.url(&format!("/v1/sessions/{session_id}/events?from_seq={from_seq}&follow={follow}"));
        let response = self.agent.get(&url).call()?;
        if !response.status().is_success() {
            return Err(api_error(read_raw(response)?));
        }
        Ok(EventReader {
            lines: BufReader::new(Box::new(response.into_body().into_reader())),
        })
    }

    pub fn upload_artifact(
        &self,
        session_id: &str,
        name: &str,
        media_type: &str,
        bytes: &[u8],
    ) -> Result<ArtifactResponse, ClientError> {
        let boundary = format!("feedstack{:016x}", bytes.len() as u64 ^ 0x5eed_cafe);
        let mut body = Vec::with_capacity(bytes.len() + 256);
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{}\"\r\nContent-Type: {media_type}\r\n\r\n",
                name.replace('"', "")
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        let response = self
            .agent
            .post(&self.url(&format!("/v1/sessions/{session_id}/artifact")))
            .header("Content-Type", &format!("multipart/form-data; boundary={boundary}"))
            .send(&body[..])?;
        decode(read_raw(response)?)
    }

    /// The session's artifact bytes and media type.
    pub fn artifact(&self, session_id: &str) -> Result<(String, Vec<u8>), ClientError> {
        let mut response = self
            .agent
            .get(&self.url(&format!("/v1/sessions/{session_id}/artifact")))
            .call()?;
        if !response.status().is_success() {
            return Err(api_error(read_raw(response)?));
        }
        let media_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let bytes = response
            .body_mut()
            .with_config()
            .limit(crate::api::MAX_BODY_BYTES as u64)
            .read_to_vec()?;
        Ok((media_type, bytes))
    }

    /// Polls the snapshot until no background jobs are pending.
    pub fn wait_idle(&self, session_id: &str, timeout: Duration) -> Result<SnapshotView, ClientError> {
        let start = Instant::now();
        loop {
            let snapshot = self.snapshot(session_id)?;
            if snapshot.pending_jobs == 0 {
                return Ok(snapshot);
            }
            if start.elapsed() > timeout {
                return Err(ClientError::Timeout(timeout));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Iterator over frames of an events response.
pub struct EventReader {
    lines: BufReader<Box<dyn Read + Send>>,
}

impl Iterator for EventReader {
    type Item = Result<EventFrame, ClientError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut line = String::new();
        loop {
            line.clear();
            match self.lines.read_line(&mut line) {
                Ok(0) => return None,
                Ok(_) if line.trim().is_empty() => continue,
                Ok(_) => {
                    return Some(serde_json::from_str(line.trim_end()).map_err(|e| ClientError::Decode(e.to_string())))
                }
                Err(e) => return Some(Err(ClientError::Http(e.to_string()))),
            }
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).expect("request serializes")
}

fn read_raw(mut response: ureq::http::Response<ureq::Body>) -> Result<RawResponse, ClientError> {
    let status = response.status().as_u16();
    let content_type = response
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let body = response
        .body_mut()
        .with_config()
        .limit(crate::api::MAX_BODY_BYTES as u64)
        .read_to_string()?;
    Ok(RawResponse {
        status,
        content_type,
        body,
    })
}

fn api_error(raw: RawResponse) -> ClientError {
    match serde_json::from_str::<ApiError>(&raw.body) {
        Ok(error) => ClientError::Api {
            status: raw.status,
            error,
        },
        Err(_) => ClientError::Decode(format!("status {} with body {:?}", raw.status, raw.body)),
    }
}

fn check(raw: &RawResponse) -> Result<(), ClientError> {
    if (200..300).contains(&raw.status) {
        Ok(())
    } else {
        Err(api_error(raw.clone()))
    }
}

fn decode<T: DeserializeOwned>(raw: RawResponse) -> Result<T, ClientError> {
    check(&raw)?;
    serde_json::from_str(&raw.body).map_err(|e| ClientError::Decode(format!("{e}: {}", raw.body)))
}
