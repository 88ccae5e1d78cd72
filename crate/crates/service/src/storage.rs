//! File-per-session event log and a content-addressed artifact store.
//!
//! A session log is JSON lines: the [`SessionSeed`] first, then one
//! [`EventFrame`] per line in seq order.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use feedstack_core::{EventFrame, SessionSeed};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("session {0:?} already exists")]
    Exists(String),
    #[error("log for session {session} is corrupt at line {line}: {reason}")]
    Corrupt { session: String, line: usize, reason: String },
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
}

/// A loaded log: the seed and its deduplicated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub seed: SessionSeed,
    pub frames: Vec<EventFrame>,
}

#[derive(Debug, Clone)]
pub struct Storage {
    root: PathBuf,
}

/// Session ids double as file names.
pub fn is_valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Storage {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        debug_assert!(is_valid_session_id(session_id));
        self.root.join("sessions").join(format!("{session_id}.jsonl"))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        is_valid_session_id(session_id) && self.log_path(session_id).exists()
    }

    /// Starts a new log holding only the seed.
    pub fn create(&self, seed: &SessionSeed) -> Result<(), StorageError> {
        let path = self.log_path(&seed.session_id);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => file,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StorageError::Exists(seed.session_id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut line = serde_json::to_string(seed).map_err(io::Error::other)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// Appends frames with a single write.
    pub fn append(&self, session_id: &str, frames: &[EventFrame]) -> Result<(), StorageError> {
        if frames.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for frame in frames {
            buf.push_str(&frame.to_json_line());
            buf.push('\n');
        }
        let mut file = OpenOptions::new().append(true).open(self.log_path(session_id))?;
        file.write_all(buf.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    /// Reads a log back. Returns `None` for unknown or empty logs.
    ///
    /// A frame repeated with the same seq (a crash between append and
    /// acknowledgement) is dropped. A torn final line is cut off so the
    /// next append starts on a clean line.
    pub fn load(&self, session_id: &str) -> Result<Option<SessionLog>, StorageError> {
        if !is_valid_session_id(session_id) {
            return Ok(None);
        }
        let path = self.log_path(session_id);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let text = String::from_utf8_lossy(&bytes);
        let corrupt = |line: usize, reason: String| StorageError::Corrupt {
            session: session_id.to_string(),
            line,
            reason,
        };

        let mut seed: Option<SessionSeed> = None;
        let mut frames: Vec<EventFrame> = Vec::new();
        let mut offset = 0usize;
        let mut good_len = 0usize;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let line_no = i + 1;
            offset += raw.len();
            let complete = raw.ends_with('\n');
            let line = raw.trim_end();
            if line.is_empty() {
                good_len = offset;
                continue;
            }
            let parsed = if seed.is_none() {
                serde_json::from_str::<SessionSeed>(line).map(|s| seed = Some(s))
            } else {
                match serde_json::from_str::<EventFrame>(line) {
                    Ok(frame) if frame.seq > frames.last().map_or(0, |f| f.seq) => {
                        frames.push(frame);
                        Ok(())
                    }
                    Ok(frame) if frames.iter().rev().any(|f| *f == frame) => {
                        tracing::warn!(session = session_id, seq = frame.seq, "dropping duplicate frame");
                        Ok(())
                    }
                    Ok(frame) => return Err(corrupt(line_no, format!("conflicting frame for seq {}", frame.seq))),
                    Err(e) => Err(e),
                }
            };
            match parsed {
                Ok(()) => good_len = offset,
                Err(_) if !complete => {
                    tracing::warn!(session = session_id, line = line_no, "truncating torn final line");
                    OpenOptions::new().write(true).open(&path)?.set_len(good_len as u64)?;
                    break;
                }
                Err(e) => return Err(corrupt(line_no, e.to_string())),
            }
        }
        Ok(seed.map(|seed| SessionLog { seed, frames }))
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>, StorageError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Stores artifact bytes and returns their content reference.
    pub fn put_artifact(&self, bytes: &[u8]) -> Result<String, StorageError> {
        let hex = hex(&Sha256::digest(bytes));
        let path = self.root.join("artifacts").join(&hex);
        if !path.exists() {
            let tmp = path.with_extension(format!("{}.tmp", uuid::Uuid::new_v4().simple()));
            let mut file = File::create(&tmp)?;
            file.write_all(bytes)?;
            file.sync_data()?;
            fs::rename(tmp, &path)?;
        }
        Ok(format!("sha256:{hex}"))
    }

    pub fn get_artifact(&self, content_ref: &str) -> Result<Option<Vec<u8>>, StorageError> {
        let Some(hex) = content_ref.strip_prefix("sha256:") else {
            return Ok(None);
        };
        if hex.len() != 64 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Ok(None);
        }
        match fs::read(self.root.join("artifacts").join(hex)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
