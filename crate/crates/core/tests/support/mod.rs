#![allow(dead_code)]

pub mod oracle;
pub mod schema;

use std::path::PathBuf;

use feedstack_core::{TranscriptFile, TranscriptTurn};

pub fn fixture_transcript() -> Vec<TranscriptTurn> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/transcript_12.json");
    TranscriptFile::from_json(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .messages
}
