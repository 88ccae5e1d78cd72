//! `annotate` and `replay`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use feedstack_core::{export_session, replay_session, Gateway, PrincipleCatalog, TranscriptFile, TranscriptTurn};
use feedstack_service::api::{CreateSessionRequest, PostMessageRequest};
use feedstack_service::client::Client;

use crate::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_catalog(path: Option<&Path>) -> Result<PrincipleCatalog, CliError> {
    match path {
        None => Ok(PrincipleCatalog::default_catalog()),
        Some(path) => PrincipleCatalog::from_json(&read(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
    }
}

fn load_transcript(path: &Path) -> Result<Vec<TranscriptTurn>, CliError> {
    TranscriptFile::from_json(&read(path)?)
        .map(|t| t.messages)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Canonical export JSON for a transcript replayed with the stub gateway.
fn export_json(catalog: &PrincipleCatalog, turns: &[TranscriptTurn], session_id: &str) -> Result<String, CliError> {
    let gateway = Gateway::stub_for(catalog);
    let session =
        replay_session(session_id, catalog, turns, &gateway).map_err(|e| CliError::Input(format!("transcript {e}")))?;
    Ok(export_session(session.state()).to_canonical_json())
}

fn write_out(out: Option<&Path>, json: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, json).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| CliError::Runtime(format!("cannot write to stdout: {e}"))),
    }
}

pub fn annotate(input: &Path, lexicon: Option<&Path>, out: Option<&Path>, session_id: &str) -> Result<(), CliError> {
    let catalog = load_catalog(lexicon)?;
    let turns = load_transcript(input)?;
    write_out(out, &export_json(&catalog, &turns, session_id)?)
}

pub struct ReplayArgs<'a> {
    pub input: &'a Path,
    pub lexicon: Option<&'a Path>,
    pub export: Option<&'a Path>,
    pub seed_session: Option<&'a str>,
    pub catalog_id: Option<&'a str>,
    pub session_id: &'a str,
}

pub fn replay(args: ReplayArgs<'_>) -> Result<(), CliError> {
    let catalog = load_catalog(args.lexicon)?;
    let turns = load_transcript(args.input)?;
    let json = export_json(&catalog, &turns, args.session_id)?;
    write_out(args.export, &json)?;
    if let Some(base_url) = args.seed_session {
        let remote = seed(base_url, args.catalog_id, args.session_id, &turns)?;
        if remote != json {
            return Err(CliError::Runtime(format!(
                "service session {:?} differs from the local export",
                args.session_id
            )));
        }
        eprintln!("seeded session {} at {base_url}", args.session_id);
    }
    Ok(())
}

/// Posts the transcript verbatim to a new service session and returns the
/// service's export once background work has settled.
fn seed(base_url: &str, catalog_id: Option<&str>, session_id: &str, turns: &[TranscriptTurn]) -> Result<String, CliError> {
    let runtime = |e: feedstack_service::client::ClientError| CliError::Runtime(format!("{base_url}: {e}"));
    let client = Client::new(base_url);
    client
        .create_session(&CreateSessionRequest {
            session_id: Some(session_id.to_string()),
            catalog_id: catalog_id.map(str::to_string),
            artifact: None,
        })
        .map_err(runtime)?;
    for turn in turns {
        client
            .post_message(
                session_id,
                &PostMessageRequest {
                    text: turn.text.clone(),
                    role: Some(turn.role),
                    auto_reply: Some(false),
                },
            )
            .map_err(runtime)?;
    }
    client.wait_idle(session_id, Duration::from_secs(120)).map_err(runtime)?;
    client.export(session_id).map_err(runtime)
}
