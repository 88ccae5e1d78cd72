//! `feedstack`: run the service, or annotate and replay transcripts offline.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 unreadable or malformed input,
//! 64 usage error, 78 bad configuration.

mod offline;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "feedstack", version, about = "Structured layers over design-feedback conversations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate a transcript offline and write its export document.
    Annotate {
        /// Transcript JSON ({"messages": [{"role", "text"}, ...]}).
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Principle catalog JSON; defaults to the shipped catalog.
        #[arg(long, value_name = "FILE")]
        lexicon: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[arg(long, default_value = feedstack_core::REPLAY_SESSION_ID)]
        session_id: String,
    },
    /// Replay a transcript, export it, and optionally seed a running service.
    Replay {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Export file; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        export: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        lexicon: Option<PathBuf>,
        /// Base URL of a running service, e.g. http://127.0.0.1:8080.
        #[arg(long, value_name = "URL")]
        seed_session: Option<String>,
        /// Catalog id on the service when seeding.
        #[arg(long)]
        catalog_id: Option<String>,
        #[arg(long, default_value = feedstack_core::REPLAY_SESSION_ID)]
        session_id: String,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// TOML config file.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Overrides the gateway mode from the config.
        #[arg(long, value_enum)]
        llm: Option<LlmMode>,
        /// Overrides the storage directory from the config.
        #[arg(long, value_name = "DIR")]
        storage_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LlmMode {
    Stub,
    Live,
}

/// A failure and the exit code it maps to.
#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Input(_) => 2,
            CliError::Config(_) => 78,
        }
    }
}

const EXIT_USAGE: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FEEDSTACK_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    let result = match cli.command {
        Command::Annotate {
            input,
            lexicon,
            out,
            session_id,
        } => offline::annotate(&input, lexicon.as_deref(), out.as_deref(), &session_id),
        Command::Replay {
            input,
            export,
            lexicon,
            seed_session,
            catalog_id,
            session_id,
        } => offline::replay(offline::ReplayArgs {
            input: &input,
            lexicon: lexicon.as_deref(),
            export: export.as_deref(),
            seed_session: seed_session.as_deref(),
            catalog_id: catalog_id.as_deref(),
            session_id: &session_id,
        }),
        Command::Serve {
            port,
            config,
            llm,
            storage_dir,
        } => serve::serve(serve::ServeArgs {
            port,
            config,
            llm,
            storage_dir,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("feedstack: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
