use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cair_cli::chat::{ChatClient, ChatError};
use cair_cli::{init_logging, read_tree_stats};
use cair_core::client::{build_coverage_state, default_state_path, save_state, Fraction, LocalProfile};
use cair_core::knowledge::DEFAULT_CULTURE;
use clap::{Args as ClapArgs, Parser, Subcommand};

/// Terminal chat client.
#[derive(Parser)]
#[command(version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    session: Session,
}

#[derive(ClapArgs, Clone)]
struct Session {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Profile JSON with placeholders and capabilities; created empty if
    /// missing. The conversation state is kept next to it.
    #[arg(long, default_value = "profile.json")]
    profile: PathBuf,
    #[arg(long)]
    culture: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch a fresh conversation state and print the greeting.
    Bootstrap(Session),
    /// Build a synthetic state covering a share of the topics.
    Mkstate {
        #[arg(long)]
        fraction: Fraction,
        /// Stats file from `cair-kb stats --out`, a compiled tree or an
        /// ontology.
        #[arg(long)]
        tree_stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_CULTURE)]
        culture: String,
    },
}

fn profile(path: &Path) -> Result<LocalProfile, ChatError> {
    if path.exists() {
        Ok(LocalProfile::load(path)?)
    } else {
        Ok(LocalProfile::new(default_state_path(path)))
    }
}

fn client(session: &Session) -> Result<ChatClient, ChatError> {
    let mut client = ChatClient::new(&session.server, profile(&session.profile)?);
    client.culture = session.culture.clone();
    client.seed = session.seed;
    Ok(client)
}

fn interactive(session: &Session) -> Result<(), ChatError> {
    let client = client(session)?;
    let (_, greeting) = client.ensure_state()?;
    if let Some(g) = greeting {
        println!("{g}");
    }
    let stdin = std::io::stdin();
    let mut line = String::new();
    loop {
        print!("> ");
        let _ = std::io::stdout().flush();
        line.clear();
        if stdin.lock().read_line(&mut line).unwrap_or(0) == 0 {
            return Ok(());
        }
        let utterance = line.trim();
        if utterance.is_empty() {
            continue;
        }
        if utterance == ":quit" {
            return Ok(());
        }
        match client.converse_turn(utterance) {
            Ok(lines) => lines.iter().for_each(|l| println!("{l}")),
            // The stored state is untouched; the user can simply retry.
            Err(e) => eprintln!("turn failed: {e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), ChatError> {
    match cli.command {
        None => interactive(&cli.session),
        Some(Command::Bootstrap(session)) => {
            println!("{}", client(&session)?.bootstrap()?);
            Ok(())
        }
        Some(Command::Mkstate { fraction, tree_stats, out, seed, culture }) => {
            let stats = read_tree_stats(&tree_stats, &culture).map_err(|e| ChatError::Protocol {
                status: 0,
                body: format!("{e:#}"),
            })?;
            let state = build_coverage_state(&stats.layout, fraction, seed);
            let wire = state.to_wire(&stats.layout);
            save_state(&out, &wire)?;
            println!(
                "{} of {} topics covered, {} bytes -> {}",
                state.used.len(),
                stats.topic_count,
                state.wire_size(&stats.layout),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    init_logging("warn");
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
