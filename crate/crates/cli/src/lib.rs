//! Executables around the engine: the HTTP services, the terminal chat
//! client and the load generator runner.

pub mod chat;
pub mod load;
pub mod server;

use std::path::Path;

use anyhow::Context;
use cair_core::hub::Hub;
use cair_core::knowledge::{compile_dialogue_tree, parse_ontology, DialogueTree, TreeStats};
use cair_core::planmgr::load_intent_registry;

/// Builds a hub from an ontology file and an intent file.
pub fn load_hub(ontology: &Path, intents: &Path, culture: &str) -> anyhow::Result<Hub> {
    let text = std::fs::read_to_string(ontology).with_context(|| format!("reading {}", ontology.display()))?;
    let ontology = parse_ontology(&text).with_context(|| format!("loading {}", ontology.display()))?;
    let text = std::fs::read_to_string(intents).with_context(|| format!("reading {}", intents.display()))?;
    let registry = load_intent_registry(&text).with_context(|| format!("loading {}", intents.display()))?;
    Ok(Hub::new(&ontology, registry, culture))
}

pub fn init_logging(default_filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_filter));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

/// Reads a compiled tree, or compiles an ontology file for `culture`.
pub fn read_tree(path: &Path, culture: &str) -> anyhow::Result<DialogueTree> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(tree) = DialogueTree::from_bytes(&bytes) {
        return Ok(tree);
    }
    let text = String::from_utf8(bytes).context("input is neither a tree nor an ontology")?;
    let ontology = parse_ontology(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok(compile_dialogue_tree(&ontology, culture))
}

/// Accepts a stats file written by `cair-kb stats --out`, a compiled tree
/// or an ontology.
pub fn read_tree_stats(path: &Path, culture: &str) -> anyhow::Result<TreeStats> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(stats) = serde_json::from_slice::<TreeStats>(&bytes) {
        return Ok(stats);
    }
    Ok(read_tree(path, culture)?.stats())
}
