use std::path::PathBuf;

use cair_cli::read_tree;

use anyhow::Context;
use cair_core::knowledge::{
    compile_dialogue_tree, generate_synthetic_ontology, parse_ontology, TreeStats, DEFAULT_CULTURE,
};
use clap::{Parser, Subcommand};

/// Knowledge base tool: compile ontologies, generate synthetic ones and
/// report tree statistics.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile an ontology into a dialogue tree for one culture.
    Compile {
        ontology: PathBuf,
        #[arg(long, default_value = DEFAULT_CULTURE)]
        culture: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic ontology.
    Generate {
        #[arg(long)]
        topics: usize,
        #[arg(long, default_value_t = 3)]
        branching: usize,
        #[arg(long, default_value_t = 8)]
        sentences: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print topic count, sentence count and the largest state size of a
    /// compiled tree (or of an ontology, compiled on the fly).
    Stats {
        input: PathBuf,
        #[arg(long, default_value = DEFAULT_CULTURE)]
        culture: String,
        /// Also write the statistics as JSON, usable as --tree-stats.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Args::parse().command {
        Command::Compile { ontology, culture, out } => {
            let text = std::fs::read_to_string(&ontology).with_context(|| format!("reading {}", ontology.display()))?;
            let parsed = parse_ontology(&text).with_context(|| format!("loading {}", ontology.display()))?;
            let tree = compile_dialogue_tree(&parsed, &culture);
            std::fs::write(&out, tree.to_bytes())?;
            println!("{} topics, {} sentences -> {}", tree.len(), tree.sentence_count(), out.display());
        }
        Command::Generate { topics, branching, sentences, seed, out } => {
            anyhow::ensure!(topics > 0, "--topics must be positive");
            let ontology = generate_synthetic_ontology(topics, branching, sentences, seed);
            std::fs::write(&out, ontology.to_json())?;
            println!("{} topics -> {}", ontology.len(), out.display());
        }
        Command::Stats { input, culture, out } => {
            let stats: TreeStats = read_tree(&input, &culture)?.stats();
            println!("culture: {}", stats.culture.as_deref().unwrap_or("(none)"));
            println!("topics: {}", stats.topic_count);
            println!("sentences: {}", stats.sentence_count);
            println!("max state bytes: {}", stats.max_state_bytes);
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_vec(&stats)?)?;
            }
        }
    }
    Ok(())
}
