use std::path::PathBuf;

use anyhow::Context;
use cair_cli::load::{baseline_suite, fetch_tree_stats, http_client, sweep_suite, Suite};
use cair_cli::{init_logging, read_tree_stats};
use cair_core::client::Fraction;
use cair_core::knowledge::{TreeStats, DEFAULT_CULTURE};
use cair_core::loadgen::{size_deployment, LoadScenario, Ratio, DEFAULT_THRESHOLD_MS};
use clap::{Args as ClapArgs, Parser, Subcommand};

/// Load generator for the hub endpoint.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapArgs)]
struct Common {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    target: String,
    #[arg(long, default_value = "load-report")]
    out: PathBuf,
    /// Tree statistics used to build the client states; fetched from the
    /// target when omitted.
    #[arg(long)]
    tree_stats: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_CULTURE)]
    culture: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_MS)]
    threshold_ms: f64,
    /// Reuse connections instead of opening one per request.
    #[arg(long)]
    keep_alive: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One user, requests spaced apart, for each payload size.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1/3,2/3,1")]
        payload: Vec<Fraction>,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
        /// Seconds between requests.
        #[arg(long, default_value_t = 5.0)]
        spacing: f64,
    },
    /// N users started over the ramp-up, repeated in groups.
    Scale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threads: usize,
        #[arg(long, default_value_t = 0.0)]
        ramp_up: f64,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
        /// Seconds between the end of a group and the start of the next.
        #[arg(long, default_value_t = 5.0)]
        gap: f64,
    },
    /// Scale runs over several thread counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50,100,250")]
        threads_list: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        ramp_up: f64,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
        #[arg(long, default_value_t = 5.0)]
        gap: f64,
    },
    /// Subscribed users served given N concurrent users and ratio R.
    Size {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        r: Ratio,
    },
}

async fn stats(common: &Common) -> anyhow::Result<TreeStats> {
    match &common.tree_stats {
        Some(path) => read_tree_stats(path, &common.culture),
        None => fetch_tree_stats(&http_client(true), &common.target, Some(&common.culture)).await,
    }
}

fn report(suite: &Suite, common: &Common) -> anyhow::Result<()> {
    let files = suite.write(&common.out).with_context(|| format!("writing {}", common.out.display()))?;
    for p in &suite.series.points {
        println!(
            "{:>10}  response {:8.2} ± {:7.2} ms   processing {:8.2} ± {:7.2} ms",
            p.label, p.mean_response_ms, p.sd_response_ms, p.mean_processing_ms, p.sd_processing_ms
        );
    }
    if let Some(n) = suite.series.breakpoint_n {
        println!("breakpoint: N={n} exceeds {} ms", suite.series.threshold_ms);
    }
    for a in &suite.series.annotations {
        println!("note: {a}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Baseline { common, payload, iterations, spacing } => {
            let stats = stats(&common).await?;
            let mut template = LoadScenario::baseline(&common.target, Fraction::ONE, iterations, spacing);
            template.seed = common.seed;
            template.keep_alive = common.keep_alive;
            let suite = baseline_suite(&template, &payload, &stats, common.threshold_ms).await?;
            report(&suite, &common)
        }
        Command::Scale { common, threads, ramp_up, iterations, gap } => {
            let stats = stats(&common).await?;
            let mut template = LoadScenario::scalability(&common.target, threads, ramp_up, iterations);
            template.spacing_s = gap;
            template.seed = common.seed;
            template.keep_alive = common.keep_alive;
            let suite = sweep_suite(&template, &[threads], &stats, common.threshold_ms).await?;
            report(&suite, &common)
        }
        Command::Sweep { common, threads_list, ramp_up, iterations, gap } => {
            let stats = stats(&common).await?;
            let mut template = LoadScenario::scalability(&common.target, 1, ramp_up, iterations);
            template.spacing_s = gap;
            template.seed = common.seed;
            template.keep_alive = common.keep_alive;
            let suite = sweep_suite(&template, &threads_list, &stats, common.threshold_ms).await?;
            report(&suite, &common)
        }
        Command::Size { n, r } => {
            println!("M = {}", size_deployment(n, r));
            Ok(())
        }
    }
}

fn main() -> anyhow::Result<()> {
    init_logging("warn");
    let cli = Cli::parse();
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(run(cli))
}
