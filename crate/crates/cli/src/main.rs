//! Command line front end: run experiment batches, replay and verify logs,
//! and export metrics.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "harvest", version, about = "Deterministic commons-harvest episodes with LLM-driven agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes for one scenario.
    Run {
        /// Library scenario name or path to a scenario TOML file.
        #[arg(long)]
        scenario: String,
        /// Episodes to run; seeds are seed, seed+1, ...
        #[arg(long, default_value_t = 10)]
        reps: u32,
        /// Base seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Provider: `live`, `scripted:<file>`, or `hash-embed`.
        #[arg(long, default_value = "hash-embed")]
        provider: String,
        /// Parallel episodes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory for logs and summaries.
        #[arg(long, default_value = ".")]
        out: String,
        /// Chat-completions endpoint for the live provider.
        #[arg(long)]
        endpoint: Option<String>,
        /// Environment variable holding the live provider token.
        #[arg(long, default_value = "HARVEST_API_TOKEN")]
        token_env: String,
        /// Model for all prompts except the action prompt.
        #[arg(long, default_value = "gpt-3.5-turbo")]
        model: String,
        /// Model for the action prompt.
        #[arg(long, default_value = "gpt-4")]
        action_model: String,
    },
    /// Re-fold a log's events, verify its hashes, and print the grid
    /// round by round.
    Replay {
        log: String,
        /// Only verify; print the grid at the end alone.
        #[arg(long)]
        quiet: bool,
    },
    /// Compute every metric over a batch of logs and write CSV/SVG/JSON
    /// reports.
    Metrics {
        /// Log files or glob patterns (all from one scenario).
        globs: Vec<String>,
        #[arg(long, default_value = ".")]
        out: String,
    },
    /// List the shipped scenario library.
    Scenarios,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1 (clap would exit 2), but --help and
            // --version are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Run {
            scenario,
            reps,
            seed,
            provider,
            jobs,
            out,
            endpoint,
            token_env,
            model,
            action_model,
        } => commands::cmd_run(&commands::RunArgs {
            scenario,
            reps,
            seed,
            provider,
            jobs,
            out,
            endpoint,
            token_env,
            model,
            action_model,
        }),
        Command::Replay { log, quiet } => commands::cmd_replay(&log, quiet),
        Command::Metrics { globs, out } => commands::cmd_metrics(&globs, &out),
        Command::Scenarios => commands::cmd_scenarios(),
    };
    match outcome {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
