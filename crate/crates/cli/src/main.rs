//! `cgt`: train, evaluate, specialize and inspect contextually guided
//! transformers. Worker threads for data generation follow `CGT_THREADS`.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgt", version, about = "Contextually guided transformer experiments")]
struct Cli {
    /// Overrides the seed of the config or checkpoint.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a `key=value` config file.
    Train {
        config: PathBuf,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Print a progress line every this many steps (0 = quiet).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Evaluate a checkpoint and write metric CSVs.
    Eval {
        checkpoint: PathBuf,
        /// dynamic | frozen | frozen@K | folded | moving-average@GAMMA
        #[arg(long, default_value = "dynamic")]
        mode: String,
        /// Number of held-out sequences.
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Capture the context of a prefix and write a specialized checkpoint.
    Specialize {
        checkpoint: PathBuf,
        /// Prefix text in the model's vocabulary.
        #[arg(long, conflicts_with = "prefix_file")]
        prefix: Option<String>,
        #[arg(long)]
        prefix_file: Option<PathBuf>,
        /// 1-based position whose context is captured (default: prefix end).
        #[arg(long)]
        freeze_at: Option<usize>,
        /// Fold the generated operators into the weights.
        #[arg(long)]
        fold: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the linear probe and write `probe.csv` and `variation.csv`.
    Probe {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// Sequences used to fit the probe; the rest are held out.
        #[arg(long, default_value_t = 128)]
        train: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write dot-product matrices and `embeddings.csv`.
    Dump {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate dataset samples as JSON lines.
    GenData {
        config: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the prior-covariance and fold-equivalence oracles.
    Oracle {
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 20)]
        models: usize,
        #[arg(long, default_value_t = 50)]
        suffixes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, set, log_every } => commands::train(&config, &set, cli.seed, log_every),
        Cmd::Eval { checkpoint, mode, count, set, out } => commands::eval(&checkpoint, &mode, count, &set, cli.seed, &out),
        Cmd::Specialize { checkpoint, prefix, prefix_file, freeze_at, fold, out } => {
            commands::specialize(&checkpoint, prefix, prefix_file, freeze_at, fold, &out)
        }
        Cmd::Probe { checkpoint, count, train, out } => commands::probe(&checkpoint, count, train, cli.seed, &out),
        Cmd::Dump { checkpoint, count, set, out } => commands::dump(&checkpoint, count, &set, cli.seed, &out),
        Cmd::GenData { config, count, set, out } => commands::gen_data(&config, count, &set, cli.seed, &out),
        Cmd::Oracle { draws, models, suffixes, out } => commands::oracle(draws, models, suffixes, cli.seed.unwrap_or(0), out.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
