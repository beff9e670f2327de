use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dast::cmapss::Subset;
use dast::commands::{self, AttentionRequest, Split};
use dast::config::{Overrides, RunConfig};
use dast_core::Variant;

#[derive(Parser)]
#[command(name = "dast", version, about = "Dual-aspect self-attention transformer for remaining-useful-life prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, normalise and window a raw subset into a cache file.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoints and a history log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Preprocessed dataset; built from --dataset when absent.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Continue from a checkpoint that carries trainer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test engines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Average sensor and time-step attention over one engine's windows.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        unit: u32,
        /// First window end cycle to include.
        #[arg(long)]
        from: Option<u32>,
        /// Last window end cycle to include.
        #[arg(long)]
        to: Option<u32>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Train and score all four variants over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Number of seeds; seeds run from --seed upwards.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct Common {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the raw text files.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_subset)]
    subset: Option<Subset>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_subset(s: &str) -> Result<Subset, String> {
    s.parse().map_err(|e: dast::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: dast_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            dataset: self.dataset.clone(),
            subset: self.subset,
            window: self.window,
            variant: self.variant,
            seed: self.seed,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            dropout: self.dropout,
            threads: self.threads,
        };
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { common } => {
            let cfg = common.resolve()?;
            let (_, report) = commands::preprocess(&cfg, &common.out)?;
            print_json(&report)
        }
        Command::Train { common, cache, resume } => {
            let cfg = common.resolve()?;
            let (data, _) = commands::open_cache(&cfg, cache.as_deref(), &common.out)?;
            let report = commands::train(&cfg, &data, &common.out, resume.as_deref())?;
            print_json(&report)
        }
        Command::Evaluate { common, checkpoint, cache } => {
            let cfg = common.resolve()?;
            let (data, _) = commands::open_cache(&cfg, cache.as_deref(), &common.out)?;
            let report = commands::evaluate_checkpoint(&cfg, &checkpoint, &data, &common.out)?;
            print_json(&report)
        }
        Command::ExportAttention { common, checkpoint, cache, unit, from, to, split } => {
            let cfg = common.resolve()?;
            let (data, _) = commands::open_cache(&cfg, cache.as_deref(), &common.out)?;
            let req = AttentionRequest {
                unit,
                split: match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Test => Split::Test,
                },
                from_cycle: from,
                to_cycle: to,
            };
            let report = commands::export_attention(&cfg, &checkpoint, &data, &req, &common.out)?;
            print_json(&report)
        }
        Command::Ablate { common, cache, seeds } => {
            let cfg = common.resolve()?;
            let (data, _) = commands::open_cache(&cfg, cache.as_deref(), &common.out)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.train.seed + i).collect();
            let (rows, path) = commands::ablate(&cfg, &data, &seeds, &common.out)?;
            print_json(&rows)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
