mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

/// Set-to-set metric learning for two-view re-identification.
#[derive(Debug, Parser)]
#[command(name = "s2s", version)]
pub struct Cli {
    /// `key = value` configuration file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (file for `plot`).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a part network and write the model and history CSV.
    Train {
        /// Training set manifest.
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Cross-view CMC and mAP of a model: view A probes, view B gallery.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Test set manifest.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// single | multi
        #[arg(long)]
        protocol: Option<String>,
        /// Multi-query pooling: mean | max
        #[arg(long)]
        aggregation: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Rank against every gallery image.
        #[arg(long)]
        all_shot: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// class-identity | triplet | pairwise | regularization | network
        #[arg(long)]
        term: Option<String>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Override the per-term pass threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Generate a synthetic two-view dataset.
    Synth {
        /// Also write identity-disjoint train/ and test/ sets with this
        /// fraction of identities in train.
        #[arg(long, value_name = "FRACTION")]
        split: Option<f64>,
        /// Write values inline in the manifest instead of tensor files.
        #[arg(long)]
        inline: bool,
    },
    /// Extract a column of a history or CMC CSV, with a sparkline.
    Plot {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Column to plot (default: `total` for histories, `match_rate` for CMC curves).
        #[arg(long)]
        column: Option<String>,
        #[arg(long)]
        no_sparkline: bool,
        /// Sparkline width in characters.
        #[arg(long, default_value_t = 60)]
        width: usize,
    },
}

fn key_help() -> String {
    format!(
        "Configuration keys (`key = value` in --config, or --set key=value) and defaults:\n{}",
        RunConfig::default().describe()
    )
}

/// Loads the configuration file, then applies `--set` and `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(CliError::Config)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} threads: {e}")))?;
    }
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Train { data, iters, lr } => {
            commands::train(&cli, cfg, data.as_deref(), *iters, *lr)
        }
        Command::Eval {
            model,
            data,
            protocol,
            aggregation,
            trials,
            all_shot,
        } => commands::eval(
            &cli,
            cfg,
            commands::EvalArgs {
                model,
                data,
                protocol: protocol.as_deref(),
                aggregation: aggregation.as_deref(),
                trials: *trials,
                all_shot: *all_shot,
            },
        ),
        Command::Gradcheck {
            term,
            eps,
            instances,
            threshold,
        } => commands::gradcheck(&cli, cfg, term.as_deref(), *eps, *instances, *threshold),
        Command::Synth { split, inline } => commands::synth(&cli, cfg, *split, *inline),
        Command::Plot {
            input,
            column,
            no_sparkline,
            width,
        } => commands::plot(&cli, input, column.as_deref(), !*no_sparkline, *width),
    }
}

fn main() -> ExitCode {
    let help = key_help();
    let mut cmd = Cli::command().after_long_help(help.clone());
    for name in ["train", "eval", "synth"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(help.clone()));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("s2s: {e}");
            e.exit_code()
        }
    }
}
