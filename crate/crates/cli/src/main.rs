use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssreg_cli::{exit_code, ExperimentConfig};
use ssreg_core::{Result, StrategyKind};

#[derive(Parser)]
#[command(name = "ssreg", version, about = "Semi-supervised image regression experiments")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifests and PGM images).
    Generate {
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory; defaults to `data_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Pre-train, then fine-tune with one strategy.
    Train {
        /// supervised, naive_ssl, proposed, pi_model, temporal_ensembling or mean_teacher.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the ablation tables over every configured seed.
    Ablate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        force: bool,
    },
    /// Export ground truth and predictions of a checkpoint on one split.
    Scatter {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output CSV; defaults to `scatter_<split>.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn first_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Generate { seed, out, force } => {
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            let s = ssreg_cli::generate(&cfg, first_seed(&cfg, seed), &out, force)?;
            println!(
                "{}: {} labeled, {} unlabeled, {} validation, {} test",
                out.display(),
                s.train,
                s.unlabeled,
                s.validation,
                s.test
            );
        }
        Command::Train { strategy, seed, out, force } => {
            let strategy = match strategy {
                Some(name) => name.parse::<StrategyKind>()?,
                None => cfg.strategy,
            };
            let seed = first_seed(&cfg, seed);
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("{strategy}-seed{seed}")));
            let s = ssreg_cli::train(&cfg, seed, strategy, &out, force)?;
            println!("{}", s.validation);
            println!("{}", s.test);
        }
        Command::Ablate { out, threads, force } => {
            let out = out.unwrap_or_else(|| cfg.out_dir.join("ablation"));
            let report = ssreg_cli::run_ablation(&cfg, &out, threads, force)?;
            for (m, fixed, adaptive) in &report.triplet_table {
                println!("m={m}: fixed R {:.4} RMSE {:.4} | adaptive R {:.4} RMSE {:.4}", fixed.median_r, fixed.median_rmse, adaptive.median_r, adaptive.median_rmse);
            }
            for row in &report.component_table {
                println!("{:<26} R {:.4} RMSE {:.4}", row.label, row.median_r, row.median_rmse);
            }
        }
        Command::Scatter { checkpoint, split, out } => {
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().map(PathBuf::from).unwrap_or_default().join(format!("scatter_{split}.csv"))
            });
            let rows = ssreg_cli::scatter(&cfg, &checkpoint, &split, &out)?;
            println!("{}: {rows} rows", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
