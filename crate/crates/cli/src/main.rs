use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vicntm::corpus::synthetic::SyntheticConfig;
use vicntm_cli::commands::{self, ExportKind};
use vicntm_cli::{CliResult, ExperimentConfig, Kind, WithKind};

/// Neural topic model experiments with VIC regularization.
///
/// Settings come from a TOML file; any key can be overridden from the
/// environment as VICNTM_<SECTION>__<KEY>, e.g. VICNTM_TRAIN__TOPICS=20.
#[derive(Parser)]
#[command(name = "vicntm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabulary, bag-of-words matrix and split from the raw input
    Preprocess {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Fit the adversarial positive sampler for every configured seed
    FitAdversarial {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train the configured variant once per seed
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Recompute the metrics report of a checkpoint
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export topics, document latents or loss curves from a checkpoint
    Export {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// topics, latents or curves
        #[arg(long)]
        kind: String,
        /// split projected by `latents`
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Random hyperparameter search scored by validation NPMI
    Search {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train the VIC, V-I, I-C and I regularizer subsets
    Ablate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write a synthetic topic-structured corpus, one document per line
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 120)]
        vocab: usize,
        #[arg(long, default_value_t = 6)]
        topics: usize,
        #[arg(long, default_value_t = 80)]
        doc_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &PathBuf) -> CliResult<ExperimentConfig> {
    ExperimentConfig::load(path).kind(Kind::Config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess { config } => {
            let c = commands::cmd_preprocess(&load(&config)?)?;
            println!(
                "{}: {} documents, {} words ({} train / {} dev / {} test)",
                c.dir.display(),
                c.bow.rows(),
                c.vocab.len(),
                c.split.train.bow.rows(),
                c.split.dev.bow.rows(),
                c.split.test.bow.rows()
            );
        }
        Command::FitAdversarial { config } => {
            let cfg = load(&config)?;
            let corpus = commands::cmd_preprocess(&cfg)?;
            for &seed in &cfg.seeds {
                let (dir, _) = commands::fit_adversarial(&cfg, &corpus, seed)?;
                println!("seed {seed}: {}", dir.display());
            }
        }
        Command::Train { config } => {
            let report = commands::cmd_train(&load(&config)?)?;
            for run in &report.runs {
                println!(
                    "seed {}: npmi {:.4}  {}",
                    run.seed,
                    run.report.npmi,
                    run.dir.display()
                );
            }
            println!("{}\n{}", commands::SUMMARY_HEADER, report.summary_row);
        }
        Command::Eval { config, checkpoint } => {
            let r = commands::cmd_eval(&load(&config)?, &checkpoint)?;
            println!("{}\n{}", r.csv_header(), r.csv_row());
        }
        Command::Export {
            config,
            checkpoint,
            kind,
            split,
            out,
        } => {
            let kind: ExportKind = kind.parse().kind(Kind::Config)?;
            commands::cmd_export(&load(&config)?, &checkpoint, kind, &split, &out)?;
        }
        Command::Search { config } => {
            let (dir, result) = commands::cmd_search(&load(&config)?)?;
            let v = result.best.vic;
            println!(
                "best val npmi {:.4}: lambda {} mu {} nu {} t {}",
                result.best_npmi, v.lambda, v.mu, v.nu, result.best.t
            );
            println!("{}", dir.display());
        }
        Command::Ablate { config } => {
            let (path, rows) = commands::cmd_ablate(&load(&config)?)?;
            for row in &rows {
                println!("{:>4}: {}", row.label, row.report.summary_row);
            }
            println!("{}", path.display());
        }
        Command::Synth {
            out,
            docs,
            vocab,
            topics,
            doc_len,
            seed,
        } => {
            let cfg = SyntheticConfig {
                docs,
                vocab,
                topics,
                doc_len,
                seed,
                ..SyntheticConfig::default()
            };
            let n = commands::cmd_synth(&cfg, &out)?;
            println!("wrote {n} documents to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
