//! `charlead` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use charlead::dataset::{read_jsonl, write_jsonl};
use charlead::metrics::{format_p, format_r};
use charlead::pipeline::harness::{run_batching_comparison, run_embedding_ablation, run_fusion_comparison};
use charlead::pipeline::{evaluate, export_scores, harness, train, Checkpoint, RunConfig, Splits};
use charlead::synth::dataset_stats;
use charlead::ErrorClass;

#[derive(Parser)]
#[command(name = "charlead", version, about = "Character-level LSTM lead scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Only print results.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let config = RunConfig::load(self.config.as_deref(), &overrides)?;
        if !self.quiet {
            eprintln!("seed: {}", config.seed);
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/valid/test JSON-lines files into a directory.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the configured splits and write a checkpoint directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report correlation and score buckets of a checkpoint on a labelled file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured test split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Copy a dataset with each record's model score added.
    ExportScores {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train without, with a random, and with a pre-trained embedding layer.
    AblateEmbedding {
        #[command(flatten)]
        common: Common,
        /// Pre-trained embedding table; the config's `embedding_file` is used if omitted.
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with fixed-width and variable-width batches.
    CompareBatching {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downstream model with and without the LSTM score, over several split seeds.
    CompareFusion {
        #[command(flatten)]
        common: Common,
        /// Score with this checkpoint instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_report(dir: &Path, table: &str, json: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.txt"), table)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(json)? + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData { common, out } => {
            let config = common.load()?;
            let splits = Splits::generate(&config)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (name, records) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
                write_jsonl(out.join(format!("{name}.jsonl")), records)?;
                let s = dataset_stats(records)?;
                println!(
                    "{name}: {} records, median length {}, max length {}, close rate {:.3}",
                    s.count, s.length_median, s.length_max, s.close_rate
                );
            }
        }
        Command::Train { common, out } => {
            let config = common.load()?;
            let splits = Splits::from_config(&config)?;
            let (checkpoint, log) = train(&config.train_config(), &splits.train, &splits.valid)?;
            checkpoint.save(&out)?;
            std::fs::write(out.join("run_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
            std::fs::write(out.join("config.toml"), config.to_toml())?;
            let timings: Vec<f64> = log.epochs.iter().map(|e| e.wall_seconds).collect();
            std::fs::write(out.join("timings.json"), serde_json::to_string(&timings)? + "\n")?;
            if !common.quiet {
                for e in &log.epochs {
                    eprintln!(
                        "epoch {:>3} {:<12} train {:.4} valid {:.4} r {}",
                        e.epoch,
                        e.optimizer,
                        e.train_loss,
                        e.valid_loss,
                        format_r(e.valid_r)
                    );
                }
            }
            println!(
                "best epoch {} (valid loss {}), checkpoint written to {}",
                log.best_epoch,
                log.min_valid_loss().map_or_else(|| "n/a".into(), |l| format!("{l:.4}")),
                out.display()
            );
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            out,
        } => {
            let config = common.load()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let records = read_jsonl(data.unwrap_or_else(|| config.test.clone().into()))?;
            let result = evaluate(&checkpoint, &records)?;
            let r = &result.report;
            println!(
                "n {}  Pearson's R {}  P-value {}  mean loss {:.4}",
                r.n,
                format_r(r.r),
                format_p(r.p_value),
                r.mean_loss
            );
            if let Some(err) = &r.error {
                println!("note: {err}");
            }
            print!("{}", result.buckets.to_table());
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&result)? + "\n")?;
            }
        }
        Command::ExportScores {
            common,
            checkpoint,
            data,
            out,
        } => {
            common.load()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let scored = export_scores(&checkpoint, &read_jsonl(&data)?)?;
            write_jsonl(&out, &scored)?;
            println!("{} scores written to {}", scored.len(), out.display());
        }
        Command::AblateEmbedding { common, embedding, out } => {
            let config = common.load()?;
            let splits = Splits::from_config(&config)?;
            let mut base = config.train_config();
            base.model.embedding_file = None;
            let file = embedding.or_else(|| config.embedding_path());
            let dim = if config.embedding_dim > 0 {
                config.embedding_dim
            } else {
                config.ablation_embedding_dim
            };
            let report = run_embedding_ablation(&base, &splits, dim, file.as_deref())?;
            let table = report.to_table();
            print!("{table}");
            write_report(&out, &table, &report)?;
        }
        Command::CompareBatching { common, out } => {
            let config = common.load()?;
            let splits = Splits::from_config(&config)?;
            let report = run_batching_comparison(&config.train_config(), &splits)?;
            let table = report.to_table();
            print!("{table}");
            write_report(&out, &table, &report)?;
        }
        Command::CompareFusion {
            common,
            checkpoint,
            out,
        } => {
            let config = common.load()?;
            let splits = Splits::from_config(&config)?;
            let seeds: Vec<u64> = (0..config.fusion_seeds as u64).map(|i| config.seed + i).collect();
            let report = match checkpoint {
                Some(dir) => {
                    let checkpoint = Checkpoint::load(&dir)?;
                    let mut pool = export_scores(&checkpoint, &splits.valid)?;
                    pool.extend(export_scores(&checkpoint, &splits.test)?);
                    harness::fusion_from_scored(&pool, &seeds, config.downstream_l2)?
                }
                None => run_fusion_comparison(&config.train_config(), &splits, &seeds, config.downstream_l2)?,
            };
            let table = report.to_table();
            print!("{table}");
            write_report(&out, &table, &report)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<charlead::Error>().map(charlead::Error::class) {
        Some(ErrorClass::Usage) => 1,
        Some(ErrorClass::Numerical) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
