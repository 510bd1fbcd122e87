use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use biasprobe::pipeline::{Pipeline, RunConfig};
use clap::{Parser, Subcommand};

/// Trace gender encoding in a masked-language-model encoder trained from scratch.
#[derive(Parser)]
#[command(name = "biasprobe", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build documents, vocabulary and train/validation/test split.
    Corpus,
    /// Train the encoder and save checkpoints.
    Train,
    /// Extract anchor-word embeddings at every checkpoint.
    Extract,
    /// Fit gender subspaces, per-dimension probes and recall clusterings.
    Subspace,
    /// Score template sentences and run significance tests.
    Evaluate,
    /// Write report tables, plots and the run manifest.
    Report,
    /// All stages in order.
    Run,
    /// Print the synthetic demo configuration.
    DemoConfig {
        #[arg(long, default_value = "runs/demo")]
        output_dir: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::DemoConfig { output_dir } = &cli.command {
        print!("{}", toml::to_string(&RunConfig::synthetic_demo(output_dir.clone()))?);
        return Ok(());
    }
    let path = cli.config.context("--config <file> is required")?;
    let mut config = RunConfig::load(&path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let pipeline = Pipeline::new(config)?;
    match cli.command {
        Command::Corpus => {
            let s = pipeline.corpus()?;
            println!(
                "{} documents, vocabulary {}, {} chunks, token shares {:.3}/{:.3}/{:.3}",
                s.documents, s.vocab_size, s.chunks, s.proportions[0], s.proportions[1], s.proportions[2]
            );
        }
        Command::Train => {
            let s = pipeline.train()?;
            println!("{} checkpoints saved", s.checkpoints.len());
            if let Some(e) = s.diverged_at {
                anyhow::bail!("training diverged in epoch {e}");
            }
        }
        Command::Extract => {
            let files = pipeline.extract()?;
            println!("{} embedding datasets written", files.len());
        }
        Command::Subspace => {
            for a in pipeline.subspace()? {
                println!("epoch {:>3}  cv accuracy {:.4}", a.subspace.checkpoint, a.subspace.cv_accuracy);
            }
        }
        Command::Evaluate => {
            for r in pipeline.evaluate()? {
                let z = r.test.and_then(|t| t.z).map_or("n/a".to_string(), |z| format!("{z:.4}"));
                println!("{:<40} z {z}", r.contrast.label);
            }
        }
        Command::Report => {
            let m = pipeline.report()?;
            println!("manifest lists {} outputs", m.outputs.len());
        }
        Command::Run => {
            let m = pipeline.run_all()?;
            println!("run complete; manifest lists {} outputs", m.outputs.len());
        }
        Command::DemoConfig { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
