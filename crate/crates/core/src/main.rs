use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use segslr::dataset::{synth_dataset, SignerPalette, SynthSpec};
use segslr::pipeline::{Pipeline, PipelineConfig, Stage, REPORT_TEXT};
use segslr::streams::StreamKind;

#[derive(Parser)]
#[command(name = "segslr", version, about = "Pose-prompted segmentation streams for isolated sign recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages against a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated stages; all of them when omitted.
        #[arg(long)]
        stage: Option<String>,
        /// Comma-separated stream subset, overriding the config.
        #[arg(long)]
        streams: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Add the cumulative stream ablation to the eval report.
        #[arg(long)]
        ablation: bool,
    },
    /// Write the synthetic moving-signer dataset and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        train_per_class: usize,
        #[arg(long, default_value_t = 3)]
        val_per_class: usize,
        #[arg(long, default_value_t = 0)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_streams(list: &str) -> Result<Vec<StreamKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<StreamKind>().map_err(anyhow::Error::from))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            stage,
            streams,
            workers,
            seed,
            ablation,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = streams {
                cfg.streams = parse_streams(&s)?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let stages = match stage {
                Some(list) => Stage::parse_list(&list)?,
                None => Stage::ALL.to_vec(),
            };
            let pipeline = Pipeline::new(cfg)?;
            let summary = pipeline.run(&stages, ablation)?;
            for s in &summary.stages {
                println!("{:<16} computed {:>4}  cached {:>4}", s.stage.name(), s.computed, s.hits);
            }
            if let Some(report) = &summary.report {
                print!("\n{}", report.to_text());
                println!(
                    "report written to {}",
                    pipeline.config().paths.output_root.join(REPORT_TEXT).display()
                );
            }
            Ok(())
        }
        Command::Synth {
            out,
            classes,
            train_per_class,
            val_per_class,
            test_per_class,
            seed,
        } => {
            let spec = SynthSpec {
                num_classes: classes,
                train_per_class,
                val_per_class,
                test_per_class,
                seed,
                ..SynthSpec::default()
            };
            let data = out.join("data");
            synth_dataset(&spec, &SignerPalette::default(), &data)?;
            let mut cfg = PipelineConfig::fixture("data", "cache", "output");
            cfg.num_classes = classes;
            let path = out.join("segslr.toml");
            fs::write(&path, cfg.to_toml_string()).with_context(|| format!("writing {}", path.display()))?;
            println!("dataset in {}, config in {}", data.display(), path.display());
            Ok(())
        }
    }
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
