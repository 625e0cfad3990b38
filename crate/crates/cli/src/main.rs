//! `blankopt` — staged pipeline driver.
//!
//! Every subcommand reads one config file and a run directory, consumes
//! the artifacts earlier stages left there, and writes its own. Exit
//! codes: 0 success, 1 configuration or execution error, 2 missing
//! upstream artifact (the missing path is printed).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blankopt_core::config::Config;
use blankopt_core::manifest::SplitTag;
use blankopt_core::pipeline::{
    stage_evaluate, stage_export, stage_infer_latents, stage_optimize, stage_sample,
    stage_simulate, stage_train_autodecoder, stage_train_iaism, stage_train_saism, PipelineError,
    RunPaths,
};

/// Blank-shape surrogate optimization pipeline.
#[derive(Parser)]
#[command(name = "blankopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file ([section] key = value).
    #[arg(long, global = true, default_value = "blankopt.cfg")]
    config: PathBuf,
    /// Run directory holding ledgers, grids, models, and reports.
    #[arg(long, global = true, default_value = "run")]
    run: PathBuf,
    /// Worker threads (also via BLANKOPT_THREADS; 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train/test designs and rasterize their SDF grids.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Override [sample] n_train.
        #[arg(long)]
        n_train: Option<usize>,
        /// Override [sample] n_test.
        #[arg(long)]
        n_test: Option<usize>,
        /// Override [sample] seed_train.
        #[arg(long)]
        seed_train: Option<u64>,
        /// Override [sample] seed_test.
        #[arg(long)]
        seed_test: Option<u64>,
    },
    /// Run the forming simulator over designs without dataset records.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the shape auto-decoder on the train SDFs.
    TrainAutodecoder {
        #[command(flatten)]
        common: Common,
    },
    /// Embed the test SDFs into the trained latent space.
    InferLatents {
        #[command(flatten)]
        common: Common,
    },
    /// Train the image surrogate on (SDF, thinning field) pairs.
    TrainIaism {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the scalar surrogates (RBF, Kriging) on the train latents.
    TrainSaism {
        #[command(flatten)]
        common: Common,
    },
    /// Benchmark all trained surrogates on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Gradient-descend the latent from the best train design and
    /// validate the result with the simulator.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Convert dataset grids to PGM/CSV and tabulate the maxima.
    Export {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Sample { common, .. }
            | Command::Simulate { common }
            | Command::TrainAutodecoder { common }
            | Command::InferLatents { common }
            | Command::TrainIaism { common }
            | Command::TrainSaism { common }
            | Command::Evaluate { common, .. }
            | Command::Optimize { common }
            | Command::Export { common } => common,
        }
    }
}

fn init_threads(cli_threads: Option<usize>) {
    let from_env = std::env::var("BLANKOPT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let n = cli_threads.or(from_env).unwrap_or(0);
    if n > 0 {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let common = cli.command.common();
    init_threads(common.threads);
    let mut cfg = Config::from_file(&common.config)?;
    let paths = RunPaths::new(&common.run);
    std::fs::create_dir_all(&paths.root).map_err(|source| PipelineError::Io {
        path: paths.root.clone(),
        source,
    })?;

    match cli.command {
        Command::Sample {
            n_train,
            n_test,
            seed_train,
            seed_test,
            ..
        } => {
            for (key, value) in [
                ("n_train", n_train.map(|v| v.to_string())),
                ("n_test", n_test.map(|v| v.to_string())),
                ("seed_train", seed_train.map(|v| v.to_string())),
                ("seed_test", seed_test.map(|v| v.to_string())),
            ] {
                if let Some(v) = value {
                    cfg.set("sample", key, v);
                }
            }
            let out = stage_sample(&cfg, &paths)?;
            if out.already_done {
                println!(
                    "sample: ledger already holds {} train + {} test designs for this config",
                    out.n_train, out.n_test
                );
            } else {
                println!(
                    "sample: wrote {} train + {} test designs",
                    out.n_train, out.n_test
                );
            }
        }
        Command::Simulate { .. } => {
            let out = stage_simulate(&cfg, &paths)?;
            println!(
                "simulate: {} new records ({} already present)",
                out.n_simulated, out.n_existing
            );
        }
        Command::TrainAutodecoder { .. } => {
            let out = stage_train_autodecoder(&cfg, &paths)?;
            println!(
                "train-autodecoder: {} shapes, {} epochs, loss {:.6} -> {:.6}",
                out.shapes, out.epochs, out.first_epoch_loss, out.final_epoch_loss
            );
        }
        Command::InferLatents { .. } => {
            let out = stage_infer_latents(&cfg, &paths)?;
            println!(
                "infer-latents: {} shapes, mean final loss {:.6}",
                out.shapes, out.mean_final_loss
            );
        }
        Command::TrainIaism { .. } => {
            let out = stage_train_iaism(&cfg, &paths)?;
            match out.final_epoch_loss_augmented {
                Some(aug) => println!(
                    "train-iaism: {} pairs, {} epochs, final loss {:.6} (augmented variant {:.6})",
                    out.pairs, out.epochs, out.final_epoch_loss, aug
                ),
                None => println!(
                    "train-iaism: {} pairs, {} epochs, final loss {:.6}",
                    out.pairs, out.epochs, out.final_epoch_loss
                ),
            }
        }
        Command::TrainSaism { .. } => {
            let out = stage_train_saism(&cfg, &paths)?;
            println!("train-saism: fitted 4 scalar models on {} samples", out.samples);
        }
        Command::Evaluate { split, .. } => {
            let tag = SplitTag::parse(&split).ok_or_else(|| {
                PipelineError::BadConfig(format!(
                    "unknown split {split:?} (expected train or test)"
                ))
            })?;
            let report = stage_evaluate(&cfg, &paths, tag)?;
            print!("{}", report.to_text());
        }
        Command::Optimize { .. } => {
            let out = stage_optimize(&cfg, &paths)?;
            println!("optimize: started from ledger id {}", out.start_id);
            for (seed, trace) in &out.traces {
                let v = trace.validation.as_ref();
                println!(
                    "  seed {seed}: loss {:.6} -> {:.6}, validation {}",
                    trace.losses.first().unwrap_or(&f64::NAN),
                    trace.losses.last().unwrap_or(&f64::NAN),
                    v.map_or("not run".to_string(), |v| if v.passed {
                        format!("PASS ({})", v.reason)
                    } else {
                        format!("FAIL ({})", v.reason)
                    })
                );
            }
            println!(
                "optimize: {} of {} seeds validated",
                out.traces
                    .iter()
                    .filter(|(_, t)| t.validation.as_ref().is_some_and(|v| v.passed))
                    .count(),
                out.traces.len()
            );
        }
        Command::Export { .. } => {
            let out = stage_export(&cfg, &paths)?;
            println!("export: wrote {} files", out.files);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_missing_upstream() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
