use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use super::ablate::{ablate, parse_rows};
use super::config::{MixStrategy, TrainConfig};
use super::demo::mix_demo;
use super::eval::evaluate;
use super::gradcheck::{format_table, run_gradcheck_suite, SuiteOptions};
use super::train::train;
use crate::data::{build_dataset, Split, DEFAULT_COVERAGE};
use crate::error::{Error, Result};
use crate::tensor::Fault;

pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "scribblemix",
    version,
    about = "Scribble-supervised segmentation with saliency mixing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic rings dataset with scribbles.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-class coverage targets, comma separated.
        #[arg(long, value_delimiter = ',')]
        coverage: Option<Vec<f64>>,
    },
    /// Train a segmentor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` overrides applied after the config file.
        overrides: Vec<String>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the ablation rows over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1-5")]
        rows: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        overrides: Vec<String>,
    },
    /// Write preview files of one mixed pair.
    MixDemo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "puzzle")]
        strategy: MixStrategy,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: break the ReLU backward pass.
        #[arg(long, hide = true)]
        fault_relu: bool,
    },
}

fn load_config(path: Option<&PathBuf>, data: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.data = data.to_path_buf();
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn write_file(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs a parsed command; `Ok(false)` means a check ran and failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            out,
            n,
            size,
            seed,
            coverage,
        } => {
            let cov = coverage.unwrap_or_else(|| DEFAULT_COVERAGE.to_vec());
            let m = build_dataset(&out, n, size, seed, &cov)?;
            println!(
                "wrote {} samples to {} (train {}, val {}, test {})",
                m.entries.len(),
                out.display(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            );
            for id in &m.warnings {
                eprintln!("warning: {id}: scribble target shrunk to fit the eroded region");
            }
        }
        Command::Train {
            data,
            config,
            out,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &data, &overrides)?;
            let rep = train(&cfg, out.as_deref())?;
            print!("{}", rep.trace_csv());
            if let Some(t) = &rep.test {
                print!(
                    "test (best epoch {}):\n{}",
                    rep.best_epoch,
                    t.summary_text()
                );
            }
            println!("wall clock {:.1}s", rep.wall_clock_secs);
        }
        Command::Eval {
            ckpt,
            data,
            split,
            report,
        } => {
            let rep = evaluate(&ckpt, &data, split)?;
            print!("{}", rep.summary_text());
            if let Some(p) = report {
                write_file(&p, &rep.to_csv())?;
            }
        }
        Command::Ablate {
            data,
            rows,
            seeds,
            out,
            config,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &data, &overrides)?;
            let rows = parse_rows(&rows)?;
            let rep = ablate(&cfg, &rows, seeds, Some(&out))?;
            print!("{}", rep.summary_csv());
        }
        Command::MixDemo {
            data,
            out,
            seed,
            strategy,
            ckpt,
        } => {
            for f in mix_demo(&data, &out, seed, strategy, ckpt.as_deref())? {
                println!("{}", f.display());
            }
        }
        Command::Gradcheck {
            instances,
            seed,
            fault_relu,
        } => {
            let opts = SuiteOptions {
                instances,
                seed,
                fault: fault_relu.then_some(Fault::ReluBackward),
            };
            let rows = run_gradcheck_suite(&opts)?;
            print!("{}", format_table(&rows));
            return Ok(rows.iter().all(|r| r.passes()));
        }
    }
    Ok(true)
}

/// Entry point of the binary: parses arguments and maps outcomes to exit
/// codes (0 ok, 1 usage, 2 runtime failure, 3 failed check).
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
