use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fed_unroll_core::experiment::{eval_files, parse_values};
use fed_unroll_core::{plot, run_experiment, sweep, ExperimentConfig, PlotSpec, SweepAxis};

/// Overrides the output directory of `run` and `sweep` when set.
const OUTPUT_ENV: &str = "FED_UNROLL_OUTPUT";

#[derive(Parser)]
#[command(name = "fed-unroll", version, about = "Federated layer-wise training of unfolded ISTA networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (beats the config and the environment).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Repeat an experiment over values of one setting.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// `1..10`, `1,2,4` or a single value.
        #[arg(long)]
        values: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Per-layer NMSE of a checkpoint on a dataset file.
    Eval { checkpoint: PathBuf, dataset: PathBuf },
    /// Draw columns of a CSV file as an SVG line plot.
    Plot {
        csv: PathBuf,
        /// `x:y` or `x:y:series`.
        spec: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
}

fn load_config(path: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(dir) = output.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from)) {
        cfg.output.dir = dir;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, output } => {
            let cfg = load_config(&config, output)?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.summary());
            println!("artifacts in {}", report.out_dir.display());
        }
        Command::Sweep { config, axis, values, output } => {
            let cfg = load_config(&config, output)?;
            let values = parse_values(&values)?;
            let report = sweep(&cfg, axis, &values)?;
            println!("{:>8} {:>12}", axis.name(), "final_nmse_db");
            for (v, nmse) in values.iter().zip(report.final_nmse("fed_cs")) {
                println!("{v:>8} {nmse:>12.3}");
            }
            println!("artifacts in {}", cfg.output.dir.display());
        }
        Command::Eval { checkpoint, dataset } => {
            let curve = eval_files(&checkpoint, &dataset)?;
            println!("layer,nmse_db");
            for (i, v) in curve.iter().enumerate() {
                println!("{},{v}", i + 1);
            }
        }
        Command::Plot { csv, spec, out, title } => {
            let mut spec = PlotSpec::parse(&spec)?;
            if let Some(title) = title {
                spec.title = title;
            }
            let svg = plot::render_svg(&csv, &spec)?;
            match out {
                Some(path) => plot::write_svg(&path, &svg)?,
                None => print!("{svg}"),
            }
        }
    }
    Ok(())
}
