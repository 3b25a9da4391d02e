use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peristaltic_cli::range::parse_range;
use peristaltic_cli::{cmd_calibrate, cmd_run, cmd_sweep, cmd_validate, run_summary, write_sweep, CliError, RunConfig};
use peristaltic_core::geometry::SweepParameter;
use peristaltic_core::telemetry::{read_baselines, write_baselines};

#[derive(Parser)]
#[command(name = "peristaltic", version, about = "Simulate and control a stacked soft-ring peristaltic conveyor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check ring geometry, station layout and settings.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Measure the free inflation rate of every compression module.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "baselines.csv")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the station and write telemetry.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Baseline file from `calibrate`; calibrates first when omitted.
        #[arg(long)]
        baselines: Option<PathBuf>,
        /// Telemetry CSV; defaults to `run.output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Sweep one ring design parameter through the inflation surrogate.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        param: SweepParameter,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        range: String,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.plant.rng_seed = seed;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Validate { config } => {
            let summary = cmd_validate(&load(config.as_deref(), None)?);
            println!("{summary}");
            Ok(if summary.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Calibrate { config, out, seed } => {
            let rates = cmd_calibrate(&load(config.as_deref(), seed)?)?;
            let mut w = create(&out)?;
            write_baselines(&mut w, &rates)?;
            w.flush().map_err(|source| CliError::Io { path: out.clone(), source })?;
            for (id, rate) in &rates {
                println!("C-{id}: {rate:.6} kPa/s");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, baselines, out, seed, duration } => {
            let mut cfg = load(config.as_deref(), seed)?;
            if let Some(d) = duration {
                cfg.run.duration_s = d;
            }
            let baselines = match baselines {
                Some(p) => {
                    let file = File::open(&p).map_err(|source| CliError::Io { path: p.clone(), source })?;
                    Some(read_baselines(file)?)
                }
                None => None,
            };
            let out = out.unwrap_or_else(|| cfg.run.output.clone());
            let report = cmd_run(&cfg, baselines, &out)?;
            print!("{}", run_summary(&report));
            Ok(if report.is_nominal() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { config, param, range, out } => {
            let values = parse_range(&range)?;
            let result = cmd_sweep(&load(config.as_deref(), None)?, param, &values)?;
            let argmax = match result.argmax() {
                Some(s) => format!("argmax {param} = {} (d_c/r = {:.6})", s.value, s.normalized_inflation.unwrap_or_default()),
                None => format!("argmax {param}: no feasible value"),
            };
            match out {
                Some(path) => {
                    write_sweep(create(&path)?, &result)?;
                    println!("{argmax}");
                }
                None => {
                    write_sweep(io::stdout().lock(), &result)?;
                    eprintln!("{argmax}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
