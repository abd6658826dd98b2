use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use dstbc_sim::metrics::{write_results, OutputFormat};
use dstbc_sim::montecarlo::{generate_network, run_monte_carlo, RunOptions};
use dstbc_sim::{Mode, PrecoderKind, SimError, SystemConfig};

/// Cell-free massive MIMO downlink Monte Carlo: coherent (calibrated and
/// uncalibrated UEs) against differential STBC.
#[derive(Debug, Parser)]
#[command(name = "dstbc-sim", version)]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    setups: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// pcal, uncal, dstbc or all.
    #[arg(long, default_value = "all")]
    mode: String,
    /// zisi, pmmse or all.
    #[arg(long, default_value = "all")]
    precoder: String,
    /// Results file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Grid over one config key, e.g. `K=10,20,30`. Keys joined with `+`
    /// take the same value together, e.g. `N_UE+N_s=2,4`.
    #[arg(long)]
    sweep: Option<String>,
    /// Override a config key, e.g. `--set L_k=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write AP/UE positions of setup 0 as CSV to this path.
    #[arg(long, value_name = "PATH")]
    dump_geometry: Option<PathBuf>,
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Mode::ALL.to_vec())
    } else {
        s.parse().map(|m| vec![m])
    }
}

fn parse_precoders(s: &str) -> Result<Vec<PrecoderKind>, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(PrecoderKind::ALL.to_vec())
    } else {
        s.parse().map(|p| vec![p])
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

/// `out.csv` with value `30` for key `K` becomes `out_K30.csv`.
fn sweep_path(base: &Path, key: &str, value: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{key}{value}.{ext}"),
        None => format!("{stem}_{key}{value}"),
    };
    base.with_file_name(name)
}

fn emit(report: &dstbc_sim::metrics::AggregateReport, output: Option<&Path>, format: OutputFormat) -> Result<(), SimError> {
    match output {
        Some(path) => write_results(report, path, format),
        None => {
            let text = match format {
                OutputFormat::Csv => report.to_csv(),
                OutputFormat::Json => report.to_json()?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::default(),
    };
    for assignment in &cli.overrides {
        let (key, value) = split_assignment(assignment)?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(setups) = cli.setups {
        cfg.n_setups = setups;
    }
    if let Some(blocks) = cli.blocks {
        cfg.n_blocks_per_setup = blocks;
    }
    cfg.validate()?;
    let opts = RunOptions {
        modes: parse_modes(&cli.mode)?,
        precoders: parse_precoders(&cli.precoder)?,
        ..RunOptions::all()
    };

    if let Some(path) = &cli.dump_geometry {
        let net = generate_network(&cfg, 0)?;
        std::fs::write(path, net.geometry_csv()).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }

    match &cli.sweep {
        None => {
            let report = run_monte_carlo(&cfg, &opts)?;
            emit(&report, cli.output.as_deref(), cli.format)?;
        }
        Some(spec) => {
            let (key, values) = split_assignment(spec)?;
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(format!("sweep over '{key}' has no values").into());
            }
            for value in values {
                let mut point = cfg.clone();
                for k in key.split('+') {
                    point.set(k.trim(), value)?;
                }
                point.validate()?;
                let report = run_monte_carlo(&point, &opts)?;
                let path = cli.output.as_deref().map(|p| sweep_path(p, key, value));
                if path.is_none() {
                    println!("# {key}={value}");
                }
                emit(&report, path.as_deref(), cli.format)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
