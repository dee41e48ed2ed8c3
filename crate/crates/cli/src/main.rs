use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wimax_qoe::metrics::Window;
use wimax_qoe::runner::{self, RunError};
use wimax_qoe::scenario::{load_scenario, Mode, ScenarioConfig};
use wimax_qoe::sim::SimTime;

#[derive(Parser)]
#[command(name = "wimax-qoe", version, about = "WiMAX uplink simulator with QoE rate control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario JSON file
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenario (golden)
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write traces, metrics and mobility exports
    Run {
        #[command(flatten)]
        source: Source,
        /// Overrides the scenario's mode
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides the scenario's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the NS2 setdest trajectory for a scenario (CSV if the name ends in .csv)
    ExportMobility {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute per-flow metrics from a packet trace
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Measurement window start, seconds (defaults to the first record)
        #[arg(long)]
        t_start: Option<f64>,
        /// Measurement window end, seconds (defaults to the last record)
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Compare a baseline and a QoE metrics JSON
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        qoe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(source: &Source, seed: Option<u64>) -> Result<ScenarioConfig, RunError> {
    let mut cfg = match (&source.scenario, &source.preset) {
        (Some(path), _) => load_scenario(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: Cmd) -> Result<(), RunError> {
    match cmd {
        Cmd::Run { source, mode, seed, out } => {
            let cfg = load(&source, seed)?;
            let mode = mode.unwrap_or(cfg.mode);
            let art = runner::run(&cfg, mode, &out)?;
            println!("config_digest {}", art.manifest.config_digest);
            println!("trajectory_digest {}", art.manifest.trajectory_digest);
            for f in &art.manifest.files {
                println!("wrote {}", out.join(f).display());
            }
        }
        Cmd::ExportMobility { source, seed, out } => {
            let cfg = load(&source, seed)?;
            let digest = runner::export_mobility(&cfg, &out)?;
            println!("trajectory_digest {digest}");
        }
        Cmd::Analyze { trace, csv, json, t_start, t_end } => {
            let window = match (t_start, t_end) {
                (None, None) => None,
                (s, e) => {
                    let records = runner::read_trace(&trace)?;
                    let span =
                        runner::trace_window(&records).unwrap_or(Window { start: SimTime::ZERO, end: SimTime::ZERO });
                    Some(Window {
                        start: s.map(SimTime::from_secs_f64).unwrap_or(span.start),
                        end: e.map(SimTime::from_secs_f64).unwrap_or(span.end),
                    })
                }
            };
            let flows = runner::analyze(&trace, &csv, json.as_deref(), window)?;
            log::info!("{} flows analyzed", flows.len());
        }
        Cmd::Compare { baseline, qoe, out } => {
            let report = runner::compare_files(&baseline, &qoe, &out)?;
            let s = &report.summary;
            println!("mean throughput {:.3} -> {:.3} B/s", s.baseline_mean_throughput, s.qoe_mean_throughput);
            println!("mean plr {:.6} -> {:.6}", s.baseline_mean_plr, s.qoe_mean_plr);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
