//! File-level entry points: run a scenario and write its artifacts, export a
//! trajectory, recompute metrics from a trace, compare two metrics files.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::mac::MacError;
use crate::metrics::trace::{parse_trace, write_trace, TraceReadError};
use crate::metrics::{
    all_flow_metrics, compare, compare_documents, metrics_csv, ComparisonReport, FlowMetrics, MetricsDocument,
    MetricsError, TraceKind, TraceRecord, Window,
};
use crate::mobility::ns2::{export_trace_ns2, export_waypoints_csv};
use crate::mobility::MobilityError;
use crate::scenario::{ConfigError, Mode, RunMode, ScenarioConfig};
use crate::sim::{EventKind, SimTime, RNG_ALGORITHM};
use crate::simulation::{mobility_only, simulate, RunOutput, SimulationError};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("runtime invariant violated: {0}")]
    Invariant(String),
}

impl From<SimulationError> for RunError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Mac(e) => RunError::Mac(e),
            SimulationError::Mobility(e) => RunError::Mobility(e),
            SimulationError::Config(msg) => RunError::Invariant(format!("scenario rejected after validation: {msg}")),
            SimulationError::Schedule(e) => RunError::Invariant(e.to_string()),
        }
    }
}

impl RunError {
    /// 1 for configuration or usage problems, 2 for invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invariant(_) | RunError::Metrics(MetricsError::Conservation { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Write through a sibling temp file and rename, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub rng_algorithm: String,
    pub config_digest: String,
    pub trajectory_digest: String,
    pub code_version: String,
    pub mode: Mode,
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub outputs: Vec<RunOutput>,
    pub metrics: Vec<MetricsDocument>,
    pub comparison: Option<ComparisonReport>,
    pub manifest: Manifest,
}

pub fn full_window(cfg: &ScenarioConfig) -> Window {
    Window { start: SimTime::ZERO, end: SimTime(cfg.sim_us()) }
}

/// Trace-derived counts must agree with the simulation's own counters.
pub fn check_conservation(out: &RunOutput, metrics: &[FlowMetrics]) -> Result<(), RunError> {
    for (flow, c) in out.counters.iter().enumerate() {
        if c.created != c.delivered + c.dropped + c.residual {
            return Err(RunError::Invariant(format!(
                "flow {flow}: created {} != delivered {} + dropped {} + residual {}",
                c.created, c.delivered, c.dropped, c.residual
            )));
        }
        let t = match metrics.iter().find(|m| m.flow_id == flow) {
            Some(m) => m.counts,
            // flows that never emitted are absent from the trace
            None => Default::default(),
        };
        if (t.created, t.delivered, t.dropped, t.residual) != (c.created, c.delivered, c.dropped, c.residual) {
            return Err(RunError::Invariant(format!(
                "flow {flow}: trace counts {}/{}/{}/{} vs simulator {}/{}/{}/{} (created/delivered/dropped/residual)",
                t.created, t.delivered, t.dropped, t.residual, c.created, c.delivered, c.dropped, c.residual
            )));
        }
    }
    if metrics.iter().any(|m| m.flow_id >= out.counters.len()) {
        return Err(RunError::Invariant("trace mentions an unconfigured flow".into()));
    }
    let dropped: u64 = out.counters.iter().map(|c| c.dropped).sum();
    if out.notifications_emitted != dropped || out.notifications_processed > out.notifications_emitted {
        return Err(RunError::Invariant(format!(
            "{} drops but {} loss notifications emitted, {} processed",
            dropped, out.notifications_emitted, out.notifications_processed
        )));
    }
    if out.summary.processed_of(EventKind::LossNotification) != out.notifications_processed {
        return Err(RunError::Invariant("loss-notification event count disagrees with handler count".into()));
    }
    Ok(())
}

/// Simulate and check every run of `mode`; `Both` runs the two controllers
/// in parallel on the same trajectory.
pub fn simulate_checked(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<(RunOutput, Vec<FlowMetrics>)>, RunError> {
    let one = |m: RunMode| -> Result<(RunOutput, Vec<FlowMetrics>), RunError> {
        let out = simulate(cfg, m)?;
        let metrics = all_flow_metrics(&out.records, full_window(cfg))?;
        check_conservation(&out, &metrics)?;
        Ok((out, metrics))
    };
    let runs: Vec<_> = match mode {
        Mode::Both => std::thread::scope(|s| {
            let q = s.spawn(|| one(RunMode::Qoe));
            let b = one(RunMode::Baseline);
            vec![b, q.join().expect("qoe run panicked")]
        }),
        _ => mode.runs().iter().map(|&m| one(m)).collect(),
    };
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;
    if let [(b, _), (q, _)] = runs.as_slice() {
        if b.trajectory_digest != q.trajectory_digest {
            return Err(RunError::Invariant("baseline and qoe runs diverged in mobility".into()));
        }
        if b.summary.processed_of(EventKind::MobilityStep) != q.summary.processed_of(EventKind::MobilityStep) {
            return Err(RunError::Invariant("mobility step counts differ between modes".into()));
        }
    }
    Ok(runs)
}

fn metrics_document(cfg: &ScenarioConfig, out: &RunOutput, flows: Vec<FlowMetrics>) -> MetricsDocument {
    MetricsDocument {
        schema_version: crate::metrics::compare::METRICS_SCHEMA,
        mode: out.mode.as_str().to_string(),
        seed: Some(cfg.seed),
        rng_algorithm: Some(RNG_ALGORITHM.to_string()),
        config_digest: Some(cfg.digest()),
        trajectory_digest: Some(out.trajectory_digest.clone()),
        code_version: CODE_VERSION.to_string(),
        window: full_window(cfg),
        flows,
    }
}

/// Run `cfg` in `mode` and write all artifacts into `out_dir`.
pub fn run(cfg: &ScenarioConfig, mode: Mode, out_dir: &Path) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let runs = simulate_checked(cfg, mode)?;
    let mut files = Vec::new();
    let mut docs = Vec::new();

    for (out, flows) in &runs {
        let m = out.mode.as_str();
        let trace_name = format!("trace_{m}.txt");
        write_atomic(&out_dir.join(&trace_name), |w| write_trace(&out.records, w))?;
        files.push(trace_name);
        let csv_name = format!("metrics_{m}.csv");
        write_text(&out_dir.join(&csv_name), &metrics_csv(flows))?;
        files.push(csv_name);
        let doc = metrics_document(cfg, out, flows.clone());
        let json_name = format!("metrics_{m}.json");
        write_json(&out_dir.join(&json_name), &doc)?;
        files.push(json_name);
        docs.push(doc);
        log::info!(
            "{m}: {} events, {} trace records, {} drops",
            out.summary.processed,
            out.records.len(),
            out.counters.iter().map(|c| c.dropped).sum::<u64>()
        );
    }

    let first = &runs[0].0;
    write_text(&out_dir.join("mobility.ns2"), &export_trace_ns2(&first.trajectory)?)?;
    write_text(&out_dir.join("mobility.csv"), &export_waypoints_csv(&first.trajectory))?;
    files.push("mobility.ns2".into());
    files.push("mobility.csv".into());

    let comparison = if let [(_, b), (_, q)] = runs.as_slice() {
        let mut report = compare(b, q)?;
        report.seed = Some(cfg.seed);
        report.rng_algorithm = Some(RNG_ALGORITHM.to_string());
        report.config_digest = Some(cfg.digest());
        report.trajectory_digest = Some(first.trajectory_digest.clone());
        write_json(&out_dir.join("comparison.json"), &report)?;
        files.push("comparison.json".into());
        Some(report)
    } else {
        None
    };

    let manifest = Manifest {
        seed: cfg.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        config_digest: cfg.digest(),
        trajectory_digest: first.trajectory_digest.clone(),
        code_version: CODE_VERSION.to_string(),
        mode,
        files,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(RunArtifacts { outputs: runs.into_iter().map(|(o, _)| o).collect(), metrics: docs, comparison, manifest })
}

/// Write the NS2 setdest trajectory for `cfg` (and a CSV twin when the path
/// ends in `.csv`). Returns the trajectory digest.
pub fn export_mobility(cfg: &ScenarioConfig, out: &Path) -> Result<String, RunError> {
    cfg.validate()?;
    let model = mobility_only(cfg)?;
    let trace = model.trace();
    if out.extension().is_some_and(|e| e == "csv") {
        write_text(out, &export_waypoints_csv(trace))?;
    } else {
        write_text(out, &export_trace_ns2(trace)?)?;
    }
    Ok(trace.digest()?)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, RunError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    parse_trace(BufReader::new(f)).map_err(|e| match e {
        TraceReadError::Io(source) => RunError::Io { path: path.to_path_buf(), source },
        TraceReadError::Parse(p) => RunError::Parse { path: path.to_path_buf(), msg: p.to_string() },
    })
}

/// Window spanning the first to the last record of a trace.
pub fn trace_window(records: &[TraceRecord]) -> Option<Window> {
    let start = records.iter().map(|r| r.time).min()?;
    let end = records.iter().map(|r| r.time).max()?;
    Some(Window { start, end })
}

/// Recompute metrics from a trace file. Without an explicit window the
/// trace's own span is used.
pub fn analyze(
    trace: &Path,
    csv_out: &Path,
    json_out: Option<&Path>,
    window: Option<Window>,
) -> Result<Vec<FlowMetrics>, RunError> {
    let records = read_trace(trace)?;
    let window = match window.or_else(|| trace_window(&records)) {
        Some(w) => w,
        None => return Err(RunError::Parse { path: trace.to_path_buf(), msg: "trace is empty".into() }),
    };
    let flows = all_flow_metrics(&records, window)?;
    write_text(csv_out, &metrics_csv(&flows))?;
    if let Some(p) = json_out {
        let mode = if records.iter().any(|r| r.kind == TraceKind::RateChange) { "qoe" } else { "baseline" };
        let doc = MetricsDocument {
            schema_version: crate::metrics::compare::METRICS_SCHEMA,
            mode: mode.into(),
            seed: None,
            rng_algorithm: None,
            config_digest: None,
            trajectory_digest: None,
            code_version: CODE_VERSION.to_string(),
            window,
            flows: flows.clone(),
        };
        write_json(p, &doc)?;
    }
    Ok(flows)
}

pub fn read_metrics(path: &Path) -> Result<MetricsDocument, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn compare_files(baseline: &Path, qoe: &Path, out: &Path) -> Result<ComparisonReport, RunError> {
    let b = read_metrics(baseline)?;
    let q = read_metrics(qoe)?;
    let report = compare_documents(&b, &q)?;
    write_json(out, &report)?;
    Ok(report)
}
