//! Baseline-vs-QoE comparison. Deltas are always `qoe - baseline`.

use serde::{Deserialize, Serialize};

use super::{FlowMetrics, MetricsError, Window};

pub const METRICS_SCHEMA: u32 = 1;

/// One run's metrics plus the provenance needed to pair it with another run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: u32,
    pub mode: String,
    pub seed: Option<u64>,
    pub rng_algorithm: Option<String>,
    pub config_digest: Option<String>,
    pub trajectory_digest: Option<String>,
    pub code_version: String,
    pub window: Window,
    pub flows: Vec<FlowMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Reduced,
    Tie,
    Increased,
}

impl Direction {
    fn of(delta: f64) -> Direction {
        if delta < 0.0 {
            Direction::Reduced
        } else if delta > 0.0 {
            Direction::Increased
        } else {
            Direction::Tie
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub throughput: f64,
    pub plr: f64,
    pub delay: Option<f64>,
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Directions {
    pub throughput: Direction,
    pub plr: Direction,
    pub delay: Option<Direction>,
    pub jitter: Option<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub throughput_lower: bool,
    pub plr_not_higher: bool,
    pub jitter_lower: bool,
    pub delay_not_higher: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowComparison {
    pub flow_id: usize,
    pub baseline: FlowMetrics,
    pub qoe: FlowMetrics,
    pub deltas: Deltas,
    pub directions: Directions,
    pub verdicts: Verdicts,
}

/// Flow-averaged means of both runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline_mean_throughput: f64,
    pub qoe_mean_throughput: f64,
    pub baseline_mean_plr: f64,
    pub qoe_mean_plr: f64,
    pub baseline_mean_delay: Option<f64>,
    pub qoe_mean_delay: Option<f64>,
    pub baseline_mean_jitter: Option<f64>,
    pub qoe_mean_jitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub rng_algorithm: Option<String>,
    pub config_digest: Option<String>,
    pub trajectory_digest: Option<String>,
    pub code_version: String,
    pub flows: Vec<FlowComparison>,
    pub summary: Summary,
}

fn sub(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_opt<'a>(flows: impl Iterator<Item = &'a FlowMetrics>, f: impl Fn(&FlowMetrics) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = flows.map(f).collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

pub fn compare(baseline: &[FlowMetrics], qoe: &[FlowMetrics]) -> Result<ComparisonReport, MetricsError> {
    let ids = |v: &[FlowMetrics]| v.iter().map(|m| m.flow_id).collect::<Vec<_>>();
    if ids(baseline) != ids(qoe) {
        return Err(MetricsError::FlowSetMismatch { baseline: ids(baseline), qoe: ids(qoe) });
    }
    let flows = baseline
        .iter()
        .zip(qoe)
        .map(|(b, q)| {
            let deltas = Deltas {
                throughput: q.avg_throughput - b.avg_throughput,
                plr: q.packet_loss_rate - b.packet_loss_rate,
                delay: sub(q.avg_delay, b.avg_delay),
                jitter: sub(q.avg_jitter, b.avg_jitter),
            };
            let directions = Directions {
                throughput: Direction::of(deltas.throughput),
                plr: Direction::of(deltas.plr),
                delay: deltas.delay.map(Direction::of),
                jitter: deltas.jitter.map(Direction::of),
            };
            let verdicts = Verdicts {
                throughput_lower: deltas.throughput < 0.0,
                plr_not_higher: deltas.plr <= 0.0,
                jitter_lower: deltas.jitter.is_some_and(|d| d < 0.0),
                delay_not_higher: deltas.delay.is_some_and(|d| d <= 0.0),
            };
            FlowComparison { flow_id: b.flow_id, baseline: b.clone(), qoe: q.clone(), deltas, directions, verdicts }
        })
        .collect();
    let summary = Summary {
        baseline_mean_throughput: mean(baseline.iter().map(|m| m.avg_throughput)),
        qoe_mean_throughput: mean(qoe.iter().map(|m| m.avg_throughput)),
        baseline_mean_plr: mean(baseline.iter().map(|m| m.packet_loss_rate)),
        qoe_mean_plr: mean(qoe.iter().map(|m| m.packet_loss_rate)),
        baseline_mean_delay: mean_opt(baseline.iter(), |m| m.avg_delay),
        qoe_mean_delay: mean_opt(qoe.iter(), |m| m.avg_delay),
        baseline_mean_jitter: mean_opt(baseline.iter(), |m| m.avg_jitter),
        qoe_mean_jitter: mean_opt(qoe.iter(), |m| m.avg_jitter),
    };
    Ok(ComparisonReport {
        schema_version: METRICS_SCHEMA,
        seed: None,
        rng_algorithm: None,
        config_digest: None,
        trajectory_digest: None,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        flows,
        summary,
    })
}

/// Compare two metrics documents, refusing pairs from different scenarios.
pub fn compare_documents(baseline: &MetricsDocument, qoe: &MetricsDocument) -> Result<ComparisonReport, MetricsError> {
    for (b, q) in [(&baseline.config_digest, &qoe.config_digest), (&baseline.trajectory_digest, &qoe.trajectory_digest)]
    {
        if b != q {
            return Err(MetricsError::DigestMismatch {
                baseline: b.clone().unwrap_or_default(),
                qoe: q.clone().unwrap_or_default(),
            });
        }
    }
    let mut report = compare(&baseline.flows, &qoe.flows)?;
    report.seed = baseline.seed;
    report.rng_algorithm = baseline.rng_algorithm.clone();
    report.config_digest = baseline.config_digest.clone();
    report.trajectory_digest = baseline.trajectory_digest.clone();
    Ok(report)
}
