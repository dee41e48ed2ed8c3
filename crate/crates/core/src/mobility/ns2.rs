//! NS2 `setdest` movement files and CSV waypoint export.
//!
//! ```text
//! $node_(0) set X_ 12.00
//! $node_(0) set Y_ 198.00
//! $node_(0) set Z_ 0.00
//! $ns_ at 0.0 "$node_(0) setdest 200.00 198.00 15.00"
//! ```
//!
//! Times print in shortest round-trip form, coordinates and speeds with two
//! decimals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MobilityError;

/// Node heads toward `(x, y)` at `speed` from `time` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub node_id: usize,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    /// `(node_id, x, y)` at t = 0.
    pub initial: Vec<(usize, f64, f64)>,
    pub waypoints: Vec<Waypoint>,
}

impl MobilityTrace {
    /// Uses each node's first waypoint as its initial position.
    pub fn from_waypoints(waypoints: Vec<Waypoint>) -> Self {
        let mut initial: Vec<(usize, f64, f64)> = Vec::new();
        for w in &waypoints {
            if !initial.iter().any(|(n, _, _)| *n == w.node_id) {
                initial.push((w.node_id, w.x, w.y));
            }
        }
        initial.sort_by_key(|(n, _, _)| *n);
        MobilityTrace { initial, waypoints }
    }

    /// SHA-256 of the NS2 rendering, hex encoded.
    pub fn digest(&self) -> Result<String, MobilityError> {
        let text = export_trace_ns2(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

fn fmt_time(t: f64) -> String {
    format!("{t:?}")
}

pub fn export_trace_ns2(trace: &MobilityTrace) -> Result<String, MobilityError> {
    if trace.waypoints.is_empty() {
        return Err(MobilityError::EmptyTrajectory);
    }
    if let Some(index) = trace.waypoints.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(MobilityError::Unsorted { index: index + 1 });
    }
    let mut out = String::with_capacity(64 * (trace.waypoints.len() + 3 * trace.initial.len()));
    for (node, x, y) in &trace.initial {
        let _ = writeln!(out, "$node_({node}) set X_ {x:.2}");
        let _ = writeln!(out, "$node_({node}) set Y_ {y:.2}");
        let _ = writeln!(out, "$node_({node}) set Z_ 0.00");
    }
    for w in &trace.waypoints {
        let _ = writeln!(
            out,
            "$ns_ at {} \"$node_({}) setdest {:.2} {:.2} {:.2}\"",
            fmt_time(w.time),
            w.node_id,
            w.x,
            w.y,
            w.speed
        );
    }
    Ok(out)
}

fn parse_node(tok: &str, line: usize) -> Result<usize, MobilityError> {
    tok.strip_prefix("$node_(")
        .and_then(|r| r.strip_suffix(')'))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| MobilityError::Parse { line, msg: format!("bad node reference `{tok}`") })
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, MobilityError> {
    tok.parse().map_err(|_| MobilityError::Parse { line, msg: format!("bad {what} `{tok}`") })
}

/// Inverse of [`export_trace_ns2`].
pub fn parse_trace_ns2(text: &str) -> Result<MobilityTrace, MobilityError> {
    let mut trace = MobilityTrace::default();
    let mut pending: Vec<(usize, Option<f64>, Option<f64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix("$ns_ at ") {
            let (t, cmd) =
                rest.split_once(' ').ok_or_else(|| MobilityError::Parse { line, msg: "missing command".into() })?;
            let time = parse_f64(t, line, "time")?;
            let cmd = cmd
                .strip_prefix('"')
                .and_then(|c| c.strip_suffix('"'))
                .ok_or_else(|| MobilityError::Parse { line, msg: "command not quoted".into() })?;
            let toks: Vec<&str> = cmd.split_whitespace().collect();
            if toks.len() != 5 || toks[1] != "setdest" {
                return Err(MobilityError::Parse { line, msg: format!("expected setdest, got `{cmd}`") });
            }
            trace.waypoints.push(Waypoint {
                time,
                node_id: parse_node(toks[0], line)?,
                x: parse_f64(toks[2], line, "x")?,
                y: parse_f64(toks[3], line, "y")?,
                speed: parse_f64(toks[4], line, "speed")?,
            });
        } else {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 4 || toks[1] != "set" {
                return Err(MobilityError::Parse { line, msg: format!("unrecognized line `{l}`") });
            }
            let node = parse_node(toks[0], line)?;
            let v = parse_f64(toks[3], line, "coordinate")?;
            let slot = match pending.iter().position(|(n, _, _)| *n == node) {
                Some(p) => p,
                None => {
                    pending.push((node, None, None));
                    pending.len() - 1
                }
            };
            match toks[2] {
                "X_" => pending[slot].1 = Some(v),
                "Y_" => pending[slot].2 = Some(v),
                "Z_" => {}
                other => return Err(MobilityError::Parse { line, msg: format!("unknown attribute `{other}`") }),
            }
        }
    }
    for (node, x, y) in pending {
        match (x, y) {
            (Some(x), Some(y)) => trace.initial.push((node, x, y)),
            _ => return Err(MobilityError::Parse { line: 0, msg: format!("node {node} lacks an initial position") }),
        }
    }
    Ok(trace)
}

/// `time,node_id,x,y,speed` rows, one per waypoint.
pub fn export_waypoints_csv(trace: &MobilityTrace) -> String {
    let mut out = String::from("time,node_id,x,y,speed\n");
    for w in &trace.waypoints {
        let _ = writeln!(out, "{},{},{:.2},{:.2},{:.2}", fmt_time(w.time), w.node_id, w.x, w.y, w.speed);
    }
    out
}
