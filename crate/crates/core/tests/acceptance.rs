//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use wimax_qoe::metrics::trace::{emit_trace, parse_trace_str};
use wimax_qoe::metrics::{all_flow_metrics, FlowMetrics, TraceKind, Window};
use wimax_qoe::mobility::TurnCounts;
use wimax_qoe::runner::{full_window, run, simulate_checked};
use wimax_qoe::scenario::{Mode, ScenarioConfig};
use wimax_qoe::sim::SimTime;
use wimax_qoe::simulation::{mobility_only, RunOutput};

use common::{oracle, random_scenario};

const GOLDEN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Verdict = Result<String, String>;

struct Paired {
    seed: u64,
    secs: f64,
    baseline: RunOutput,
    qoe: RunOutput,
    mb: Vec<FlowMetrics>,
    mq: Vec<FlowMetrics>,
}

fn paired(cfg: &ScenarioConfig) -> Paired {
    let t0 = Instant::now();
    let mut runs = simulate_checked(cfg, Mode::Both).expect("paired run");
    let secs = t0.elapsed().as_secs_f64();
    let (qoe, mq) = runs.pop().unwrap();
    let (baseline, mb) = runs.pop().unwrap();
    Paired { seed: cfg.seed, secs, baseline, qoe, mb, mq }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_1(golden: &[Paired], cfg: &ScenarioConfig) -> Verdict {
    let mut worst_secs: f64 = 0.0;
    for p in golden {
        worst_secs = worst_secs.max(p.secs);
        if p.secs >= 60.0 {
            return Err(format!("seed {} paired run took {:.1} s", p.seed, p.secs));
        }
        for ((b, q), f) in p.mb.iter().zip(&p.mq).zip(&cfg.flows) {
            if q.avg_throughput > b.avg_throughput * 1.01 {
                return Err(format!(
                    "seed {} flow {}: qoe {} > baseline {} + 1%",
                    p.seed, b.flow_id, q.avg_throughput, b.avg_throughput
                ));
            }
            if q.avg_throughput < f.min_rate * 0.95 || q.avg_throughput > f.initial_rate * 1.05 {
                return Err(format!(
                    "seed {} flow {}: qoe throughput {} outside envelope",
                    p.seed, b.flow_id, q.avg_throughput
                ));
            }
        }
    }
    Ok(format!("{} seeds x {} flows, slowest paired run {:.2} s", golden.len(), cfg.flows.len(), worst_secs))
}

fn criterion_2(golden: &[Paired]) -> Verdict {
    let mut detail = Vec::new();
    for p in golden {
        for (b, q) in p.mb.iter().zip(&p.mq) {
            if q.packet_loss_rate > b.packet_loss_rate + 0.005 {
                return Err(format!(
                    "seed {} flow {}: plr {} vs {}",
                    p.seed, b.flow_id, q.packet_loss_rate, b.packet_loss_rate
                ));
            }
        }
        let mb = mean(p.mb.iter().map(|m| m.packet_loss_rate));
        let mq = mean(p.mq.iter().map(|m| m.packet_loss_rate));
        if mb > 0.01 && mq >= mb {
            return Err(format!("seed {}: mean plr {mq} not below baseline {mb}", p.seed));
        }
        detail.push(format!("{mb:.4}->{mq:.4}"));
    }
    Ok(format!("mean plr per seed {}", detail.join(" ")))
}

fn criterion_3(golden: &[Paired]) -> Verdict {
    let avg =
        |ms: &[FlowMetrics], f: fn(&FlowMetrics) -> Option<f64>| mean(ms.iter().map(|m| f(m).expect("delivered")));
    let (mut jb, mut jq, mut db, mut dq) = (0.0, 0.0, 0.0, 0.0);
    for p in golden {
        let (pjb, pjq) = (avg(&p.mb, |m| m.avg_jitter), avg(&p.mq, |m| m.avg_jitter));
        let (pdb, pdq) = (avg(&p.mb, |m| m.avg_delay), avg(&p.mq, |m| m.avg_delay));
        if pjq > pjb {
            return Err(format!("seed {}: jitter {pjq} > {pjb}", p.seed));
        }
        if pdq > pdb * 1.05 {
            return Err(format!("seed {}: delay {pdq} > {pdb} + 5%", p.seed));
        }
        jb += pjb;
        jq += pjq;
        db += pdb;
        dq += pdq;
    }
    let n = golden.len() as f64;
    Ok(format!("jitter {:.6}->{:.6} s, delay {:.6}->{:.6} s (seed means)", jb / n, jq / n, db / n, dq / n))
}

fn criterion_4() -> Verdict {
    let mut cfg = ScenarioConfig::golden();
    cfg.grid.blocks_x = 8;
    cfg.grid.blocks_y = 8;
    cfg.sim_time = 1500.0;
    cfg.flows = (0..100).map(|_| cfg.flows[0]).collect();
    let mut total = TurnCounts::default();
    for seed in [11, 12] {
        cfg.seed = seed;
        let m = mobility_only(&cfg).map_err(|e| e.to_string())?;
        let t = m.interior_turns();
        total.left += t.left;
        total.right += t.right;
        total.straight += t.straight;
    }
    let n = total.total() as f64;
    let p = total.chi_square_p_value();
    let freqs = [total.left as f64 / n, total.right as f64 / n, total.straight as f64 / n];
    let detail = format!(
        "{} interior crossings, L/R/S = {:.4}/{:.4}/{:.4}, chi2 = {:.3}, p = {:.3}",
        total.total(),
        freqs[0],
        freqs[1],
        freqs[2],
        total.chi_square(),
        p
    );
    let ok =
        total.total() >= 10_000 && p > 0.01 && freqs.iter().zip([0.25, 0.25, 0.5]).all(|(f, e)| (f - e).abs() <= 0.02);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Checks the rate envelope on one qoe run; returns whether the loss-free
/// suffix clause applied to at least one flow.
fn rate_envelope(cfg: &ScenarioConfig, out: &RunOutput) -> Result<usize, String> {
    let n = cfg.flows.len();
    let mut first: Vec<Option<f64>> = vec![None; n];
    let mut last: Vec<Option<f64>> = vec![None; n];
    let mut last_loss: Vec<Option<SimTime>> = vec![None; n];
    for r in &out.records {
        let f = &cfg.flows[r.flow_id];
        match r.kind {
            TraceKind::RateChange => {
                let rate = r.rate().unwrap();
                if rate < f.min_rate || rate > f.initial_rate {
                    return Err(format!(
                        "flow {} rate {rate} outside [{}, {}] at {}",
                        r.flow_id, f.min_rate, f.initial_rate, r.time
                    ));
                }
                first[r.flow_id].get_or_insert(rate);
                last[r.flow_id] = Some(rate);
            }
            TraceKind::Drop => last_loss[r.flow_id] = Some(r.time),
            _ => {}
        }
    }
    // the source only learns of a loss one frame later
    let notify_us = cfg.mac.frame_us();
    let needed_us = (1.0 / cfg.qoe.alpha).ceil() * cfg.qoe.recovery_period * 1e6;
    let end = cfg.sim_us();
    let mut applied = 0;
    for (i, f) in cfg.flows.iter().enumerate() {
        if first[i] != Some(f.initial_rate) {
            return Err(format!("flow {i}: first rate {:?} != initial {}", first[i], f.initial_rate));
        }
        let quiet_from = last_loss[i].map_or(0, |t| t.0 + notify_us);
        if (end.saturating_sub(quiet_from)) as f64 > needed_us {
            if last[i] != Some(f.initial_rate) {
                return Err(format!("flow {i}: loss-free for {} us but final rate {:?}", end - quiet_from, last[i]));
            }
            if last_loss[i].is_some() {
                applied += 1;
            }
        }
    }
    Ok(applied)
}

fn criterion_5(golden: &[Paired], random: &[(ScenarioConfig, RunOutput)], cfg: &ScenarioConfig) -> Verdict {
    let mut runs = 0;
    let mut recovered = 0;
    let mut changes = 0;
    for p in golden {
        recovered += rate_envelope(cfg, &p.qoe)?;
        runs += 1;
    }
    for (c, out) in random {
        recovered += rate_envelope(c, out)?;
        changes += out.records.iter().filter(|r| r.kind == TraceKind::RateChange).count();
        runs += 1;
    }
    Ok(format!("{runs} qoe runs, {changes} rate changes, {recovered} flows recovered to initial rate after losses"))
}

fn criterion_6(n: u64) -> (Verdict, Vec<(ScenarioConfig, RunOutput)>) {
    let mut qoe_runs = Vec::new();
    let mut dropped = 0;
    for i in 0..n {
        let cfg = random_scenario(i);
        let runs = match simulate_checked(&cfg, Mode::Both) {
            Ok(r) => r,
            Err(e) => return (Err(format!("scenario {i}: {e}")), qoe_runs),
        };
        for (out, metrics) in &runs {
            for (m, c) in metrics.iter().zip(&out.counters) {
                let k = &m.counts;
                if k.created != k.delivered + k.dropped + k.residual
                    || c.created != c.delivered + c.dropped + c.residual
                {
                    return (Err(format!("scenario {i} {} flow {}", out.mode, m.flow_id)), qoe_runs);
                }
                dropped += k.dropped;
            }
        }
        let (qoe, _) = runs.into_iter().nth(1).unwrap();
        qoe_runs.push((cfg, qoe));
    }
    (Ok(format!("{n} scenarios x 2 modes exact, {dropped} drops exercised")), qoe_runs)
}

fn exact_match(flows: &[FlowMetrics], want: &BTreeMap<usize, common::OracleMetrics>) -> Result<(), String> {
    if flows.len() != want.len() {
        return Err(format!("{} flows vs oracle {}", flows.len(), want.len()));
    }
    for m in flows {
        let o = &want[&m.flow_id];
        let got = (m.avg_throughput, m.packet_loss_rate, m.avg_delay, m.avg_jitter);
        if got != (o.throughput, o.plr, o.delay, o.jitter) {
            return Err(format!("flow {}: {got:?} vs oracle {o:?}", m.flow_id));
        }
    }
    Ok(())
}

fn criterion_7(golden_trace: &str) -> Verdict {
    let mut traces = 0;
    let mut packets_max = 0;
    for i in 0..40 {
        let mut cfg = random_scenario(1000 + i);
        // shrink until at most 1000 packets are created
        let rate: f64 = cfg.flows.iter().map(|f| f.initial_rate / f.packet_size as f64).sum();
        cfg.sim_time = (900.0 / rate).clamp(0.05, 30.0);
        for mode in [Mode::Baseline, Mode::Qoe] {
            let runs = simulate_checked(&cfg, mode).map_err(|e| e.to_string())?;
            let out = &runs[0].0;
            let created = out.records.iter().filter(|r| r.kind == TraceKind::Create).count();
            if created > 1000 {
                return Err(format!("scenario {i} created {created} packets"));
            }
            packets_max = packets_max.max(created);
            let text = emit_trace(&out.records);
            let parsed = parse_trace_str(&text).map_err(|e| e.to_string())?;
            if emit_trace(&parsed) != text {
                return Err(format!("scenario {i}: round trip differs"));
            }
            let w = full_window(&cfg);
            for win in [w, Window { start: SimTime(w.end.0 / 3), end: SimTime(w.end.0 * 2 / 3) }] {
                if win.end <= win.start {
                    continue;
                }
                let flows = all_flow_metrics(&parsed, win).map_err(|e| e.to_string())?;
                exact_match(&flows, &oracle(&text, win.start.0, win.end.0))
                    .map_err(|e| format!("scenario {i}: {e}"))?;
            }
            traces += 1;
        }
    }
    let parsed = parse_trace_str(golden_trace).map_err(|e| e.to_string())?;
    if emit_trace(&parsed) != golden_trace {
        return Err("golden trace round trip differs".into());
    }
    Ok(format!(
        "{traces} traces (<= {packets_max} packets) match brute force exactly; golden trace of {} lines round-trips",
        parsed.len()
    ))
}

fn criterion_8() -> Verdict {
    let cfg = ScenarioConfig { seed: 42, ..ScenarioConfig::golden() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(&cfg, Mode::Both, d.path()).map_err(|e| e.to_string())?;
    }
    let mut checked = Vec::new();
    for f in ["trace_baseline.txt", "trace_qoe.txt", "comparison.json", "manifest.json", "mobility.ns2"] {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs between invocations"));
        }
        checked.push(f);
    }
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

fn criterion_9(golden: &[Paired], cfg: &ScenarioConfig) -> Verdict {
    let expected = [0.0015, 0.001, 0.001, 0.001, 0.0015];
    for (f, want) in cfg.flows.iter().zip(expected) {
        if f.packet_size != 200 || ((f.interval() - want) / want).abs() > 1e-5 {
            return Err(format!("interval {} for {} B, expected {want}", f.interval(), f.packet_size));
        }
    }
    let mut counts = Vec::new();
    for p in golden {
        for (i, f) in cfg.flows.iter().enumerate() {
            let created = p.baseline.counters[i].created as i64;
            let want = (cfg.sim_time / f.interval()).floor() as i64;
            if (created - want).abs() > 1 {
                return Err(format!("seed {} flow {i}: {created} emissions, expected {want} +/- 1", p.seed));
            }
            if p.seed == golden[0].seed {
                counts.push(created.to_string());
            }
        }
    }
    Ok(format!("intervals 0.0015/0.001 s; emissions {}", counts.join("/")))
}

fn main() {
    let golden_cfg = ScenarioConfig::golden();
    let mut golden = Vec::new();
    for seed in GOLDEN_SEEDS {
        golden.push(paired(&ScenarioConfig { seed, ..golden_cfg.clone() }));
    }
    let golden_trace = emit_trace(&golden[0].qoe.records);
    let (c6, random_qoe) = criterion_6(100);

    let results: Vec<(u32, &str, Verdict)> = vec![
        (1, "throughput direction and envelope", criterion_1(&golden, &golden_cfg)),
        (2, "packet loss direction", criterion_2(&golden)),
        (3, "jitter and delay direction", criterion_3(&golden)),
        (4, "turn law", criterion_4()),
        (5, "rate envelope", criterion_5(&golden, &random_qoe, &golden_cfg)),
        (6, "conservation", c6),
        (7, "metrics oracle and trace round trip", criterion_7(&golden_trace)),
        (8, "determinism", criterion_8()),
        (9, "golden intervals and emission counts", criterion_9(&golden, &golden_cfg)),
    ];
    drop(golden);

    let mut failed = 0;
    for (n, name, v) in &results {
        match v {
            Ok(d) => println!("criterion {n} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
