#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wimax_qoe::mac::TransmitParams;
use wimax_qoe::scenario::{FlowConfig, ScenarioConfig};

/// Receive threshold giving a two-ray coverage radius of `r` meters.
pub fn threshold_for_radius(r: f64) -> f64 {
    let tx = TransmitParams::default();
    tx.pt * tx.gt * tx.gr * tx.ht.powi(2) * tx.hr.powi(2) / (tx.system_loss * r.powi(4))
}

/// Scenario `i` of a fixed pseudo-random family: varied grids, loads,
/// coverage and seeds, sized to stay fast.
pub fn random_scenario(i: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + i);
    let mut cfg = ScenarioConfig::golden();
    cfg.seed = rng.gen();
    cfg.grid.blocks_x = rng.gen_range(1..=5);
    cfg.grid.blocks_y = rng.gen_range(1..=5);
    cfg.grid.block_len = rng.gen_range(80.0..300.0);
    cfg.speed.v_min = rng.gen_range(3.0..15.0);
    cfg.speed.v_max = cfg.speed.v_min + rng.gen_range(0.0..10.0);
    cfg.sim_time = rng.gen_range(10.0..40.0);
    cfg.mac.frame_duration = [0.0025, 0.005, 0.01][rng.gen_range(0..3)];
    cfg.mac.queue_capacity = rng.gen_range(3..60);
    cfg.mac.nominal_phy_rate = rng.gen_range(50_000.0..1_000_000.0);
    cfg.channel.rx_power_threshold = threshold_for_radius(rng.gen_range(60.0..700.0));
    cfg.channel.bs_position =
        Some([rng.gen_range(0.0..cfg.grid.width().max(1.0)), rng.gen_range(0.0..cfg.grid.height().max(1.0))]);
    cfg.qoe.beta = rng.gen_range(0.05..0.5);
    cfg.qoe.alpha = rng.gen_range(0.1..0.6);
    cfg.qoe.recovery_period = rng.gen_range(0.5..5.0);
    // the recovery bound of ceil(1/alpha) periods assumes the quiet gate fits in one period
    cfg.qoe.quiet_threshold = rng.gen_range(0.25..=cfg.qoe.recovery_period);
    let n = rng.gen_range(1..=10);
    let budget = 12_000.0; // packets per second across all flows
    cfg.flows = (0..n)
        .map(|_| {
            let size = rng.gen_range(40..1500u32);
            let max_rate = (size as f64 * budget / n as f64).min(rng.gen_range(5_000.0..400_000.0)).round().max(1.0);
            let min_rate = (max_rate * rng.gen_range(0.3..1.0)).round().max(1.0);
            let mut f = FlowConfig::new(size, max_rate, min_rate);
            f.start_time = rng.gen_range(0.0..1.0);
            f
        })
        .collect();
    cfg.validate().expect("generated scenario is valid");
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub throughput: f64,
    pub plr: f64,
    pub delay: Option<f64>,
    pub jitter: Option<f64>,
}

fn micros(tok: &str) -> u64 {
    let (s, f) = tok.split_once('.').expect("fixed-point time");
    s.parse::<u64>().unwrap() * 1_000_000 + f.parse::<u64>().unwrap()
}

/// Brute-force per-flow metrics straight from trace text.
pub fn oracle(text: &str, start_us: u64, end_us: u64) -> BTreeMap<usize, OracleMetrics> {
    struct Acc {
        created: u64,
        dropped: u64,
        bytes: u64,
        born: HashMap<u64, u64>,
        delays: Vec<(u64, u64)>,
    }
    let mut flows: BTreeMap<usize, Acc> = BTreeMap::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let t = micros(f[0]);
        let flow: usize = f[2].parse().unwrap();
        let seq: u64 = f[3].parse().unwrap();
        let size: u64 = f[4].parse().unwrap();
        let acc = flows.entry(flow).or_insert_with(|| Acc {
            created: 0,
            dropped: 0,
            bytes: 0,
            born: HashMap::new(),
            delays: Vec::new(),
        });
        match f[1] {
            "create" => {
                acc.created += 1;
                acc.born.insert(seq, t);
            }
            "drop" => acc.dropped += 1,
            "recv" => {
                if t >= start_us && t <= end_us {
                    acc.bytes += size;
                }
                acc.delays.push((seq, t - acc.born[&seq]));
            }
            _ => {}
        }
    }
    flows
        .into_iter()
        .filter(|(_, a)| a.created > 0)
        .map(|(flow, mut a)| {
            a.delays.sort();
            let n = a.delays.len();
            let delay = (n > 0).then(|| a.delays.iter().map(|d| d.1 as u128).sum::<u128>() as f64 / n as f64 / 1e6);
            let jitter = (n > 1).then(|| {
                let mut s = 0u128;
                for k in 1..n {
                    s += a.delays[k].1.abs_diff(a.delays[k - 1].1) as u128;
                }
                s as f64 / (n - 1) as f64 / 1e6
            });
            let m = OracleMetrics {
                throughput: a.bytes as f64 / ((end_us - start_us) as f64 / 1e6),
                plr: a.dropped as f64 / a.created as f64,
                delay,
                jitter,
            };
            (flow, m)
        })
        .collect()
}
