//! Per-flow QoE rate controller.
//!
//! Each flow carries two user requirements: the rate it starts at (its
//! maximum) and the lowest rate the user still accepts. A loss on the flow
//! cuts the rate multiplicatively, never below the minimum; once the flow has
//! been quiet for long enough the rate climbs back toward the maximum in
//! fixed additive steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::LossNotification;
use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum QoeError {
    #[error("flow {flow}: rates must be positive (max {rate_max}, min {rate_min})")]
    NonPositiveRate { flow: usize, rate_max: f64, rate_min: f64 },
    #[error("flow {flow}: minimum rate {rate_min} exceeds initial rate {rate_max}")]
    MinAboveMax { flow: usize, rate_max: f64, rate_min: f64 },
    #[error("invalid controller parameter {name} = {value}")]
    BadParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoeParams {
    /// Multiplicative decrease per loss notification.
    pub beta: f64,
    /// Fraction of `rate_max - rate_min` restored per recovery tick.
    pub alpha: f64,
    /// seconds
    pub recovery_period: f64,
    /// Loss-free time required before a tick may raise the rate, seconds.
    pub quiet_threshold: f64,
    /// Losses closer than this to the previous loss do not cut the rate again.
    pub coalesce_window: Option<f64>,
}

impl Default for QoeParams {
    fn default() -> Self {
        QoeParams { beta: 0.1, alpha: 0.2, recovery_period: 5.0, quiet_threshold: 5.0, coalesce_window: None }
    }
}

impl QoeParams {
    pub fn validate(&self) -> Result<(), QoeError> {
        let checks = [
            ("beta", self.beta, self.beta > 0.0 && self.beta < 1.0),
            ("alpha", self.alpha, self.alpha > 0.0 && self.alpha <= 1.0),
            ("recovery_period", self.recovery_period, self.recovery_period > 0.0),
            ("quiet_threshold", self.quiet_threshold, self.quiet_threshold >= 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(QoeError::BadParam { name, value });
            }
        }
        if let Some(w) = self.coalesce_window {
            if !(w >= 0.0) {
                return Err(QoeError::BadParam { name: "coalesce_window", value: w });
            }
        }
        Ok(())
    }

    /// Ticks needed to climb from `rate_min` to `rate_max`.
    pub fn ticks_to_recover(&self) -> u32 {
        (1.0 / self.alpha).ceil() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateState {
    pub flow_id: usize,
    /// bytes/s
    pub rate_max: f64,
    pub rate_min: f64,
    pub rate_current: f64,
    pub last_loss_time: Option<SimTime>,
    pub last_change_time: SimTime,
}

/// Relative distance under which a recovering rate is considered back at max.
const SNAP_EPS: f64 = 1e-9;

impl RateState {
    pub fn new(flow_id: usize, rate_max: f64, rate_min: f64) -> Result<Self, QoeError> {
        if !(rate_max > 0.0 && rate_min > 0.0) {
            return Err(QoeError::NonPositiveRate { flow: flow_id, rate_max, rate_min });
        }
        if rate_min > rate_max {
            return Err(QoeError::MinAboveMax { flow: flow_id, rate_max, rate_min });
        }
        Ok(RateState {
            flow_id,
            rate_max,
            rate_min,
            rate_current: rate_max,
            last_loss_time: None,
            last_change_time: SimTime::ZERO,
        })
    }

    pub fn on_loss(&self, params: &QoeParams, note: &LossNotification) -> RateState {
        debug_assert_eq!(note.flow_id, self.flow_id);
        let mut next = *self;
        let coalesced = match (params.coalesce_window, self.last_loss_time) {
            (Some(w), Some(prev)) => note.time.as_secs_f64() - prev.as_secs_f64() < w,
            _ => false,
        };
        next.last_loss_time = Some(note.time);
        if self.rate_current > self.rate_min && !coalesced {
            next.rate_current = (self.rate_current * (1.0 - params.beta)).max(self.rate_min);
            next.last_change_time = note.time;
        }
        next
    }

    pub fn on_recovery_tick(&self, params: &QoeParams, now: SimTime) -> RateState {
        let quiet = match self.last_loss_time {
            Some(t) => now.as_secs_f64() - t.as_secs_f64() >= params.quiet_threshold - 1e-9,
            None => true,
        };
        let mut next = *self;
        if quiet && self.rate_current < self.rate_max {
            let step = params.alpha * (self.rate_max - self.rate_min);
            let mut r = (self.rate_current + step).min(self.rate_max);
            if self.rate_max - r <= SNAP_EPS * self.rate_max {
                r = self.rate_max;
            }
            next.rate_current = r;
            next.last_change_time = now;
        }
        next
    }

    pub fn at_max(&self) -> bool {
        self.rate_current == self.rate_max
    }
}

/// Input to [`attach`]: one flow's configured envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEnvelope {
    pub flow_id: usize,
    pub initial_rate: f64,
    pub min_rate: f64,
}

pub fn attach(flows: &[FlowEnvelope]) -> Result<Vec<RateState>, QoeError> {
    flows.iter().map(|f| RateState::new(f.flow_id, f.initial_rate, f.min_rate)).collect()
}
