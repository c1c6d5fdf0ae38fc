//! Multiuser feedback scheduling: K UEs contend for N uplink feedback
//! resources each round.
//!
//! A round is a pure function of the UE states (and an RNG for the
//! probabilistic scheme). UEs that do not deliver are acquired open-loop,
//! or, under periodic reporting, keep their last acquired value.

mod sim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelVector;
use crate::error::{Error, Result};
use crate::protocol::{retrieve_csi, AcquiredChannel, Provenance, QuantizedUpdate};

pub use sim::{
    derive_seed, prepare_links, run_rounds, scenario_traces, simulate_multiuser, write_round_log,
    MultiuserResult, MultiuserScenario, RoundParams, RoundRecord,
};

/// `mean_m |predicted_m - estimated_m|`.
pub fn compute_delta(predicted: &ChannelVector, estimated: &ChannelVector) -> Result<f64> {
    estimated.check_len(predicted.len(), "compute_delta")?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = predicted.iter().zip(estimated.iter()).map(|(a, b)| (a - b).norm()).sum();
    Ok(s / predicted.len() as f64)
}

/// `exp(delta) / (1 + exp(delta))`, evaluated without overflow.
pub fn glauber_probability(delta: f64) -> f64 {
    if delta >= 0.0 {
        1.0 / (1.0 + (-delta).exp())
    } else {
        let e = delta.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Probabilistic,
    ErrorBin,
    Deterministic,
    Periodic,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Probabilistic,
        Scheme::ErrorBin,
        Scheme::Deterministic,
        Scheme::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Probabilistic => "probabilistic",
            Scheme::ErrorBin => "error_bin",
            Scheme::Deterministic => "deterministic",
            Scheme::Periodic => "periodic",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Contention slot of the error-bin scheme: `mini_slots` one-bit slots and
/// equally spaced error bins over `[delta_min, delta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentionConfig {
    pub mini_slots: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_diff: f64,
}

impl Default for ContentionConfig {
    fn default() -> Self {
        Self {
            mini_slots: 10,
            delta_min: 0.0,
            delta_max: 1.0,
            delta_diff: 0.1,
        }
    }
}

impl ContentionConfig {
    pub fn bins(&self) -> usize {
        ((self.delta_max - self.delta_min) / self.delta_diff).round() as usize
    }

    /// Bin edges `delta_min, delta_min + diff, .., delta_max`.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins())
            .map(|i| self.delta_min + i as f64 * self.delta_diff)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_diff > 0.0) || !(self.delta_max > self.delta_min) {
            return Err(Error::InvalidConfig(
                "contention bins need delta_diff > 0 and delta_max > delta_min".into(),
            ));
        }
        let span = (self.delta_max - self.delta_min) / self.delta_diff;
        if (span - span.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "delta_diff must divide the bin range evenly".into(),
            ));
        }
        if self.mini_slots == 0 || self.mini_slots != self.bins() {
            return Err(Error::InvalidConfig(format!(
                "mini_slots ({}) must equal the number of error bins ({})",
                self.mini_slots,
                self.bins()
            )));
        }
        Ok(())
    }

    /// 1-based bin index, clamped into `1..=bins`.
    pub fn bin_of(&self, delta: f64) -> usize {
        let j = ((delta - self.delta_min) / self.delta_diff).floor();
        let j = if j.is_nan() { 0.0 } else { j };
        (j.max(0.0) as usize + 1).min(self.bins())
    }

    /// 1-based mini-slot: the top bin signals first.
    pub fn mini_slot_of(&self, delta: f64) -> usize {
        self.mini_slots + 1 - self.bin_of(delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceGrid {
    pub data_slots: usize,
    #[serde(default)]
    pub contention: Option<ContentionConfig>,
}

impl ResourceGrid {
    pub fn new(data_slots: usize) -> Self {
        Self {
            data_slots,
            contention: None,
        }
    }

    pub fn with_contention(data_slots: usize, contention: ContentionConfig) -> Self {
        Self {
            data_slots,
            contention: Some(contention),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_slots == 0 {
            return Err(Error::InvalidConfig("data_slots must be >= 1".into()));
        }
        if let Some(c) = &self.contention {
            c.validate()?;
        }
        Ok(())
    }
}

/// What happened to one UE in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum Decision {
    Idle,
    Won { resource: usize },
    Collided { resource: usize },
    Dropped { mini_slot: usize },
}

/// A UE at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub ue_id: u64,
    pub delta: f64,
    /// Twin prediction for this round.
    pub predicted: ChannelVector,
    /// Payload the UE sends if it gets a resource.
    pub pending: QuantizedUpdate,
    /// Channel the BS acquired last round.
    pub held: ChannelVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Data,
    MiniSlot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub kind: SlotKind,
    /// 0-based data resource or 1-based mini-slot.
    pub slot: usize,
    pub ues: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub winners: Vec<u64>,
    pub collisions: Vec<Collision>,
    pub dropped: Vec<u64>,
    /// Per UE, in input order.
    pub decisions: Vec<Decision>,
    pub acquired: Vec<AcquiredChannel>,
    /// UEs that transmitted a payload or a contention bit.
    pub attempts: usize,
    /// Payload bits sent on data resources, delivered or not.
    pub data_bits: u64,
    pub contention_bits: u64,
}

impl RoundOutcome {
    pub fn bits(&self) -> u64 {
        self.data_bits + self.contention_bits
    }
}

#[derive(Debug, Clone, Copy)]
enum Fallback {
    OpenLoop,
    Hold,
}

fn finish(
    states: &[UeState],
    decisions: Vec<Decision>,
    collisions: Vec<Collision>,
    attempts: usize,
    data_bits: u64,
    contention_bits: u64,
    fallback: Fallback,
) -> Result<RoundOutcome> {
    let mut winners = Vec::new();
    let mut dropped = Vec::new();
    let mut acquired = Vec::with_capacity(states.len());
    for (s, d) in states.iter().zip(&decisions) {
        match d {
            Decision::Won { .. } => {
                winners.push(s.ue_id);
                acquired.push(retrieve_csi(&s.predicted, &s.pending)?);
            }
            other => {
                if let Decision::Dropped { .. } = other {
                    dropped.push(s.ue_id);
                }
                acquired.push(match fallback {
                    Fallback::OpenLoop => AcquiredChannel {
                        channel: s.predicted.clone(),
                        provenance: Provenance::OpenLoop,
                    },
                    Fallback::Hold => AcquiredChannel {
                        channel: s.held.clone(),
                        provenance: Provenance::Held,
                    },
                });
            }
        }
    }
    Ok(RoundOutcome {
        winners,
        collisions,
        dropped,
        decisions,
        acquired,
        attempts,
        data_bits,
        contention_bits,
    })
}

/// Test knobs for the probabilistic scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbabilisticOptions {
    /// UE `k` always uses resource `k mod N`.
    pub dedicated_resources: bool,
    /// Every UE attempts regardless of threshold and probability.
    pub force_attempts: bool,
}

/// Resolves transmissions on data resources: a resource with exactly one
/// transmitter delivers it; two or more collide.
fn resolve_data(
    states: &[UeState],
    choice: &[Option<usize>],
    slots: usize,
    decisions: &mut [Decision],
) -> (Vec<Collision>, u64) {
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); slots];
    let mut bits = 0;
    for (k, c) in choice.iter().enumerate() {
        if let Some(r) = c {
            users[*r].push(k);
            bits += states[k].pending.bits();
        }
    }
    let mut collisions = Vec::new();
    for (r, us) in users.iter().enumerate() {
        match us.len() {
            0 => {}
            1 => decisions[us[0]] = Decision::Won { resource: r },
            _ => {
                for &k in us {
                    decisions[k] = Decision::Collided { resource: r };
                }
                collisions.push(Collision {
                    kind: SlotKind::Data,
                    slot: r,
                    ues: us.iter().map(|&k| states[k].ue_id).collect(),
                });
            }
        }
    }
    (collisions, bits)
}

/// Each UE with `delta > threshold` attempts with the Glauber probability
/// on a uniformly drawn resource. Every UE consumes the same two draws
/// whether or not it is eligible, so outcomes for different thresholds
/// share their randomness.
pub fn probabilistic_round<R: Rng + ?Sized>(
    states: &[UeState],
    data_slots: usize,
    threshold: f64,
    options: ProbabilisticOptions,
    rng: &mut R,
) -> Result<RoundOutcome> {
    if data_slots == 0 {
        return Err(Error::InvalidConfig("data_slots must be >= 1".into()));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidConfig("threshold must be >= 0".into()));
    }
    let mut choice = vec![None; states.len()];
    for (k, s) in states.iter().enumerate() {
        let u: f64 = rng.random();
        let drawn = rng.random_range(0..data_slots);
        let attempt = options.force_attempts
            || (s.delta > threshold && u < glauber_probability(s.delta));
        if attempt {
            choice[k] = Some(if options.dedicated_resources {
                k % data_slots
            } else {
                drawn
            });
        }
    }
    let attempts = choice.iter().flatten().count();
    let mut decisions = vec![Decision::Idle; states.len()];
    let (collisions, bits) = resolve_data(states, &choice, data_slots, &mut decisions);
    finish(states, decisions, collisions, attempts, bits, 0, Fallback::OpenLoop)
}

/// Error-bin contention: eligible UEs signal one bit in the mini-slot of
/// their error bin; sole signalers are admitted to data slots in mini-slot
/// order until the slots run out, the rest are dropped.
pub fn error_bin_round(states: &[UeState], grid: &ResourceGrid, threshold: f64) -> Result<RoundOutcome> {
    grid.validate()?;
    let c = grid.contention.ok_or_else(|| {
        Error::InvalidConfig("error-bin scheme needs a contention slot in the resource grid".into())
    })?;
    let mut signal: Vec<Vec<usize>> = vec![Vec::new(); c.mini_slots + 1];
    for (k, s) in states.iter().enumerate() {
        if s.delta > threshold {
            signal[c.mini_slot_of(s.delta)].push(k);
        }
    }
    let mut decisions = vec![Decision::Idle; states.len()];
    let mut collisions = Vec::new();
    let mut attempts = 0;
    let mut data_bits = 0;
    let mut next_slot = 0;
    for (q, us) in signal.iter().enumerate().skip(1) {
        attempts += us.len();
        match us.len() {
            0 => {}
            1 if next_slot < grid.data_slots => {
                decisions[us[0]] = Decision::Won { resource: next_slot };
                data_bits += states[us[0]].pending.bits();
                next_slot += 1;
            }
            1 => decisions[us[0]] = Decision::Dropped { mini_slot: q },
            _ => {
                for &k in us {
                    decisions[k] = Decision::Collided { resource: q };
                }
                collisions.push(Collision {
                    kind: SlotKind::MiniSlot,
                    slot: q,
                    ues: us.iter().map(|&k| states[k].ue_id).collect(),
                });
            }
        }
    }
    finish(states, decisions, collisions, attempts, data_bits, attempts as u64, Fallback::OpenLoop)
}

/// All UEs transmit at once on the same resource.
pub fn deterministic_round(states: &[UeState]) -> Result<RoundOutcome> {
    let choice = vec![Some(0); states.len()];
    let mut decisions = vec![Decision::Idle; states.len()];
    let (collisions, bits) = resolve_data(states, &choice, 1, &mut decisions);
    finish(states, decisions, collisions, states.len(), bits, 0, Fallback::OpenLoop)
}

/// Round-robin: UEs sorted by id form groups of `data_slots`; group
/// `round % groups` reports, everybody else keeps the held value.
pub fn periodic_round(states: &[UeState], data_slots: usize, round_index: usize) -> Result<RoundOutcome> {
    if data_slots == 0 {
        return Err(Error::InvalidConfig("data_slots must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by_key(|&k| states[k].ue_id);
    let groups = states.len().div_ceil(data_slots).max(1);
    let g = round_index % groups;
    let mut decisions = vec![Decision::Idle; states.len()];
    let mut bits = 0;
    let mut attempts = 0;
    for (rank, &k) in order.iter().enumerate() {
        if rank / data_slots == g {
            decisions[k] = Decision::Won {
                resource: rank % data_slots,
            };
            bits += states[k].pending.bits();
            attempts += 1;
        }
    }
    finish(states, decisions, Vec::new(), attempts, bits, 0, Fallback::Hold)
}
