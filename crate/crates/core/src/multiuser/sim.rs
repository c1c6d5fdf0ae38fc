use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_delta, deterministic_round, error_bin_round, periodic_round, probabilistic_round,
    ContentionConfig, ProbabilisticOptions, ResourceGrid, RoundOutcome, Scheme, UeState,
};
use crate::channel::{generate_ar_trace, ArTraceConfig, ChannelTrace, ChannelVector};
use crate::error::{Error, Result};
use crate::metrics::{ChannelMatrix, MetricAccumulator, MetricSummary};
use crate::protocol::{AcquiredChannel, LinkConfig, PreparedLink};

/// SplitMix64 of `base` mixed with `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiuserScenario {
    pub ues: usize,
    pub grid: ResourceGrid,
    pub threshold: f64,
    pub scheme: Scheme,
    pub rounds: usize,
    pub seed: u64,
    /// Template for every UE's trace; length and seed are set per UE.
    pub channel: ArTraceConfig,
    pub link: LinkConfig,
    pub probabilistic: ProbabilisticOptions,
}

impl Default for MultiuserScenario {
    fn default() -> Self {
        Self {
            ues: 30,
            grid: ResourceGrid::with_contention(10, ContentionConfig::default()),
            threshold: 0.3,
            scheme: Scheme::Probabilistic,
            rounds: 30,
            seed: 0,
            channel: ArTraceConfig::ar1(16, 0, 0.99, 0),
            link: LinkConfig {
                mlabe: false,
                ..Default::default()
            },
            probabilistic: ProbabilisticOptions::default(),
        }
    }
}

impl MultiuserScenario {
    pub fn validate(&self) -> Result<()> {
        if self.ues == 0 {
            return Err(Error::InvalidConfig("ues must be >= 1".into()));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidConfig("threshold must be >= 0".into()));
        }
        self.grid.validate()?;
        if self.scheme == Scheme::ErrorBin && self.grid.contention.is_none() {
            return Err(Error::InvalidConfig(
                "error-bin scheme needs grid.contention".into(),
            ));
        }
        self.link.validate()
    }

    pub fn round_params(&self) -> RoundParams {
        RoundParams {
            scheme: self.scheme,
            threshold: self.threshold,
            grid: self.grid,
            rounds: self.rounds,
            seed: self.seed,
            probabilistic: self.probabilistic,
        }
    }
}

/// One trace per UE, long enough for link preparation plus `rounds`.
pub fn scenario_traces(s: &MultiuserScenario) -> Result<Vec<ChannelTrace>> {
    (0..s.ues as u64)
        .map(|k| {
            generate_ar_trace(&ArTraceConfig {
                ue_id: k,
                length: s.link.stream_start() + s.rounds.max(1),
                seed: derive_seed(s.seed, k),
                ..s.channel.clone()
            })
        })
        .collect()
}

/// Prepares every UE link in parallel.
pub fn prepare_links(traces: &[ChannelTrace], link: &LinkConfig) -> Result<Vec<PreparedLink>> {
    traces
        .par_iter()
        .map(|t| PreparedLink::prepare(t, link))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundParams {
    pub scheme: Scheme,
    pub threshold: f64,
    pub grid: ResourceGrid,
    pub rounds: usize,
    pub seed: u64,
    pub probabilistic: ProbabilisticOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub scheme: Scheme,
    pub threshold: f64,
    pub attempts: usize,
    /// Collision events (data resources or mini-slots).
    pub collisions: usize,
    pub collided_ues: usize,
    pub winners: Vec<u64>,
    pub dropped: usize,
    pub bits: u64,
    pub nmse: f64,
    /// `||h_bs_k - h_k||^2 / ||H||_F^2`; sums to `nmse`.
    pub per_ue_nmse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiuserResult {
    pub records: Vec<RoundRecord>,
    /// `None` when no round was simulated.
    pub summary: Option<MetricSummary>,
    /// Acquired channels, `[round][ue]`.
    pub acquired: Vec<Vec<AcquiredChannel>>,
    pub total_bits: u64,
}

impl MultiuserResult {
    pub fn mean_bits_per_round(&self) -> Option<f64> {
        (!self.records.is_empty()).then(|| self.total_bits as f64 / self.records.len() as f64)
    }
}

fn scheme_stream(s: Scheme) -> u64 {
    0x6d75_0000 + s as u64
}

/// Runs `p.rounds` rounds from the links' current position. The links are
/// cloned, so the same prepared set can be reused across schemes and
/// thresholds.
pub fn run_rounds(links: &[PreparedLink], p: &RoundParams) -> Result<MultiuserResult> {
    p.grid.validate()?;
    if let Some(short) = links.iter().find(|l| l.remaining() < p.rounds) {
        return Err(Error::TraceTooShort {
            required: short.time() + p.rounds,
            actual: short.trace().len(),
        });
    }
    let mut links = links.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, scheme_stream(p.scheme)));
    let mut acc = MetricAccumulator::default();
    let mut records = Vec::with_capacity(p.rounds);
    let mut acquired_all = Vec::with_capacity(p.rounds);
    let mut total_bits = 0;

    for round in 0..p.rounds {
        let mut truth = Vec::with_capacity(links.len());
        let mut states = Vec::with_capacity(links.len());
        for l in &links {
            let h = l.estimate()?.clone();
            let held = l.last_acquired().clone();
            let (predicted, pending) = if p.scheme == Scheme::Periodic {
                (held.clone(), l.raw_feedback(&h))
            } else {
                let pred = l.predict()?;
                let fb = l.feedback(&pred, &h)?;
                (pred, fb)
            };
            states.push(UeState {
                ue_id: l.trace().ue_id(),
                delta: compute_delta(&predicted, &h)?,
                predicted,
                pending,
                held,
            });
            truth.push(h);
        }
        let out: RoundOutcome = match p.scheme {
            Scheme::Probabilistic => {
                probabilistic_round(&states, p.grid.data_slots, p.threshold, p.probabilistic, &mut rng)?
            }
            Scheme::ErrorBin => error_bin_round(&states, &p.grid, p.threshold)?,
            Scheme::Deterministic => deterministic_round(&states)?,
            Scheme::Periodic => periodic_round(&states, p.grid.data_slots, round)?,
        };
        for (l, a) in links.iter_mut().zip(&out.acquired) {
            l.commit(a.channel.clone())?;
        }

        let est: Vec<ChannelVector> = out.acquired.iter().map(|a| a.channel.clone()).collect();
        let h_mat = ChannelMatrix::from_columns(&truth)?;
        acc.push(&ChannelMatrix::from_columns(&est)?, &h_mat)?;
        let den: f64 = truth.iter().map(ChannelVector::norm_sqr).sum();
        let per_ue: Vec<f64> = est.iter().zip(&truth).map(|(a, h)| (a - h).norm_sqr() / den).collect();
        total_bits += out.bits();
        records.push(RoundRecord {
            round,
            scheme: p.scheme,
            threshold: p.threshold,
            attempts: out.attempts,
            collisions: out.collisions.len(),
            collided_ues: out.collisions.iter().map(|c| c.ues.len()).sum(),
            winners: out.winners.clone(),
            dropped: out.dropped.len(),
            bits: out.bits(),
            nmse: per_ue.iter().sum(),
            per_ue_nmse: per_ue,
        });
        acquired_all.push(out.acquired);
    }
    let summary = if records.is_empty() {
        None
    } else {
        Some(acc.summary()?)
    };
    Ok(MultiuserResult {
        records,
        summary,
        acquired: acquired_all,
        total_bits,
    })
}

/// Generates traces, prepares links and runs the rounds.
pub fn simulate_multiuser(s: &MultiuserScenario) -> Result<MultiuserResult> {
    s.validate()?;
    let traces = scenario_traces(s)?;
    let links = prepare_links(&traces, &s.link)?;
    run_rounds(&links, &s.round_params())
}

/// Round log as line-delimited JSON.
pub fn write_round_log<W: Write>(mut w: W, records: &[RoundRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::TrainConfig;
    use crate::protocol::{run_single_ue_loop, SplitPolicy};

    fn small(scheme: Scheme) -> MultiuserScenario {
        let mut s = MultiuserScenario {
            ues: 4,
            scheme,
            rounds: 12,
            grid: ResourceGrid::with_contention(2, ContentionConfig::default()),
            channel: ArTraceConfig::ar1(4, 0, 0.99, 0),
            ..Default::default()
        };
        s.link.lags = 2;
        s.link.train = TrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            ..Default::default()
        };
        s.link.split = SplitPolicy {
            train: 300,
            pf_window: 48,
        };
        s
    }

    #[test]
    fn deterministic_given_seed() {
        for scheme in Scheme::ALL {
            let a = simulate_multiuser(&small(scheme)).unwrap();
            let b = simulate_multiuser(&small(scheme)).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.records.len(), 12);
            for r in &a.records {
                assert!(r.winners.len() <= 2 || scheme == Scheme::Deterministic);
                assert!((r.per_ue_nmse.iter().sum::<f64>() - r.nmse).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_rounds_is_undefined() {
        let s = MultiuserScenario {
            rounds: 0,
            ..small(Scheme::Probabilistic)
        };
        let r = simulate_multiuser(&s).unwrap();
        assert!(r.records.is_empty() && r.summary.is_none() && r.mean_bits_per_round().is_none());
    }

    #[test]
    fn dedicated_forced_matches_single_ue() {
        let mut s = small(Scheme::Probabilistic);
        s.ues = 2;
        s.grid = ResourceGrid::new(2);
        s.probabilistic = ProbabilisticOptions {
            dedicated_resources: true,
            force_attempts: true,
        };
        s.link.mlabe = false;
        let mu = simulate_multiuser(&s).unwrap();
        for (k, trace) in scenario_traces(&s).unwrap().iter().enumerate() {
            let single = run_single_ue_loop(&trace.slice(0..s.link.stream_start() + s.rounds), &s.link).unwrap();
            for (r, round) in mu.acquired.iter().enumerate() {
                assert_eq!(round[k], single.acquired[r]);
            }
        }
    }

    #[test]
    fn round_log_is_json_lines() {
        let r = simulate_multiuser(&small(Scheme::ErrorBin)).unwrap();
        let mut buf = Vec::new();
        write_round_log(&mut buf, &r.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        let first: RoundRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, r.records[0]);
    }
}
