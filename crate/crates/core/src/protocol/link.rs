use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    baseline_without_ml, compute_update, encode_feedback, encode_raw, fit_pf_lagged,
    retrieve_csi, verify_pf, AcquiredChannel, PfProbe, PredictorFunction, Provenance,
    QuantizedUpdate, Verification,
};
use crate::channel::{ChannelTrace, ChannelVector};
use crate::error::{Error, Result};
use crate::metrics::{ChannelMatrix, MetricAccumulator, MetricSummary};
use crate::predictors::{train, Dataset, ModelSpec, PredictorModel, TrainConfig};
use crate::predictors::Shape;
use crate::quantizer::{component_rms, overhead_bits, quantize_reconstruct, Bits, QuantizerConfig};

/// Segments of a trace: `train` samples for the channel predictor, then a
/// window of `pf_window` samples whose first half fits the predictor
/// function and second half verifies it. The rest is streamed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    pub train: usize,
    pub pf_window: usize,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            train: 2000,
            pf_window: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub lags: usize,
    pub predictor: ModelSpec,
    /// Training defaults with a learning rate of 1e-2.
    pub train: TrainConfig,
    /// Uplink resolution of updates and of the without-ML baseline.
    pub bits: Bits,
    /// Resolution of the CSI reported for predictor training and PF fitting.
    pub training_bits: Bits,
    /// Quantizer range in units of the calibration RMS.
    pub clip_factor: f64,
    pub pf_order: usize,
    pub verify_threshold: f64,
    pub max_retrain: usize,
    pub suppression_tol: f64,
    /// Bits per real value when reporting the PF on the downlink.
    pub pf_bits: u32,
    /// Check (and if needed refit) the PF every this many streamed samples.
    pub refresh_interval: Option<usize>,
    /// Also run the baseline that replicates the channel predictor at the UE.
    pub mlabe: bool,
    pub split: SplitPolicy,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            lags: 20,
            predictor: ModelSpec::LinearAr,
            train: TrainConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            bits: Bits::Finite(2),
            training_bits: Bits::Infinite,
            clip_factor: 4.0,
            pf_order: 1,
            verify_threshold: 0.05,
            max_retrain: 3,
            suppression_tol: 0.0,
            pf_bits: 16,
            refresh_interval: None,
            mlabe: true,
            split: SplitPolicy::default(),
            seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.lags == 0 {
            bad.push("lags must be >= 1".to_string());
        }
        if let Err(e) = self.predictor.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.train.validate() {
            bad.push(e.to_string());
        }
        for b in [self.bits, self.training_bits] {
            if let Err(e) = QuantizerConfig::new(b, 1.0) {
                bad.push(e.to_string());
            }
        }
        if !(self.clip_factor > 0.0 && self.clip_factor.is_finite()) {
            bad.push(format!("clip_factor must be > 0, got {}", self.clip_factor));
        }
        if self.pf_order == 0 {
            bad.push("pf_order must be >= 1".into());
        }
        if !(self.verify_threshold >= 0.0) {
            bad.push("verify_threshold must be >= 0".into());
        }
        if !(self.suppression_tol >= 0.0) {
            bad.push("suppression_tol must be >= 0".into());
        }
        if !(1..=64).contains(&self.pf_bits) {
            bad.push(format!("pf_bits must be in 1..=64, got {}", self.pf_bits));
        }
        if self.refresh_interval == Some(0) {
            bad.push("refresh_interval must be >= 1".into());
        }
        if self.split.pf_window < 2 {
            bad.push("split.pf_window must be >= 2".into());
        }
        if self.split.train < self.lags.max(self.pf_order) + 2 {
            bad.push(format!(
                "split.train must be >= {} for {} lags",
                self.lags.max(self.pf_order) + 2,
                self.lags
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }

    /// Samples consumed before streaming starts.
    pub fn stream_start(&self) -> usize {
        self.split.train + self.split.pf_window
    }
}

/// One UE link after predictor training and PF fitting, positioned at the
/// start of the stream. BS and UE share this state: both predict from the
/// channel the BS has acquired so far.
#[derive(Debug, Clone)]
pub struct PreparedLink {
    trace: Arc<ChannelTrace>,
    cp: PredictorModel,
    pf: PredictorFunction,
    verification: Verification,
    retrains: usize,
    q_update: QuantizerConfig,
    q_raw: QuantizerConfig,
    suppression_tol: f64,
    verify_threshold: f64,
    /// Acquired channel for `t = log_start ..`.
    log: Vec<ChannelVector>,
    log_start: usize,
}

impl PreparedLink {
    /// Normalizes `trace`, trains the channel predictor, fits and verifies
    /// the PF, retraining with a fresh seed on rejection.
    pub fn prepare(trace: &ChannelTrace, cfg: &LinkConfig) -> Result<Self> {
        cfg.validate()?;
        let (trace, _) = trace.normalized();
        let s = cfg.split.train;
        let l = cfg.split.pf_window;
        let half = l / 2;
        let required = cfg.stream_start() + 1;
        if trace.len() < required {
            return Err(Error::TraceTooShort {
                required,
                actual: trace.len(),
            });
        }
        let h = trace.samples();
        let q_train = match cfg.training_bits {
            Bits::Infinite => QuantizerConfig::lossless(),
            b => QuantizerConfig::calibrated(b, cfg.clip_factor, &h[..s])?,
        };
        let q_raw = match cfg.bits {
            Bits::Infinite => QuantizerConfig::lossless(),
            b => QuantizerConfig::calibrated(b, cfg.clip_factor, &h[..s])?,
        };
        let reported: Vec<ChannelVector> =
            h[..s + l].iter().map(|v| quantize_reconstruct(v, &q_train)).collect();

        let spec = cfg.predictor.with_default_time_scale(s as f64);
        let shape = Shape::for_antennas(trace.antennas(), cfg.lags, 1);
        let data = Dataset::from_trace(
            &ChannelTrace::new(trace.ue_id(), trace.antennas(), reported[..s].to_vec())?,
            cfg.lags,
            1,
            0.0,
        )?;
        let nv = (data.len() / 10).max(1);
        if data.len() <= nv {
            return Err(Error::TraceTooShort {
                required: cfg.lags + 3,
                actual: s,
            });
        }
        let (tr, va) = (data.subset(0..data.len() - nv), data.subset(data.len() - nv..data.len()));

        let p = cfg.pf_order;
        let probes: Vec<PfProbe> = (s + half..s + l)
            .map(|t| PfProbe {
                past: (1..=p).map(|e| reported[t - e].clone()).collect(),
                current: h[t].clone(),
            })
            .collect();

        let mut last_mse = f64::NAN;
        for attempt in 0..=cfg.max_retrain {
            let seed = cfg.seed.wrapping_add(attempt as u64);
            let init = PredictorModel::new(spec.clone(), shape, seed)?;
            let tc = TrainConfig {
                seed: cfg.train.seed.wrapping_add(attempt as u64),
                ..cfg.train.clone()
            };
            let cp = train(&init, &tr, Some(&va), &tc)?.model;

            let mut predicted = Vec::with_capacity(half);
            let mut lags = Vec::with_capacity(half);
            for t in s..s + half {
                predicted.push(cp.predict(&reported[t - cfg.lags..t], t as f64)?.remove(0));
                lags.push((1..=p).map(|e| &reported[t - e]).collect());
            }
            let pf = fit_pf_lagged(&predicted, &lags)?.with_window_id(attempt as u64);
            let verification = verify_pf(&pf, &probes, cfg.verify_threshold)?;
            last_mse = verification.mse;
            if !verification.accepted {
                continue;
            }

            let omegas = probes
                .iter()
                .map(|pr| {
                    let past: Vec<&ChannelVector> = pr.past.iter().collect();
                    Ok(&pf.predict(&past)? - &pr.current)
                })
                .collect::<Result<Vec<_>>>()?;
            let rms = component_rms(&omegas);
            let q_update = match cfg.bits {
                Bits::Infinite => QuantizerConfig::lossless(),
                b if rms > 0.0 => QuantizerConfig::new(b, cfg.clip_factor * rms)?,
                b => QuantizerConfig::new(b, q_raw.clip)?,
            };
            let back = cfg.lags.max(p);
            let log_start = s + l - back;
            return Ok(Self {
                log: reported[log_start..].to_vec(),
                log_start,
                trace: Arc::new(trace),
                cp,
                pf,
                verification,
                retrains: attempt,
                q_update,
                q_raw,
                suppression_tol: cfg.suppression_tol,
                verify_threshold: cfg.verify_threshold,
            });
        }
        Err(Error::PfRejected {
            attempts: cfg.max_retrain + 1,
            mse: last_mse,
            threshold: cfg.verify_threshold,
        })
    }

    /// Normalized trace (ground truth and UE estimates).
    pub fn trace(&self) -> &ChannelTrace {
        &self.trace
    }

    pub fn antennas(&self) -> usize {
        self.trace.antennas()
    }

    /// Next time index to be acquired.
    pub fn time(&self) -> usize {
        self.log_start + self.log.len()
    }

    /// Samples left to stream.
    pub fn remaining(&self) -> usize {
        self.trace.len() - self.time()
    }

    pub fn estimate(&self) -> Result<&ChannelVector> {
        self.trace.get(self.time()).ok_or(Error::TraceTooShort {
            required: self.time() + 1,
            actual: self.trace.len(),
        })
    }

    pub fn channel_predictor(&self) -> &PredictorModel {
        &self.cp
    }

    pub fn pf(&self) -> &PredictorFunction {
        &self.pf
    }

    pub fn verification(&self) -> Verification {
        self.verification
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    pub fn update_quantizer(&self) -> &QuantizerConfig {
        &self.q_update
    }

    pub fn raw_quantizer(&self) -> &QuantizerConfig {
        &self.q_raw
    }

    /// Channel acquired at time `t`, if still in the log.
    pub fn acquired_at(&self, t: usize) -> Option<&ChannelVector> {
        t.checked_sub(self.log_start).and_then(|i| self.log.get(i))
    }

    /// Last acquired channel.
    pub fn last_acquired(&self) -> &ChannelVector {
        self.log.last().expect("log is seeded at preparation")
    }

    /// Twin prediction `F [h_bs(t-1) ..]` for the current time.
    pub fn predict(&self) -> Result<ChannelVector> {
        let past: Vec<&ChannelVector> = self.log.iter().rev().take(self.pf.order()).collect();
        self.pf.predict(&past)
    }

    /// Quantized update of `predicted - estimated`.
    pub fn feedback(&self, predicted: &ChannelVector, estimated: &ChannelVector) -> Result<QuantizedUpdate> {
        let u = compute_update(predicted, estimated, self.suppression_tol)?;
        Ok(encode_feedback(&u, &self.q_update))
    }

    pub fn raw_feedback(&self, estimated: &ChannelVector) -> QuantizedUpdate {
        encode_raw(estimated, &self.q_raw)
    }

    /// Records the channel the BS acquired for the current time.
    pub fn commit(&mut self, acquired: ChannelVector) -> Result<()> {
        acquired.check_len(self.antennas(), "acquired channel")?;
        if self.time() >= self.trace.len() {
            return Err(Error::TraceTooShort {
                required: self.time() + 1,
                actual: self.trace.len(),
            });
        }
        self.log.push(acquired);
        Ok(())
    }

    /// BS-side PF check over the last `window` acquired samples: when the
    /// PF misses the acquired channel by more than the verification
    /// threshold, refit it on the channel predictor's output. Returns
    /// whether a new PF was installed.
    pub fn refresh(&mut self, window: usize) -> Result<bool> {
        let p = self.pf.order();
        let d = self.cp.shape().lags;
        let end = self.time();
        let first = end.saturating_sub(window).max(self.log_start + d.max(p));
        if first >= end {
            return Ok(false);
        }
        let probes: Vec<PfProbe> = (first..end)
            .map(|t| PfProbe {
                past: (1..=p).map(|e| self.acquired_at(t - e).unwrap().clone()).collect(),
                current: self.acquired_at(t).unwrap().clone(),
            })
            .collect();
        if verify_pf(&self.pf, &probes, self.verify_threshold)?.accepted {
            return Ok(false);
        }
        let mut predicted = Vec::with_capacity(probes.len());
        for t in first..end {
            let i = t - self.log_start;
            predicted.push(self.cp.predict(&self.log[i - d..i], t as f64)?.remove(0));
        }
        let lags: Vec<Vec<&ChannelVector>> = probes.iter().map(|pr| pr.past.iter().collect()).collect();
        let next = self.pf.window_id() + 1;
        self.pf = fit_pf_lagged(&predicted, &lags)?.with_window_id(next);
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub nmse: f64,
    pub baseline_nmse: f64,
    pub mlabe_nmse: Option<f64>,
    pub bits: u64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub stream_start: usize,
    /// CSILaBS acquisition for `t = stream_start ..`.
    pub acquired: Vec<AcquiredChannel>,
    /// Normalized ground truth for the same instants.
    pub truth: Vec<ChannelVector>,
    pub steps: Vec<StepRecord>,
    pub csilabs: MetricSummary,
    pub baseline: MetricSummary,
    pub mlabe: Option<MetricSummary>,
    pub uplink_bits: u64,
    pub baseline_bits: u64,
    pub downlink_bits: u64,
    pub pf: PredictorFunction,
    pub verification: Verification,
    pub retrains: usize,
    pub refreshes: usize,
}

impl LoopResult {
    /// CSV table `t,nmse,baseline_nmse,mlabe_nmse,bits,provenance`.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,nmse,baseline_nmse,mlabe_nmse,bits,provenance")?;
        for s in &self.steps {
            let ml = s.mlabe_nmse.map(|v| v.to_string()).unwrap_or_default();
            let prov = serde_json::to_value(s.provenance).map_err(std::io::Error::other)?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.t,
                s.nmse,
                s.baseline_nmse,
                ml,
                s.bits,
                prov.as_str().unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn sample_nmse(est: &ChannelVector, truth: &ChannelVector) -> f64 {
    (est - truth).norm_sqr() / truth.norm_sqr()
}

fn raw_bits(cfg: &QuantizerConfig, m: usize) -> u64 {
    overhead_bits(cfg, m).unwrap_or(2 * 64 * m as u64)
}

/// End-to-end single-UE loop: prepares the link, then streams the rest of
/// the trace through twin prediction, update feedback and retrieval,
/// alongside the without-ML baseline and (optionally) MLaBE.
pub fn run_single_ue_loop(trace: &ChannelTrace, cfg: &LinkConfig) -> Result<LoopResult> {
    let mut link = PreparedLink::prepare(trace, cfg)?;
    let m = link.antennas();
    let start = link.time();
    let q_raw = *link.raw_quantizer();
    let q_update = *link.update_quantizer();
    let d = cfg.lags;

    let mut ml_log: Vec<ChannelVector> = (start - d..start)
        .map(|t| link.acquired_at(t).unwrap().clone())
        .collect();

    let (mut acc, mut acc_base, mut acc_ml) = (
        MetricAccumulator::default(),
        MetricAccumulator::default(),
        MetricAccumulator::default(),
    );
    let n = link.remaining();
    let mut acquired = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    let mut uplink = 0u64;
    let mut baseline_bits = 0u64;
    let mut downlink = link.pf().report_bits(cfg.pf_bits);
    let mut refreshes = 0;

    while link.remaining() > 0 {
        let t = link.time();
        let h = link.estimate()?.clone();
        let pred = link.predict()?;
        let fb = link.feedback(&pred, &h)?;
        let acq = retrieve_csi(&pred, &fb)?;
        uplink += fb.bits();
        let truth_m = ChannelMatrix::from_vector(&h);
        acc.push(&ChannelMatrix::from_vector(&acq.channel), &truth_m)?;

        let base = baseline_without_ml(&h, &q_raw);
        baseline_bits += raw_bits(&q_raw, m);
        acc_base.push(&ChannelMatrix::from_vector(&base.channel), &truth_m)?;

        let mlabe_nmse = if cfg.mlabe {
            let ml_pred = link.channel_predictor().predict(&ml_log[ml_log.len() - d..], t as f64)?.remove(0);
            let ml_fb = encode_feedback(&compute_update(&ml_pred, &h, cfg.suppression_tol)?, &q_update);
            let ml_acq = retrieve_csi(&ml_pred, &ml_fb)?.channel;
            acc_ml.push(&ChannelMatrix::from_vector(&ml_acq), &truth_m)?;
            let e = sample_nmse(&ml_acq, &h);
            ml_log.push(ml_acq);
            Some(e)
        } else {
            None
        };

        steps.push(StepRecord {
            t,
            nmse: sample_nmse(&acq.channel, &h),
            baseline_nmse: sample_nmse(&base.channel, &h),
            mlabe_nmse,
            bits: fb.bits(),
            provenance: acq.provenance,
        });
        link.commit(acq.channel.clone())?;
        acquired.push(acq);
        truth.push(h);

        if let Some(k) = cfg.refresh_interval {
            if (t + 1 - start) % k == 0 && link.refresh(k)? {
                refreshes += 1;
                downlink += link.pf().report_bits(cfg.pf_bits);
            }
        }
    }

    Ok(LoopResult {
        stream_start: start,
        acquired,
        truth,
        steps,
        csilabs: acc.summary()?,
        baseline: acc_base.summary()?,
        mlabe: if cfg.mlabe { Some(acc_ml.summary()?) } else { None },
        uplink_bits: uplink,
        baseline_bits,
        downlink_bits: downlink,
        pf: link.pf().clone(),
        verification: link.verification(),
        retrains: link.retrains(),
        refreshes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_ar_trace, ArTraceConfig};

    fn small_cfg() -> LinkConfig {
        LinkConfig {
            lags: 2,
            train: TrainConfig {
                epochs: 20,
                learning_rate: 1e-2,
                ..Default::default()
            },
            split: SplitPolicy {
                train: 400,
                pf_window: 64,
            },
            ..Default::default()
        }
    }

    fn trace(seed: u64) -> ChannelTrace {
        generate_ar_trace(&ArTraceConfig::ar1(4, 700, 0.99, seed)).unwrap()
    }

    #[test]
    fn lossless_loop_is_exact() {
        let cfg = LinkConfig {
            bits: Bits::Infinite,
            ..small_cfg()
        };
        let r = run_single_ue_loop(&trace(1), &cfg).unwrap();
        assert!(r.csilabs.nmse < 1e-20);
        assert_eq!(r.acquired.len(), 700 - 464);
        assert_eq!(r.steps.len(), r.truth.len());
    }

    #[test]
    fn more_bits_help() {
        let lo = run_single_ue_loop(&trace(2), &small_cfg()).unwrap();
        let hi = run_single_ue_loop(
            &trace(2),
            &LinkConfig {
                bits: Bits::Finite(6),
                ..small_cfg()
            },
        )
        .unwrap();
        assert!(lo.csilabs.nmse > hi.csilabs.nmse);
        assert!(lo.baseline.nmse > hi.baseline.nmse);
        assert_eq!(lo.uplink_bits, 2 * 4 * 2 * lo.steps.len() as u64);
    }

    #[test]
    fn short_trace_and_rejection() {
        let short = generate_ar_trace(&ArTraceConfig::ar1(4, 100, 0.99, 0)).unwrap();
        assert!(matches!(
            run_single_ue_loop(&short, &small_cfg()),
            Err(Error::TraceTooShort { .. })
        ));
        let cfg = LinkConfig {
            verify_threshold: 1e-9,
            max_retrain: 1,
            ..small_cfg()
        };
        assert!(matches!(
            PreparedLink::prepare(&trace(3), &cfg),
            Err(Error::PfRejected { attempts: 2, .. })
        ));
    }

    #[test]
    fn refresh_accounts_downlink() {
        let cfg = LinkConfig {
            refresh_interval: Some(50),
            verify_threshold: 0.02,
            max_retrain: 0,
            bits: Bits::Finite(1),
            ..small_cfg()
        };
        match run_single_ue_loop(&trace(4), &cfg) {
            Ok(r) => {
                assert_eq!(r.downlink_bits, (1 + r.refreshes as u64) * r.pf.report_bits(16));
            }
            Err(Error::PfRejected { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn table_has_header_and_rows() {
        let r = run_single_ue_loop(&trace(5), &small_cfg()).unwrap();
        let mut buf = Vec::new();
        r.write_table(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), r.steps.len() + 1);
        assert!(s.lines().nth(1).unwrap().ends_with(",updated"));
    }
}
