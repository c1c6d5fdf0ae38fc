//! Synthetic channel traces.
//!
//! Channels are per-antenna complex gains that evolve as independent
//! autoregressive processes. A [`ChannelTrace`] is the time-ordered history
//! of one UE's channel vector; [`window_trace`] cuts it into supervised
//! `(past d, future D)` pairs for the predictors.

mod ar;
mod io;

use std::ops::{Index, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ar::{ar_roots, generate_ar_trace, stationary_variance, ArTraceConfig};
pub use io::{load_trace, read_trace, save_trace, write_trace, TRACE_MAGIC, TRACE_VERSION};

/// Complex channel gains from the `M` base-station antennas to one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVector(Vec<Complex64>);

impl ChannelVector {
    pub fn new(elements: Vec<Complex64>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidConfig("channel vector needs M >= 1".into()));
        }
        if elements.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("channel vector"));
        }
        Ok(Self(elements))
    }

    /// Builds a vector without the finiteness scan. Callers guarantee the
    /// invariants (used on hot paths where inputs are already validated).
    pub(crate) fn from_vec_unchecked(elements: Vec<Complex64>) -> Self {
        debug_assert!(!elements.is_empty());
        Self(elements)
    }

    pub fn zeros(antennas: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); antennas])
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dim(re.len(), im.len(), "real/imaginary parts"));
        }
        Self::new(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_component(&self) -> f64 {
        self.0
            .iter()
            .map(|z| z.re.abs().max(z.im.abs()))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * k).collect())
    }

    /// Real features `[re_0..re_{M-1}, im_0..im_{M-1}]`.
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        self.write_features(&mut out);
        out
    }

    pub(crate) fn write_features(&self, out: &mut Vec<f64>) {
        out.extend(self.0.iter().map(|z| z.re));
        out.extend(self.0.iter().map(|z| z.im));
    }

    /// Inverse of [`to_features`](Self::to_features).
    pub fn from_features(features: &[f64]) -> Result<Self> {
        if features.is_empty() || features.len() % 2 != 0 {
            return Err(Error::Schema(format!(
                "feature vector length {} is not a positive even number",
                features.len()
            )));
        }
        let m = features.len() / 2;
        Self::from_parts(&features[..m], &features[m..])
    }

    pub(crate) fn check_len(&self, expected: usize, context: &'static str) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::dim(expected, self.len(), context))
        }
    }
}

impl Index<usize> for ChannelVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl Sub for &ChannelVector {
    type Output = ChannelVector;

    fn sub(self, rhs: &ChannelVector) -> ChannelVector {
        assert_eq!(self.len(), rhs.len(), "channel vector length mismatch");
        ChannelVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

/// Time-indexed channel history of one UE. Sample `i` is time `t = i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    ue_id: u64,
    antennas: usize,
    samples: Vec<ChannelVector>,
}

impl ChannelTrace {
    pub fn new(ue_id: u64, antennas: usize, samples: Vec<ChannelVector>) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::Schema("trace antenna count must be >= 1".into()));
        }
        if let Some((t, v)) = samples.iter().enumerate().find(|(_, v)| v.len() != antennas) {
            return Err(Error::Schema(format!(
                "sample {t} has {} antennas, trace declares {antennas}",
                v.len()
            )));
        }
        Ok(Self {
            ue_id,
            antennas,
            samples,
        })
    }

    pub fn ue_id(&self) -> u64 {
        self.ue_id
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ChannelVector] {
        &self.samples
    }

    pub fn get(&self, t: usize) -> Option<&ChannelVector> {
        self.samples.get(t)
    }

    /// Mean of `|h_m(t)|^2` over all antennas and times.
    pub fn average_element_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let total: f64 = self.samples.iter().map(ChannelVector::norm_sqr).sum();
        total / (self.samples.len() * self.antennas) as f64
    }

    /// Returns a copy scaled to unit average element power, and the scale
    /// factor that was applied.
    pub fn normalized(&self) -> (ChannelTrace, f64) {
        let p = self.average_element_power();
        if p <= 0.0 {
            return (self.clone(), 1.0);
        }
        let k = 1.0 / p.sqrt();
        let samples = self
            .samples
            .iter()
            .map(|v| v.scaled(Complex64::new(k, 0.0)))
            .collect();
        (
            ChannelTrace {
                ue_id: self.ue_id,
                antennas: self.antennas,
                samples,
            },
            k,
        )
    }

    /// Sub-trace over `range`, keeping the UE id.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ChannelTrace {
        ChannelTrace {
            ue_id: self.ue_id,
            antennas: self.antennas,
            samples: self.samples[range].to_vec(),
        }
    }
}

/// One supervised pair cut from a trace.
///
/// `inputs` holds `h(t-d) .. h(t-1)` in chronological order (oldest first)
/// and `labels` holds `h(t) .. h(t+D-1)`, where `t = origin`.
#[derive(Debug, Clone, Copy)]
pub struct WindowedSample<'a> {
    pub origin: usize,
    pub inputs: &'a [ChannelVector],
    pub labels: &'a [ChannelVector],
}

/// Default lag order: twice the prediction horizon.
pub fn default_lags(horizon: usize) -> usize {
    2 * horizon
}

/// All maximal contiguous windows of `lags` inputs followed by `horizon`
/// labels. Yields `T - lags - horizon + 1` windows.
pub fn window_trace(
    trace: &ChannelTrace,
    lags: usize,
    horizon: usize,
) -> Result<Vec<WindowedSample<'_>>> {
    if lags == 0 || horizon == 0 {
        return Err(Error::InvalidConfig(
            "window lags and horizon must both be >= 1".into(),
        ));
    }
    let required = lags + horizon;
    if trace.len() < required {
        return Err(Error::TraceTooShort {
            required,
            actual: trace.len(),
        });
    }
    let s = trace.samples();
    Ok((0..=trace.len() - required)
        .map(|i| WindowedSample {
            origin: i + lags,
            inputs: &s[i..i + lags],
            labels: &s[i + lags..i + required],
        })
        .collect())
}
