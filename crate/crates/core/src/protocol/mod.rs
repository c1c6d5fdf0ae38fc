//! Single-UE CSI feedback: predictor-function fitting and verification,
//! twin prediction, update encoding and channel retrieval at the BS.

mod link;
mod record;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelVector;
use crate::error::{Error, Result};
use crate::quantizer::{quantize, quantize_reconstruct, QuantizedVector, QuantizerConfig};

pub use link::{
    run_single_ue_loop, LinkConfig, LoopResult, PreparedLink, SplitPolicy, StepRecord,
};
pub use record::{decode_record, encode_record, RecordFlag};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-10;

/// The `M x M` transition matrices `F_1 .. F_p` reported to the UE.
/// Prediction is `sum_e F_e x(t - e)`; order 1 is the plain `F x(t-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorFunction {
    matrices: Vec<DMatrix<Complex64>>,
    fit_residual: f64,
    window_id: u64,
}

impl PredictorFunction {
    pub fn from_matrix(f: DMatrix<Complex64>) -> Result<Self> {
        Self::from_matrices(vec![f], 0.0, 0)
    }

    pub fn from_matrices(matrices: Vec<DMatrix<Complex64>>, fit_residual: f64, window_id: u64) -> Result<Self> {
        let m = matrices
            .first()
            .ok_or_else(|| Error::InvalidConfig("predictor function needs order >= 1".into()))?
            .nrows();
        for f in &matrices {
            if f.nrows() != m || f.ncols() != m {
                return Err(Error::dim(m, f.ncols(), "predictor function must be square"));
            }
            if f.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite("predictor function"));
            }
        }
        Ok(Self {
            matrices,
            fit_residual,
            window_id,
        })
    }

    pub fn identity(antennas: usize) -> Self {
        Self {
            matrices: vec![DMatrix::identity(antennas, antennas)],
            fit_residual: 0.0,
            window_id: 0,
        }
    }

    pub fn zeros(antennas: usize) -> Self {
        Self {
            matrices: vec![DMatrix::zeros(antennas, antennas)],
            fit_residual: 0.0,
            window_id: 0,
        }
    }

    pub fn antennas(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    /// Lag-1 matrix `F`.
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrices[0]
    }

    pub fn matrices(&self) -> &[DMatrix<Complex64>] {
        &self.matrices
    }

    /// `||F D - N||_F` of the fit that produced this function.
    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn window_id(&self) -> u64 {
        self.window_id
    }

    pub fn with_window_id(mut self, id: u64) -> Self {
        self.window_id = id;
        self
    }

    /// `sum_e F_e past[e-1]`, with `past` newest first.
    pub fn predict(&self, past: &[&ChannelVector]) -> Result<ChannelVector> {
        if past.len() < self.order() {
            return Err(Error::dim(self.order(), past.len(), "predictor function lags"));
        }
        let m = self.antennas();
        let mut y = DVector::<Complex64>::zeros(m);
        for (f, x) in self.matrices.iter().zip(past) {
            x.check_len(m, "predictor function input")?;
            y.gemv(
                Complex64::new(1.0, 0.0),
                f,
                &DVector::from_column_slice(x.as_slice()),
                Complex64::new(1.0, 0.0),
            );
        }
        let v: Vec<Complex64> = y.iter().copied().collect();
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("predictor function output"));
        }
        Ok(ChannelVector::from_vec_unchecked(v))
    }

    /// Downlink cost of reporting the function at `bits` per real value.
    pub fn report_bits(&self, bits: u32) -> u64 {
        let m = self.antennas() as u64;
        2 * m * m * self.order() as u64 * bits as u64
    }
}

/// Moore-Penrose pseudo-inverse via SVD, zeroing singular values below
/// [`PINV_RELATIVE_TOLERANCE`] times the largest.
pub fn pseudo_inverse(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(c, r);
    }
    svd.pseudo_inverse(PINV_RELATIVE_TOLERANCE * smax)
        .expect("SVD computed with both singular vector sets")
}

fn columns(vs: &[&ChannelVector], m: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(m, vs.len(), |i, k| vs[k][i])
}

/// Least-squares minimum-norm `F = N D^+` with `N = [predicted]` and
/// `D = [reported]` as `M x L` column matrices.
pub fn fit_pf(predicted: &[ChannelVector], reported: &[ChannelVector]) -> Result<PredictorFunction> {
    let lags: Vec<Vec<&ChannelVector>> = reported.iter().map(|r| vec![r]).collect();
    fit_pf_lagged(predicted, &lags)
}

/// Order-`p` fit: each entry of `reported_lags` holds the `p` regressors
/// (newest first) paired with the same entry of `predicted`.
pub fn fit_pf_lagged(
    predicted: &[ChannelVector],
    reported_lags: &[Vec<&ChannelVector>],
) -> Result<PredictorFunction> {
    if predicted.is_empty() {
        return Err(Error::InvalidConfig("fit_pf needs at least one pair".into()));
    }
    if predicted.len() != reported_lags.len() {
        return Err(Error::dim(predicted.len(), reported_lags.len(), "fit_pf pair count"));
    }
    let m = predicted[0].len();
    let p = reported_lags[0].len();
    if p == 0 {
        return Err(Error::InvalidConfig("predictor function order must be >= 1".into()));
    }
    let l = predicted.len();
    for (n, ds) in predicted.iter().zip(reported_lags) {
        n.check_len(m, "fit_pf predicted")?;
        if ds.len() != p {
            return Err(Error::dim(p, ds.len(), "fit_pf lag count"));
        }
        for d in ds {
            d.check_len(m, "fit_pf reported")?;
        }
    }
    let n_mat = columns(&predicted.iter().collect::<Vec<_>>(), m);
    let d_mat = DMatrix::from_fn(p * m, l, |i, k| reported_lags[k][i / m][i % m]);
    let f = &n_mat * pseudo_inverse(&d_mat);
    let residual = (&f * &d_mat - &n_mat).norm();
    let matrices = (0..p).map(|e| f.columns(e * m, m).into_owned()).collect();
    PredictorFunction::from_matrices(matrices, residual, 0)
}

/// Order-1 twin prediction `F x`.
pub fn predict_with_pf(pf: &PredictorFunction, past: &ChannelVector) -> Result<ChannelVector> {
    if pf.order() != 1 {
        return Err(Error::InvalidConfig(format!(
            "predictor function has order {}, pass all lags to PredictorFunction::predict",
            pf.order()
        )));
    }
    pf.predict(&[past])
}

/// One verification probe: past (reported) vectors, newest first, and the
/// current estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PfProbe {
    pub past: Vec<ChannelVector>,
    pub current: ChannelVector,
}

impl PfProbe {
    pub fn new(past: ChannelVector, current: ChannelVector) -> Self {
        Self {
            past: vec![past],
            current,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub accepted: bool,
    pub mse: f64,
}

/// `mse = mean_probes ||F x_past - h||^2 / M`; accepted iff `mse <= threshold`.
pub fn verify_pf(pf: &PredictorFunction, probes: &[PfProbe], threshold: f64) -> Result<Verification> {
    if probes.is_empty() {
        return Err(Error::InvalidConfig("verify_pf needs at least one probe".into()));
    }
    let m = pf.antennas() as f64;
    let mut acc = 0.0;
    for p in probes {
        let past: Vec<&ChannelVector> = p.past.iter().collect();
        let pred = pf.predict(&past)?;
        p.current.check_len(pf.antennas(), "verify_pf probe")?;
        acc += (&pred - &p.current).norm_sqr() / m;
    }
    let mse = acc / probes.len() as f64;
    Ok(Verification {
        accepted: mse <= threshold,
        mse,
    })
}

/// `Omega = h_pred - h_est`, or `None` when it is suppressed.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateVector {
    None,
    Update(ChannelVector),
}

/// `Omega = predicted - estimated`; `None` iff `max_m |Omega_m| <= tol`.
pub fn compute_update(predicted_ue: &ChannelVector, estimated: &ChannelVector, suppression_tol: f64) -> Result<UpdateVector> {
    estimated.check_len(predicted_ue.len(), "compute_update")?;
    let omega = predicted_ue - estimated;
    let inf_norm = omega.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(if inf_norm <= suppression_tol {
        UpdateVector::None
    } else {
        UpdateVector::Update(omega)
    })
}

/// Uplink payload for one time instant.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedUpdate {
    None,
    /// Quantized `Omega`.
    Update(QuantizedVector),
    /// Quantized raw channel estimate (no prediction at the BS).
    Raw(QuantizedVector),
}

impl QuantizedUpdate {
    /// Payload bits. Lossless payloads count 64 bits per real value.
    pub fn bits(&self) -> u64 {
        match self {
            QuantizedUpdate::None => 0,
            QuantizedUpdate::Update(q) | QuantizedUpdate::Raw(q) => payload_bits(q),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, QuantizedUpdate::None)
    }
}

fn payload_bits(q: &QuantizedVector) -> u64 {
    q.bit_len().unwrap_or(2 * 64 * q.len() as u64)
}

pub fn encode_feedback(update: &UpdateVector, cfg: &QuantizerConfig) -> QuantizedUpdate {
    match update {
        UpdateVector::None => QuantizedUpdate::None,
        UpdateVector::Update(omega) => QuantizedUpdate::Update(quantize(omega, cfg)),
    }
}

/// Quantized raw estimate `f_Q[h]`, as sent when no predictor is deployed.
pub fn encode_raw(estimated: &ChannelVector, cfg: &QuantizerConfig) -> QuantizedUpdate {
    QuantizedUpdate::Raw(quantize(estimated, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// BS prediction used as is.
    OpenLoop,
    /// BS prediction corrected by a delivered update.
    Updated,
    /// Dequantized raw estimate.
    BaselineWithoutMl,
    /// Last acquired value kept (periodic reporting between turns).
    Held,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquiredChannel {
    pub channel: ChannelVector,
    pub provenance: Provenance,
}

/// `h_bs = h_pred_bs - decode(f_Q[Omega])` for an update, `h_pred_bs` when
/// there is none, and the dequantized estimate for a raw report.
pub fn retrieve_csi(predicted_bs: &ChannelVector, feedback: &QuantizedUpdate) -> Result<AcquiredChannel> {
    Ok(match feedback {
        QuantizedUpdate::None => AcquiredChannel {
            channel: predicted_bs.clone(),
            provenance: Provenance::OpenLoop,
        },
        QuantizedUpdate::Update(q) => {
            let omega = q.reconstruct();
            omega.check_len(predicted_bs.len(), "retrieve_csi")?;
            AcquiredChannel {
                channel: predicted_bs - &omega,
                provenance: Provenance::Updated,
            }
        }
        QuantizedUpdate::Raw(q) => {
            let h = q.reconstruct();
            h.check_len(predicted_bs.len(), "retrieve_csi")?;
            AcquiredChannel {
                channel: h,
                provenance: Provenance::BaselineWithoutMl,
            }
        }
    })
}

/// Feedback without prediction: `h_bs = f_Q[h_est]`.
pub fn baseline_without_ml(estimated: &ChannelVector, cfg: &QuantizerConfig) -> AcquiredChannel {
    AcquiredChannel {
        channel: quantize_reconstruct(estimated, cfg),
        provenance: Provenance::BaselineWithoutMl,
    }
}
