//! NMSE, cosine similarity and precoding gain over `M x K` channel matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelVector;
use crate::error::{Error, Result};

/// Complex `M x K` matrix whose columns are per-UE channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(DMatrix<Complex64>);

impl ChannelMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("channel matrix"));
        }
        Ok(Self(m))
    }

    pub fn from_columns(cols: &[ChannelVector]) -> Result<Self> {
        let first = cols
            .first()
            .ok_or_else(|| Error::InvalidConfig("channel matrix needs at least one column".into()))?;
        let m = first.len();
        for c in cols {
            c.check_len(m, "channel matrix column")?;
        }
        Ok(Self(DMatrix::from_fn(m, cols.len(), |i, k| cols[k][i])))
    }

    pub fn from_vector(v: &ChannelVector) -> Self {
        Self(DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self(&self.0 * k)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            let ctx = "channel matrix shapes";
            return Err(Error::dim(b.0 * b.1, a.0 * a.1, ctx));
        }
        Ok(())
    }
}

/// `||H_est - H||_F^2 / ||H||_F^2`.
pub fn nmse(estimate: &ChannelMatrix, truth: &ChannelMatrix) -> Result<f64> {
    estimate.check_shape(truth)?;
    let den = truth.0.norm_squared();
    if den == 0.0 {
        return Err(Error::Undefined("nmse with zero-norm truth"));
    }
    Ok((&estimate.0 - &truth.0).norm_squared() / den)
}

/// Mean over columns of `|h_est^H h| / (||h_est|| ||h||)`.
pub fn cosine_similarity(estimate: &ChannelMatrix, truth: &ChannelMatrix) -> Result<f64> {
    estimate.check_shape(truth)?;
    let k = truth.0.ncols();
    let mut acc = 0.0;
    for (a, b) in estimate.0.column_iter().zip(truth.0.column_iter()) {
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Undefined("cosine similarity with zero column"));
        }
        acc += a.dotc(&b).norm() / (na * nb);
    }
    Ok(acc / k as f64)
}

/// `||H_eq||_F^2` with `H_eq = (H_acq / ||H_acq||_F)^H (H / ||H||_F)`.
pub fn precoding_gain(acquired: &ChannelMatrix, truth: &ChannelMatrix) -> Result<f64> {
    check_gain_inputs(acquired, truth)?;
    let a = &acquired.0 / Complex64::new(acquired.0.norm(), 0.0);
    let h = &truth.0 / Complex64::new(truth.0.norm(), 0.0);
    Ok((a.adjoint() * h).norm_squared())
}

fn check_gain_inputs(a: &ChannelMatrix, b: &ChannelMatrix) -> Result<()> {
    a.check_shape(b)?;
    if a.0.norm_squared() == 0.0 || b.0.norm_squared() == 0.0 {
        return Err(Error::Undefined("precoding gain with zero-norm matrix"));
    }
    Ok(())
}

/// Running means of the three metrics over a stream of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    count: usize,
    nmse: f64,
    cosine: f64,
    gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub nmse: f64,
    pub cosine: f64,
    pub precoding_gain: f64,
}

impl MetricAccumulator {
    pub fn push(&mut self, estimate: &ChannelMatrix, truth: &ChannelMatrix) -> Result<()> {
        let n = nmse(estimate, truth)?;
        let c = cosine_similarity(estimate, truth)?;
        let g = precoding_gain(estimate, truth)?;
        self.count += 1;
        self.nmse += n;
        self.cosine += c;
        self.gain += g;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.nmse += other.nmse;
        self.cosine += other.cosine;
        self.gain += other.gain;
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        if self.count == 0 {
            return Err(Error::Undefined("metrics over an empty stream"));
        }
        let n = self.count as f64;
        Ok(MetricSummary {
            samples: self.count,
            nmse: self.nmse / n,
            cosine: self.cosine / n,
            precoding_gain: self.gain / n,
        })
    }
}

/// Per-sample NMSE averaged over a stream of single-UE vectors.
pub fn stream_nmse<'a>(
    pairs: impl IntoIterator<Item = (&'a ChannelVector, &'a ChannelVector)>,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (est, truth) in pairs {
        est.check_len(truth.len(), "stream nmse")?;
        let den = truth.norm_sqr();
        if den == 0.0 {
            return Err(Error::Undefined("nmse with zero-norm truth"));
        }
        acc += (est - truth).norm_sqr() / den;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Undefined("nmse over an empty stream"));
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[(f64, f64)]) -> ChannelMatrix {
        ChannelMatrix::from_vector(
            &ChannelVector::new(v.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap(),
        )
    }

    #[test]
    fn nmse_examples() {
        let h = col(&[(1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse(&col(&[(0.0, 0.0), (0.0, 0.0)]), &h).unwrap(), 1.0);
        assert_eq!(nmse(&col(&[(1.0, 0.0), (1.0, 0.0)]), &h).unwrap(), 1.0);
        assert!(matches!(
            nmse(&h, &col(&[(0.0, 0.0), (0.0, 0.0)])),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let h = col(&[(1.0, 0.0), (0.0, 0.0)]);
        assert!((cosine_similarity(&h, &h).unwrap() - 1.0).abs() < 1e-15);
        let orth = col(&[(0.0, 0.0), (0.0, 2.0)]);
        assert_eq!(cosine_similarity(&orth, &h).unwrap(), 0.0);
        let s = 1.0 / 2f64.sqrt();
        let hb = col(&[(s, 0.0), (s, 0.0)]);
        assert!((cosine_similarity(&hb, &h).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn precoding_gain_rank_one() {
        let h = col(&[(1.0, 2.0), (-0.5, 0.25)]);
        assert!((precoding_gain(&h, &h).unwrap() - 1.0).abs() < 1e-12);
        let orth = col(&[(2.0, -1.0), (0.0, 0.0)]);
        let h2 = col(&[(0.0, 0.0), (3.0, 0.0)]);
        assert_eq!(precoding_gain(&orth, &h2).unwrap(), 0.0);
    }

    #[test]
    fn empty_stream_is_undefined() {
        assert!(MetricAccumulator::default().summary().is_err());
        assert!(stream_nmse(std::iter::empty()).is_err());
    }
}
