use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ChannelTrace, ChannelVector};
use crate::error::{Error, Result};

/// Parameters of the per-antenna autoregressive generator
/// `a_t = q + sum_e theta_e * a_{t-e} + eps_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArTraceConfig {
    pub ue_id: u64,
    pub antennas: usize,
    pub length: usize,
    /// `theta_1 .. theta_d`, applied element-wise.
    pub coefficients: Vec<Complex64>,
    pub intercept: Complex64,
    /// Standard deviation of the circularly-symmetric complex Gaussian
    /// innovation. `None` picks the value giving unit element variance.
    pub innovation_stddev: Option<f64>,
    pub seed: u64,
}

impl Default for ArTraceConfig {
    fn default() -> Self {
        Self {
            ue_id: 0,
            antennas: 16,
            length: 20_000,
            coefficients: vec![Complex64::new(0.5, 0.0), Complex64::new(0.3, 0.0)],
            intercept: Complex64::new(0.0, 0.0),
            innovation_stddev: None,
            seed: 0,
        }
    }
}

impl ArTraceConfig {
    /// Real-coefficient AR(1) with unit element variance.
    pub fn ar1(antennas: usize, length: usize, theta: f64, seed: u64) -> Self {
        Self {
            antennas,
            length,
            coefficients: vec![Complex64::new(theta, 0.0)],
            seed,
            ..Self::default()
        }
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn burn_in(&self) -> usize {
        10 * self.order()
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::InvalidConfig("antennas must be >= 1".into()));
        }
        if self.coefficients.is_empty() {
            return Err(Error::InvalidConfig("AR order must be >= 1".into()));
        }
        if let Some(s) = self.innovation_stddev {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "innovation stddev must be finite and >= 0, got {s}"
                )));
            }
        }
        let offending: Vec<(f64, f64)> = ar_roots(&self.coefficients)
            .into_iter()
            .filter(|z| z.norm() <= 1.0 + 1e-10)
            .map(|z| (z.re, z.im))
            .collect();
        if !offending.is_empty() {
            return Err(Error::UnstableProcess { roots: offending });
        }
        Ok(())
    }

    /// Innovation standard deviation actually used by the generator.
    pub fn effective_stddev(&self) -> f64 {
        self.innovation_stddev.unwrap_or_else(|| {
            let v = stationary_variance(&self.coefficients, 1.0);
            1.0 / v.sqrt()
        })
    }
}

/// Roots of the characteristic polynomial `1 - sum_e theta_e z^e`. The
/// process is stable iff all of them lie strictly outside the unit circle.
pub fn ar_roots(coefficients: &[Complex64]) -> Vec<Complex64> {
    let d = coefficients.len();
    if d == 0 {
        return Vec::new();
    }
    // Companion eigenvalues are the reciprocals of the characteristic roots.
    let mut c = DMatrix::<Complex64>::zeros(d, d);
    for (j, &th) in coefficients.iter().enumerate() {
        c[(0, j)] = th;
    }
    for i in 1..d {
        c[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    let eig = if d == 1 {
        vec![coefficients[0]]
    } else {
        c.schur()
            .eigenvalues()
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default()
    };
    eig.into_iter()
        .filter(|l| l.norm() > 1e-300)
        .map(|l| Complex64::new(1.0, 0.0) / l)
        .collect()
}

/// Stationary variance `sigma^2 * sum_j |psi_j|^2` from the impulse response.
pub fn stationary_variance(coefficients: &[Complex64], innovation_var: f64) -> f64 {
    let d = coefficients.len();
    let mut psi: Vec<Complex64> = vec![Complex64::new(1.0, 0.0)];
    let mut total = 1.0;
    for j in 1..1_000_000 {
        let mut next = Complex64::new(0.0, 0.0);
        for e in 1..=d.min(j) {
            next += coefficients[e - 1] * psi[j - e];
        }
        psi.push(next);
        let term = next.norm_sqr();
        total += term;
        if j > 10 * d && psi[psi.len() - d..].iter().all(|p| p.norm_sqr() < 1e-20) {
            break;
        }
    }
    innovation_var * total
}

/// Generates a trace of `config.length` samples. The first `10 * d`
/// samples of the recursion are discarded as burn-in.
pub fn generate_ar_trace(config: &ArTraceConfig) -> Result<ChannelTrace> {
    config.validate()?;
    let m = config.antennas;
    let d = config.order();
    let sigma = config.effective_stddev();
    let half = sigma / std::f64::consts::SQRT_2;
    let burn = config.burn_in();

    let coef_sum: Complex64 = config.coefficients.iter().sum();
    let mean = config.intercept / (Complex64::new(1.0, 0.0) - coef_sum);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = burn + config.length;
    // Ring of the last d states per antenna, newest at index 0.
    let mut hist = vec![vec![mean; d]; m];
    let mut samples = Vec::with_capacity(config.length);
    for t in 0..total {
        let mut row = Vec::with_capacity(m);
        for h in hist.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let mut a = config.intercept + Complex64::new(half * re, half * im);
            for (th, past) in config.coefficients.iter().zip(h.iter()) {
                a += th * past;
            }
            h.rotate_right(1);
            h[0] = a;
            row.push(a);
        }
        if t >= burn {
            samples.push(ChannelVector::new(row)?);
        }
    }
    ChannelTrace::new(config.ue_id, m, samples)
}
