use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::huber_grad;
use super::{ModelKind, PredictorModel, SampleRef};
use crate::error::{Error, Result};

const FULL_CHECK_LIMIT: usize = 2000;
const SUBSAMPLE: usize = 500;

/// Largest relative difference between analytic gradients of the Huber
/// loss (`beta = 1`) and central differences with step `eps`.
///
/// All parameters are probed for models up to 2000 parameters, otherwise a
/// seeded random subset of 500. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(model: &PredictorModel, sample_ref: &SampleRef<'_>, eps: f64) -> Result<f64> {
    if model.kind() == ModelKind::Hybrid {
        return Err(Error::Unsupported(
            "gradient check of the hybrid composite; check its RNN and NP stages".into(),
        ));
    }
    let shape = model.shape();
    if sample_ref.input.len() != shape.input_len() || sample_ref.label.len() != shape.output_len() {
        return Err(Error::dim(shape.input_len(), sample_ref.input.len(), "gradient check sample"));
    }
    let kernel = model.kernel();
    let n = kernel.n_params();
    if n == 0 {
        return Ok(0.0);
    }
    let beta = 1.0;
    let mut p = model.params().to_vec();
    let mut analytic = vec![0.0; n];
    kernel.loss_grad(&p, sample_ref, None, beta, &mut analytic);

    let loss = |p: &[f64]| {
        let mut pred = vec![0.0; shape.output_len()];
        kernel.forward(p, sample_ref, &mut pred);
        huber_grad(&pred, sample_ref.label, beta).0
    };
    let idx: Vec<usize> = if n <= FULL_CHECK_LIMIT {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        sample(&mut rng, n, SUBSAMPLE).into_vec()
    };
    let mut worst: f64 = 0.0;
    for i in idx {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p);
        p[i] = orig - eps;
        let down = loss(&p);
        p[i] = orig;
        let num = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
