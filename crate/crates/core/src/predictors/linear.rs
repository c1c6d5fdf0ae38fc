use rand_chacha::ChaCha8Rng;

use super::train::huber_grad;
use super::{Kernel, SampleRef, Shape};

/// Per-feature linear AR shared across features:
/// `y[k][f] = c_k + sum_j a_{k,j} x(t-1-j)[f]`.
///
/// Layout: `a` (`D x d`, lag 1 first), then `c` (`D`).
pub(crate) struct LinearArKernel {
    f: usize,
    d: usize,
    h: usize,
}

impl LinearArKernel {
    pub(crate) fn new(shape: Shape) -> Self {
        Self {
            f: shape.features,
            d: shape.lags,
            h: shape.horizon,
        }
    }

    #[inline]
    fn lagged<'a>(&self, x: &'a [f64], lag: usize) -> &'a [f64] {
        let t = self.d - 1 - lag;
        &x[t * self.f..(t + 1) * self.f]
    }
}

impl Kernel for LinearArKernel {
    fn n_params(&self) -> usize {
        self.h * self.d + self.h
    }

    fn init(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.n_params()]
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]) {
        let (a, c) = p.split_at(self.h * self.d);
        for k in 0..self.h {
            let row = &mut out[k * self.f..(k + 1) * self.f];
            row.fill(c[k]);
            for j in 0..self.d {
                let w = a[k * self.d + j];
                for (o, x) in row.iter_mut().zip(self.lagged(s.input, j)) {
                    *o += w * x;
                }
            }
        }
    }

    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        _mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64 {
        let mut pred = vec![0.0; self.h * self.f];
        self.forward(p, s, &mut pred);
        let (loss, dy) = huber_grad(&pred, s.label, beta);
        let (ga, gc) = grad.split_at_mut(self.h * self.d);
        for k in 0..self.h {
            let dyk = &dy[k * self.f..(k + 1) * self.f];
            gc[k] += dyk.iter().sum::<f64>();
            for j in 0..self.d {
                ga[k * self.d + j] += dyk
                    .iter()
                    .zip(self.lagged(s.input, j))
                    .map(|(g, x)| g * x)
                    .sum::<f64>();
            }
        }
        loss
    }
}
