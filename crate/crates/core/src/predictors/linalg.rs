//! Row-major dense kernels over flat slices.

/// `y += W x` with `W` of shape `rows x cols`.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T dy`.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub(crate) fn outer_acc(dw: &mut [f64], rows: usize, cols: usize, dy: &[f64], x: &[f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sequential offsets into a flat parameter vector.
#[derive(Debug, Default)]
pub(crate) struct Offsets(usize);

impl Offsets {
    pub(crate) fn take(&mut self, n: usize) -> std::ops::Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }

    pub(crate) fn total(&self) -> usize {
        self.0
    }
}
