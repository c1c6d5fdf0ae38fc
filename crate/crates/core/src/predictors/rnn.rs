use rand_chacha::ChaCha8Rng;

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, Offsets};
use super::train::huber_grad;
use super::{fill_uniform, Kernel, SampleRef, Shape};
use crate::error::{Error, Result};

/// Elman cell `s_t = tanh(W x_t + V s_{t-1} + b)` with linear readout
/// `y = A s_d + c`.
///
/// Flat layout: `W` (`n_h x input`), `V` (`n_h x n_h`), `b`, `A`
/// (`outputs x n_h`), `c`; matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    input: usize,
    hidden: usize,
    outputs: usize,
    data: Vec<f64>,
}

struct RnnLayout {
    w: std::ops::Range<usize>,
    v: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
    a: std::ops::Range<usize>,
    c: std::ops::Range<usize>,
    total: usize,
}

impl RnnLayout {
    fn new(input: usize, hidden: usize, outputs: usize) -> Self {
        let mut o = Offsets::default();
        let w = o.take(hidden * input);
        let v = o.take(hidden * hidden);
        let b = o.take(hidden);
        let a = o.take(outputs * hidden);
        let c = o.take(outputs);
        Self {
            w,
            v,
            b,
            a,
            c,
            total: o.total(),
        }
    }
}

impl RnnParams {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        let n = RnnLayout::new(input, hidden, outputs).total;
        Self {
            input,
            hidden,
            outputs,
            data: vec![0.0; n],
        }
    }

    pub fn from_flat(input: usize, hidden: usize, outputs: usize, data: Vec<f64>) -> Result<Self> {
        let n = RnnLayout::new(input, hidden, outputs).total;
        if data.len() != n {
            return Err(Error::dim(n, data.len(), "rnn parameters"));
        }
        Ok(Self {
            input,
            hidden,
            outputs,
            data,
        })
    }

    fn layout(&self) -> RnnLayout {
        RnnLayout::new(self.input, self.hidden, self.outputs)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn w(&self) -> &[f64] {
        &self.data[self.layout().w]
    }

    pub fn v(&self) -> &[f64] {
        &self.data[self.layout().v]
    }

    pub fn b(&self) -> &[f64] {
        &self.data[self.layout().b]
    }

    pub fn head_w(&self) -> &[f64] {
        &self.data[self.layout().a]
    }

    pub fn head_b(&self) -> &[f64] {
        &self.data[self.layout().c]
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        let r = self.layout().w;
        &mut self.data[r]
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        let r = self.layout().v;
        &mut self.data[r]
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        let r = self.layout().b;
        &mut self.data[r]
    }

    pub fn head_w_mut(&mut self) -> &mut [f64] {
        let r = self.layout().a;
        &mut self.data[r]
    }

    pub fn head_b_mut(&mut self) -> &mut [f64] {
        let r = self.layout().c;
        &mut self.data[r]
    }
}

/// Runs the cell over `sequence` (oldest first) and applies the readout.
pub fn rnn_forward(sequence: &[Vec<f64>], params: &RnnParams) -> Result<Vec<f64>> {
    if let Some(x) = sequence.iter().find(|x| x.len() != params.input) {
        return Err(Error::dim(params.input, x.len(), "rnn input step"));
    }
    let flat: Vec<f64> = sequence.concat();
    let k = RnnKernel {
        f: params.input,
        d: sequence.len(),
        out: params.outputs,
        n_h: params.hidden,
        layout: params.layout(),
    };
    let mut states = vec![0.0; (sequence.len() + 1) * params.hidden];
    k.run(&params.data, &flat, &mut states);
    let mut y = params.head_b().to_vec();
    matvec_acc(
        params.head_w(),
        params.outputs,
        params.hidden,
        &states[sequence.len() * params.hidden..],
        &mut y,
    );
    Ok(y)
}

pub(crate) struct RnnKernel {
    f: usize,
    d: usize,
    out: usize,
    n_h: usize,
    layout: RnnLayout,
}

impl RnnKernel {
    pub(crate) fn new(shape: Shape, hidden: usize) -> Self {
        let out = shape.output_len();
        Self {
            f: shape.features,
            d: shape.lags,
            out,
            n_h: hidden,
            layout: RnnLayout::new(shape.features, hidden, out),
        }
    }

    /// Fills `states` with `s_0 = 0, s_1 .. s_d`.
    fn run(&self, p: &[f64], x: &[f64], states: &mut [f64]) {
        let h = self.n_h;
        states[..h].fill(0.0);
        for t in 0..self.d {
            let (prev, next) = states.split_at_mut((t + 1) * h);
            let s_prev = &prev[t * h..];
            let a = &mut next[..h];
            a.copy_from_slice(&p[self.layout.b.clone()]);
            matvec_acc(&p[self.layout.w.clone()], h, self.f, &x[t * self.f..(t + 1) * self.f], a);
            matvec_acc(&p[self.layout.v.clone()], h, h, s_prev, a);
            for v in a.iter_mut() {
                *v = v.tanh();
            }
        }
    }
}

impl Kernel for RnnKernel {
    fn n_params(&self) -> usize {
        self.layout.total
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total];
        fill_uniform(rng, &mut p[self.layout.w.clone()], self.f);
        fill_uniform(rng, &mut p[self.layout.v.clone()], self.n_h);
        fill_uniform(rng, &mut p[self.layout.a.clone()], self.n_h);
        p
    }

    fn dropout_width(&self) -> usize {
        self.n_h
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]) {
        let h = self.n_h;
        let mut states = vec![0.0; (self.d + 1) * h];
        self.run(p, s.input, &mut states);
        out.copy_from_slice(&p[self.layout.c.clone()]);
        matvec_acc(&p[self.layout.a.clone()], self.out, h, &states[self.d * h..], out);
    }

    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (h, l) = (self.n_h, &self.layout);
        let mut states = vec![0.0; (self.d + 1) * h];
        self.run(p, s.input, &mut states);
        let mut last = states[self.d * h..].to_vec();
        if let Some(m) = mask {
            last.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let mut pred = p[l.c.clone()].to_vec();
        matvec_acc(&p[l.a.clone()], self.out, h, &last, &mut pred);
        let (loss, dy) = huber_grad(&pred, s.label, beta);

        outer_acc(&mut grad[l.a.clone()], self.out, h, &dy, &last);
        grad[l.c.clone()].iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
        let mut ds = vec![0.0; h];
        matvec_t_acc(&p[l.a.clone()], self.out, h, &dy, &mut ds);
        if let Some(m) = mask {
            ds.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let mut da = vec![0.0; h];
        for t in (1..=self.d).rev() {
            let st = &states[t * h..(t + 1) * h];
            let sp = &states[(t - 1) * h..t * h];
            for j in 0..h {
                da[j] = ds[j] * (1.0 - st[j] * st[j]);
            }
            let x = &s.input[(t - 1) * self.f..t * self.f];
            outer_acc(&mut grad[l.w.clone()], h, self.f, &da, x);
            outer_acc(&mut grad[l.v.clone()], h, h, &da, sp);
            grad[l.b.clone()].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
            ds.fill(0.0);
            matvec_t_acc(&p[l.v.clone()], h, h, &da, &mut ds);
        }
        loss
    }
}
