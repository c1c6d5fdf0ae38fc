use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::train::huber_grad;
use super::{fill_uniform, Kernel, SampleRef, Shape};
use crate::error::{Error, Result};

/// LSTM gate, in flat-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Cell,
    Output,
}

const GATES: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Cell, Gate::Output];

/// Weights of one LSTM layer.
///
/// Flat layout: for each gate in `f, i, g, o` order, `W` (`n_h x input`),
/// `V` (`n_h x n_h`), then `b` (`n_h`); matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input: usize,
    hidden: usize,
    data: Vec<f64>,
}

fn gate_block(input: usize, hidden: usize) -> usize {
    hidden * input + hidden * hidden + hidden
}

fn block_len(input: usize, hidden: usize) -> usize {
    4 * gate_block(input, hidden)
}

fn gate_ranges(input: usize, hidden: usize, gate: Gate) -> (Range<usize>, Range<usize>, Range<usize>) {
    let base = gate as usize * gate_block(input, hidden);
    let w = base..base + hidden * input;
    let v = w.end..w.end + hidden * hidden;
    let b = v.end..v.end + hidden;
    (w, v, b)
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            data: vec![0.0; block_len(input, hidden)],
        }
    }

    pub fn from_flat(input: usize, hidden: usize, data: Vec<f64>) -> Result<Self> {
        let n = block_len(input, hidden);
        if data.len() != n {
            return Err(Error::dim(n, data.len(), "lstm parameters"));
        }
        Ok(Self {
            input,
            hidden,
            data,
        })
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn w(&self, gate: Gate) -> &[f64] {
        &self.data[gate_ranges(self.input, self.hidden, gate).0]
    }

    pub fn v(&self, gate: Gate) -> &[f64] {
        &self.data[gate_ranges(self.input, self.hidden, gate).1]
    }

    pub fn b(&self, gate: Gate) -> &[f64] {
        &self.data[gate_ranges(self.input, self.hidden, gate).2]
    }

    pub fn w_mut(&mut self, gate: Gate) -> &mut [f64] {
        let r = gate_ranges(self.input, self.hidden, gate).0;
        &mut self.data[r]
    }

    pub fn v_mut(&mut self, gate: Gate) -> &mut [f64] {
        let r = gate_ranges(self.input, self.hidden, gate).1;
        &mut self.data[r]
    }

    pub fn b_mut(&mut self, gate: Gate) -> &mut [f64] {
        let r = gate_ranges(self.input, self.hidden, gate).2;
        &mut self.data[r]
    }
}

/// Linear readout `y = A s + c`; flat layout `A` (row-major) then `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    inputs: usize,
    outputs: usize,
    data: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            data: vec![0.0; outputs * inputs + outputs],
        }
    }

    pub fn w(&self) -> &[f64] {
        &self.data[..self.outputs * self.inputs]
    }

    pub fn b(&self) -> &[f64] {
        &self.data[self.outputs * self.inputs..]
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        let n = self.outputs * self.inputs;
        &mut self.data[..n]
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        let n = self.outputs * self.inputs;
        &mut self.data[n..]
    }

    fn apply(&self, s: &[f64]) -> Vec<f64> {
        let mut y = self.b().to_vec();
        matvec_acc(self.w(), self.outputs, self.inputs, s, &mut y);
        y
    }
}

// Per-step cache: f, i, g, o, c, s (each n_h long).
const F_: usize = 0;
const I_: usize = 1;
const G_: usize = 2;
const O_: usize = 3;
const C_: usize = 4;
const S_: usize = 5;

fn cell_raw(p: &[f64], input: usize, h: usize, x: &[f64], s_prev: &[f64], c_prev: &[f64], out: &mut [f64]) {
    for gate in GATES {
        let (w, v, b) = gate_ranges(input, h, gate);
        let a = &mut out[gate as usize * h..(gate as usize + 1) * h];
        a.copy_from_slice(&p[b]);
        matvec_acc(&p[w], h, input, x, a);
        matvec_acc(&p[v], h, h, s_prev, a);
        for z in a.iter_mut() {
            *z = if gate == Gate::Cell { z.tanh() } else { sigmoid(*z) };
        }
    }
    for j in 0..h {
        let c = out[F_ * h + j] * c_prev[j] + out[I_ * h + j] * out[G_ * h + j];
        out[C_ * h + j] = c;
        out[S_ * h + j] = out[O_ * h + j] * c.tanh();
    }
}

/// One step of the cell. Returns `(s_t, c_t)`.
pub fn lstm_cell_forward(
    x: &[f64],
    s_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = params.hidden;
    if x.len() != params.input {
        return Err(Error::dim(params.input, x.len(), "lstm input"));
    }
    if s_prev.len() != h {
        return Err(Error::dim(h, s_prev.len(), "lstm hidden state"));
    }
    if c_prev.len() != h {
        return Err(Error::dim(h, c_prev.len(), "lstm cell state"));
    }
    let mut out = vec![0.0; 6 * h];
    cell_raw(&params.data, params.input, h, x, s_prev, c_prev, &mut out);
    Ok((out[S_ * h..].to_vec(), out[C_ * h..S_ * h].to_vec()))
}

/// Runs a layer over `steps` (in processing order); `cache` receives six
/// `n_h` vectors per step.
fn run_layer(p: &[f64], input: usize, h: usize, steps: &[&[f64]], cache: &mut Vec<f64>) {
    cache.clear();
    cache.resize(steps.len() * 6 * h, 0.0);
    let zeros = vec![0.0; h];
    for (t, x) in steps.iter().enumerate() {
        let (prev, cur) = cache.split_at_mut(t * 6 * h);
        let (s_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            let last = &prev[(t - 1) * 6 * h..];
            (&last[S_ * h..(S_ + 1) * h], &last[C_ * h..(C_ + 1) * h])
        };
        cell_raw(p, input, h, x, s_prev, c_prev, &mut cur[..6 * h]);
    }
}

fn final_state(cache: &[f64], h: usize) -> &[f64] {
    &cache[cache.len() - h..]
}

/// Backpropagation through time for one layer, given `dL/ds` at the last step.
fn backprop_layer(
    p: &[f64],
    input: usize,
    h: usize,
    steps: &[&[f64]],
    cache: &[f64],
    ds_final: &[f64],
    grad: &mut [f64],
) {
    let mut ds = ds_final.to_vec();
    let mut dc = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for t in (0..steps.len()).rev() {
        let cur = &cache[t * 6 * h..(t + 1) * 6 * h];
        let (s_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            let last = &cache[(t - 1) * 6 * h..t * 6 * h];
            (&last[S_ * h..(S_ + 1) * h], &last[C_ * h..(C_ + 1) * h])
        };
        for j in 0..h {
            let (f, i, g, o, c) = (
                cur[F_ * h + j],
                cur[I_ * h + j],
                cur[G_ * h + j],
                cur[O_ * h + j],
                cur[C_ * h + j],
            );
            let tc = c.tanh();
            let d_o = ds[j] * tc;
            let dct = dc[j] + ds[j] * o * (1.0 - tc * tc);
            da[F_ * h + j] = dct * c_prev[j] * f * (1.0 - f);
            da[I_ * h + j] = dct * g * i * (1.0 - i);
            da[G_ * h + j] = dct * i * (1.0 - g * g);
            da[O_ * h + j] = d_o * o * (1.0 - o);
            dc[j] = dct * f;
        }
        ds.fill(0.0);
        for gate in GATES {
            let (w, v, b) = gate_ranges(input, h, gate);
            let dag = &da[gate as usize * h..(gate as usize + 1) * h];
            outer_acc(&mut grad[w], h, input, dag, steps[t]);
            outer_acc(&mut grad[v.clone()], h, h, dag, s_prev);
            grad[b].iter_mut().zip(dag).for_each(|(g, d)| *g += d);
            matvec_t_acc(&p[v], h, h, dag, &mut ds);
        }
    }
}

fn steps_of<'a>(x: &'a [f64], f: usize) -> Vec<&'a [f64]> {
    x.chunks(f).collect()
}

/// Bidirectional forecast: forward layer over the sequence, backward layer
/// over its reverse, final states combined by Hadamard product, then `head`.
pub fn bilstm_forward(
    sequence: &[Vec<f64>],
    fwd: &LstmParams,
    bwd: &LstmParams,
    head: &LinearHead,
) -> Result<Vec<f64>> {
    if fwd.input != bwd.input || fwd.hidden != bwd.hidden {
        return Err(Error::InvalidConfig("forward/backward LSTM shapes differ".into()));
    }
    if head.inputs != fwd.hidden {
        return Err(Error::dim(fwd.hidden, head.inputs, "bilstm head input"));
    }
    if sequence.is_empty() {
        return Err(Error::InvalidConfig("empty input sequence".into()));
    }
    if let Some(x) = sequence.iter().find(|x| x.len() != fwd.input) {
        return Err(Error::dim(fwd.input, x.len(), "bilstm input step"));
    }
    let h = fwd.hidden;
    let steps: Vec<&[f64]> = sequence.iter().map(Vec::as_slice).collect();
    let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
    let (mut cf, mut cb) = (Vec::new(), Vec::new());
    run_layer(&fwd.data, fwd.input, h, &steps, &mut cf);
    run_layer(&bwd.data, bwd.input, h, &rev, &mut cb);
    let comb: Vec<f64> = final_state(&cf, h)
        .iter()
        .zip(final_state(&cb, h))
        .map(|(a, b)| a * b)
        .collect();
    Ok(head.apply(&comb))
}

fn head_backward(
    a: &[f64],
    out: usize,
    h: usize,
    state: &[f64],
    dy: &[f64],
    ga: &mut [f64],
    gc: &mut [f64],
) -> Vec<f64> {
    outer_acc(ga, out, h, dy, state);
    gc.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
    let mut ds = vec![0.0; h];
    matvec_t_acc(a, out, h, dy, &mut ds);
    ds
}

/// Single LSTM layer with linear head on the last hidden state.
pub(crate) struct LstmKernel {
    f: usize,
    out: usize,
    h: usize,
}

impl LstmKernel {
    pub(crate) fn new(shape: Shape, hidden: usize) -> Self {
        Self {
            f: shape.features,
            out: shape.output_len(),
            h: hidden,
        }
    }

    fn head_ranges(&self) -> (Range<usize>, Range<usize>) {
        let base = block_len(self.f, self.h);
        let a = base..base + self.out * self.h;
        (a.clone(), a.end..a.end + self.out)
    }
}

impl Kernel for LstmKernel {
    fn n_params(&self) -> usize {
        self.head_ranges().1.end
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        init_layer(rng, &mut p[..block_len(self.f, self.h)], self.f, self.h);
        fill_uniform(rng, &mut p[self.head_ranges().0], self.h);
        p
    }

    fn dropout_width(&self) -> usize {
        self.h
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]) {
        let mut cache = Vec::new();
        run_layer(p, self.f, self.h, &steps_of(s.input, self.f), &mut cache);
        let (a, c) = self.head_ranges();
        out.copy_from_slice(&p[c]);
        matvec_acc(&p[a], self.out, self.h, final_state(&cache, self.h), out);
    }

    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64 {
        let steps = steps_of(s.input, self.f);
        let mut cache = Vec::new();
        run_layer(p, self.f, self.h, &steps, &mut cache);
        let mut last = final_state(&cache, self.h).to_vec();
        apply_mask(&mut last, mask);
        let (a, c) = self.head_ranges();
        let mut pred = p[c.clone()].to_vec();
        matvec_acc(&p[a.clone()], self.out, self.h, &last, &mut pred);
        let (loss, dy) = huber_grad(&pred, s.label, beta);
        let (gl, gh) = grad.split_at_mut(a.start);
        let (ga, gc) = gh.split_at_mut(a.len());
        let mut ds = head_backward(&p[a], self.out, self.h, &last, &dy, ga, &mut gc[..c.len()]);
        apply_mask(&mut ds, mask);
        backprop_layer(p, self.f, self.h, &steps, &cache, &ds, gl);
        loss
    }
}

/// Forward and backward LSTM layers plus head on the combined final state.
pub(crate) struct BiLstmKernel {
    f: usize,
    out: usize,
    h: usize,
}

impl BiLstmKernel {
    pub(crate) fn new(shape: Shape, hidden: usize) -> Self {
        Self {
            f: shape.features,
            out: shape.output_len(),
            h: hidden,
        }
    }

    fn ranges(&self) -> [Range<usize>; 4] {
        let n = block_len(self.f, self.h);
        let a = 2 * n..2 * n + self.out * self.h;
        [0..n, n..2 * n, a.clone(), a.end..a.end + self.out]
    }
}

impl Kernel for BiLstmKernel {
    fn n_params(&self) -> usize {
        self.ranges()[3].end
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let [fw, bw, a, _] = self.ranges();
        let mut p = vec![0.0; self.n_params()];
        init_layer(rng, &mut p[fw], self.f, self.h);
        init_layer(rng, &mut p[bw], self.f, self.h);
        fill_uniform(rng, &mut p[a], self.h);
        p
    }

    fn dropout_width(&self) -> usize {
        self.h
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]) {
        let [fw, bw, a, c] = self.ranges();
        let steps = steps_of(s.input, self.f);
        let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
        let (mut cf, mut cb) = (Vec::new(), Vec::new());
        run_layer(&p[fw], self.f, self.h, &steps, &mut cf);
        run_layer(&p[bw], self.f, self.h, &rev, &mut cb);
        let comb: Vec<f64> = final_state(&cf, self.h)
            .iter()
            .zip(final_state(&cb, self.h))
            .map(|(x, y)| x * y)
            .collect();
        out.copy_from_slice(&p[c]);
        matvec_acc(&p[a], self.out, self.h, &comb, out);
    }

    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64 {
        let [fw, bw, a, c] = self.ranges();
        let steps = steps_of(s.input, self.f);
        let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
        let (mut cf, mut cb) = (Vec::new(), Vec::new());
        run_layer(&p[fw.clone()], self.f, self.h, &steps, &mut cf);
        run_layer(&p[bw.clone()], self.f, self.h, &rev, &mut cb);
        let sf = final_state(&cf, self.h);
        let sb = final_state(&cb, self.h);
        let mut comb: Vec<f64> = sf.iter().zip(sb).map(|(x, y)| x * y).collect();
        apply_mask(&mut comb, mask);
        let mut pred = p[c.clone()].to_vec();
        matvec_acc(&p[a.clone()], self.out, self.h, &comb, &mut pred);
        let (loss, dy) = huber_grad(&pred, s.label, beta);

        let (glayers, ghead) = grad.split_at_mut(a.start);
        let (ga, gc) = ghead.split_at_mut(a.len());
        let mut dcomb = head_backward(&p[a], self.out, self.h, &comb, &dy, ga, &mut gc[..c.len()]);
        apply_mask(&mut dcomb, mask);
        let dsf: Vec<f64> = dcomb.iter().zip(sb).map(|(d, y)| d * y).collect();
        let dsb: Vec<f64> = dcomb.iter().zip(sf).map(|(d, x)| d * x).collect();
        let (gf, gb) = glayers.split_at_mut(bw.start);
        backprop_layer(&p[fw], self.f, self.h, &steps, &cf, &dsf, gf);
        backprop_layer(&p[bw], self.f, self.h, &rev, &cb, &dsb, gb);
        loss
    }
}

fn init_layer(rng: &mut ChaCha8Rng, p: &mut [f64], input: usize, h: usize) {
    for gate in GATES {
        let (w, v, _) = gate_ranges(input, h, gate);
        fill_uniform(rng, &mut p[w], input);
        fill_uniform(rng, &mut p[v], h);
    }
}

fn apply_mask(v: &mut [f64], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_cell() {
        let p = LstmParams::zeros(2, 1);
        let (s, c) = lstm_cell_forward(&[0.3, -0.7], &[0.0], &[1.0], &p).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((s[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((s[0] - 0.23105).abs() < 1e-5);
    }

    #[test]
    fn saturated_gates_clear_cell() {
        let mut p = LstmParams::zeros(1, 2);
        p.b_mut(Gate::Forget).fill(-100.0);
        p.b_mut(Gate::Input).fill(-100.0);
        let (_, c) = lstm_cell_forward(&[0.0], &[0.0, 0.0], &[5.0, -3.0], &p).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-40));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_cell_forward(&[0.0], &[0.0; 3], &[0.0; 3], &p).is_err());
        assert!(lstm_cell_forward(&[0.0; 2], &[0.0; 2], &[0.0; 3], &p).is_err());
    }

    #[test]
    fn zero_head_returns_bias() {
        let f = LstmParams::zeros(2, 3);
        let mut head = LinearHead::zeros(3, 4);
        head.b_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let seq = vec![vec![0.5, -1.0]; 5];
        assert_eq!(bilstm_forward(&seq, &f, &f, &head).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
