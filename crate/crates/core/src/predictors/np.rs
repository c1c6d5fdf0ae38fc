//! NeuralProphet-style additive forecaster: piecewise-linear trend,
//! Fourier seasonality, an AR-Net on the last `d` values and an optional
//! learned weight on a future regressor. Applied univariately to each real
//! feature with parameters shared across features.

use std::f64::consts::PI;
use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, Offsets};
use super::train::huber_grad;
use super::{fill_uniform, Kernel, ModelKind, PredictorModel, SampleRef, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpSpec {
    /// Number of trend change-points `m`.
    pub changepoints: usize,
    /// Fraction of the (scaled) training range covered by change-points.
    pub changepoint_range: f64,
    pub seasonality: bool,
    /// Seasonal periods, in samples.
    pub periods: Vec<f64>,
    pub fourier_order: usize,
    /// AR-Net hidden layers `l`.
    pub ar_layers: usize,
    /// AR-Net units per hidden layer.
    pub ar_hidden: usize,
    /// Trend time is `t / time_scale`.
    pub time_scale: f64,
}

impl Default for NpSpec {
    fn default() -> Self {
        Self {
            changepoints: 10,
            changepoint_range: 0.95,
            seasonality: false,
            periods: Vec::new(),
            fourier_order: 3,
            ar_layers: 4,
            ar_hidden: 32,
            time_scale: 1.0,
        }
    }
}

impl NpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.changepoint_range > 0.0 && self.changepoint_range <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "changepoint_range must be in (0, 1], got {}",
                self.changepoint_range
            )));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::InvalidConfig("time_scale must be > 0".into()));
        }
        if self.seasonality {
            if self.periods.is_empty() || self.periods.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::InvalidConfig(
                    "seasonality needs at least one positive period".into(),
                ));
            }
            if self.fourier_order == 0 {
                return Err(Error::InvalidConfig("fourier_order must be >= 1".into()));
            }
        }
        if self.ar_layers > 0 && self.ar_hidden == 0 {
            return Err(Error::InvalidConfig("ar_hidden must be >= 1".into()));
        }
        Ok(())
    }

    /// Change-points spread uniformly over the first `changepoint_range`
    /// of scaled time `[0, 1]`.
    pub fn changepoint_times(&self) -> Vec<f64> {
        let m = self.changepoints;
        (1..=m)
            .map(|j| self.changepoint_range * j as f64 / m as f64)
            .collect()
    }

    fn season_terms(&self) -> usize {
        if self.seasonality {
            self.periods.len() * self.fourier_order
        } else {
            0
        }
    }
}

/// Piecewise-linear trend parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrendParams {
    /// Initial growth rate.
    pub growth: f64,
    /// Initial offset.
    pub offset: f64,
    /// Sorted change-point times.
    pub changepoints: Vec<f64>,
    pub growth_adjust: Vec<f64>,
    pub offset_adjust: Vec<f64>,
}

fn trend_raw(t: f64, growth: f64, offset: f64, cps: &[f64], zeta: &[f64], rho: &[f64]) -> f64 {
    let (mut g, mut o) = (growth, offset);
    for ((&n, &z), &r) in cps.iter().zip(zeta).zip(rho) {
        if t >= n {
            g += z;
            o += r;
        }
    }
    g * t + o
}

/// `R_t = (growth + Gamma_t . growth_adjust) t + (offset + Gamma_t . offset_adjust)`
/// with `Gamma_t[j] = 1` iff `t >= n_j`.
pub fn np_trend(t: f64, p: &TrendParams) -> f64 {
    trend_raw(
        t,
        p.growth,
        p.offset,
        &p.changepoints,
        &p.growth_adjust,
        &p.offset_adjust,
    )
}

/// Fourier seasonality over a set of periods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeasonalityParams {
    pub enabled: bool,
    pub periods: Vec<f64>,
    pub order: usize,
    /// `(a_o, b_o)` for each period then order, `periods.len() * order` pairs.
    pub coefficients: Vec<(f64, f64)>,
}

fn season_raw(t: f64, periods: &[f64], order: usize, ab: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (pi, &p) in periods.iter().enumerate() {
        for o in 1..=order {
            let k = 2 * (pi * order + o - 1);
            let w = 2.0 * PI * o as f64 * t / p;
            acc += ab[k] * w.cos() + ab[k + 1] * w.sin();
        }
    }
    acc
}

/// `F_t = sum_p sum_o a cos(2 pi o t / p) + b sin(2 pi o t / p)`; zero when
/// disabled.
pub fn np_seasonality(t: f64, p: &SeasonalityParams) -> f64 {
    if !p.enabled {
        return 0.0;
    }
    let ab: Vec<f64> = p.coefficients.iter().flat_map(|&(a, b)| [a, b]).collect();
    season_raw(t, &p.periods, p.order, &ab)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ArNetDims {
    inputs: usize,
    hidden: usize,
    layers: usize,
    outputs: usize,
}

impl ArNetDims {
    fn layer(&self, i: usize) -> (usize, usize) {
        (self.hidden, if i == 0 { self.inputs } else { self.hidden })
    }

    fn out_cols(&self) -> usize {
        if self.layers == 0 {
            self.inputs
        } else {
            self.hidden
        }
    }

    /// `(W, b)` ranges per hidden layer and the output-layer range.
    fn ranges(&self) -> (Vec<(Range<usize>, Range<usize>)>, Range<usize>) {
        let mut o = Offsets::default();
        let layers = (0..self.layers)
            .map(|i| {
                let (r, c) = self.layer(i);
                (o.take(r * c), o.take(r))
            })
            .collect();
        let out = o.take(self.outputs * self.out_cols());
        (layers, out)
    }

    fn len(&self) -> usize {
        self.ranges().1.end
    }
}

/// AR-Net weights: `U_1 .. U_l` with biases, then the bias-free output
/// layer `U_{l+1}`. Flat layout follows that order; matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ArNetParams {
    dims: ArNetDims,
    data: Vec<f64>,
}

impl ArNetParams {
    pub fn zeros(inputs: usize, hidden: usize, layers: usize, outputs: usize) -> Self {
        let dims = ArNetDims {
            inputs,
            hidden,
            layers,
            outputs,
        };
        Self {
            data: vec![0.0; dims.len()],
            dims,
        }
    }

    pub fn layers(&self) -> usize {
        self.dims.layers
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Weight matrix of hidden layer `i` (0-based).
    pub fn weight(&self, i: usize) -> &[f64] {
        &self.data[self.dims.ranges().0[i].0.clone()]
    }

    pub fn bias(&self, i: usize) -> &[f64] {
        &self.data[self.dims.ranges().0[i].1.clone()]
    }

    pub fn output(&self) -> &[f64] {
        &self.data[self.dims.ranges().1]
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.dims.ranges().0[i].0.clone();
        &mut self.data[r]
    }

    pub fn bias_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.dims.ranges().0[i].1.clone();
        &mut self.data[r]
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        let r = self.dims.ranges().1;
        &mut self.data[r]
    }
}

/// Forward pass; `acts` receives each hidden layer's post-ReLU output.
fn arnet_raw(dims: &ArNetDims, p: &[f64], z: &[f64], acts: &mut [f64], out: &mut [f64]) {
    let (layers, outr) = dims.ranges();
    let h = dims.hidden;
    for (i, (w, b)) in layers.iter().enumerate() {
        let (rows, cols) = dims.layer(i);
        let (prev, cur) = acts.split_at_mut(i * h);
        let input = if i == 0 { z } else { &prev[(i - 1) * h..] };
        let a = &mut cur[..h];
        a.copy_from_slice(&p[b.clone()]);
        matvec_acc(&p[w.clone()], rows, cols, input, a);
        for v in a.iter_mut() {
            *v = v.max(0.0);
        }
    }
    out.fill(0.0);
    let last = if dims.layers == 0 {
        z
    } else {
        &acts[(dims.layers - 1) * h..dims.layers * h]
    };
    matvec_acc(&p[outr], dims.outputs, dims.out_cols(), last, out);
}

fn arnet_backward(dims: &ArNetDims, p: &[f64], z: &[f64], acts: &[f64], dout: &[f64], grad: &mut [f64]) {
    let (layers, outr) = dims.ranges();
    let h = dims.hidden;
    let l = dims.layers;
    let last = if l == 0 { z } else { &acts[(l - 1) * h..l * h] };
    outer_acc(&mut grad[outr.clone()], dims.outputs, dims.out_cols(), dout, last);
    if l == 0 {
        return;
    }
    let mut dact = vec![0.0; h];
    matvec_t_acc(&p[outr], dims.outputs, h, dout, &mut dact);
    for i in (0..l).rev() {
        let a = &acts[i * h..(i + 1) * h];
        for (d, v) in dact.iter_mut().zip(a) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
        let (rows, cols) = dims.layer(i);
        let input = if i == 0 { z } else { &acts[(i - 1) * h..i * h] };
        let (w, b) = &layers[i];
        outer_acc(&mut grad[w.clone()], rows, cols, &dact, input);
        grad[b.clone()].iter_mut().zip(&dact).for_each(|(g, d)| *g += d);
        if i > 0 {
            let mut next = vec![0.0; h];
            matvec_t_acc(&p[w.clone()], rows, cols, &dact, &mut next);
            dact = next;
        }
    }
}

/// `omega_1 = ReLU(U_1 z + b_1)`, ..., output `U_{l+1} omega_l`. The input
/// `z` lists the most recent observation first.
pub fn arnet_forward(z: &[f64], p: &ArNetParams) -> Result<Vec<f64>> {
    if z.len() != p.dims.inputs {
        return Err(Error::dim(p.dims.inputs, z.len(), "ar-net input"));
    }
    let mut acts = vec![0.0; p.dims.layers * p.dims.hidden];
    let mut out = vec![0.0; p.dims.outputs];
    arnet_raw(&p.dims, &p.data, z, &mut acts, &mut out);
    Ok(out)
}

/// All NP components in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct NpParams {
    pub trend: TrendParams,
    pub seasonality: SeasonalityParams,
    pub arnet: ArNetParams,
    /// Per-step weights on the future regressor.
    pub regressor_weights: Option<Vec<f64>>,
    /// Trend time is `t / time_scale`.
    pub time_scale: f64,
}

impl NpParams {
    /// All-zero parameters for the given geometry.
    pub fn zeros(spec: &NpSpec, lags: usize, horizon: usize, regressor: bool) -> Self {
        let m = spec.changepoints;
        let terms = spec.season_terms();
        Self {
            trend: TrendParams {
                growth: 0.0,
                offset: 0.0,
                changepoints: spec.changepoint_times(),
                growth_adjust: vec![0.0; m],
                offset_adjust: vec![0.0; m],
            },
            seasonality: SeasonalityParams {
                enabled: spec.seasonality,
                periods: if spec.seasonality { spec.periods.clone() } else { Vec::new() },
                order: if spec.seasonality { spec.fourier_order } else { 0 },
                coefficients: vec![(0.0, 0.0); terms],
            },
            arnet: ArNetParams::zeros(lags, spec.ar_hidden, spec.ar_layers, horizon),
            regressor_weights: regressor.then(|| vec![0.0; horizon]),
            time_scale: spec.time_scale,
        }
    }

    /// Structured view of an NP or hybrid model's parameters.
    pub fn from_model(model: &PredictorModel) -> Option<Self> {
        let (spec, reg) = match model.spec() {
            super::ModelSpec::Np(s) => (s, false),
            super::ModelSpec::Hybrid { np, .. } => (np, true),
            _ => return None,
        };
        let shape = model.shape();
        let layout = NpLayout::new(spec, shape.lags, shape.horizon, reg);
        let mut out = Self::zeros(spec, shape.lags, shape.horizon, reg);
        let p = model.params();
        out.trend.growth = p[layout.zeta0];
        out.trend.offset = p[layout.rho0];
        out.trend.growth_adjust = p[layout.zeta.clone()].to_vec();
        out.trend.offset_adjust = p[layout.rho.clone()].to_vec();
        out.seasonality.coefficients = p[layout.season.clone()]
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect();
        out.arnet.data = p[layout.arnet.clone()].to_vec();
        if let Some(r) = &layout.reg {
            out.regressor_weights = Some(p[r.clone()].to_vec());
        }
        Some(out)
    }

    /// Flat vector matching the model layout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.trend.growth, self.trend.offset];
        v.extend(&self.trend.growth_adjust);
        v.extend(&self.trend.offset_adjust);
        if self.seasonality.enabled {
            v.extend(self.seasonality.coefficients.iter().flat_map(|&(a, b)| [a, b]));
        }
        v.extend(&self.arnet.data);
        if let Some(w) = &self.regressor_weights {
            v.extend(w);
        }
        v
    }
}

/// Univariate forecast from `history` (oldest first, length `d`) for the
/// `D` steps starting at time `t`:
/// `trend(t_k / scale) + seasonality(t_k) + arnet(z)[k] + w_k * regressor[k]`.
pub fn np_predict(
    history: &[f64],
    t: f64,
    p: &NpParams,
    regressor: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let z: Vec<f64> = history.iter().rev().copied().collect();
    let mut y = arnet_forward(&z, &p.arnet)?;
    let horizon = y.len();
    if let Some(r) = regressor {
        if r.len() != horizon {
            return Err(Error::dim(horizon, r.len(), "future regressor"));
        }
    }
    for (k, yk) in y.iter_mut().enumerate() {
        let tk = t + k as f64;
        *yk += np_trend(tk / p.time_scale, &p.trend) + np_seasonality(tk, &p.seasonality);
        if let (Some(r), Some(w)) = (regressor, &p.regressor_weights) {
            *yk += w[k] * r[k];
        }
    }
    Ok(y)
}

struct NpLayout {
    zeta0: usize,
    rho0: usize,
    zeta: Range<usize>,
    rho: Range<usize>,
    season: Range<usize>,
    arnet: Range<usize>,
    reg: Option<Range<usize>>,
    total: usize,
}

impl NpLayout {
    fn new(spec: &NpSpec, lags: usize, horizon: usize, regressor: bool) -> Self {
        let mut o = Offsets::default();
        let zeta0 = o.take(1).start;
        let rho0 = o.take(1).start;
        let zeta = o.take(spec.changepoints);
        let rho = o.take(spec.changepoints);
        let season = o.take(2 * spec.season_terms());
        let dims = ArNetDims {
            inputs: lags,
            hidden: spec.ar_hidden,
            layers: spec.ar_layers,
            outputs: horizon,
        };
        let arnet = o.take(dims.len());
        let reg = regressor.then(|| o.take(horizon));
        Self {
            zeta0,
            rho0,
            zeta,
            rho,
            season,
            arnet,
            reg,
            total: o.total(),
        }
    }
}

pub(crate) struct NpKernel {
    f: usize,
    d: usize,
    horizon: usize,
    spec: NpSpec,
    cps: Vec<f64>,
    dims: ArNetDims,
    layout: NpLayout,
    /// Initialise as a regressor passthrough (hybrid correction stage).
    passthrough_init: bool,
}

impl NpKernel {
    pub(crate) fn new(shape: Shape, spec: &NpSpec, regressor: bool) -> Self {
        Self {
            f: shape.features,
            d: shape.lags,
            horizon: shape.horizon,
            cps: spec.changepoint_times(),
            dims: ArNetDims {
                inputs: shape.lags,
                hidden: spec.ar_hidden,
                layers: spec.ar_layers,
                outputs: shape.horizon,
            },
            layout: NpLayout::new(spec, shape.lags, shape.horizon, regressor),
            spec: spec.clone(),
            passthrough_init: regressor,
        }
    }

    fn base(&self, p: &[f64], t: f64) -> f64 {
        let l = &self.layout;
        let trend = trend_raw(
            t / self.spec.time_scale,
            p[l.zeta0],
            p[l.rho0],
            &self.cps,
            &p[l.zeta.clone()],
            &p[l.rho.clone()],
        );
        let season = if self.spec.seasonality {
            season_raw(t, &self.spec.periods, self.spec.fourier_order, &p[l.season.clone()])
        } else {
            0.0
        };
        trend + season
    }

    fn lags_of(&self, x: &[f64], j: usize, z: &mut [f64]) {
        for (l, v) in z.iter_mut().enumerate() {
            *v = x[(self.d - 1 - l) * self.f + j];
        }
    }

    /// Fills `out` and, when given, per-feature AR-Net caches.
    fn run(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64], mut caches: Option<&mut Vec<f64>>) {
        let an = &p[self.layout.arnet.clone()];
        let width = self.dims.layers * self.dims.hidden;
        if let Some(c) = caches.as_deref_mut() {
            c.clear();
            c.resize(self.f * (width + self.d), 0.0);
        }
        let mut z = vec![0.0; self.d];
        let mut acts = vec![0.0; width];
        let mut a = vec![0.0; self.horizon];
        for j in 0..self.f {
            self.lags_of(s.input, j, &mut z);
            arnet_raw(&self.dims, an, &z, &mut acts, &mut a);
            if let Some(c) = caches.as_deref_mut() {
                let base = j * (width + self.d);
                c[base..base + width].copy_from_slice(&acts);
                c[base + width..base + width + self.d].copy_from_slice(&z);
            }
            for k in 0..self.horizon {
                out[k * self.f + j] = a[k];
            }
        }
        for k in 0..self.horizon {
            let b = self.base(p, s.time + k as f64);
            let w = self.layout.reg.as_ref().map(|r| p[r.start + k]);
            for j in 0..self.f {
                let idx = k * self.f + j;
                out[idx] += b;
                if let (Some(w), Some(reg)) = (w, s.regressor) {
                    out[idx] += w * reg[idx];
                }
            }
        }
    }
}

impl Kernel for NpKernel {
    fn n_params(&self) -> usize {
        self.layout.total
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total];
        let (layers, out) = self.dims.ranges();
        let base = self.layout.arnet.start;
        for (i, (w, _)) in layers.iter().enumerate() {
            let fan = self.dims.layer(i).1;
            fill_uniform(rng, &mut p[base + w.start..base + w.end], fan);
        }
        if self.passthrough_init {
            if let Some(r) = &self.layout.reg {
                p[r.clone()].fill(1.0);
            }
        } else {
            fill_uniform(rng, &mut p[base + out.start..base + out.end], self.dims.out_cols());
        }
        p
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]) {
        self.run(p, s, out, None);
    }

    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        _mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64 {
        let l = &self.layout;
        let mut pred = vec![0.0; self.horizon * self.f];
        let mut caches = Vec::new();
        self.run(p, s, &mut pred, Some(&mut caches));
        let (loss, dy) = huber_grad(&pred, s.label, beta);

        let scale = self.spec.time_scale;
        for k in 0..self.horizon {
            let dyk = &dy[k * self.f..(k + 1) * self.f];
            let db: f64 = dyk.iter().sum();
            let t = s.time + k as f64;
            let tau = t / scale;
            grad[l.zeta0] += db * tau;
            grad[l.rho0] += db;
            for (i, &n) in self.cps.iter().enumerate() {
                if tau >= n {
                    grad[l.zeta.start + i] += db * tau;
                    grad[l.rho.start + i] += db;
                }
            }
            if self.spec.seasonality {
                let order = self.spec.fourier_order;
                for (pi, &per) in self.spec.periods.iter().enumerate() {
                    for o in 1..=order {
                        let idx = l.season.start + 2 * (pi * order + o - 1);
                        let w = 2.0 * PI * o as f64 * t / per;
                        grad[idx] += db * w.cos();
                        grad[idx + 1] += db * w.sin();
                    }
                }
            }
            if let (Some(r), Some(reg)) = (&l.reg, s.regressor) {
                grad[r.start + k] += dyk
                    .iter()
                    .zip(&reg[k * self.f..(k + 1) * self.f])
                    .map(|(g, x)| g * x)
                    .sum::<f64>();
            }
        }

        let width = self.dims.layers * self.dims.hidden;
        let an = &p[l.arnet.clone()];
        let gan = &mut grad[l.arnet.clone()];
        let mut dout = vec![0.0; self.horizon];
        for j in 0..self.f {
            let base = j * (width + self.d);
            let acts = &caches[base..base + width];
            let z = &caches[base + width..base + width + self.d];
            for (k, v) in dout.iter_mut().enumerate() {
                *v = dy[k * self.f + j];
            }
            arnet_backward(&self.dims, an, z, acts, &dout, gan);
        }
        loss
    }
}

impl PredictorModel {
    /// Structured NP parameters (NP and hybrid kinds).
    pub fn np_params(&self) -> Option<NpParams> {
        matches!(self.kind(), ModelKind::Np | ModelKind::Hybrid)
            .then(|| NpParams::from_model(self))
            .flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_without_changepoints_is_linear() {
        let p = TrendParams {
            growth: 0.5,
            offset: -1.0,
            ..Default::default()
        };
        assert_eq!(np_trend(4.0, &p), 1.0);
    }

    #[test]
    fn changepoint_boundary_is_inclusive() {
        let p = TrendParams {
            growth: 0.0,
            offset: 0.0,
            changepoints: vec![2.0],
            growth_adjust: vec![0.0],
            offset_adjust: vec![1.0],
        };
        assert_eq!(np_trend(2.0, &p), 1.0);
        assert_eq!(np_trend(2.0 - 1e-12, &p), 0.0);
    }

    #[test]
    fn trend_slope_jumps_by_adjustment() {
        let p = TrendParams {
            growth: 0.3,
            offset: 0.1,
            changepoints: vec![5.0],
            growth_adjust: vec![0.7],
            offset_adjust: vec![0.0],
        };
        let before = np_trend(3.0, &p) - np_trend(2.0, &p);
        let after = np_trend(8.0, &p) - np_trend(7.0, &p);
        assert!((after - before - 0.7).abs() < 1e-12);
    }

    #[test]
    fn seasonality_examples() {
        let mut s = SeasonalityParams {
            enabled: true,
            periods: vec![4.0],
            order: 1,
            coefficients: vec![(0.0, 0.0)],
        };
        assert_eq!(np_seasonality(1.3, &s), 0.0);
        s.coefficients = vec![(1.0, 0.0)];
        assert!(np_seasonality(1.0, &s).abs() < 1e-15);
        s.order = 2;
        s.coefficients = vec![(0.4, -0.2), (0.1, 0.9)];
        let t = 2.7;
        assert!((np_seasonality(t + 4.0, &s) - np_seasonality(t, &s)).abs() < 1e-12);
        s.enabled = false;
        assert_eq!(np_seasonality(t, &s), 0.0);
    }

    #[test]
    fn arnet_zero_and_identity() {
        let p = ArNetParams::zeros(3, 4, 2, 2);
        assert_eq!(arnet_forward(&[1.0, 2.0, 3.0], &p).unwrap(), vec![0.0, 0.0]);

        let mut p = ArNetParams::zeros(3, 3, 1, 3);
        for i in 0..3 {
            p.weight_mut(0)[i * 3 + i] = 1.0;
            p.output_mut()[i * 3 + i] = 1.0;
        }
        let z = [0.5, 0.0, 2.0];
        assert_eq!(arnet_forward(&z, &p).unwrap(), z.to_vec());
        assert!(arnet_forward(&[1.0], &p).is_err());
    }

    #[test]
    fn arnet_reproduces_linear_ar_on_nonnegative_inputs() {
        let mut p = ArNetParams::zeros(3, 3, 1, 2);
        for i in 0..3 {
            p.weight_mut(0)[i * 3 + i] = 1.0;
        }
        let a = [0.6, 0.3, -0.1, 0.2, 0.5, 0.05];
        p.output_mut().copy_from_slice(&a);
        let z = [1.5, 0.25, 3.0];
        let y = arnet_forward(&z, &p).unwrap();
        for k in 0..2 {
            let lin: f64 = (0..3).map(|j| a[k * 3 + j] * z[j]).sum();
            assert_eq!(y[k], lin);
        }
    }

    #[test]
    fn np_component_isolation() {
        let spec = NpSpec {
            changepoints: 0,
            ..Default::default()
        };
        let mut p = NpParams::zeros(&spec, 4, 2, true);
        p.trend.growth = 2.0;
        p.trend.offset = 1.0;
        let y = np_predict(&[1.0, 2.0, 3.0, 4.0], 3.0, &p, Some(&[5.0, 6.0])).unwrap();
        assert_eq!(y, vec![7.0, 9.0]);

        let mut p = NpParams::zeros(&spec, 4, 2, true);
        p.regressor_weights = Some(vec![1.0, 1.0]);
        let y = np_predict(&[1.0, 2.0, 3.0, 4.0], 3.0, &p, Some(&[5.0, -6.0])).unwrap();
        assert_eq!(y, vec![5.0, -6.0]);
        assert!(np_predict(&[0.0; 4], 0.0, &p, Some(&[1.0])).is_err());
    }
}
