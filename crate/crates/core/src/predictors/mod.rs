//! Trainable channel predictors.
//!
//! Every model maps `d` past channel vectors to `D` future ones. Complex
//! vectors enter as `2M` real features per time step (`[re.., im..]`), so a
//! sample input is `d * 2M` reals in chronological order and a prediction is
//! `D * 2M` reals.

mod checkpoint;
mod gradcheck;
mod grid;
mod linalg;
mod linear;
mod lstm;
mod np;
mod rnn;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{window_trace, ChannelTrace, ChannelVector};
use crate::error::{Error, Result};
use crate::metrics::{cosine_similarity, ChannelMatrix};

pub use checkpoint::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use gradcheck::gradient_check;
pub use grid::{grid_search, GridPoint, GridResult, GridScore, GridSpace};
pub use lstm::{bilstm_forward, lstm_cell_forward, Gate, LinearHead, LstmParams};
pub use np::{
    arnet_forward, np_predict, np_seasonality, np_trend, ArNetParams, NpParams, NpSpec,
    SeasonalityParams, TrendParams,
};
pub use rnn::{rnn_forward, RnnParams};
pub use train::{huber_loss, train, EpochStats, TrainConfig, TrainOutcome};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearAr,
    Rnn,
    Lstm,
    Bilstm,
    Np,
    Hybrid,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LinearAr,
    Rnn { hidden: usize },
    Lstm { hidden: usize },
    Bilstm { hidden: usize },
    Np(NpSpec),
    /// RNN whose forecast feeds an NP model as a future regressor.
    Hybrid { rnn_hidden: usize, np: NpSpec },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::LinearAr => ModelKind::LinearAr,
            ModelSpec::Rnn { .. } => ModelKind::Rnn,
            ModelSpec::Lstm { .. } => ModelKind::Lstm,
            ModelSpec::Bilstm { .. } => ModelKind::Bilstm,
            ModelSpec::Np(_) => ModelKind::Np,
            ModelSpec::Hybrid { .. } => ModelKind::Hybrid,
        }
    }

    /// Hidden width used for grid-search tie breaking (0 when absent).
    pub fn hidden(&self) -> usize {
        match self {
            ModelSpec::LinearAr => 0,
            ModelSpec::Rnn { hidden } | ModelSpec::Lstm { hidden } | ModelSpec::Bilstm { hidden } => {
                *hidden
            }
            ModelSpec::Np(np) => np.ar_hidden,
            ModelSpec::Hybrid { rnn_hidden, .. } => *rnn_hidden,
        }
    }

    /// Depth used for grid-search tie breaking.
    pub fn layers(&self) -> usize {
        match self {
            ModelSpec::LinearAr => 0,
            ModelSpec::Np(np) | ModelSpec::Hybrid { np, .. } => np.ar_layers,
            _ => 1,
        }
    }

    /// NP-based specs left at the unit time scale get `scale` instead, so
    /// the trend sees time in units of the training span.
    pub fn with_default_time_scale(&self, scale: f64) -> ModelSpec {
        let mut spec = self.clone();
        if let ModelSpec::Np(np) | ModelSpec::Hybrid { np, .. } = &mut spec {
            if np.time_scale == 1.0 {
                np.time_scale = scale;
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::LinearAr => Ok(()),
            ModelSpec::Rnn { hidden } | ModelSpec::Lstm { hidden } | ModelSpec::Bilstm { hidden } => {
                if *hidden == 0 {
                    Err(Error::InvalidConfig("hidden size must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            ModelSpec::Np(np) => np.validate(),
            ModelSpec::Hybrid { rnn_hidden, np } => {
                if *rnn_hidden == 0 {
                    return Err(Error::InvalidConfig("hybrid rnn_hidden must be >= 1".into()));
                }
                np.validate()
            }
        }
    }
}

/// Input/output geometry of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    /// Real features per time step (`2M`).
    pub features: usize,
    /// Input lags `d`.
    pub lags: usize,
    /// Prediction horizon `D`.
    pub horizon: usize,
}

impl Shape {
    pub fn for_antennas(antennas: usize, lags: usize, horizon: usize) -> Self {
        Self {
            features: 2 * antennas,
            lags,
            horizon,
        }
    }

    pub fn input_len(&self) -> usize {
        self.features * self.lags
    }

    pub fn output_len(&self) -> usize {
        self.features * self.horizon
    }

    fn validate(&self) -> Result<()> {
        if self.features == 0 || self.lags == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig(format!(
                "model shape must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One training example viewed in place.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    /// `d * F` reals, oldest step first.
    pub input: &'a [f64],
    /// `D * F` reals.
    pub label: &'a [f64],
    /// Time index of the first label step.
    pub time: f64,
    /// Optional `D * F` future regressor.
    pub regressor: Option<&'a [f64]>,
}

/// Packed supervised samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Shape,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    times: Vec<f64>,
    regressors: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(shape: Shape, inputs: Vec<f64>, labels: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let n = times.len();
        if inputs.len() != n * shape.input_len() {
            return Err(Error::dim(n * shape.input_len(), inputs.len(), "dataset inputs"));
        }
        if labels.len() != n * shape.output_len() {
            return Err(Error::dim(n * shape.output_len(), labels.len(), "dataset labels"));
        }
        if inputs.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            shape,
            inputs,
            labels,
            times,
            regressors: None,
        })
    }

    /// All windows of `trace`, with times equal to trace indices plus
    /// `time_offset`.
    pub fn from_trace(trace: &ChannelTrace, lags: usize, horizon: usize, time_offset: f64) -> Result<Self> {
        let windows = window_trace(trace, lags, horizon)?;
        let shape = Shape::for_antennas(trace.antennas(), lags, horizon);
        let mut inputs = Vec::with_capacity(windows.len() * shape.input_len());
        let mut labels = Vec::with_capacity(windows.len() * shape.output_len());
        let mut times = Vec::with_capacity(windows.len());
        for w in &windows {
            for v in w.inputs {
                v.write_features(&mut inputs);
            }
            for v in w.labels {
                v.write_features(&mut labels);
            }
            times.push(w.origin as f64 + time_offset);
        }
        Ok(Self {
            shape,
            inputs,
            labels,
            times,
            regressors: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, i: usize) -> SampleRef<'_> {
        let (a, b) = (self.shape.input_len(), self.shape.output_len());
        SampleRef {
            input: &self.inputs[i * a..(i + 1) * a],
            label: &self.labels[i * b..(i + 1) * b],
            time: self.times[i],
            regressor: self.regressors.as_ref().map(|r| &r[i * b..(i + 1) * b]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SampleRef<'_>> {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn has_regressors(&self) -> bool {
        self.regressors.is_some()
    }

    /// Attaches a `D * F` future regressor to every sample.
    pub fn with_regressors(mut self, regressors: Vec<f64>) -> Result<Self> {
        let need = self.len() * self.shape.output_len();
        if regressors.len() != need {
            return Err(Error::dim(need, regressors.len(), "dataset regressors"));
        }
        self.regressors = Some(regressors);
        Ok(self)
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        let (a, b) = (self.shape.input_len(), self.shape.output_len());
        Dataset {
            shape: self.shape,
            inputs: self.inputs[range.start * a..range.end * a].to_vec(),
            labels: self.labels[range.start * b..range.end * b].to_vec(),
            times: self.times[range.clone()].to_vec(),
            regressors: self
                .regressors
                .as_ref()
                .map(|r| r[range.start * b..range.end * b].to_vec()),
        }
    }

    /// Largest sample time, used to scale NP trend time.
    pub fn time_span(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }
}

/// Differentiable forward/backward pass over a flat parameter vector.
pub(crate) trait Kernel: Send + Sync {
    fn n_params(&self) -> usize;

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Width of the hidden state that dropout acts on (0 for none).
    fn dropout_width(&self) -> usize {
        0
    }

    fn forward(&self, p: &[f64], s: &SampleRef<'_>, out: &mut [f64]);

    /// Forward pass with `mask` scaling the dropout state, then adds the
    /// gradient of the sample's Huber loss into `grad`. Returns the loss.
    fn loss_grad(
        &self,
        p: &[f64],
        s: &SampleRef<'_>,
        mask: Option<&[f64]>,
        beta: f64,
        grad: &mut [f64],
    ) -> f64;
}

fn kernel_for(spec: &ModelSpec, shape: Shape) -> Box<dyn Kernel> {
    match spec {
        ModelSpec::LinearAr => Box::new(linear::LinearArKernel::new(shape)),
        ModelSpec::Rnn { hidden } => Box::new(rnn::RnnKernel::new(shape, *hidden)),
        ModelSpec::Lstm { hidden } => Box::new(lstm::LstmKernel::new(shape, *hidden)),
        ModelSpec::Bilstm { hidden } => Box::new(lstm::BiLstmKernel::new(shape, *hidden)),
        ModelSpec::Np(np) => Box::new(np::NpKernel::new(shape, np, false)),
        ModelSpec::Hybrid { np, .. } => Box::new(np::NpKernel::new(shape, np, true)),
    }
}

/// A predictor: architecture, geometry and flat parameters.
///
/// For the hybrid kind `params` holds the NP part and `regressor_source` the
/// RNN that produces its future regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    spec: ModelSpec,
    shape: Shape,
    params: Vec<f64>,
    regressor_source: Option<Box<PredictorModel>>,
}

impl PredictorModel {
    /// Randomly initialised model.
    pub fn new(spec: ModelSpec, shape: Shape, seed: u64) -> Result<Self> {
        spec.validate()?;
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = kernel_for(&spec, shape).init(&mut rng);
        let regressor_source = match &spec {
            ModelSpec::Hybrid { rnn_hidden, .. } => Some(Box::new(PredictorModel::new(
                ModelSpec::Rnn {
                    hidden: *rnn_hidden,
                },
                shape,
                seed,
            )?)),
            _ => None,
        };
        Ok(Self {
            spec,
            shape,
            params,
            regressor_source,
        })
    }

    /// Model with the given parameters.
    pub fn from_params(spec: ModelSpec, shape: Shape, params: Vec<f64>) -> Result<Self> {
        if spec.kind() == ModelKind::Hybrid {
            return Err(Error::Unsupported(
                "hybrid models are built with PredictorModel::hybrid".into(),
            ));
        }
        Self::checked(spec, shape, params, None)
    }

    /// Hybrid model from a trained RNN and NP parameters.
    pub fn hybrid(rnn: PredictorModel, np: NpSpec, np_params: Vec<f64>) -> Result<Self> {
        let rnn_hidden = match rnn.spec {
            ModelSpec::Rnn { hidden } => hidden,
            _ => return Err(Error::InvalidConfig("hybrid regressor must be an RNN".into())),
        };
        let shape = rnn.shape;
        Self::checked(
            ModelSpec::Hybrid { rnn_hidden, np },
            shape,
            np_params,
            Some(Box::new(rnn)),
        )
    }

    fn checked(
        spec: ModelSpec,
        shape: Shape,
        params: Vec<f64>,
        regressor_source: Option<Box<PredictorModel>>,
    ) -> Result<Self> {
        spec.validate()?;
        shape.validate()?;
        let n = kernel_for(&spec, shape).n_params();
        if params.len() != n {
            return Err(Error::dim(n, params.len(), "model parameters"));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            spec,
            shape,
            params,
            regressor_source,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// The RNN feeding a hybrid model.
    pub fn regressor_source(&self) -> Option<&PredictorModel> {
        self.regressor_source.as_deref()
    }

    pub(crate) fn kernel(&self) -> Box<dyn Kernel> {
        kernel_for(&self.spec, self.shape)
    }

    pub(crate) fn set_params(&mut self, params: Vec<f64>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    /// Prediction for one sample given in feature form (no dropout).
    pub fn predict_features(&self, s: &SampleRef<'_>) -> Result<Vec<f64>> {
        if s.input.len() != self.shape.input_len() {
            return Err(Error::dim(self.shape.input_len(), s.input.len(), "model input"));
        }
        let mut out = vec![0.0; self.shape.output_len()];
        match &self.regressor_source {
            Some(rnn) => {
                let reg = rnn.predict_features(s)?;
                let s2 = SampleRef {
                    regressor: Some(&reg),
                    ..*s
                };
                self.kernel().forward(&self.params, &s2, &mut out);
            }
            None => self.kernel().forward(&self.params, s, &mut out),
        }
        Ok(out)
    }

    /// Predicts `h(t) .. h(t+D-1)` from `history = h(t-d) .. h(t-1)`.
    pub fn predict(&self, history: &[ChannelVector], time: f64) -> Result<Vec<ChannelVector>> {
        if history.len() != self.shape.lags {
            return Err(Error::dim(self.shape.lags, history.len(), "history length"));
        }
        let mut input = Vec::with_capacity(self.shape.input_len());
        for v in history {
            v.check_len(self.shape.features / 2, "history vector")?;
            v.write_features(&mut input);
        }
        let out = self.predict_features(&SampleRef {
            input: &input,
            label: &[],
            time,
            regressor: None,
        })?;
        out.chunks(self.shape.features)
            .map(ChannelVector::from_features)
            .collect()
    }

    /// Predictions for every sample, concatenated.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.len() * self.shape.output_len());
        for s in data.iter() {
            out.extend(self.predict_features(&s)?);
        }
        Ok(out)
    }

    /// Lag coefficients of a linear AR model, `[horizon][lag]`, lag 1 first.
    pub fn ar_coefficients(&self) -> Option<Vec<Vec<f64>>> {
        (self.kind() == ModelKind::LinearAr).then(|| {
            self.params[..self.shape.horizon * self.shape.lags]
                .chunks(self.shape.lags)
                .map(<[f64]>::to_vec)
                .collect()
        })
    }
}

/// Predictor NMSE and cosine similarity over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nmse: f64,
    pub cosine: f64,
}

/// Mean per-sample NMSE (over all `D` steps jointly) and mean per-step
/// cosine similarity.
pub fn evaluate(model: &PredictorModel, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Undefined("evaluation over an empty dataset"));
    }
    if data.shape() != model.shape() {
        return Err(Error::InvalidConfig("dataset and model shapes differ".into()));
    }
    let f = model.shape().features;
    let mut nmse = 0.0;
    let mut cos = 0.0;
    for s in data.iter() {
        let pred = model.predict_features(&s)?;
        let den: f64 = s.label.iter().map(|v| v * v).sum();
        if den == 0.0 {
            return Err(Error::Undefined("nmse with zero-norm label"));
        }
        let num: f64 = pred.iter().zip(s.label).map(|(a, b)| (a - b).powi(2)).sum();
        nmse += num / den;
        let cols = |v: &[f64]| -> Result<ChannelMatrix> {
            let vs = v
                .chunks(f)
                .map(ChannelVector::from_features)
                .collect::<Result<Vec<_>>>()?;
            ChannelMatrix::from_columns(&vs)
        };
        cos += cosine_similarity(&cols(&pred)?, &cols(s.label)?).unwrap_or(0.0);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        nmse: nmse / n,
        cosine: cos / n,
    })
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` fill.
pub(crate) fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize) {
    use rand::Rng;
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-a..a);
    }
}
