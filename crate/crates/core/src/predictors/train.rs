use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Kernel, ModelKind, PredictorModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub huber_beta: f64,
    pub dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            huber_beta: 1.0,
            dropout: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.huber_beta > 0.0) {
            bad.push(format!("huber_beta must be > 0, got {}", self.huber_beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            bad.push("adam_eps must be > 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }
}

/// Mean Huber loss: `e^2 / (2 beta)` for `|e| <= beta`, else `|e| - beta / 2`.
pub fn huber_loss(pred: &[f64], label: &[f64], beta: f64) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::dim(label.len(), pred.len(), "huber loss operands"));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig(format!("huber beta must be > 0, got {beta}")));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(huber_grad(pred, label, beta).0)
}

/// Mean Huber loss and its gradient with respect to `pred`.
pub(crate) fn huber_grad(pred: &[f64], label: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let dy = pred
        .iter()
        .zip(label)
        .map(|(p, y)| {
            let e = p - y;
            if e.abs() <= beta {
                loss += e * e / (2.0 * beta);
                e / beta / n
            } else {
                loss += e.abs() - beta / 2.0;
                e.signum() / n
            }
        })
        .collect();
    (loss / n, dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean Huber loss over the training set, dropout off.
    pub train_loss: f64,
    pub validation_nmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (epoch 0 is the initial model).
    pub model: PredictorModel,
    pub initial: EpochStats,
    /// One entry per epoch.
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// History of the RNN stage of a hybrid model.
    pub regressor_history: Option<Vec<EpochStats>>,
}

impl TrainOutcome {
    pub fn best(&self) -> EpochStats {
        if self.best_epoch == 0 {
            self.initial
        } else {
            self.history[self.best_epoch - 1]
        }
    }
}

/// Mini-batch Adam on the mean Huber loss.
///
/// The returned model carries the parameters with the lowest validation
/// NMSE, or the lowest training loss when no validation set is given; the
/// initial parameters are a candidate. Hybrid models train the RNN first
/// and then the NP stage on the RNN's forecasts.
pub fn train(
    model: &PredictorModel,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one sample".into()));
    }
    for d in std::iter::once(train_set).chain(validation) {
        if d.shape() != model.shape() {
            return Err(Error::InvalidConfig("dataset and model shapes differ".into()));
        }
    }
    if model.kind() == ModelKind::Hybrid {
        return train_hybrid(model, train_set, validation, cfg);
    }
    train_flat(model, train_set, validation, cfg)
}

fn train_hybrid(
    model: &PredictorModel,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let rnn = model
        .regressor_source()
        .ok_or_else(|| Error::InvalidConfig("hybrid model without RNN stage".into()))?;
    let rnn_out = train_flat(rnn, train_set, validation, cfg)?;
    let rnn = rnn_out.model;
    let attach = |d: &Dataset| -> Result<Dataset> {
        let regs = rnn.predict_dataset(d)?;
        d.clone().with_regressors(regs)
    };
    let tr = attach(train_set)?;
    let va = validation.map(attach).transpose()?;
    let mut np_model = model.clone();
    np_model.regressor_source = Some(Box::new(rnn));
    let mut out = train_flat(&np_model, &tr, va.as_ref(), cfg)?;
    out.regressor_history = Some(rnn_out.history);
    Ok(out)
}

fn dataset_loss(kernel: &dyn Kernel, p: &[f64], data: &Dataset, beta: f64) -> f64 {
    let out_len = data.shape().output_len();
    let total: f64 = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i);
            let mut pred = vec![0.0; out_len];
            kernel.forward(p, &s, &mut pred);
            huber_grad(&pred, s.label, beta).0
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / data.len() as f64
}

fn dataset_nmse(kernel: &dyn Kernel, p: &[f64], data: &Dataset) -> f64 {
    let out_len = data.shape().output_len();
    let total: f64 = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i);
            let mut pred = vec![0.0; out_len];
            kernel.forward(p, &s, &mut pred);
            let num: f64 = pred.iter().zip(s.label).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = s.label.iter().map(|v| v * v).sum();
            num / den
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / data.len() as f64
}

fn train_flat(
    model: &PredictorModel,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let kernel = model.kernel();
    let kernel: &dyn Kernel = kernel.as_ref();
    let np = kernel.n_params();
    let beta = cfg.huber_beta;
    let stats = |epoch: usize, p: &[f64]| EpochStats {
        epoch,
        train_loss: dataset_loss(kernel, p, train_set, beta),
        validation_nmse: validation.map(|v| dataset_nmse(kernel, p, v)),
    };
    let criterion = |s: &EpochStats| s.validation_nmse.unwrap_or(s.train_loss);

    let mut p = model.params().to_vec();
    let initial = stats(0, &p);
    let mut best = (criterion(&initial), p.clone(), 0usize);
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = kernel.dropout_width();
    let keep = 1.0 - cfg.dropout;
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let masks: Vec<Option<Vec<f64>>> = batch
                .iter()
                .map(|_| {
                    (cfg.dropout > 0.0 && width > 0).then(|| {
                        (0..width)
                            .map(|_| if rng.random::<f64>() < cfg.dropout { 0.0 } else { 1.0 / keep })
                            .collect()
                    })
                })
                .collect();
            let per_sample = |(&i, mask): (&usize, &Option<Vec<f64>>)| {
                let mut g = vec![0.0; np];
                let l = kernel.loss_grad(&p, &train_set.get(i), mask.as_deref(), beta, &mut g);
                (l, g)
            };
            let parts: Vec<(f64, Vec<f64>)> = if np * batch.len() >= 4096 {
                batch.par_iter().zip(masks.par_iter()).map(per_sample).collect()
            } else {
                batch.iter().zip(masks.iter()).map(per_sample).collect()
            };
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; np];
            for (l, g) in &parts {
                loss += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            step += 1;
            let c1 = 1.0 - cfg.adam_beta1.powi(step);
            let c2 = 1.0 - cfg.adam_beta2.powi(step);
            for j in 0..np {
                let g = grad[j] * scale;
                m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g;
                v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g * g;
                p[j] -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
            }
        }
        let s = stats(epoch, &p);
        let c = criterion(&s);
        if !c.is_finite() || !s.train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: s.train_loss,
            });
        }
        if c < best.0 {
            best = (c, p.clone(), epoch);
        }
        history.push(s);
    }

    let mut out = model.clone();
    out.set_params(best.1);
    Ok(TrainOutcome {
        model: out,
        initial,
        history,
        best_epoch: best.2,
        regressor_history: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_ar_trace, ArTraceConfig};
    use crate::predictors::{ModelSpec, Shape};

    #[test]
    fn huber_examples() {
        assert_eq!(huber_loss(&[1.0], &[1.0], 1.0).unwrap(), 0.0);
        assert_eq!(huber_loss(&[0.5], &[0.0], 1.0).unwrap(), 0.125);
        assert_eq!(huber_loss(&[2.0], &[0.0], 1.0).unwrap(), 1.5);
        assert!(huber_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    fn constant_dataset(c: f64, n: usize) -> Dataset {
        let shape = Shape {
            features: 2,
            lags: 3,
            horizon: 1,
        };
        Dataset::new(
            shape,
            vec![c; n * 6],
            vec![c; n * 2],
            (0..n).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = constant_dataset(0.5, 10);
        let m = PredictorModel::new(ModelSpec::Rnn { hidden: 3 }, ds.shape(), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&m, &ds, None, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.is_empty());
    }

    #[test]
    fn constant_target_is_learned() {
        let ds = constant_dataset(0.7, 1000);
        let m = PredictorModel::new(ModelSpec::LinearAr, ds.shape(), 0).unwrap();
        let out = train(&m, &ds, None, &TrainConfig::default()).unwrap();
        assert_eq!(out.history.len(), 50);
        assert!(out.best().train_loss < 1e-6, "{:?}", out.best());
        let pred = out.model.predict_features(&ds.get(0)).unwrap();
        assert!(pred.iter().all(|v| (v - 0.7).abs() < 1e-3), "{pred:?}");
    }

    #[test]
    fn ar1_coefficient_is_recovered() {
        let tr = generate_ar_trace(&ArTraceConfig::ar1(4, 5000, 0.9, 2)).unwrap();
        let ds = Dataset::from_trace(&tr, 2, 1, 0.0).unwrap();
        let m = PredictorModel::new(ModelSpec::LinearAr, ds.shape(), 0).unwrap();
        let out = train(&m, &ds, None, &TrainConfig::default()).unwrap();
        let a = out.model.ar_coefficients().unwrap();
        assert!((a[0][0] - 0.9).abs() < 0.05, "{a:?}");
    }

    #[test]
    fn checkpointed_loss_never_exceeds_initial() {
        let tr = generate_ar_trace(&ArTraceConfig {
            antennas: 2,
            length: 300,
            ..Default::default()
        })
        .unwrap();
        let ds = Dataset::from_trace(&tr, 4, 1, 0.0).unwrap();
        let m = PredictorModel::new(ModelSpec::Lstm { hidden: 4 }, ds.shape(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let out = train(&m, &ds, None, &cfg).unwrap();
        assert!(out.best().train_loss <= out.initial.train_loss);
        // Bit-reproducible.
        assert_eq!(train(&m, &ds, None, &cfg).unwrap().model, out.model);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = constant_dataset(1e300, 40);
        let m = PredictorModel::new(ModelSpec::LinearAr, ds.shape(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            ..Default::default()
        };
        assert!(matches!(train(&m, &ds, None, &cfg), Err(Error::Diverged { .. })));
    }
}
