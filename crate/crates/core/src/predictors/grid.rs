use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig};
use super::{Dataset, ModelSpec, PredictorModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

/// Cartesian product of hidden widths, depths and learning rates around a
/// base architecture. Empty axes keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub base: ModelSpec,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn with_hidden(spec: &ModelSpec, h: usize) -> ModelSpec {
    let mut s = spec.clone();
    match &mut s {
        ModelSpec::LinearAr => {}
        ModelSpec::Rnn { hidden } | ModelSpec::Lstm { hidden } | ModelSpec::Bilstm { hidden } => {
            *hidden = h
        }
        ModelSpec::Np(np) => np.ar_hidden = h,
        ModelSpec::Hybrid { rnn_hidden, .. } => *rnn_hidden = h,
    }
    s
}

fn with_layers(spec: &ModelSpec, l: usize) -> ModelSpec {
    let mut s = spec.clone();
    if let ModelSpec::Np(np) | ModelSpec::Hybrid { np, .. } = &mut s {
        np.ar_layers = l;
    }
    s
}

impl GridSpace {
    /// Points in lexicographic order of (hidden, layers, learning rate).
    pub fn points(&self) -> Vec<GridPoint> {
        let hs: Vec<Option<usize>> = opt_axis(&self.hidden);
        let ls: Vec<Option<usize>> = opt_axis(&self.layers);
        let lrs: Vec<Option<f64>> = opt_axis(&self.learning_rates);
        let mut out = Vec::new();
        for h in &hs {
            for l in &ls {
                for lr in &lrs {
                    let mut spec = self.base.clone();
                    if let Some(h) = h {
                        spec = with_hidden(&spec, *h);
                    }
                    if let Some(l) = l {
                        spec = with_layers(&spec, *l);
                    }
                    let mut train = self.train.clone();
                    if let Some(lr) = lr {
                        train.learning_rate = *lr;
                    }
                    out.push(GridPoint { spec, train });
                }
            }
        }
        out
    }
}

fn opt_axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub point: GridPoint,
    pub validation_nmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub best: GridPoint,
    pub model: PredictorModel,
    /// One entry per point, in input order.
    pub scores: Vec<GridScore>,
}

/// Trains every point (in parallel) and returns the one with the lowest
/// validation NMSE. Ties go to the smaller hidden width, then the smaller
/// depth, then the earlier point. Points that fail or diverge are scored
/// as missing.
pub fn grid_search(
    points: &[GridPoint],
    train_set: &Dataset,
    validation: &Dataset,
    init_seed: u64,
) -> Result<GridResult> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("grid search space is empty".into()));
    }
    let shape = train_set.shape();
    let runs: Vec<Result<(PredictorModel, f64)>> = points
        .par_iter()
        .map(|pt| {
            let model = PredictorModel::new(pt.spec.clone(), shape, init_seed)?;
            let out = train(&model, train_set, Some(validation), &pt.train)?;
            let score = out
                .best()
                .validation_nmse
                .filter(|v| v.is_finite())
                .ok_or(Error::NonFinite("validation nmse"))?;
            Ok((out.model, score))
        })
        .collect();

    let mut scores = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    let mut models = Vec::with_capacity(points.len());
    for (i, (pt, run)) in points.iter().zip(runs).enumerate() {
        match run {
            Ok((model, score)) => {
                scores.push(GridScore {
                    point: pt.clone(),
                    validation_nmse: Some(score),
                    error: None,
                });
                let better = match best {
                    None => true,
                    Some((j, s)) => {
                        let key = |k: usize| (points[k].spec.hidden(), points[k].spec.layers(), k);
                        score < s || (score == s && key(i) < key(j))
                    }
                };
                if better {
                    best = Some((i, score));
                }
                models.push(Some(model));
            }
            Err(e) => {
                scores.push(GridScore {
                    point: pt.clone(),
                    validation_nmse: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
            }
        }
    }
    let (idx, _) = best.ok_or_else(|| {
        Error::InvalidConfig("every grid point failed to train".into())
    })?;
    Ok(GridResult {
        best_index: idx,
        best: points[idx].clone(),
        model: models[idx].take().expect("best point has a model"),
        scores,
    })
}
