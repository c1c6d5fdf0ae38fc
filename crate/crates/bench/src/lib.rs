//! Shared fixtures for the criterion benches.

use csilabs::multiuser::{prepare_links, scenario_traces, MultiuserScenario};
use csilabs::predictors::{Dataset, ModelSpec, PredictorModel, Shape};
use csilabs::protocol::PreparedLink;
use csilabs::{generate_ar_trace, ArTraceConfig, ChannelTrace, ChannelVector};

/// Unit-power AR(1) trace with coefficient 0.99.
pub fn trace(antennas: usize, length: usize, seed: u64) -> ChannelTrace {
    let t = generate_ar_trace(&ArTraceConfig::ar1(antennas, length, 0.99, seed)).expect("valid AR config");
    t.normalized().0
}

/// `(targets, regressors)` for a PF fit over `pairs` consecutive samples.
pub fn pf_problem(antennas: usize, pairs: usize) -> (Vec<ChannelVector>, Vec<ChannelVector>) {
    let t = trace(antennas, pairs + 1, 1);
    let s = t.samples();
    (s[1..].to_vec(), s[..pairs].to_vec())
}

/// A freshly initialised model and a small dataset with matching shape.
pub fn model_and_data(spec: ModelSpec, antennas: usize, lags: usize) -> (PredictorModel, Dataset) {
    let t = trace(antennas, lags + 64, 2);
    let data = Dataset::from_trace(&t, lags, 1, 0.0).expect("trace long enough");
    let spec = spec.with_default_time_scale(64.0);
    let model = PredictorModel::new(spec, Shape::for_antennas(antennas, lags, 1), 0).expect("valid spec");
    (model, data)
}

/// The default multiuser scenario with `ues` UEs and no MLaBE replica.
pub fn scenario(ues: usize) -> MultiuserScenario {
    let mut s = MultiuserScenario {
        ues,
        ..Default::default()
    };
    s.link.mlabe = false;
    s
}

pub fn prepared(s: &MultiuserScenario) -> Vec<PreparedLink> {
    let traces = scenario_traces(s).expect("valid scenario");
    prepare_links(&traces, &s.link).expect("links verify")
}
