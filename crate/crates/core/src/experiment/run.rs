use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ScenarioKind};
use super::table::{ResultRow, ResultTable, SCHEMA_VERSION};
use crate::channel::{generate_ar_trace, ArTraceConfig, ChannelVector};
use crate::error::{Error, Result};
use crate::metrics::{ChannelMatrix, MetricAccumulator, MetricSummary};
use crate::multiuser::{
    prepare_links, run_rounds, scenario_traces, write_round_log, MultiuserScenario, RoundParams,
    RoundRecord,
};
use crate::predictors::{grid_search, train, Dataset, GridSpace, ModelSpec, PredictorModel, Shape};
use crate::protocol::{run_single_ue_loop, LinkConfig};
use crate::quantizer::Bits;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; falls back to the config's `output`, then `results`.
    pub out: Option<PathBuf>,
    /// Replaces the seed list with this single seed.
    pub seed_override: Option<u64>,
    /// Replaces the config's worker count.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub rows: usize,
    pub failures: usize,
    pub wall_time_s: f64,
}

/// A named round log produced by a multiuser sweep.
pub struct RoundLog {
    pub name: String,
    pub records: Vec<RoundRecord>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    artifact: &'static str,
    version: &'static str,
    scenario: &'static str,
    config_path: String,
    config_sha256: String,
    seeds: &'a [u64],
    workers: usize,
    results: String,
    round_logs: Vec<String>,
    rows: usize,
    failures: usize,
    started_unix: u64,
    wall_time_s: f64,
}

/// Loads, validates and runs a config file, writing `results.csv`,
/// `manifest.toml` and any round logs into the output directory.
pub fn run(config_path: impl AsRef<Path>, opts: &RunOptions) -> Result<RunReport> {
    let path = config_path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Schema(format!("config is not UTF-8: {e}")))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = opts.seed_override {
        cfg.seeds = vec![s];
    }
    if let Some(w) = opts.workers {
        cfg.workers = w;
    }
    cfg.validate()?;

    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let (table, logs) = execute(&cfg)?;

    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let results = out_dir.join("results.csv");
    let file = fs::File::create(&results).map_err(|e| Error::io(&results, e))?;
    table.write_csv(std::io::BufWriter::new(file))?;

    let mut log_names = Vec::new();
    if !logs.is_empty() {
        let dir = out_dir.join("rounds");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for log in &logs {
            let p = dir.join(format!("{}.jsonl", log.name));
            let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            write_round_log(std::io::BufWriter::new(f), &log.records).map_err(|e| Error::io(&p, e))?;
            log_names.push(format!("rounds/{}.jsonl", log.name));
        }
    }

    let wall_time_s = started.elapsed().as_secs_f64();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: cfg.kind.name(),
        config_path: path.display().to_string(),
        config_sha256: hex::encode(Sha256::digest(&bytes)),
        seeds: &cfg.seeds,
        workers: cfg.workers,
        results: "results.csv".into(),
        round_logs: log_names,
        rows: table.rows.len(),
        failures: table.failures(),
        started_unix,
        wall_time_s,
    };
    let manifest_path = out_dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(RunReport {
        out_dir,
        results,
        manifest: manifest_path,
        rows: table.rows.len(),
        failures: table.failures(),
        wall_time_s,
    })
}

/// Runs every sweep point of a validated config. Points run in parallel
/// on `cfg.workers` threads; rows come back in sweep order. A failing
/// point yields rows marked `failed` instead of aborting the run.
pub fn execute(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<RoundLog>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cfg.kind {
        ScenarioKind::SingleUeBitsSweep => Ok((bits_sweep(cfg), Vec::new())),
        ScenarioKind::MultiuserThresholdSweep => Ok(threshold_sweep(cfg)),
        ScenarioKind::PredictorBenchmark => Ok((benchmark(cfg), Vec::new())),
    })
}

fn row(kind: ScenarioKind, curve: &str, x_name: &str, x: f64, seed: u64) -> ResultRow {
    ResultRow {
        schema: SCHEMA_VERSION,
        scenario: kind.name().into(),
        curve: curve.into(),
        x_name: x_name.into(),
        x,
        seed,
        nmse: f64::NAN,
        cosine: f64::NAN,
        precoding_gain: f64::NAN,
        mean_bits: f64::NAN,
        status: "ok".into(),
    }
}

fn filled(mut r: ResultRow, m: &MetricSummary, mean_bits: f64) -> ResultRow {
    r.nmse = m.nmse;
    r.cosine = m.cosine;
    r.precoding_gain = m.precoding_gain;
    r.mean_bits = mean_bits;
    r
}

fn failed(mut r: ResultRow, e: &Error) -> ResultRow {
    r.status = format!("failed: {e}");
    r
}

fn bits_x(b: Bits) -> f64 {
    match b {
        Bits::Finite(v) => v as f64,
        Bits::Infinite => f64::INFINITY,
    }
}

fn bits_sweep(cfg: &ExperimentConfig) -> ResultTable {
    let kind = cfg.kind;
    let points: Vec<(u64, Bits)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.bits.iter().map(move |&b| (s, b)))
        .collect();
    let mut curves = vec!["csilabs", "without_ml"];
    if cfg.link.mlabe {
        curves.push("mlabe");
    }
    let rows: Vec<Vec<ResultRow>> = points
        .par_iter()
        .map(|&(seed, bits)| {
            let x = bits_x(bits);
            let base: Vec<ResultRow> = curves.iter().map(|c| row(kind, c, "bits", x, seed)).collect();
            let out = (|| {
                let trace = generate_ar_trace(&ArTraceConfig {
                    seed,
                    ..cfg.channel()
                })?;
                let link = LinkConfig {
                    bits,
                    seed,
                    ..cfg.link.clone()
                };
                run_single_ue_loop(&trace, &link)
            })();
            match out {
                Ok(r) => {
                    let n = r.steps.len() as f64;
                    let mut v = vec![
                        filled(base[0].clone(), &r.csilabs, r.uplink_bits as f64 / n),
                        filled(base[1].clone(), &r.baseline, r.baseline_bits as f64 / n),
                    ];
                    if let Some(m) = &r.mlabe {
                        v.push(filled(base[2].clone(), m, r.uplink_bits as f64 / n));
                    }
                    v
                }
                Err(e) => base.into_iter().map(|b| failed(b, &e)).collect(),
            }
        })
        .collect();
    ResultTable {
        rows: rows.into_iter().flatten().collect(),
    }
}

fn threshold_sweep(cfg: &ExperimentConfig) -> (ResultTable, Vec<RoundLog>) {
    let kind = cfg.kind;
    let m = &cfg.multiuser;
    let combos: Vec<(crate::multiuser::Scheme, f64)> = m
        .schemes
        .iter()
        .flat_map(|&s| m.thresholds.iter().map(move |&t| (s, t)))
        .collect();
    let per_seed: Vec<(Vec<ResultRow>, Vec<RoundLog>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let scenario = MultiuserScenario {
                ues: m.ues,
                grid: m.grid,
                rounds: m.rounds,
                seed,
                channel: cfg.channel(),
                link: LinkConfig {
                    seed,
                    ..cfg.link.clone()
                },
                probabilistic: m.probabilistic,
                ..Default::default()
            };
            let links = scenario_traces(&scenario).and_then(|t| prepare_links(&t, &scenario.link));
            let mut rows = Vec::with_capacity(combos.len());
            let mut logs = Vec::new();
            for &(scheme, threshold) in &combos {
                let r = row(kind, scheme.name(), "threshold", threshold, seed);
                let params = RoundParams {
                    scheme,
                    threshold,
                    ..scenario.round_params()
                };
                let res = links.as_ref().map_err(clone_err).and_then(|l| run_rounds(l, &params));
                match res.and_then(|o| {
                    let s = o.summary.ok_or(Error::Undefined("metrics over zero rounds"))?;
                    Ok((o.records, s, o.total_bits))
                }) {
                    Ok((records, s, bits)) => {
                        rows.push(filled(r, &s, bits as f64 / m.rounds as f64));
                        if m.round_logs {
                            logs.push(RoundLog {
                                name: format!("seed{seed}_{scheme}_{threshold}"),
                                records,
                            });
                        }
                    }
                    Err(e) => rows.push(failed(r, &e)),
                }
            }
            (rows, logs)
        })
        .collect();
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (r, l) in per_seed {
        rows.extend(r);
        logs.extend(l);
    }
    (ResultTable { rows }, logs)
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidConfig(format!("link preparation failed: {e}"))
}

/// Short curve label for a model.
pub fn model_label(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::LinearAr => "linear_ar".into(),
        ModelSpec::Rnn { hidden } => format!("rnn_h{hidden}"),
        ModelSpec::Lstm { hidden } => format!("lstm_h{hidden}"),
        ModelSpec::Bilstm { hidden } => format!("bilstm_h{hidden}"),
        ModelSpec::Np(_) => "np".into(),
        ModelSpec::Hybrid { rnn_hidden, .. } => format!("hybrid_h{rnn_hidden}"),
    }
}

enum Candidate<'a> {
    Model(&'a ModelSpec),
    Grid(&'a GridSpace),
}

fn benchmark(cfg: &ExperimentConfig) -> ResultTable {
    let kind = cfg.kind;
    let b = &cfg.benchmark;
    let cands: Vec<Candidate> = match &b.grid {
        Some(g) => vec![Candidate::Grid(g)],
        None => b.models.iter().map(Candidate::Model).collect(),
    };
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        for &h in &b.horizons {
            for c in &cands {
                points.push((seed, h, c));
            }
        }
    }
    let rows: Vec<ResultRow> = points
        .par_iter()
        .map(|&(seed, horizon, cand)| {
            let label = match cand {
                Candidate::Model(m) => model_label(m),
                Candidate::Grid(_) => "grid_best".into(),
            };
            let r = row(kind, &label, "horizon", horizon as f64, seed);
            match bench_point(cfg, seed, horizon, cand) {
                Ok(m) => filled(r, &m, 0.0),
                Err(e) => failed(r, &e),
            }
        })
        .collect();
    ResultTable { rows }
}

fn bench_point(cfg: &ExperimentConfig, seed: u64, horizon: usize, cand: &Candidate) -> Result<MetricSummary> {
    let b = &cfg.benchmark;
    let (trace, _) = generate_ar_trace(&ArTraceConfig {
        seed,
        ..cfg.channel()
    })?
    .normalized();
    let lags = b.lags.unwrap_or(crate::channel::default_lags(horizon));
    let data = Dataset::from_trace(&trace, lags, horizon, 0.0)?;
    let n = data.len();
    let a = (n as f64 * b.train_fraction) as usize;
    let v = (n as f64 * (b.train_fraction + b.validation_fraction)) as usize;
    if a == 0 || v <= a || v >= n {
        return Err(Error::TraceTooShort {
            required: lags + horizon + 3,
            actual: trace.len(),
        });
    }
    let (tr, va, te) = (data.subset(0..a), data.subset(a..v), data.subset(v..n));
    let model = match cand {
        Candidate::Model(spec) => {
            let spec = spec.with_default_time_scale(a as f64);
            let init = PredictorModel::new(spec, Shape::for_antennas(trace.antennas(), lags, horizon), seed)?;
            let tc = crate::predictors::TrainConfig {
                seed,
                ..b.train.clone()
            };
            train(&init, &tr, Some(&va), &tc)?.model
        }
        Candidate::Grid(g) => {
            let mut pts = g.points();
            for p in &mut pts {
                p.spec = p.spec.with_default_time_scale(a as f64);
                p.train.seed = seed;
            }
            grid_search(&pts, &tr, &va, seed)?.model
        }
    };
    let f = trace.antennas() * 2;
    let mut acc = MetricAccumulator::default();
    for s in te.iter() {
        let pred = model.predict_features(&s)?;
        for (p, l) in pred.chunks(f).zip(s.label.chunks(f)) {
            acc.push(
                &ChannelMatrix::from_vector(&ChannelVector::from_features(p)?),
                &ChannelMatrix::from_vector(&ChannelVector::from_features(l)?),
            )?;
        }
    }
    acc.summary()
}
