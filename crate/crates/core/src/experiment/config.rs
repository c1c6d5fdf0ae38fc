use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ArTraceConfig;
use crate::error::{Error, Result};
use crate::multiuser::{ProbabilisticOptions, ResourceGrid, Scheme};
use crate::predictors::{GridSpace, ModelSpec, TrainConfig};
use crate::protocol::LinkConfig;
use crate::quantizer::Bits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleUeBitsSweep,
    MultiuserThresholdSweep,
    PredictorBenchmark,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SingleUeBitsSweep => "single_ue_bits_sweep",
            ScenarioKind::MultiuserThresholdSweep => "multiuser_threshold_sweep",
            ScenarioKind::PredictorBenchmark => "predictor_benchmark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiuserSweep {
    pub ues: usize,
    pub grid: ResourceGrid,
    pub thresholds: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub rounds: usize,
    pub probabilistic: ProbabilisticOptions,
    /// Write one JSON-lines round log per (seed, scheme, threshold).
    pub round_logs: bool,
}

impl Default for MultiuserSweep {
    fn default() -> Self {
        let s = crate::multiuser::MultiuserScenario::default();
        Self {
            ues: s.ues,
            grid: s.grid,
            thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            schemes: Scheme::ALL.to_vec(),
            rounds: s.rounds,
            probabilistic: s.probabilistic,
            round_logs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelSpec>,
    /// Grid searched instead of `models` when present.
    pub grid: Option<GridSpace>,
    pub horizons: Vec<usize>,
    /// Input lags; twice the horizon when unset.
    pub lags: Option<usize>,
    pub train: TrainConfig,
    /// Fractions of windows used for training and validation; the rest is
    /// the test set.
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelSpec::LinearAr],
            grid: None,
            horizons: vec![1],
            lags: None,
            train: TrainConfig::default(),
            train_fraction: 0.7,
            validation_fraction: 0.15,
        }
    }
}

/// A scenario file.
///
/// ```toml
/// kind = "single_ue_bits_sweep"
/// seeds = [0, 1, 2]
/// bits = [2, 3, 4, 5, 6]
///
/// [channel]
/// antennas = 16
/// length = 20000
/// coefficients = [[0.99, 0.0]]
///
/// [link]
/// lags = 20
/// predictor = { kind = "linear_ar" }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory; overridden on the command line.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads for sweep points; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Per-UE channel. Feedback scenarios default to a unit-power AR(1)
    /// with coefficient 0.99 over 16 antennas; the benchmark defaults to
    /// the generator's own defaults.
    #[serde(default)]
    pub channel: Option<ArTraceConfig>,
    #[serde(default)]
    pub link: LinkConfig,
    /// Uplink resolutions for the bits sweep.
    #[serde(default)]
    pub bits: Vec<Bits>,
    #[serde(default)]
    pub multiuser: MultiuserSweep,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

impl ExperimentConfig {
    pub fn channel(&self) -> ArTraceConfig {
        match (&self.channel, self.kind) {
            (Some(c), _) => c.clone(),
            (None, ScenarioKind::PredictorBenchmark) => ArTraceConfig::default(),
            (None, ScenarioKind::MultiuserThresholdSweep) => {
                ArTraceConfig::ar1(16, 0, 0.99, 0)
            }
            (None, ScenarioKind::SingleUeBitsSweep) => ArTraceConfig::ar1(16, 20_000, 0.99, 0),
        }
    }

    /// Parses TOML. Multiuser sweeps without a `[link]` table get the
    /// multiuser link defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let has_link = raw.contains_key("link");
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if !has_link && cfg.kind == ScenarioKind::MultiuserThresholdSweep {
            cfg.link = crate::multiuser::MultiuserScenario::default().link;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every problem found, joined into one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.seeds.is_empty() {
            bad.push("seeds: must list at least one seed".to_string());
        }
        let channel = self.channel();
        let mut ch = channel.clone();
        if ch.length == 0 {
            ch.length = 1;
        }
        if let Err(e) = ch.validate() {
            bad.push(format!("channel: {e}"));
        }
        match self.kind {
            ScenarioKind::SingleUeBitsSweep => {
                if self.bits.is_empty() {
                    bad.push("bits: must list at least one resolution".into());
                }
                for b in &self.bits {
                    if let Bits::Finite(v) = b {
                        if !(1..=32).contains(v) {
                            bad.push(format!("bits: {v} is outside 1..=32"));
                        }
                    }
                }
                self.check_link(&mut bad);
                if channel.length < self.link.stream_start() + 1 {
                    bad.push(format!(
                        "channel.length: {} is shorter than link.split.train + link.split.pf_window + 1 = {}",
                        channel.length,
                        self.link.stream_start() + 1
                    ));
                }
            }
            ScenarioKind::MultiuserThresholdSweep => {
                let m = &self.multiuser;
                if m.ues == 0 {
                    bad.push("multiuser.ues: must be >= 1".into());
                }
                if m.rounds == 0 {
                    bad.push("multiuser.rounds: must be >= 1".into());
                }
                if m.thresholds.is_empty() {
                    bad.push("multiuser.thresholds: must list at least one threshold".into());
                }
                for t in &m.thresholds {
                    if !(*t >= 0.0 && t.is_finite()) {
                        bad.push(format!("multiuser.thresholds: {t} must be finite and >= 0"));
                    }
                }
                if m.schemes.is_empty() {
                    bad.push("multiuser.schemes: must list at least one scheme".into());
                }
                if m.grid.data_slots == 0 {
                    bad.push("multiuser.grid.data_slots: must be >= 1".into());
                }
                match &m.grid.contention {
                    None if m.schemes.contains(&Scheme::ErrorBin) => bad.push(
                        "multiuser.grid.contention: required by the error_bin scheme".into(),
                    ),
                    Some(c) => {
                        if !(c.delta_diff > 0.0) || !(c.delta_max > c.delta_min) {
                            bad.push("multiuser.grid.contention: needs delta_diff > 0 and delta_max > delta_min".into());
                        } else if c.mini_slots != c.bins() {
                            bad.push(format!(
                                "multiuser.grid.contention.mini_slots ({}) must equal the bin count {} from delta_min/delta_max/delta_diff",
                                c.mini_slots,
                                c.bins()
                            ));
                        }
                    }
                    None => {}
                }
                self.check_link(&mut bad);
            }
            ScenarioKind::PredictorBenchmark => {
                let b = &self.benchmark;
                if b.models.is_empty() && b.grid.is_none() {
                    bad.push("benchmark.models: must list at least one model or give benchmark.grid".into());
                }
                for m in &b.models {
                    if let Err(e) = m.validate() {
                        bad.push(format!("benchmark.models: {e}"));
                    }
                }
                if b.horizons.is_empty() || b.horizons.contains(&0) {
                    bad.push("benchmark.horizons: must be a nonempty list of values >= 1".into());
                }
                if b.lags == Some(0) {
                    bad.push("benchmark.lags: must be >= 1".into());
                }
                if let Err(e) = b.train.validate() {
                    bad.push(format!("benchmark.train: {e}"));
                }
                let (tf, vf) = (b.train_fraction, b.validation_fraction);
                if !(tf > 0.0 && vf > 0.0 && tf + vf < 1.0) {
                    bad.push("benchmark.train_fraction/validation_fraction: must be > 0 and sum to < 1".into());
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("\n")))
        }
    }

    fn check_link(&self, bad: &mut Vec<String>) {
        if let Err(Error::InvalidConfig(msg)) = self.link.validate() {
            for m in msg.split("; ") {
                bad.push(format!("link: {m}"));
            }
        }
    }
}

/// Parses and validates a config file without running it.
pub fn validate(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}
