use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One (sweep coordinate, seed) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema: u32,
    pub scenario: String,
    /// Curve key: feedback method, multiuser scheme or model label.
    pub curve: String,
    pub x_name: String,
    pub x: f64,
    pub seed: u64,
    pub nmse: f64,
    pub cosine: f64,
    pub precoding_gain: f64,
    pub mean_bits: f64,
    /// `ok`, or `failed: <reason>` with NaN metrics.
    pub status: String,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn numeric(&self, col: &str) -> Option<f64> {
        Some(match col {
            "x" => self.x,
            "seed" => self.seed as f64,
            "nmse" => self.nmse,
            "cosine" => self.cosine,
            "precoding_gain" => self.precoding_gain,
            "mean_bits" => self.mean_bits,
            "schema" => self.schema as f64,
            _ => return None,
        })
    }

    fn text(&self, col: &str) -> Option<String> {
        Some(match col {
            "scenario" => self.scenario.clone(),
            "curve" => self.curve.clone(),
            "x_name" => self.x_name.clone(),
            "status" => self.status.clone(),
            c => return self.numeric(c).map(|v| v.to_string()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<results>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(csv_err)?;
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Parse {
        offset,
        message: e.to_string(),
    }
}

/// Which columns to plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub group_by: String,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            x: "x".into(),
            y: "nmse".into(),
            group_by: "curve".into(),
        }
    }
}

/// Mean and standard error of `y` over seeds for each (group, x), as CSV
/// with columns `group,x,mean,stderr,n`. Failed rows are skipped.
pub fn emit_plot_data(table: &ResultTable, spec: &PlotSpec) -> Result<String> {
    let probe = ResultRow {
        schema: 0,
        scenario: String::new(),
        curve: String::new(),
        x_name: String::new(),
        x: 0.0,
        seed: 0,
        nmse: 0.0,
        cosine: 0.0,
        precoding_gain: 0.0,
        mean_bits: 0.0,
        status: String::new(),
    };
    for (name, col) in [("x", &spec.x), ("y", &spec.y)] {
        if probe.numeric(col).is_none() {
            return Err(Error::InvalidConfig(format!("unknown numeric {name} column `{col}`")));
        }
    }
    if probe.text(&spec.group_by).is_none() {
        return Err(Error::InvalidConfig(format!("unknown group column `{}`", spec.group_by)));
    }

    let mut groups: BTreeMap<(String, u64), (f64, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<(String, u64)> = Vec::new();
    for r in table.rows.iter().filter(|r| r.ok()) {
        let g = r.text(&spec.group_by).unwrap();
        let x = r.numeric(&spec.x).unwrap();
        let key = (g, x.to_bits());
        let e = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (x, Vec::new())
        });
        e.1.push(r.numeric(&spec.y).unwrap());
    }
    let mut out = format!("{},{},mean,stderr,n\n", spec.group_by, spec.x);
    for key in order {
        let (x, ys) = &groups[&key];
        let (mean, se) = mean_stderr(ys);
        writeln!(out, "{},{},{},{},{}", key.0, x, mean, se, ys.len()).unwrap();
    }
    Ok(out)
}

/// Sample mean and standard error (`s / sqrt(n)`, zero for one value).
pub fn mean_stderr(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    if ys.len() < 2 {
        return (mean, 0.0);
    }
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(curve: &str, x: f64, seed: u64, nmse: f64) -> ResultRow {
        ResultRow {
            schema: SCHEMA_VERSION,
            scenario: "s".into(),
            curve: curve.into(),
            x_name: "bits".into(),
            x,
            seed,
            nmse,
            cosine: 1.0,
            precoding_gain: 1.0,
            mean_bits: 4.0,
            status: "ok".into(),
        }
    }

    #[test]
    fn plot_statistics() {
        let t = ResultTable {
            rows: vec![row("a", 2.0, 0, 0.1), row("a", 2.0, 1, 0.3), row("b", 2.0, 0, 0.5)],
        };
        let out = emit_plot_data(&t, &PlotSpec::default()).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "curve,x,mean,stderr,n");
        let a: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!((a[1] - 0.2).abs() < 1e-15);
        assert!((a[2] - 0.1).abs() < 1e-15);
        assert_eq!(lines[2], "b,2,0.5,0,1");
    }

    #[test]
    fn identical_seeds_zero_stderr() {
        assert_eq!(mean_stderr(&[0.4, 0.4]).1, 0.0);
        assert_eq!(mean_stderr(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn unknown_column() {
        let t = ResultTable::default();
        let spec = PlotSpec {
            y: "nope".into(),
            ..Default::default()
        };
        assert!(emit_plot_data(&t, &spec).is_err());
    }

    #[test]
    fn csv_round_trip_with_failure() {
        let mut bad = row("a", 1.0, 0, f64::NAN);
        bad.status = "failed: trace too short, need 10".into();
        let t = ResultTable {
            rows: vec![row("a", 2.0, 0, 0.1), bad],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ResultTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1].status, t.rows[1].status);
        assert!(back.rows[1].nmse.is_nan());
        assert_eq!(back.failures(), 1);
    }
}
