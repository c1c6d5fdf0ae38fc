//! Model checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CSIM"
//! 4       2     version (= 1)
//! 6       2     reserved (= 0)
//! 8       4     header length H
//! 12      H     JSON header: {"spec": .., "shape": .., "regressor_params": n}
//! 12+H    8     parameter count P
//! 20+H    8*P   parameters, f64 little-endian
//! ```
//!
//! For hybrid models the first `regressor_params` values belong to the RNN
//! stage and the rest to the NP stage.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, PredictorModel, Shape};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"CSIM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    shape: Shape,
    regressor_params: usize,
}

pub fn write_model<W: Write>(model: &PredictorModel, mut w: W) -> std::io::Result<()> {
    let rnn = model.regressor_source();
    let header = Header {
        spec: model.spec().clone(),
        shape: model.shape(),
        regressor_params: rnn.map_or(0, PredictorModel::n_params),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    let params: Vec<f64> = rnn
        .map(|r| r.params().to_vec())
        .unwrap_or_default()
        .into_iter()
        .chain(model.params().iter().copied())
        .collect();
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * params.len());
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_model(model: &PredictorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn take<'a>(b: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if b.len() - *pos < n {
        return Err(parse_err(b.len(), format!("unexpected end of data while reading {what}")));
    }
    let s = &b[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn decode(b: &[u8]) -> Result<PredictorModel> {
    let mut pos = 0;
    if take(b, &mut pos, 4, "magic")? != MODEL_MAGIC {
        return Err(parse_err(0, "bad magic, not a model checkpoint"));
    }
    let version = u16::from_le_bytes(take(b, &mut pos, 2, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(parse_err(4, format!("unsupported checkpoint version {version}")));
    }
    take(b, &mut pos, 2, "reserved")?;
    let hlen = u32::from_le_bytes(take(b, &mut pos, 4, "header length")?.try_into().unwrap());
    let hstart = pos;
    let header: Header = serde_json::from_slice(take(b, &mut pos, hlen as usize, "header")?)
        .map_err(|e| parse_err(hstart, format!("invalid header: {e}")))?;
    let count = u64::from_le_bytes(take(b, &mut pos, 8, "parameter count")?.try_into().unwrap());
    let need = (count as u128) * 8;
    let have = (b.len() - pos) as u128;
    if need != have {
        return Err(parse_err(
            b.len().min(pos + need as usize),
            format!("expected {need} parameter bytes, found {have}"),
        ));
    }
    let params: Vec<f64> = b[pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if header.regressor_params > params.len() {
        return Err(Error::Schema("regressor parameter count exceeds total".into()));
    }
    let (rnn_p, own) = params.split_at(header.regressor_params);
    match header.spec {
        ModelSpec::Hybrid { rnn_hidden, np } => {
            let rnn = PredictorModel::from_params(
                ModelSpec::Rnn { hidden: rnn_hidden },
                header.shape,
                rnn_p.to_vec(),
            )?;
            PredictorModel::hybrid(rnn, np, own.to_vec())
        }
        spec => {
            if header.regressor_params != 0 {
                return Err(Error::Schema("regressor parameters on a non-hybrid model".into()));
            }
            PredictorModel::from_params(spec, header.shape, own.to_vec())
        }
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<PredictorModel> {
    let mut b = Vec::new();
    r.read_to_end(&mut b).map_err(|e| Error::io("<reader>", e))?;
    decode(&b)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PredictorModel> {
    let path = path.as_ref();
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::NpSpec;

    #[test]
    fn round_trip_every_kind() {
        let shape = Shape::for_antennas(2, 4, 2);
        for spec in [
            ModelSpec::LinearAr,
            ModelSpec::Rnn { hidden: 3 },
            ModelSpec::Lstm { hidden: 3 },
            ModelSpec::Bilstm { hidden: 3 },
            ModelSpec::Np(NpSpec {
                seasonality: true,
                periods: vec![7.0],
                ..Default::default()
            }),
            ModelSpec::Hybrid {
                rnn_hidden: 3,
                np: NpSpec::default(),
            },
        ] {
            let m = PredictorModel::new(spec, shape, 9).unwrap();
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            assert_eq!(read_model(buf.as_slice()).unwrap(), m);
            buf.pop();
            assert!(matches!(read_model(buf.as_slice()), Err(Error::Parse { .. })));
        }
    }
}
