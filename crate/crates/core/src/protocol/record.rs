//! Uplink feedback record: one flag byte followed by the packed payload.
//!
//! ```text
//! flag  0 = NONE (no payload), 1 = UPDATE, 2 = RAW
//! body  QuantizedVector::pack() of the payload
//! ```

use super::QuantizedUpdate;
use crate::error::{Error, Result};
use crate::quantizer::{QuantizedVector, QuantizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordFlag {
    None = 0,
    Update = 1,
    Raw = 2,
}

pub fn encode_record(fb: &QuantizedUpdate) -> Vec<u8> {
    let (flag, body) = match fb {
        QuantizedUpdate::None => (RecordFlag::None, Vec::new()),
        QuantizedUpdate::Update(q) => (RecordFlag::Update, q.pack()),
        QuantizedUpdate::Raw(q) => (RecordFlag::Raw, q.pack()),
    };
    let mut out = Vec::with_capacity(1 + body.len());
    out.push(flag as u8);
    out.extend_from_slice(&body);
    out
}

pub fn decode_record(bytes: &[u8], cfg: QuantizerConfig, antennas: usize) -> Result<QuantizedUpdate> {
    let (&flag, body) = bytes.split_first().ok_or(Error::Parse {
        offset: 0,
        message: "empty feedback record".into(),
    })?;
    let payload = |b: &[u8]| QuantizedVector::unpack(cfg, antennas, b).map_err(|e| shift(e, 1));
    match flag {
        0 if body.is_empty() => Ok(QuantizedUpdate::None),
        0 => Err(Error::Parse {
            offset: 1,
            message: "NONE record with a payload".into(),
        }),
        1 => Ok(QuantizedUpdate::Update(payload(body)?)),
        2 => Ok(QuantizedUpdate::Raw(payload(body)?)),
        f => Err(Error::Parse {
            offset: 0,
            message: format!("unknown record flag {f}"),
        }),
    }
}

fn shift(e: Error, by: u64) -> Error {
    match e {
        Error::Parse { offset, message } => Error::Parse {
            offset: offset + by,
            message,
        },
        e => e,
    }
}
