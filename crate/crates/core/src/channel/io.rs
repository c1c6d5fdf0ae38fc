//! Binary trace container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CSIT"
//! 4       2     version (= 1)
//! 6       2     reserved (= 0)
//! 8       4     antennas M
//! 12      8     sample count T
//! 20      8     ue_id
//! 28      16*M*T  samples, row-major: for t in 0..T, for m in 0..M: re f64, im f64
//! ```
//!
//! Loading is all-or-nothing: any truncation, trailing data or non-finite
//! value yields an error and no trace.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{ChannelTrace, ChannelVector};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: [u8; 4] = *b"CSIT";
pub const TRACE_VERSION: u16 = 1;
const HEADER_LEN: usize = 28;

pub fn write_trace<W: Write>(trace: &ChannelTrace, mut w: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * trace.antennas() * trace.len());
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(trace.antennas() as u32).to_le_bytes());
    buf.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    buf.extend_from_slice(&trace.ue_id().to_le_bytes());
    for v in trace.samples() {
        for z in v.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn save_trace(trace: &ChannelTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.bytes.len() as u64,
                message: format!("unexpected end of data while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos as u64;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: at,
                message: format!("non-finite {what}"),
            });
        }
        Ok(v)
    }
}

/// Decodes a trace from an in-memory buffer.
pub fn read_trace<R: Read>(mut r: R) -> Result<ChannelTrace> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<ChannelTrace> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != TRACE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, not a trace file".into(),
        });
    }
    let version = c.u16("version")?;
    if version != TRACE_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported trace version {version}"),
        });
    }
    c.u16("reserved")?;
    let antennas = c.u32("antenna count")? as usize;
    let count = c.u64("sample count")?;
    let ue_id = c.u64("ue id")?;
    if antennas == 0 {
        return Err(Error::Schema("trace declares zero antennas".into()));
    }
    let payload = (count as u128) * (antennas as u128) * 16;
    let available = (bytes.len() - HEADER_LEN) as u128;
    if payload > available {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!(
                "truncated payload: header declares {payload} bytes, {available} present"
            ),
        });
    }
    if payload < available {
        return Err(Error::Parse {
            offset: (HEADER_LEN as u128 + payload) as u64,
            message: "trailing bytes after last sample".into(),
        });
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut row = Vec::with_capacity(antennas);
        for _ in 0..antennas {
            let re = c.f64("real part")?;
            let im = c.f64("imaginary part")?;
            row.push(Complex64::new(re, im));
        }
        samples.push(ChannelVector::from_vec_unchecked(row));
    }
    ChannelTrace::new(ue_id, antennas, samples)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<ChannelTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
