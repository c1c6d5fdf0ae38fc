//! Element-wise uniform midrise quantizer `f_Q`.
//!
//! Real and imaginary parts are quantized separately on `[-r, r]` with
//! `2^B` levels of width `2r / 2^B`; level `i` reconstructs to
//! `-r + (i + 1/2) * step`. Out-of-range inputs clip to the extreme levels.

use std::fmt;

use num_complex::Complex64;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::ChannelVector;
use crate::error::{Error, Result};

/// Bits per real component, or lossless passthrough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bits {
    Finite(u8),
    Infinite,
}

impl Bits {
    pub fn finite(self) -> Option<u32> {
        match self {
            Bits::Finite(b) => Some(b as u32),
            Bits::Infinite => None,
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bits::Finite(b) => write!(f, "{b}"),
            Bits::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bits::Finite(b) => s.serialize_u8(*b),
            Bits::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Bits;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an integer in 1..=32 or \"inf\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bits, E> {
                if (1..=32).contains(&v) {
                    Ok(Bits::Finite(v as u8))
                } else {
                    Err(E::custom(format!("bits must be in 1..=32, got {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bits, E> {
                self.visit_i64(v.min(i64::MAX as u64) as i64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bits, E> {
                match v {
                    "inf" | "infinite" => Ok(Bits::Infinite),
                    _ => Err(E::custom(format!("unknown bit spec {v:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits: Bits,
    /// Half-width `r` of the quantization range.
    pub clip: f64,
}

impl QuantizerConfig {
    pub fn new(bits: Bits, clip: f64) -> Result<Self> {
        if let Bits::Finite(b) = bits {
            if !(1..=32).contains(&b) {
                return Err(Error::InvalidConfig(format!("bits must be in 1..=32, got {b}")));
            }
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::InvalidConfig(format!("clip range must be > 0, got {clip}")));
        }
        Ok(Self { bits, clip })
    }

    pub fn lossless() -> Self {
        Self {
            bits: Bits::Infinite,
            clip: 1.0,
        }
    }

    /// Range set to `factor` times the RMS of the real components of
    /// `vectors` (real and imaginary parts pooled).
    pub fn calibrated<'a>(
        bits: Bits,
        factor: f64,
        vectors: impl IntoIterator<Item = &'a ChannelVector>,
    ) -> Result<Self> {
        let rms = component_rms(vectors);
        if rms <= 0.0 {
            return Err(Error::InvalidConfig(
                "cannot calibrate quantizer range on all-zero data".into(),
            ));
        }
        Self::new(bits, factor * rms)
    }

    pub fn levels(&self) -> Option<u64> {
        self.bits.finite().map(|b| 1u64 << b)
    }

    pub fn step(&self) -> Option<f64> {
        self.levels().map(|l| 2.0 * self.clip / l as f64)
    }

    fn level_of(&self, x: f64) -> u32 {
        let levels = self.levels().expect("finite quantizer");
        let step = 2.0 * self.clip / levels as f64;
        let i = ((x + self.clip) / step).floor();
        i.clamp(0.0, (levels - 1) as f64) as u32
    }

    fn value_of(&self, level: u32) -> f64 {
        let step = self.step().expect("finite quantizer");
        -self.clip + (level as f64 + 0.5) * step
    }
}

pub fn component_rms<'a>(vectors: impl IntoIterator<Item = &'a ChannelVector>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in vectors {
        acc += v.norm_sqr();
        n += 2 * v.len();
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Levels(Vec<[u32; 2]>),
    Lossless(Vec<Complex64>),
}

/// Output of [`quantize`]: per-element `(real, imag)` level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    config: QuantizerConfig,
    payload: Payload,
}

impl QuantizedVector {
    pub fn config(&self) -> &QuantizerConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::Levels(l) => l.len(),
            Payload::Lossless(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Level indices, or `None` for a lossless quantizer.
    pub fn levels(&self) -> Option<&[[u32; 2]]> {
        match &self.payload {
            Payload::Levels(l) => Some(l),
            Payload::Lossless(_) => None,
        }
    }

    pub fn from_levels(config: QuantizerConfig, levels: Vec<[u32; 2]>) -> Result<Self> {
        let max = config
            .levels()
            .ok_or_else(|| Error::Unsupported("level indices for lossless quantizer".into()))?;
        if let Some(bad) = levels.iter().flatten().find(|&&l| l as u64 >= max) {
            return Err(Error::Schema(format!("level {bad} out of range for {max} levels")));
        }
        Ok(Self {
            config,
            payload: Payload::Levels(levels),
        })
    }

    pub fn reconstruct(&self) -> ChannelVector {
        match &self.payload {
            Payload::Lossless(v) => ChannelVector::from_vec_unchecked(v.clone()),
            Payload::Levels(l) => ChannelVector::from_vec_unchecked(
                l.iter()
                    .map(|&[a, b]| Complex64::new(self.config.value_of(a), self.config.value_of(b)))
                    .collect(),
            ),
        }
    }

    /// Payload size in bits (`2 * M * B`); `None` when lossless.
    pub fn bit_len(&self) -> Option<u64> {
        self.config.bits.finite().map(|b| 2 * self.len() as u64 * b as u64)
    }

    /// Level indices packed little-endian, LSB first, `B` bits each, in the
    /// order `re_0, im_0, re_1, im_1, ...`. Lossless vectors are written as
    /// raw `f64` pairs.
    pub fn pack(&self) -> Vec<u8> {
        match &self.payload {
            Payload::Lossless(v) => v
                .iter()
                .flat_map(|z| z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()))
                .collect(),
            Payload::Levels(l) => {
                let b = self.config.bits.finite().unwrap() as usize;
                let mut out = vec![0u8; (2 * l.len() * b).div_ceil(8)];
                let mut bit = 0usize;
                for &level in l.iter().flatten() {
                    for k in 0..b {
                        if (level >> k) & 1 == 1 {
                            out[bit / 8] |= 1 << (bit % 8);
                        }
                        bit += 1;
                    }
                }
                out
            }
        }
    }

    /// Inverse of [`pack`](Self::pack) for `antennas` elements.
    pub fn unpack(config: QuantizerConfig, antennas: usize, bytes: &[u8]) -> Result<Self> {
        match config.bits {
            Bits::Infinite => {
                if bytes.len() != 16 * antennas {
                    return Err(Error::Parse {
                        offset: bytes.len() as u64,
                        message: format!("expected {} payload bytes", 16 * antennas),
                    });
                }
                let v = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<_>>();
                let v = v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                Ok(Self {
                    config,
                    payload: Payload::Lossless(v),
                })
            }
            Bits::Finite(b) => {
                let b = b as usize;
                let need = (2 * antennas * b).div_ceil(8);
                if bytes.len() != need {
                    return Err(Error::Parse {
                        offset: bytes.len().min(need) as u64,
                        message: format!("expected {need} payload bytes, got {}", bytes.len()),
                    });
                }
                let mut bit = 0usize;
                let mut next = || {
                    let mut v = 0u32;
                    for k in 0..b {
                        if (bytes[bit / 8] >> (bit % 8)) & 1 == 1 {
                            v |= 1 << k;
                        }
                        bit += 1;
                    }
                    v
                };
                let levels = (0..antennas).map(|_| [next(), next()]).collect();
                Self::from_levels(config, levels)
            }
        }
    }
}

pub fn quantize(v: &ChannelVector, cfg: &QuantizerConfig) -> QuantizedVector {
    let payload = match cfg.bits {
        Bits::Infinite => Payload::Lossless(v.as_slice().to_vec()),
        Bits::Finite(_) => Payload::Levels(
            v.iter()
                .map(|z| [cfg.level_of(z.re), cfg.level_of(z.im)])
                .collect(),
        ),
    };
    QuantizedVector {
        config: *cfg,
        payload,
    }
}

/// `f_Q` followed by reconstruction.
pub fn quantize_reconstruct(v: &ChannelVector, cfg: &QuantizerConfig) -> ChannelVector {
    match cfg.bits {
        Bits::Infinite => v.clone(),
        Bits::Finite(_) => quantize(v, cfg).reconstruct(),
    }
}

/// Feedback cost `2 * M * B` of one quantized vector.
pub fn overhead_bits(cfg: &QuantizerConfig, antennas: usize) -> Result<u64> {
    match cfg.bits {
        Bits::Infinite => Err(Error::Unbounded),
        Bits::Finite(b) => Ok(2 * antennas as u64 * b as u64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cv(parts: &[(f64, f64)]) -> ChannelVector {
        ChannelVector::new(parts.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn lossless_passthrough() {
        let v = cv(&[(0.123456789, -9.87), (1e10, -1e-10)]);
        let q = quantize(&v, &QuantizerConfig::lossless());
        assert_eq!(q.reconstruct(), v);
    }

    #[test]
    fn one_bit_example() {
        // Codebook {-0.5, +0.5}; 0.3 is nearest to +0.5 (level 1).
        let cfg = QuantizerConfig::new(Bits::Finite(1), 1.0).unwrap();
        let q = quantize(&cv(&[(0.3, -0.3)]), &cfg);
        assert_eq!(q.levels().unwrap(), &[[1, 0]]);
        assert_eq!(q.reconstruct(), cv(&[(0.5, -0.5)]));
    }

    #[test]
    fn clipping_to_extreme_levels() {
        let cfg = QuantizerConfig::new(Bits::Finite(3), 2.0).unwrap();
        let step = cfg.step().unwrap();
        let r = quantize(&cv(&[(100.0, -7.0)]), &cfg).reconstruct();
        assert!((r[0].re - (2.0 - step / 2.0)).abs() < 1e-15);
        assert!((r[0].im + (2.0 - step / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn overhead_examples() {
        let q = |b| QuantizerConfig::new(Bits::Finite(b), 1.0).unwrap();
        assert_eq!(overhead_bits(&q(2), 64).unwrap(), 256);
        assert_eq!(overhead_bits(&q(1), 1).unwrap(), 2);
        assert_eq!(overhead_bits(&q(4), 64).unwrap(), 512);
        assert!(matches!(
            overhead_bits(&QuantizerConfig::lossless(), 4),
            Err(Error::Unbounded)
        ));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(QuantizerConfig::new(Bits::Finite(0), 1.0).is_err());
        assert!(QuantizerConfig::new(Bits::Finite(33), 1.0).is_err());
        assert!(QuantizerConfig::new(Bits::Finite(2), 0.0).is_err());
    }

    #[test]
    fn bits_deserialize() {
        #[derive(Deserialize)]
        struct W {
            b: Vec<Bits>,
        }
        let w: W = toml::from_str(r#"b = [2, "inf", 32]"#).unwrap();
        assert_eq!(w.b, vec![Bits::Finite(2), Bits::Infinite, Bits::Finite(32)]);
        assert!(toml::from_str::<W>("b = [0]").is_err());
    }

    fn arb_vec() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..8)
    }

    proptest! {
        #[test]
        fn idempotent(parts in arb_vec(), b in 1u8..12, r in 0.1f64..4.0) {
            let cfg = QuantizerConfig::new(Bits::Finite(b), r).unwrap();
            let once = quantize(&cv(&parts), &cfg).reconstruct();
            let twice = quantize(&once, &cfg).reconstruct();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn in_range_error_bounded_by_half_step(parts in arb_vec(), b in 1u8..16) {
            let cfg = QuantizerConfig::new(Bits::Finite(b), 3.0).unwrap();
            let half = cfg.step().unwrap() / 2.0;
            let v = cv(&parts);
            let r = quantize(&v, &cfg).reconstruct();
            for (x, y) in v.iter().zip(r.iter()) {
                prop_assert!((x.re - y.re).abs() <= half + 1e-12);
                prop_assert!((x.im - y.im).abs() <= half + 1e-12);
            }
        }

        #[test]
        fn pack_round_trip(parts in arb_vec(), b in 1u8..=32) {
            let cfg = QuantizerConfig::new(Bits::Finite(b), 2.0).unwrap();
            let q = quantize(&cv(&parts), &cfg);
            let bytes = q.pack();
            prop_assert_eq!(bytes.len() as u64, q.bit_len().unwrap().div_ceil(8));
            prop_assert_eq!(QuantizedVector::unpack(cfg, parts.len(), &bytes).unwrap(), q);
        }
    }

    #[test]
    fn max_error_halves_per_extra_bit() {
        // Dense sweep of in-range inputs: worst-case error is exactly step/2.
        let xs: Vec<(f64, f64)> = (0..4001).map(|i| (-1.0 + i as f64 / 2000.0, 0.0)).collect();
        let v = cv(&xs[..4000]);
        let mut prev = None;
        for b in 1..10u8 {
            let cfg = QuantizerConfig::new(Bits::Finite(b), 1.0).unwrap();
            let r = quantize(&v, &cfg).reconstruct();
            let err = v
                .iter()
                .zip(r.iter())
                .map(|(a, c)| (a.re - c.re).abs())
                .fold(0.0, f64::max);
            if let Some(p) = prev {
                let ratio: f64 = p / err;
                assert!((ratio - 2.0).abs() < 0.02, "b={b} ratio={ratio}");
            }
            prev = Some(err);
        }
    }
}
