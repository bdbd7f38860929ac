//! IEEE binary16 storage and the FP32 <-> FP16 conversions used by the
//! mixed-precision pipeline.
//!
//! Narrowing rounds to nearest, ties to even. Values at or above the binary16
//! overflow threshold (65520) become a signed infinity rather than saturating,
//! and binary16 subnormals are produced and consumed exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    Fp16,
    Fp32,
}

impl Precision {
    pub const fn bytes(self) -> u64 {
        match self {
            Precision::Fp16 => 2,
            Precision::Fp32 => 4,
        }
    }
}

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0);
    pub const INFINITY: Half = Half(0x7c00);
    pub const NEG_INFINITY: Half = Half(0xfc00);
    pub const MAX: Half = Half(0x7bff);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn from_f32(x: f32) -> Self {
        Half(f32_to_f16_bits(x))
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f16_bits_to_f32(self.0)
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & 0x7c00 == 0x7c00 && self.0 & 0x03ff != 0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & 0x7c00 != 0x7c00
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

/// Round-to-nearest-even narrowing of one value.
pub fn f32_to_f16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        if man == 0 {
            return sign | 0x7c00;
        }
        // quiet NaN, keep the top payload bits
        return sign | 0x7e00 | (man >> 13) as u16;
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }

    if half_exp <= 0 {
        // binary16 subnormal range (or underflow to zero)
        if half_exp < -10 {
            return sign;
        }
        let full = man | 0x0080_0000;
        let shift = (14 - half_exp) as u32;
        let mut out = full >> shift;
        let rem = full & ((1u32 << shift) - 1);
        let halfway = 1u32 << (shift - 1);
        if rem > halfway || (rem == halfway && out & 1 == 1) {
            out += 1;
        }
        return sign | out as u16;
    }

    let mut out = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    if rem > 0x1000 || (rem == 0x1000 && out & 1 == 1) {
        // a carry out of the significand bumps the exponent, which also
        // produces infinity correctly at the top of the range
        out += 1;
    }
    sign | out as u16
}

/// Exact widening of one value.
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h as u32) & 0x8000) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    match exp {
        0 => {
            // zero or subnormal: man * 2^-24, exact in f32
            let mag = man as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | mag.to_bits())
        }
        0x1f => f32::from_bits(sign | 0x7f80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}

pub fn downscale_rne(src: &[f32]) -> Vec<Half> {
    src.iter().map(|&x| Half::from_f32(x)).collect()
}

pub fn downscale_into(src: &[f32], dst: &mut [Half]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = Half::from_f32(s);
    }
}

pub fn upscale(src: &[Half]) -> Vec<f32> {
    src.iter().map(|h| h.to_f32()).collect()
}

pub fn upscale_into(src: &[Half], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.to_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values_pass_through() {
        let out = downscale_rne(&[1.0, -2.5, 0.0, -0.0, 65504.0]);
        assert_eq!(upscale(&out), vec![1.0, -2.5, 0.0, -0.0, 65504.0]);
        assert_eq!(out[3].to_bits(), 0x8000);
    }

    #[test]
    fn overflow_goes_to_infinity() {
        assert_eq!(Half::from_f32(65520.0), Half::INFINITY);
        assert_eq!(Half::from_f32(-65520.0), Half::NEG_INFINITY);
        assert_eq!(Half::from_f32(1.0e9), Half::INFINITY);
        // just below the threshold still rounds down to MAX
        assert_eq!(Half::from_f32(65519.996), Half::MAX);
        assert_eq!(Half::from_f32(f32::INFINITY), Half::INFINITY);
    }

    #[test]
    fn ties_resolve_to_even() {
        // 1 + 2^-11 sits exactly between 1.0 (even) and 1 + 2^-10 (odd)
        assert_eq!(Half::from_f32(1.0 + f32::powi(2.0, -11)).to_bits(), 0x3c00);
        // 1 + 3*2^-11 sits between 1 + 2^-10 (odd) and 1 + 2^-9 (even)
        assert_eq!(
            Half::from_f32(1.0 + 3.0 * f32::powi(2.0, -11)).to_bits(),
            0x3c02
        );
    }

    #[test]
    fn subnormals_are_kept() {
        let min_sub = f32::powi(2.0, -24);
        assert_eq!(Half::from_f32(min_sub).to_bits(), 0x0001);
        assert_eq!(Half::from_bits(0x0001).to_f32(), min_sub);
        // half of the smallest subnormal ties to zero
        assert_eq!(Half::from_f32(min_sub / 2.0).to_bits(), 0x0000);
        assert_eq!(Half::from_f32(min_sub * 0.75).to_bits(), 0x0001);
        assert_eq!(Half::from_f32(f32::MIN_POSITIVE).to_bits(), 0);
    }

    #[test]
    fn nan_stays_nan() {
        assert!(Half::from_f32(f32::NAN).is_nan());
        assert!(Half::from_bits(0x7e00).to_f32().is_nan());
    }

    #[test]
    fn upscale_examples() {
        assert_eq!(upscale(&[Half::from_f32(0.5)]), vec![0.5]);
        assert_eq!(upscale(&[Half::INFINITY]), vec![f32::INFINITY]);
    }
}
