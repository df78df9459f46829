//! FIX-16 arithmetic.
//!
//! [`Fixed16`] is a 16-bit two's-complement fixed-point scalar with a
//! configurable number of fraction bits `F` (real value `raw * 2^-F`). All
//! arithmetic rounds to nearest, ties to even, and saturates on the raw field.
//! Saturation is silent in the operator impls; the `*_flagged` variants report
//! it so callers can count events.
//!
//! [`WideFixed`] holds exact products of FIX-16 values (fraction bits add up
//! under multiplication). Fused coefficients live in this format so that the
//! coefficient stage rounds exactly once per output element.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub const DEFAULT_FRAC_BITS: u8 = 8;
pub const MAX_FRAC_BITS: u8 = 15;

/// Rounds `value / 2^shift` to the nearest integer, ties to even.
pub fn round_shift_rne(value: i128, shift: u32) -> i128 {
    if shift == 0 {
        return value;
    }
    let floor = value >> shift;
    let rem = value - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Clamps `value` into the i16 range. The flag is set when clamping happened.
pub fn saturate_i16(value: i128) -> (i16, bool) {
    if value > i16::MAX as i128 {
        (i16::MAX, true)
    } else if value < i16::MIN as i128 {
        (i16::MIN, true)
    } else {
        (value as i16, false)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed16 {
    raw: i16,
    frac_bits: u8,
}

impl Fixed16 {
    /// Panics if `frac_bits > 15`; formats are validated at configuration time.
    pub fn from_raw(raw: i16, frac_bits: u8) -> Self {
        assert!(
            frac_bits <= MAX_FRAC_BITS,
            "frac_bits {frac_bits} outside [0, 15]"
        );
        Self { raw, frac_bits }
    }

    pub fn zero(frac_bits: u8) -> Self {
        Self::from_raw(0, frac_bits)
    }

    pub fn one(frac_bits: u8) -> Self {
        // 1.0 is not representable at F = 15; saturates to the largest value.
        let (raw, _) = saturate_i16(1i128 << frac_bits);
        Self::from_raw(raw, frac_bits)
    }

    /// Smallest positive value, one ULP.
    pub fn min_positive(frac_bits: u8) -> Self {
        Self::from_raw(1, frac_bits)
    }

    pub fn max_value(frac_bits: u8) -> Self {
        Self::from_raw(i16::MAX, frac_bits)
    }

    pub fn min_value(frac_bits: u8) -> Self {
        Self::from_raw(i16::MIN, frac_bits)
    }

    /// Rounds a finite `f64` to the nearest representable value (ties to even),
    /// saturating. Returns the saturation flag alongside.
    pub fn from_f64_flagged(x: f64, frac_bits: u8) -> (Self, bool) {
        debug_assert!(x.is_finite());
        // Scaling by a power of two is exact in binary floating point.
        let scaled = x * (1u64 << frac_bits) as f64;
        let rounded = scaled.round_ties_even();
        let clamped = rounded.clamp(i16::MIN as f64, i16::MAX as f64);
        (
            Self::from_raw(clamped as i16, frac_bits),
            clamped != rounded,
        )
    }

    pub fn from_f64(x: f64, frac_bits: u8) -> Self {
        Self::from_f64_flagged(x, frac_bits).0
    }

    pub fn raw(self) -> i16 {
        self.raw
    }

    pub fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / (1u64 << self.frac_bits) as f64
    }

    /// Fixed-point multiply: `rne(a.raw * b.raw / 2^F)`, saturated.
    pub fn mul_flagged(self, rhs: Self) -> (Self, bool) {
        assert_eq!(self.frac_bits, rhs.frac_bits, "mixed FIX-16 formats");
        let product = self.raw as i128 * rhs.raw as i128;
        let (raw, sat) = saturate_i16(round_shift_rne(product, self.frac_bits as u32));
        (Self::from_raw(raw, self.frac_bits), sat)
    }

    pub fn add_flagged(self, rhs: Self) -> (Self, bool) {
        assert_eq!(self.frac_bits, rhs.frac_bits, "mixed FIX-16 formats");
        let (raw, sat) = saturate_i16(self.raw as i128 + rhs.raw as i128);
        (Self::from_raw(raw, self.frac_bits), sat)
    }

    pub fn sub_flagged(self, rhs: Self) -> (Self, bool) {
        assert_eq!(self.frac_bits, rhs.frac_bits, "mixed FIX-16 formats");
        let (raw, sat) = saturate_i16(self.raw as i128 - rhs.raw as i128);
        (Self::from_raw(raw, self.frac_bits), sat)
    }

    /// Multiplies by an integer and saturates (no rounding needed).
    pub fn mul_int_flagged(self, k: i64) -> (Self, bool) {
        let (raw, sat) = saturate_i16(self.raw as i128 * k as i128);
        (Self::from_raw(raw, self.frac_bits), sat)
    }
}

impl Mul for Fixed16 {
    type Output = Fixed16;
    fn mul(self, rhs: Self) -> Self {
        self.mul_flagged(rhs).0
    }
}

impl Add for Fixed16 {
    type Output = Fixed16;
    fn add(self, rhs: Self) -> Self {
        self.add_flagged(rhs).0
    }
}

impl Sub for Fixed16 {
    type Output = Fixed16;
    fn sub(self, rhs: Self) -> Self {
        self.sub_flagged(rhs).0
    }
}

impl Neg for Fixed16 {
    type Output = Fixed16;
    fn neg(self) -> Self {
        let (raw, _) = saturate_i16(-(self.raw as i128));
        Self::from_raw(raw, self.frac_bits)
    }
}

impl fmt::Debug for Fixed16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(raw {}, Q{})",
            self.to_f64(),
            self.raw,
            self.frac_bits
        )
    }
}

impl fmt::Display for Fixed16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Exact fixed-point value `raw * 2^-frac_bits` with a wide raw field.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct WideFixed {
    raw: i128,
    frac_bits: u32,
}

impl WideFixed {
    pub fn zero(frac_bits: u32) -> Self {
        Self { raw: 0, frac_bits }
    }

    pub fn from_raw(raw: i128, frac_bits: u32) -> Self {
        Self { raw, frac_bits }
    }

    /// Exact product of two FIX-16 values; fraction bits add.
    pub fn product(a: Fixed16, b: Fixed16) -> Self {
        Self {
            raw: a.raw() as i128 * b.raw() as i128,
            frac_bits: a.frac_bits() as u32 + b.frac_bits() as u32,
        }
    }

    /// Exact product with a further FIX-16 factor.
    pub fn scaled(self, s: Fixed16) -> Self {
        Self {
            raw: self.raw * s.raw() as i128,
            frac_bits: self.frac_bits + s.frac_bits() as u32,
        }
    }

    pub fn raw(self) -> i128 {
        self.raw
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / 2f64.powi(self.frac_bits as i32)
    }

    /// Single rounding into FIX-16 with `frac_bits` fraction bits.
    pub fn to_fixed16_flagged(self, frac_bits: u8) -> (Fixed16, bool) {
        round_wide_to_fixed16(self.raw, self.frac_bits, frac_bits)
    }

    pub fn to_fixed16(self, frac_bits: u8) -> Fixed16 {
        self.to_fixed16_flagged(frac_bits).0
    }
}

/// Rounds `raw * 2^-from_frac` to FIX-16 with `to_frac` fraction bits.
pub(crate) fn round_wide_to_fixed16(raw: i128, from_frac: u32, to_frac: u8) -> (Fixed16, bool) {
    let to = to_frac as u32;
    let value = if from_frac >= to {
        round_shift_rne(raw, from_frac - to)
    } else {
        raw.saturating_mul(1i128 << (to - from_frac))
    };
    let (r, sat) = saturate_i16(value);
    (Fixed16::from_raw(r, to_frac), sat)
}

/// Row-major matrix of FIX-16 values sharing one format.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FixedMatrix {
    rows: usize,
    cols: usize,
    frac_bits: u8,
    raw: Vec<i16>,
}

impl FixedMatrix {
    pub fn from_raw(rows: usize, cols: usize, frac_bits: u8, raw: Vec<i16>) -> Self {
        assert_eq!(raw.len(), rows * cols, "raw buffer does not match shape");
        assert!(frac_bits <= MAX_FRAC_BITS);
        Self {
            rows,
            cols,
            frac_bits,
            raw,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn raw(&self) -> &[i16] {
        &self.raw
    }

    pub fn get(&self, i: usize, j: usize) -> Fixed16 {
        Fixed16::from_raw(self.raw[i * self.cols + j], self.frac_bits)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let denom = (1u64 << self.frac_bits) as f64;
        self.raw.iter().map(|&r| r as f64 / denom).collect()
    }
}
