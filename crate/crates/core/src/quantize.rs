//! Host-side quantizers turning full-precision tensors into affine operands.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fixed::Fixed16;
use crate::matrix::{is_supported_bits, IntMatrix};
use crate::nonlinear::RealTensor;
use crate::operand::AffineOperand;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantScheme {
    /// Uniform grid spanning `[min, max]`.
    MinMaxAffine,
    /// `{-s, +s}` with `s = mean |x|` at one bit; min-max at wider widths.
    SignBinary,
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantScheme::MinMaxAffine => "minmax",
            QuantScheme::SignBinary => "sign-binary",
        })
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" | "minmax-affine" => Ok(QuantScheme::MinMaxAffine),
            "sign-binary" | "sign" => Ok(QuantScheme::SignBinary),
            _ => Err(Error::config(
                "quant.scheme",
                format!("unknown scheme `{s}` (expected minmax or sign-binary)"),
            )),
        }
    }
}

/// Quantizes `x` to a `bits`-bit activation operand with FIX-16 scale and
/// offset in Q`frac_bits`.
///
/// A constant tensor maps to payload 0 with offset equal to the value and the
/// smallest positive scale. Min-max rounds the scale up so the grid always
/// reaches `max`.
pub fn quantize(
    x: &RealTensor,
    bits: u8,
    scheme: QuantScheme,
    frac_bits: u8,
) -> Result<AffineOperand> {
    if !is_supported_bits(bits) {
        return Err(Error::Encoding(format!("unsupported width {bits}")));
    }
    if let Some(&v) = x.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(v));
    }
    let (rows, cols) = (x.rows(), x.cols());
    let data = x.data();
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ulp = Fixed16::min_positive(frac_bits);

    if data.is_empty() || min == max {
        let payload = IntMatrix::zeros(rows.max(1), cols.max(1), bits)?;
        let offset = Fixed16::from_f64(if data.is_empty() { 0.0 } else { min }, frac_bits);
        return AffineOperand::activation(payload, ulp, Some(offset));
    }

    if scheme == QuantScheme::SignBinary && bits == 1 {
        let mean_abs = data.iter().map(|v| v.abs()).sum::<f64>() / data.len() as f64;
        let s = max_fx(Fixed16::from_f64(mean_abs, frac_bits), ulp);
        let payload: Vec<u8> = data.iter().map(|&v| (v >= 0.0) as u8).collect();
        return AffineOperand::activation(IntMatrix::new(rows, cols, 1, payload)?, s + s, Some(-s));
    }

    let levels = ((1u32 << bits) - 1) as f64;
    let offset = Fixed16::from_f64(min, frac_bits);
    let scale_raw = ((max - offset.to_f64()) / levels * (1u32 << frac_bits) as f64).ceil();
    let scale = max_fx(
        Fixed16::from_f64(scale_raw / (1u32 << frac_bits) as f64, frac_bits),
        ulp,
    );
    let (o, s) = (offset.to_f64(), scale.to_f64());
    let payload: Vec<u8> = data
        .iter()
        .map(|&v| ((v - o) / s).round_ties_even().clamp(0.0, levels) as u8)
        .collect();
    AffineOperand::activation(
        IntMatrix::new(rows, cols, bits, payload)?,
        scale,
        Some(offset),
    )
}

fn max_fx(a: Fixed16, b: Fixed16) -> Fixed16 {
    if a.raw() >= b.raw() {
        a
    } else {
        b
    }
}

/// Dequantizes an operand back to a tensor.
pub fn dequantize(op: &AffineOperand) -> RealTensor {
    RealTensor::new(op.rows(), op.cols(), op.dequantize()).expect("finite by construction")
}
