//! Slow reference implementations used as ground truth in tests.
//!
//! Nothing here touches the engine, the packed formats or the carry-save
//! datapath: products are formed from decoded operands in exact rational
//! arithmetic and rounded to FIX-16 once.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::fixed::{saturate_i16, Fixed16, FixedMatrix};
use crate::matrix::IntMatrix;
use crate::nonlinear::{gelu, layernorm, softmax, RealTensor};
use crate::operand::{AffineOperand, ExactScalar};
use crate::pipeline::{attention_scale, to_real, Block, BlockWeights, LayerSpec};
use crate::quantize::{quantize, QuantScheme};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<ExactScalar>,
}

impl ExactMatrix {
    pub fn get(&self, i: usize, j: usize) -> &ExactScalar {
        &self.data[i * self.cols + j]
    }

    pub fn scaled(&self, s: &ExactScalar) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Rounds every element to FIX-16.
    pub fn to_fixed(&self, frac_bits: u8) -> FixedMatrix {
        let raw = self
            .data
            .iter()
            .map(|v| to_fixed16(v, frac_bits).0.raw())
            .collect();
        FixedMatrix::from_raw(self.rows, self.cols, frac_bits, raw)
    }
}

/// Decoded `lhs (M x K)` times decoded `rhs (K x N)`, exactly.
pub fn exact_affine_mm(lhs: &AffineOperand, rhs: &AffineOperand) -> Result<ExactMatrix> {
    if lhs.cols() != rhs.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            lhs.rows(),
            lhs.cols(),
            rhs.rows(),
            rhs.cols()
        )));
    }
    let (m, k, n) = (lhs.rows(), lhs.cols(), rhs.cols());
    let denom = BigInt::one() << (lhs.frac_bits() as usize + rhs.frac_bits() as usize);
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = BigInt::zero();
            for t in 0..k {
                acc += BigInt::from(lhs.decoded_numerator(i, t))
                    * BigInt::from(rhs.decoded_numerator(t, j));
            }
            data.push(BigRational::new(acc, denom.clone()));
        }
    }
    Ok(ExactMatrix {
        rows: m,
        cols: n,
        data,
    })
}

/// Rounds to the nearest FIX-16 value (ties to even), then saturates.
/// Returns whether saturation occurred.
pub fn to_fixed16(v: &ExactScalar, frac_bits: u8) -> (Fixed16, bool) {
    let scaled = v * BigRational::from_integer(BigInt::one() << frac_bits as usize);
    let floor = scaled.floor();
    let frac = &scaled - &floor;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut r = floor.to_integer();
    if frac > half || (frac == half && (&r % 2u32) != BigInt::zero()) {
        r += 1;
    }
    let clamped = if r.abs() > BigInt::from(i64::MAX) {
        if r.is_negative() {
            i128::MIN
        } else {
            i128::MAX
        }
    } else {
        r.to_i128().unwrap()
    };
    let (raw, sat) = saturate_i16(clamped);
    (Fixed16::from_raw(raw, frac_bits), sat)
}

pub fn exact_fixed16(v: Fixed16) -> ExactScalar {
    BigRational::new(
        BigInt::from(v.raw()),
        BigInt::one() << v.frac_bits() as usize,
    )
}

pub fn plain_dot(a: &[u8], b: &[u8]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
}

/// Integer product of `lhs (M x K)` and `rhs (K x N)` by triple loop.
pub fn plain_intmm(lhs: &IntMatrix, rhs: &IntMatrix) -> Vec<i64> {
    let mut out = vec![0i64; lhs.rows() * rhs.cols()];
    for i in 0..lhs.rows() {
        for j in 0..rhs.cols() {
            out[i * rhs.cols() + j] = (0..lhs.cols())
                .map(|t| lhs.get(i, t) as i64 * rhs.get(t, j) as i64)
                .sum();
        }
    }
    out
}

fn mm(lhs: &AffineOperand, rhs: &AffineOperand, scale: Option<Fixed16>) -> Result<RealTensor> {
    let mut p = exact_affine_mm(lhs, rhs)?;
    if let Some(s) = scale {
        p = p.scaled(&exact_fixed16(s));
    }
    Ok(to_real(&p.to_fixed(lhs.frac_bits())))
}

/// Straight-line attention block.
pub fn reference_mha(
    x: &RealTensor,
    w: &BlockWeights,
    spec: &LayerSpec,
    scheme: QuantScheme,
    frac_bits: u8,
) -> Result<RealTensor> {
    let b = spec.act_bits;
    let xq = quantize(x, b.proj_in, scheme, frac_bits)?;
    let q = mm(&xq, &w.wq, None)?;
    let k = mm(&xq, &w.wk, None)?;
    let v = mm(&xq, &w.wv, None)?;
    let dh = spec.d_head();
    let s = attention_scale(dh, frac_bits);
    let mut heads = Vec::new();
    for h in 0..spec.heads {
        let qh = quantize(&q.col_slice(h * dh, dh)?, b.qk, scheme, frac_bits)?;
        let kh = quantize(&k.col_slice(h * dh, dh)?, b.qk, scheme, frac_bits)?;
        let p = softmax(&mm(&qh, &kh.transposed(), Some(s))?);
        let pq = quantize(&p, b.sv, QuantScheme::MinMaxAffine, frac_bits)?;
        let vh = quantize(&v.col_slice(h * dh, dh)?, b.sv, scheme, frac_bits)?;
        heads.push(mm(&pq, &vh, None)?);
    }
    let cq = quantize(&RealTensor::hconcat(&heads)?, b.proj_out, scheme, frac_bits)?;
    let o = mm(&cq, &w.wo, None)?;
    layernorm(&x.add(&o)?, &w.ln1_gain, &w.ln1_bias)
}

/// Straight-line feed-forward block.
pub fn reference_ffn(
    x: &RealTensor,
    w: &BlockWeights,
    spec: &LayerSpec,
    scheme: QuantScheme,
    frac_bits: u8,
) -> Result<RealTensor> {
    let xq = quantize(x, spec.act_bits.ffn1, scheme, frac_bits)?;
    let g = gelu(&mm(&xq, &w.w1, None)?);
    let gq = quantize(&g, spec.act_bits.ffn2, scheme, frac_bits)?;
    let o = mm(&gq, &w.w2, None)?;
    layernorm(&x.add(&o)?, &w.ln2_gain, &w.ln2_bias)
}

pub fn reference_block(
    x: &RealTensor,
    weights: &BlockWeights,
    spec: &LayerSpec,
    scheme: QuantScheme,
    frac_bits: u8,
) -> Result<RealTensor> {
    let y = reference_mha(x, weights, spec, scheme, frac_bits)?;
    reference_ffn(&y, weights, spec, scheme, frac_bits)
}

pub fn reference_model(
    blocks: &[Block],
    x: &RealTensor,
    scheme: QuantScheme,
    frac_bits: u8,
) -> Result<RealTensor> {
    blocks.iter().try_fold(x.clone(), |x, b| {
        reference_block(&x, &b.weights, &b.spec, scheme, frac_bits)
    })
}
