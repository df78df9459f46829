use num_bigint::BigInt;
use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::fixed::Fixed16;
use crate::matrix::{BinaryMatrix, IntMatrix};

/// Arbitrary-precision rational used wherever a value must be exact.
pub type ExactScalar = BigRational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Activation,
    Weight,
}

/// A quantized tensor whose element `(i, j)` stands for
/// `scale * payload(i, j) + offset`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineOperand {
    payload: IntMatrix,
    scale: Fixed16,
    offset: Option<Fixed16>,
    role: Role,
}

impl AffineOperand {
    pub fn new(
        payload: IntMatrix,
        scale: Fixed16,
        offset: Option<Fixed16>,
        role: Role,
    ) -> Result<Self> {
        if let Some(o) = offset {
            if o.frac_bits() != scale.frac_bits() {
                return Err(Error::Encoding(format!(
                    "scale Q{} and offset Q{} use different formats",
                    scale.frac_bits(),
                    o.frac_bits()
                )));
            }
        }
        Ok(Self {
            payload,
            scale,
            offset,
            role,
        })
    }

    pub fn activation(payload: IntMatrix, scale: Fixed16, offset: Option<Fixed16>) -> Result<Self> {
        Self::new(payload, scale, offset, Role::Activation)
    }

    pub fn weight(payload: IntMatrix, scale: Fixed16, offset: Option<Fixed16>) -> Result<Self> {
        Self::new(payload, scale, offset, Role::Weight)
    }

    pub fn from_binary(
        bits: &BinaryMatrix,
        scale: Fixed16,
        offset: Option<Fixed16>,
        role: Role,
    ) -> Result<Self> {
        Self::new(IntMatrix::from_binary(bits)?, scale, offset, role)
    }

    pub fn payload(&self) -> &IntMatrix {
        &self.payload
    }

    pub fn scale(&self) -> Fixed16 {
        self.scale
    }

    pub fn offset(&self) -> Option<Fixed16> {
        self.offset
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn frac_bits(&self) -> u8 {
        self.scale.frac_bits()
    }

    pub fn rows(&self) -> usize {
        self.payload.rows()
    }

    pub fn cols(&self) -> usize {
        self.payload.cols()
    }

    pub fn bits(&self) -> u8 {
        self.payload.bit_width()
    }

    /// Same operand with the payload transposed.
    pub fn transposed(&self) -> Self {
        Self {
            payload: self.payload.transpose(),
            ..self.clone()
        }
    }

    /// Numerator of the decoded value over the denominator `2^F`.
    pub fn decoded_numerator(&self, i: usize, j: usize) -> i64 {
        self.scale.raw() as i64 * self.payload.get(i, j) as i64
            + self.offset.map_or(0, |o| o.raw() as i64)
    }

    /// Exact decoded value of element `(i, j)`.
    pub fn decode(&self, i: usize, j: usize) -> Result<ExactScalar> {
        self.payload.try_get(i, j)?;
        Ok(BigRational::new(
            BigInt::from(self.decoded_numerator(i, j)),
            BigInt::from(1u64 << self.frac_bits()),
        ))
    }

    /// Decoded value as `f64`. Exact: numerators stay far below 2^53.
    pub fn decode_f64(&self, i: usize, j: usize) -> f64 {
        self.decoded_numerator(i, j) as f64 / (1u64 << self.frac_bits()) as f64
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.decode_f64(i, j));
            }
        }
        out
    }
}
