//! Full-precision nonlinear functions over `f64` tensors.

use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Row-major 2-D tensor of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        if let Some(&x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(x));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Columns `start..start + len`.
    pub fn col_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.cols {
            return Err(Error::DimensionMismatch(format!(
                "columns {start}..{} of a {}-column tensor",
                start + len,
                self.cols
            )));
        }
        let data = (0..self.rows)
            .flat_map(|i| self.row(i)[start..start + len].iter().copied())
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: len,
            data,
        })
    }

    /// Concatenates tensors with equal row counts along columns.
    pub fn hconcat(parts: &[RealTensor]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::DimensionMismatch("row counts differ".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn add(&self, other: &RealTensor) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} + {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    fn map_rows(&self, f: impl Fn(&[f64], &mut Vec<f64>)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            f(self.row(i), &mut data);
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Row-wise softmax.
pub fn softmax(x: &RealTensor) -> RealTensor {
    x.map_rows(|row, out| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let sum: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= sum);
    })
}

/// Row-wise layer normalization with population variance.
pub fn layernorm(x: &RealTensor, gain: &[f64], bias: &[f64]) -> Result<RealTensor> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(Error::DimensionMismatch(format!(
            "gain/bias of length {}/{} for {} columns",
            gain.len(),
            bias.len(),
            x.cols
        )));
    }
    if x.cols < 2 {
        return Err(Error::DimensionMismatch(
            "layernorm needs rows of length >= 2".into(),
        ));
    }
    Ok(x.map_rows(|row, out| {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
        out.extend(
            row.iter()
                .zip(gain.iter().zip(bias))
                .map(|(v, (g, b))| (v - mean) * inv * g + b),
        );
    }))
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu(x: &RealTensor) -> RealTensor {
    RealTensor {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| gelu_scalar(v)).collect(),
    }
}
