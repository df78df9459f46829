//! Integer payload matrices.
//!
//! Payloads are unsigned `b`-bit integers, `b in {1, 2, 4, 8}`. Signedness is
//! carried by the affine scale/offset of the owning operand, never by the
//! payload itself. Binary payloads can be bit-packed into [`BinaryMatrix`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const SUPPORTED_BITS: [u8; 4] = [1, 2, 4, 8];

pub fn is_supported_bits(b: u8) -> bool {
    SUPPORTED_BITS.contains(&b)
}

const WORD_BITS: usize = 64;

/// Row-major bit-packed 0/1 matrix. Padding bits past `cols` are always zero.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        Self {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Packs a row-major slice of 0/1 values.
    pub fn pack(rows: usize, cols: usize, values: &[u8]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        let mut m = Self::zeros(rows, cols);
        for (idx, &v) in values.iter().enumerate() {
            match v {
                0 => {}
                1 => m.set(idx / cols, idx % cols),
                other => {
                    return Err(Error::Encoding(format!(
                        "element {other} at ({}, {}) is not a bit",
                        idx / cols,
                        idx % cols
                    )))
                }
            }
        }
        Ok(m)
    }

    pub fn unpack(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    fn set(&mut self, i: usize, j: usize) {
        self.words[i * self.words_per_row + j / WORD_BITS] |= 1u64 << (j % WORD_BITS);
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        ((self.words[i * self.words_per_row + j / WORD_BITS] >> (j % WORD_BITS)) & 1) as u8
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// True when every padding bit is zero.
    pub fn padding_is_clear(&self) -> bool {
        let tail = self.cols % WORD_BITS;
        if tail == 0 {
            return true;
        }
        let mask = !((1u64 << tail) - 1);
        (0..self.rows).all(|i| self.row_words(i)[self.words_per_row - 1] & mask == 0)
    }
}

/// Row-major matrix of unsigned `bit_width`-bit integers.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    bit_width: u8,
    data: Vec<u8>,
}

impl IntMatrix {
    pub fn new(rows: usize, cols: usize, bit_width: u8, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if !is_supported_bits(bit_width) {
            return Err(Error::Encoding(format!(
                "unsupported bit width {bit_width}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let limit = 1u16 << bit_width;
        if let Some(pos) = data.iter().position(|&e| e as u16 >= limit) {
            return Err(Error::Encoding(format!(
                "element {} at ({}, {}) does not fit {bit_width} bits",
                data[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            bit_width,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, bit_width: u8) -> Result<Self> {
        Self::new(rows, cols, bit_width, vec![0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    pub fn try_get(&self, i: usize, j: usize) -> Result<u8> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::OutOfBounds {
                row: i,
                col: j,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.get(i, j))
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0u8; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            bit_width: self.bit_width,
            data,
        }
    }

    /// Copies columns `start..start + len`.
    pub fn col_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.cols || len == 0 {
            return Err(Error::DimensionMismatch(format!(
                "column slice {start}..{} of {} columns",
                start + len,
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Self::new(self.rows, len, self.bit_width, data)
    }

    pub fn to_binary(&self) -> Result<BinaryMatrix> {
        if self.bit_width != 1 {
            return Err(Error::Encoding(format!(
                "cannot bit-pack a {}-bit payload",
                self.bit_width
            )));
        }
        BinaryMatrix::pack(self.rows, self.cols, &self.data)
    }

    pub fn from_binary(m: &BinaryMatrix) -> Result<Self> {
        Self::new(m.rows(), m.cols(), 1, m.unpack())
    }

    /// Splits the payload into `bit_width` bit planes, plane `p` holding bit `p`
    /// of every element.
    pub fn bit_planes(&self) -> Vec<BinaryMatrix> {
        let words_per_row = self.cols.div_ceil(WORD_BITS);
        (0..self.bit_width)
            .map(|p| {
                let mut words = vec![0u64; self.rows * words_per_row];
                for i in 0..self.rows {
                    for (j, &e) in self.row(i).iter().enumerate() {
                        if (e >> p) & 1 == 1 {
                            words[i * words_per_row + j / WORD_BITS] |= 1u64 << (j % WORD_BITS);
                        }
                    }
                }
                BinaryMatrix {
                    rows: self.rows,
                    cols: self.cols,
                    words_per_row,
                    words,
                }
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.rows, self.cols, self.bit_width);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|e| e.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Parses the text matrix format: a `rows cols bit_width` header followed
    /// by row-major whitespace-separated unsigned integers.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut header = |name: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("missing header field `{name}`")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("header field `{name}`: {e}")))
        };
        let rows = header("rows")?;
        let cols = header("cols")?;
        let bits = header("bit_width")?;
        let bits = u8::try_from(bits)
            .ok()
            .filter(|b| is_supported_bits(*b))
            .ok_or_else(|| Error::Parse(format!("unsupported bit_width {bits}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for tok in tokens {
            let v: u64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("element `{tok}`: {e}")))?;
            if v >= 1 << bits {
                return Err(Error::Encoding(format!(
                    "element {v} does not fit {bits} bits"
                )));
            }
            data.push(v as u8);
        }
        if data.len() != rows * cols {
            return Err(Error::Parse(format!(
                "expected {} elements, found {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(rows, cols, bits, data)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_text(&text)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }
}

/// Exact integer results of an integer matrix product, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AccMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl AccMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data does not match shape");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }
}

pub fn row_sums(m: &IntMatrix) -> Vec<i64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&e| e as i64).sum())
        .collect()
}

pub fn col_sums(m: &IntMatrix) -> Vec<i64> {
    let mut sums = vec![0i64; m.cols()];
    for i in 0..m.rows() {
        for (s, &e) in sums.iter_mut().zip(m.row(i)) {
            *s += e as i64;
        }
    }
    sums
}
