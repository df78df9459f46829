use thiserror::Error;

/// Errors raised by the quantized-inference library and the engine model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("index ({row}, {col}) out of bounds for {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("accumulator overflow: value {value} does not fit in {width}-bit signed range")]
    AccumulatorOverflow { value: i128, width: u32 },

    #[error("buffer capacity exceeded: {required} bits required, {capacity} bits available")]
    BufferCapacity { required: u64, capacity: u64 },

    #[error("mode/operand mismatch: {0}")]
    ModeMismatch(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("non-finite input value {0}")]
    NonFinite(f64),

    #[error("operation count mismatch: {0}")]
    CountMismatch(String),

    #[error("matrix file: {0}")]
    Parse(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Checks that `value` fits a `width`-bit two's-complement register.
pub(crate) fn check_signed_width(value: i128, width: u32) -> Result<i128> {
    let max = (1i128 << (width - 1)) - 1;
    let min = -(1i128 << (width - 1));
    if value < min || value > max {
        Err(Error::AccumulatorOverflow { value, width })
    } else {
        Ok(value)
    }
}
