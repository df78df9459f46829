use crate::error::{Error, Result};
use crate::matrix::SUPPORTED_BITS;

/// Block RAM budget of the compute and weight buffers, in bits
/// (456 blocks of 36 Kib).
pub const DEFAULT_BUFFER_CAPACITY_BITS: u64 = 456 * 36 * 1024;

/// Fault hooks used to prove the verification suite catches datapath bugs.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// PEs extract lanes one bit too narrow, dropping each lane's MSB.
    LaneRule,
}

/// Parameters of the QMM engine.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Parallel dot product units.
    pub n_dpu: usize,
    /// Vector elements one DPU ingests per cycle.
    pub j_unfold: usize,
    /// Output width of one PE in bits; split into `pe_width / b_a` lanes.
    pub pe_width: u32,
    /// Width of the carry-save accumulator words.
    pub acc_width: u32,
    pub freq_hz: f64,
    /// Elements per cycle into the compute buffer.
    pub load_bandwidth: usize,
    /// Hide preload behind compute (double buffering).
    pub overlap_load: bool,
    pub buffer_capacity_bits: u64,
    /// Push every dot product through the PE / compressor-tree datapath
    /// instead of the functional popcount kernel.
    pub bit_accurate: bool,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_dpu: 2,
            j_unfold: 256,
            pe_width: 8,
            acc_width: 32,
            freq_hz: 190e6,
            load_bandwidth: 256,
            overlap_load: false,
            buffer_capacity_bits: DEFAULT_BUFFER_CAPACITY_BITS,
            bit_accurate: false,
            fault: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dpu == 0 {
            return Err(Error::config("engine.n_dpu", "must be at least 1"));
        }
        if self.j_unfold == 0 {
            return Err(Error::config("engine.j_unfold", "must be at least 1"));
        }
        if self.pe_width == 0 || self.pe_width > 64 {
            return Err(Error::config("engine.pe_width", "must be in [1, 64]"));
        }
        if let Some(b) = SUPPORTED_BITS
            .iter()
            .find(|&&b| !self.pe_width.is_multiple_of(b as u32))
        {
            return Err(Error::config(
                "engine.pe_width",
                format!(
                    "{} is not a multiple of the {b}-bit lane width",
                    self.pe_width
                ),
            ));
        }
        if !(8..=64).contains(&self.acc_width) {
            return Err(Error::config("engine.acc_width", "must be in [8, 64]"));
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(Error::config(
                "engine.freq_hz",
                "must be positive and finite",
            ));
        }
        if self.load_bandwidth == 0 {
            return Err(Error::config("engine.load_bandwidth", "must be at least 1"));
        }
        if self.buffer_capacity_bits == 0 {
            return Err(Error::config(
                "engine.buffer_capacity_bits",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    /// Peak ops per cycle at the widest packing (1-bit activations), counting
    /// multiply and add separately.
    pub fn peak_ops_per_cycle(&self) -> f64 {
        2.0 * self.n_dpu as f64 * self.j_unfold as f64 * self.pe_width as f64
    }

    pub fn peak_gops(&self) -> f64 {
        self.peak_ops_per_cycle() * self.freq_hz / 1e9
    }
}
