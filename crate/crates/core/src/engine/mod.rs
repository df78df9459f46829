//! Cycle-approximate model of the QMM engine: PEs, DPUs, compressor tree
//! loops and the row/column schedule.

pub mod compressor;
pub mod config;
pub mod dpu;
pub mod pe;
pub mod schedule;

pub use compressor::{carry_select_add, compressor_reduce, wallace_depth, CompressorTreeState};
pub use config::{EngineConfig, Fault, DEFAULT_BUFFER_CAPACITY_BITS};
pub use dpu::{dpu_dot_product, pass_compute_cycles, Dpu, DRAIN_CYCLES};
pub use pe::{pack_lanes, pe_cycle, PEMode};
pub use schedule::{
    cycle_report, mode_for, mode_peak_ops_per_cycle, CycleReport, QmmEngine, ScheduleOutput,
};
