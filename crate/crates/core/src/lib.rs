//! Simulator for a binary-weight Transformer accelerator.
//!
//! The crate has two layers. The numeric layer ([`fixed`], [`matrix`],
//! [`operand`], [`abstraction`]) computes quantized matrix products exactly,
//! turning an affine product into an integer matrix product plus a few fused
//! FIX-16 correction terms. The hardware layer ([`engine`], [`vpu`]) replays
//! the integer stage on a model of packed PEs and compressor-tree DPUs and
//! counts cycles. [`pipeline`] chains both into attention and feed-forward
//! blocks, and [`oracle`] holds slow reference implementations.

pub mod abstraction;
pub mod cli;
pub mod engine;
pub mod error;
pub mod fixed;
pub mod matrix;
pub mod nonlinear;
pub mod operand;
pub mod oracle;
pub mod perf;
pub mod pipeline;
pub mod quantize;
pub mod vpu;

pub use error::{Error, Result};
