//! QMM scheduling and cycle accounting.
//!
//! Output rows are packed into lanes (`lanes_per_pe` rows share one DPU pass)
//! and lane groups are spread over the DPUs. Every output column then costs
//! one pass per lane group. The whole operand set is preloaded into the
//! compute buffer before the first pass; the carry-select adder is pipelined
//! behind the compressor loop, so only the last drain is exposed.

use std::fmt;

use crate::abstraction::{integer_product, QmmKind, QmmPlan};
use crate::engine::config::EngineConfig;
use crate::engine::dpu::{pass_compute_cycles, Dpu, DRAIN_CYCLES};
use crate::engine::pe::PEMode;
use crate::error::{check_signed_width, Error, Result};
use crate::matrix::{AccMatrix, IntMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct CycleReport {
    pub mode: PEMode,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lanes: usize,
    /// Exposed load cycles (after any overlap with compute).
    pub load_cycles: u64,
    /// Raw preload cycles before overlap.
    pub preload_cycles: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    pub total_cycles: u64,
    /// `2 * M * K * N`.
    pub effective_ops: u64,
    pub peak_ops_per_cycle: f64,
    pub utilization: f64,
}

impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}x{}x{}: load {} compute {} drain {} total {} (util {:.3})",
            self.mode.label(),
            self.m,
            self.k,
            self.n,
            self.load_cycles,
            self.compute_cycles,
            self.drain_cycles,
            self.total_cycles,
            self.utilization
        )
    }
}

/// Peak ops per cycle of `config` running in `mode`.
pub fn mode_peak_ops_per_cycle(config: &EngineConfig, mode: PEMode) -> f64 {
    2.0 * config.n_dpu as f64 * config.j_unfold as f64 * mode.lanes_per_pe(config.pe_width) as f64
        / mode.serial_cycles() as f64
}

/// PE mode that executes `kind` with the given operand widths.
pub fn mode_for(kind: QmmKind, lhs_bits: u8, rhs_bits: u8) -> Result<PEMode> {
    match kind {
        QmmKind::ActivationWeight => {
            if rhs_bits != 1 {
                return Err(Error::ModeMismatch(format!(
                    "weights must be binary, got {rhs_bits} bits"
                )));
            }
            PEMode::new(kind, lhs_bits)
        }
        QmmKind::ActivationActivation => PEMode::new(kind, lhs_bits.max(rhs_bits)),
    }
}

/// Analytic cycle count of an `M x K` by `K x N` QMM.
pub fn cycle_report(
    config: &EngineConfig,
    mode: PEMode,
    m: usize,
    k: usize,
    n: usize,
    lhs_bits: u8,
    rhs_bits: u8,
) -> Result<CycleReport> {
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("empty QMM {m}x{k}x{n}")));
    }
    let required = (m * k) as u64 * lhs_bits as u64 + (k * n) as u64 * rhs_bits as u64;
    if required > config.buffer_capacity_bits {
        return Err(Error::BufferCapacity {
            required,
            capacity: config.buffer_capacity_bits,
        });
    }
    let lanes = mode.lanes_per_pe(config.pe_width);
    let groups = m.div_ceil(config.n_dpu * lanes) as u64;
    let compute_cycles = groups * n as u64 * pass_compute_cycles(mode, k, config.j_unfold);
    let preload_cycles = (m * k + k * n).div_ceil(config.load_bandwidth) as u64;
    let load_cycles = if config.overlap_load {
        preload_cycles.saturating_sub(compute_cycles)
    } else {
        preload_cycles
    };
    let drain_cycles = DRAIN_CYCLES;
    let total_cycles = load_cycles + compute_cycles + drain_cycles;
    let effective_ops = 2 * (m * k * n) as u64;
    let peak = mode_peak_ops_per_cycle(config, mode);
    Ok(CycleReport {
        mode,
        m,
        k,
        n,
        lanes,
        load_cycles,
        preload_cycles,
        compute_cycles,
        drain_cycles,
        total_cycles,
        effective_ops,
        peak_ops_per_cycle: peak,
        utilization: effective_ops as f64 / (peak * total_cycles as f64),
    })
}

/// Result of one scheduled QMM: the integer product, the sums the plan
/// needs, and the cycle report.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleOutput {
    pub product: AccMatrix,
    pub lhs_sums: Option<Vec<i64>>,
    pub rhs_sums: Option<Vec<i64>>,
    pub report: CycleReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QmmEngine {
    config: EngineConfig,
    dpus: Vec<Dpu>,
}

impl QmmEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let dpus = vec![Dpu::new(config.acc_width); config.n_dpu];
        Ok(Self { config, dpus })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn is_idle(&self) -> bool {
        self.dpus.iter().all(Dpu::is_idle)
    }

    /// Runs the integer stage of `plan`. `rhs` is `K x N` for activation x
    /// weight and `N x K` for activation x activation.
    pub fn schedule_qmm(
        &mut self,
        plan: &QmmPlan,
        lhs: &IntMatrix,
        rhs: &IntMatrix,
    ) -> Result<ScheduleOutput> {
        let (rk, rn) = match plan.kind {
            QmmKind::ActivationWeight => (rhs.rows(), rhs.cols()),
            QmmKind::ActivationActivation => (rhs.cols(), rhs.rows()),
        };
        if lhs.rows() != plan.m || lhs.cols() != plan.k || rk != plan.k || rn != plan.n {
            return Err(Error::DimensionMismatch(format!(
                "operands {}x{} and {}x{} do not match plan {}x{}x{}",
                lhs.rows(),
                lhs.cols(),
                rhs.rows(),
                rhs.cols(),
                plan.m,
                plan.k,
                plan.n
            )));
        }
        let mode = mode_for(plan.kind, lhs.bit_width(), rhs.bit_width())?;
        let report = cycle_report(
            &self.config,
            mode,
            plan.m,
            plan.k,
            plan.n,
            lhs.bit_width(),
            rhs.bit_width(),
        )?;
        let product = if self.config.bit_accurate {
            let (product, cycles) = self.simulate(mode, lhs, rhs)?;
            assert_eq!(cycles, report.compute_cycles, "simulated compute cycles");
            product
        } else {
            let p = integer_product(plan.kind, lhs, rhs)?;
            for &v in p.data() {
                check_signed_width(v as i128, self.config.acc_width)?;
            }
            p
        };
        let lhs_sums = plan.lhs_sums(lhs)?;
        let rhs_sums = plan.rhs_sums(rhs)?;
        Ok(ScheduleOutput {
            product,
            lhs_sums,
            rhs_sums,
            report,
        })
    }

    /// Pushes every dot product through the DPUs. Lane groups are issued in
    /// waves of `n_dpu`; a wave costs one pass per output column.
    fn simulate(
        &mut self,
        mode: PEMode,
        lhs: &IntMatrix,
        rhs: &IntMatrix,
    ) -> Result<(AccMatrix, u64)> {
        let cols_t;
        let cols = match mode.kind {
            QmmKind::ActivationWeight => {
                cols_t = rhs.transpose();
                &cols_t
            }
            QmmKind::ActivationActivation => rhs,
        };
        let (m, n) = (lhs.rows(), cols.rows());
        let lanes = mode.lanes_per_pe(self.config.pe_width);
        let groups: Vec<Vec<&[u8]>> = (0..m)
            .step_by(lanes)
            .map(|s| (s..(s + lanes).min(m)).map(|i| lhs.row(i)).collect())
            .collect();
        let mut out = vec![0i64; m * n];
        let mut cycles = 0u64;
        let config = self.config.clone();
        for (w, wave) in groups.chunks(config.n_dpu).enumerate() {
            for j in 0..n {
                let col = cols.row(j);
                let mut wave_cycles = 0;
                for (d, rows) in wave.iter().enumerate() {
                    let (res, c) = self.dpus[d].pass(&config, mode, rows, col)?;
                    wave_cycles = wave_cycles.max(c);
                    let base = (w * config.n_dpu + d) * lanes;
                    for (l, v) in res.into_iter().enumerate() {
                        out[(base + l) * n + j] = v;
                    }
                }
                cycles += wave_cycles;
            }
        }
        Ok((AccMatrix::from_vec(m, n, out), cycles))
    }
}
