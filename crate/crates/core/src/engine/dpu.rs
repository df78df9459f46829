//! Dot product unit: `J` PEs feeding one compressor tree loop per lane.
//!
//! A pass computes up to `lanes_per_pe` dot products at once. Lane `l` of every
//! PE word carries a row of the first operand; all lanes share the element of
//! the second operand (weight bit, or one bit of it per cycle in bit-serial
//! mode). A pass over `K` elements takes `ceil(K / J) * serial_cycles` compute
//! cycles, followed by one carry-select drain cycle per lane group.

use crate::abstraction::QmmKind;
use crate::engine::compressor::CompressorTreeState;
use crate::engine::config::EngineConfig;
use crate::engine::pe::{pack_lanes, pe_cycle_into, PEMode};
use crate::error::{Error, Result};

/// Cycles charged for the carry-select final add.
pub const DRAIN_CYCLES: u64 = 1;

pub fn pass_compute_cycles(mode: PEMode, k: usize, j_unfold: usize) -> u64 {
    k.div_ceil(j_unfold) as u64 * mode.serial_cycles()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dpu {
    acc_width: u32,
    lanes: Vec<CompressorTreeState>,
}

impl Dpu {
    pub fn new(acc_width: u32) -> Self {
        Self {
            acc_width,
            lanes: Vec::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.lanes.is_empty()
    }

    /// Runs one pass: dot products of each row in `rows` with `vec_b`.
    /// Returns the exact results and the compute cycles spent; the lane
    /// accumulators are drained and cleared before returning.
    pub fn pass(
        &mut self,
        config: &EngineConfig,
        mode: PEMode,
        rows: &[&[u8]],
        vec_b: &[u8],
    ) -> Result<(Vec<i64>, u64)> {
        let lanes = mode.lanes_per_pe(config.pe_width);
        let k = vec_b.len();
        if rows.is_empty() || rows.len() > lanes {
            return Err(Error::ModeMismatch(format!(
                "{} rows for {lanes} lanes in {}",
                rows.len(),
                mode.label()
            )));
        }
        if k == 0 {
            return Err(Error::DimensionMismatch("empty dot product".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "row length {} vs vector length {k}",
                r.len()
            )));
        }
        let b_limit = match mode.kind {
            QmmKind::ActivationWeight => 1u16,
            QmmKind::ActivationActivation => (1u16 << mode.act_bits) - 1,
        };
        if let Some(&v) = vec_b.iter().find(|&&v| v as u16 > b_limit) {
            return Err(Error::ModeMismatch(format!(
                "second operand element {v} does not fit {}",
                mode.label()
            )));
        }

        self.lanes = vec![CompressorTreeState::new(self.acc_width); rows.len()];
        let serial = mode.serial_cycles() as u32;
        let mut lane_buf = vec![0i64; lanes];
        let mut products: Vec<Vec<i64>> = vec![Vec::with_capacity(config.j_unfold); rows.len()];
        let mut packed_vals = vec![0u8; rows.len()];
        let mut cycles = 0u64;

        for start in (0..k).step_by(config.j_unfold) {
            let end = (start + config.j_unfold).min(k);
            // PE words for this chunk are loaded once and held across the
            // serial cycles.
            let mut words = Vec::with_capacity(end - start);
            for e in start..end {
                for (slot, row) in packed_vals.iter_mut().zip(rows) {
                    *slot = row[e];
                }
                words.push(pack_lanes(&packed_vals, mode.act_bits, config.pe_width)?);
            }
            for t in 0..serial {
                for p in products.iter_mut() {
                    p.clear();
                }
                for (e, &word) in (start..end).zip(&words) {
                    let select = match mode.kind {
                        QmmKind::ActivationWeight => vec_b[e],
                        QmmKind::ActivationActivation => (vec_b[e] >> t) & 1,
                    };
                    pe_cycle_into(
                        mode,
                        config.pe_width,
                        select,
                        word,
                        t,
                        config.fault,
                        &mut lane_buf,
                    )?;
                    for (p, &v) in products.iter_mut().zip(&lane_buf) {
                        p.push(v);
                    }
                }
                for (state, p) in self.lanes.iter_mut().zip(&products) {
                    state.reduce(p)?;
                }
                cycles += 1;
            }
        }

        let results = self
            .lanes
            .iter()
            .map(|s| s.final_add())
            .collect::<Result<Vec<_>>>()?;
        self.lanes.clear();
        Ok((results, cycles))
    }
}

/// A single dot product on a fresh DPU. Returns the result and the cycle count
/// including the drain cycle.
pub fn dpu_dot_product(
    config: &EngineConfig,
    mode: PEMode,
    vec_a: &[u8],
    vec_b: &[u8],
) -> Result<(i64, u64)> {
    if vec_a.len() != vec_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            vec_a.len(),
            vec_b.len()
        )));
    }
    let mut dpu = Dpu::new(config.acc_width);
    let (r, cycles) = dpu.pass(config, mode, &[vec_a], vec_b)?;
    Ok((r[0], cycles + DRAIN_CYCLES))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mode(kind: QmmKind, b: u8) -> PEMode {
        PEMode::new(kind, b).unwrap()
    }

    #[test]
    fn cycle_formula_examples() {
        let aw = QmmKind::ActivationWeight;
        let aa = QmmKind::ActivationActivation;
        assert_eq!(pass_compute_cycles(mode(aw, 1), 2048, 256), 8);
        assert_eq!(pass_compute_cycles(mode(aw, 8), 2048, 256), 8);
        assert_eq!(pass_compute_cycles(mode(aa, 4), 1024, 256), 16);
        assert_eq!(pass_compute_cycles(mode(aw, 1), 1, 256), 1);
    }

    #[test]
    fn single_dot_products() {
        let c = EngineConfig::default();
        let a = vec![3u8; 1024];
        let b = vec![5u8; 1024];
        let (r, cycles) =
            dpu_dot_product(&c, mode(QmmKind::ActivationActivation, 4), &a, &b).unwrap();
        assert_eq!(r, 15 * 1024);
        assert_eq!(cycles, 16 + 1);

        let bits: Vec<u8> = (0..2048).map(|i| (i % 3 == 0) as u8).collect();
        let acts: Vec<u8> = (0..2048).map(|i| (i % 2) as u8).collect();
        let expect: i64 = acts.iter().zip(&bits).map(|(&x, &y)| (x * y) as i64).sum();
        let (r, cycles) =
            dpu_dot_product(&c, mode(QmmKind::ActivationWeight, 1), &acts, &bits).unwrap();
        assert_eq!(r, expect);
        assert_eq!(cycles, 8 + 1);
    }

    #[test]
    fn packed_pass_runs_lanes_in_parallel() {
        let c = EngineConfig::default();
        let rows: Vec<Vec<u8>> = (0..8).map(|r| vec![(r % 2) as u8; 300]).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let w = vec![1u8; 300];
        let mut dpu = Dpu::new(32);
        let (res, cycles) = dpu
            .pass(&c, mode(QmmKind::ActivationWeight, 1), &refs, &w)
            .unwrap();
        assert_eq!(res, vec![0, 300, 0, 300, 0, 300, 0, 300]);
        assert_eq!(cycles, 2);
        assert!(dpu.is_idle());
    }

    #[test]
    fn rejects_mode_operand_mismatch() {
        let c = EngineConfig::default();
        // weight operand must be binary in packing mode
        assert!(matches!(
            dpu_dot_product(&c, mode(QmmKind::ActivationWeight, 4), &[1, 2], &[1, 2]),
            Err(Error::ModeMismatch(_))
        ));
        // lane value too wide
        assert!(matches!(
            dpu_dot_product(&c, mode(QmmKind::ActivationWeight, 2), &[4], &[1]),
            Err(Error::Encoding(_))
        ));
        let mut dpu = Dpu::new(32);
        let rows = [[1u8].as_slice(); 3];
        assert!(dpu
            .pass(&c, mode(QmmKind::ActivationWeight, 4), &rows, &[1])
            .is_err());
    }

    #[test]
    fn overflow_propagates() {
        let c = EngineConfig {
            acc_width: 8,
            ..Default::default()
        };
        let a = vec![255u8; 4];
        let b = vec![1u8; 4];
        assert!(matches!(
            dpu_dot_product(&c, mode(QmmKind::ActivationWeight, 8), &a, &b),
            Err(Error::AccumulatorOverflow { .. })
        ));
    }
}
