//! Throughput, energy-proxy and precision-sweep reports.
//!
//! Effective ops count multiply and add separately: `2 * M * K * N` per
//! matrix product.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::abstraction::OpCounter;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::matrix::is_supported_bits;
use crate::pipeline::{random_model, BlockTrace, LayerSpec, SimConfig, Simulator, SiteBits};

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputReport {
    pub gops: f64,
    pub peak_gops: f64,
    pub utilization: f64,
    pub cycles: u64,
    pub effective_ops: u64,
    pub seconds: f64,
}

pub fn throughput_report(trace: &BlockTrace, config: &EngineConfig) -> ThroughputReport {
    let seconds = trace.total_cycles as f64 / config.freq_hz;
    let gops = if trace.total_cycles == 0 {
        0.0
    } else {
        trace.effective_ops as f64 / seconds / 1e9
    };
    let peak_gops = config.peak_gops();
    ThroughputReport {
        gops,
        peak_gops,
        utilization: gops / peak_gops,
        cycles: trace.total_cycles,
        effective_ops: trace.effective_ops,
        seconds,
    }
}

/// Relative energy per operation class, in dimensionless units.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyProxyModel {
    /// Cost of one integer op by operand width.
    pub iop_by_width: BTreeMap<u8, f64>,
    pub fixed16_op: f64,
    pub nonlinear_op: f64,
}

impl Default for EnergyProxyModel {
    fn default() -> Self {
        Self {
            iop_by_width: [(1, 1.0), (2, 2.0), (4, 4.0), (8, 8.0)]
                .into_iter()
                .collect(),
            fixed16_op: 40.0,
            nonlinear_op: 100.0,
        }
    }
}

impl EnergyProxyModel {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .iop_by_width
            .values()
            .chain([&self.fixed16_op, &self.nonlinear_op]);
        for &c in all {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(
                    "energy",
                    format!("cost {c} must be positive"),
                ));
            }
        }
        Ok(())
    }

    /// Same model with every cost multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            iop_by_width: self
                .iop_by_width
                .iter()
                .map(|(&w, &c)| (w, c * k))
                .collect(),
            fixed16_op: self.fixed16_op * k,
            nonlinear_op: self.nonlinear_op * k,
        }
    }

    /// Units spent by the operations in `counter`.
    pub fn units(&self, counter: &OpCounter) -> Result<f64> {
        let mut total = counter.op() as f64 * self.fixed16_op;
        for (w, &n) in counter.iop_by_width() {
            let c = self.iop_by_width.get(w).ok_or_else(|| {
                Error::config("energy", format!("no iop cost for {w}-bit operands"))
            })?;
            total += n as f64 * c;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub abstracted_units: f64,
    pub naive_units: f64,
    pub ratio: f64,
}

/// Counter for the unabstracted product: every MAC of an `M x K` by `K x N`
/// product is a full-precision op.
pub fn naive_counter(m: usize, k: usize, n: usize) -> OpCounter {
    let mut c = OpCounter::new();
    c.add_op("naive_mm", (m * k * n) as u64);
    c
}

pub fn energy_proxy(
    abstracted: &OpCounter,
    naive: &OpCounter,
    model: &EnergyProxyModel,
) -> Result<EnergyReport> {
    model.validate()?;
    let abstracted_units = model.units(abstracted)?;
    let naive_units = model.units(naive)?;
    Ok(EnergyReport {
        abstracted_units,
        naive_units,
        ratio: naive_units / abstracted_units,
    })
}

/// Energy of a pipeline trace: its op counts plus the nonlinear elements.
pub fn trace_energy(trace: &BlockTrace, model: &EnergyProxyModel) -> Result<f64> {
    Ok(model.units(&trace.counter)? + trace.nonlinear_elements() as f64 * model.nonlinear_op)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub act_bits: u8,
    pub report: ThroughputReport,
}

/// Runs the model with every QMM site at each width in `bits`. Points run in
/// parallel on separate simulators; rows come back in `bits` order.
pub fn precision_sweep(
    template: &[LayerSpec],
    bits: &[u8],
    config: &SimConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if let Some(&b) = bits.iter().find(|&&b| !is_supported_bits(b)) {
        return Err(Error::config(
            "bits",
            format!("{b} is not one of 1, 2, 4, 8"),
        ));
    }
    config.validate()?;
    for s in template {
        s.validate()?;
    }
    bits.par_iter()
        .map(|&b| {
            let specs: Vec<LayerSpec> = template
                .iter()
                .map(|s| LayerSpec {
                    act_bits: SiteBits::uniform(b),
                    ..s.clone()
                })
                .collect();
            let (blocks, x) = random_model(&specs, seed, config.vpu.frac_bits)?;
            let (_, trace) = Simulator::new(config.clone())?.run_model(&blocks, &x)?;
            Ok(SweepRow {
                act_bits: b,
                report: throughput_report(&trace, &config.engine),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{expected_counts, qmm_activation_weight};
    use crate::fixed::Fixed16;
    use crate::matrix::IntMatrix;
    use crate::operand::AffineOperand;

    fn fig2_counter(n: usize) -> OpCounter {
        let a = AffineOperand::activation(
            IntMatrix::zeros(n, n, 1).unwrap(),
            Fixed16::from_f64(0.5, 8),
            Some(Fixed16::from_f64(0.25, 8)),
        )
        .unwrap();
        let w = AffineOperand::weight(
            IntMatrix::zeros(n, n, 1).unwrap(),
            Fixed16::from_f64(1.0, 8),
            None,
        )
        .unwrap();
        let mut c = OpCounter::new();
        qmm_activation_weight(&a, &w, &mut c).unwrap();
        c
    }

    #[test]
    fn peak_throughput() {
        let c = EngineConfig::default();
        let t = BlockTrace {
            total_cycles: 1,
            effective_ops: 8192,
            ..Default::default()
        };
        let r = throughput_report(&t, &c);
        assert!((r.gops - 1556.48).abs() < 1e-9);
        assert!((r.utilization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_at_n64() {
        let c = fig2_counter(64);
        assert_eq!((c.iop(), c.op()), expected_counts(64));
        let r = energy_proxy(&c, &naive_counter(64, 64, 64), &EnergyProxyModel::default()).unwrap();
        assert_eq!(r.naive_units, 10_485_760.0);
        assert_eq!(r.abstracted_units, 1_015_888.0);
        assert!((r.ratio - 10.3219).abs() < 1e-3);
    }

    #[test]
    fn energy_ratio_properties() {
        let c = fig2_counter(32);
        let naive = naive_counter(32, 32, 32);
        let m = EnergyProxyModel::default();
        let base = energy_proxy(&c, &naive, &m).unwrap().ratio;
        let scaled = energy_proxy(&c, &naive, &m.scaled(7.5)).unwrap().ratio;
        assert!((base - scaled).abs() < 1e-12 * base);

        let mut flat = m.clone();
        flat.iop_by_width.insert(1, 40.0);
        assert!(energy_proxy(&c, &naive, &flat).unwrap().ratio < 1.0);
    }

    #[test]
    fn sweep_rejects_unsupported_bits() {
        let spec = LayerSpec {
            seq_len: 2,
            hidden: 4,
            heads: 1,
            ffn_dim: 4,
            act_bits: SiteBits::uniform(1),
        };
        let e = precision_sweep(
            std::slice::from_ref(&spec),
            &[1, 3],
            &SimConfig::default(),
            1,
        )
        .unwrap_err();
        assert!(e.to_string().contains('3'));
        let rows = precision_sweep(&[spec], &[4], &SimConfig::default(), 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].act_bits, 4);
    }
}
