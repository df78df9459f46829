//! Vector processing unit: applies fused FIX-16 coefficients to integer QMM
//! results, `V` elements per cycle per stage.

use crate::abstraction::FusedCoeffs;
use crate::error::{Error, Result};
use crate::fixed::{round_wide_to_fixed16, FixedMatrix, DEFAULT_FRAC_BITS, MAX_FRAC_BITS};
use crate::matrix::AccMatrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VpuConfig {
    /// Elements per cycle.
    pub vector_width: usize,
    pub frac_bits: u8,
    /// Elements per cycle through the softmax / layernorm / GELU units.
    pub nonlinear_width: usize,
}

impl Default for VpuConfig {
    fn default() -> Self {
        Self {
            vector_width: 64,
            frac_bits: DEFAULT_FRAC_BITS,
            nonlinear_width: 64,
        }
    }
}

impl VpuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vector_width == 0 {
            return Err(Error::config("vpu.vector_width", "must be at least 1"));
        }
        if self.frac_bits > MAX_FRAC_BITS {
            return Err(Error::config(
                "vpu.frac_bits",
                format!("must be at most {MAX_FRAC_BITS}"),
            ));
        }
        if self.nonlinear_width == 0 {
            return Err(Error::config("vpu.nonlinear_width", "must be at least 1"));
        }
        Ok(())
    }

    /// Cycles for a nonlinear module over `elements` values.
    pub fn nonlinear_cycles(&self, elements: usize) -> u64 {
        elements.div_ceil(self.nonlinear_width) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VpuOutput {
    pub out: FixedMatrix,
    pub cycles: u64,
    pub stages: u64,
    /// Elements clipped to the FIX-16 range.
    pub saturated: u64,
}

/// `out = cc * P + co * row_sums + oc * col_sums + oo * K`, rounded to FIX-16
/// once per element. `col_sums` holds one sum per output column. Each nonzero
/// coefficient is one pass over the matrix.
pub fn vpu_apply(
    config: &VpuConfig,
    int_matrix: &AccMatrix,
    fused: &FusedCoeffs,
    row_sums: Option<&[i64]>,
    col_sums: Option<&[i64]>,
    k: usize,
) -> Result<VpuOutput> {
    let (m, n) = (int_matrix.rows(), int_matrix.cols());
    let rows = required(row_sums, !fused.co.is_zero(), m, "row")?;
    let cols = required(col_sums, !fused.oc.is_zero(), n, "column")?;
    let wide_frac = fused.frac_bits();

    let mut acc = vec![0i128; m * n];
    let mut stages = 0;
    if !fused.cc.is_zero() {
        for (a, &p) in acc.iter_mut().zip(int_matrix.data()) {
            *a += fused.cc.raw() * p as i128;
        }
        stages += 1;
    }
    if let Some(rows) = rows {
        for (row, &s) in acc.chunks_mut(n).zip(rows) {
            let t = fused.co.raw() * s as i128;
            row.iter_mut().for_each(|a| *a += t);
        }
        stages += 1;
    }
    if let Some(cols) = cols {
        for row in acc.chunks_mut(n) {
            for (a, &s) in row.iter_mut().zip(cols) {
                *a += fused.oc.raw() * s as i128;
            }
        }
        stages += 1;
    }
    if !fused.oo.is_zero() {
        let t = fused.oo.raw() * k as i128;
        acc.iter_mut().for_each(|a| *a += t);
        stages += 1;
    }

    let mut saturated = 0;
    let raw = acc
        .into_iter()
        .map(|a| {
            let (v, sat) = round_wide_to_fixed16(a, wide_frac, fused.out_frac_bits);
            saturated += sat as u64;
            v.raw()
        })
        .collect();
    Ok(VpuOutput {
        out: FixedMatrix::from_raw(m, n, fused.out_frac_bits, raw),
        cycles: (m * n).div_ceil(config.vector_width) as u64 * stages,
        stages,
        saturated,
    })
}

fn required<'a>(
    sums: Option<&'a [i64]>,
    needed: bool,
    len: usize,
    what: &str,
) -> Result<Option<&'a [i64]>> {
    if !needed {
        return Ok(None);
    }
    match sums {
        Some(s) if s.len() == len => Ok(Some(s)),
        Some(s) => Err(Error::DimensionMismatch(format!(
            "{} {what} sums for {len} {what}s",
            s.len()
        ))),
        None => Err(Error::DimensionMismatch(format!("missing {what} sums"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{fuse, integer_product, QmmKind, QmmPlan};
    use crate::fixed::{Fixed16, WideFixed};
    use crate::matrix::IntMatrix;
    use crate::operand::AffineOperand;

    fn fx(v: f64) -> Fixed16 {
        Fixed16::from_f64(v, 8)
    }

    #[test]
    fn cast_only() {
        let p = AccMatrix::from_vec(1, 3, vec![1, -2, 300]);
        let f = FusedCoeffs {
            cc: WideFixed::product(fx(1.0), fx(1.0)),
            co: WideFixed::zero(16),
            oc: WideFixed::zero(16),
            oo: WideFixed::zero(16),
            out_frac_bits: 8,
            fusion_ops: 1,
        };
        let r = vpu_apply(&VpuConfig::default(), &p, &f, None, None, 4).unwrap();
        assert_eq!(r.out.to_f64(), vec![1.0, -2.0, 127.99609375]);
        assert_eq!((r.stages, r.cycles, r.saturated), (1, 1, 1));
    }

    #[test]
    fn worked_example() {
        // A = [[1,0],[0,1]] at scale 2 offset 1, W = [[1,1],[1,0]] at scale 1
        let a = AffineOperand::activation(
            IntMatrix::new(2, 2, 1, vec![1, 0, 0, 1]).unwrap(),
            fx(2.0),
            Some(fx(1.0)),
        )
        .unwrap();
        let w = AffineOperand::weight(
            IntMatrix::new(2, 2, 1, vec![1, 1, 1, 0]).unwrap(),
            fx(1.0),
            None,
        )
        .unwrap();
        let plan = QmmPlan::new(QmmKind::ActivationWeight, &a, &w).unwrap();
        let p = integer_product(plan.kind, a.payload(), w.payload()).unwrap();
        let cs = plan.rhs_sums(w.payload()).unwrap();
        let r = vpu_apply(
            &VpuConfig::default(),
            &p,
            &fuse(&a, &w),
            None,
            cs.as_deref(),
            2,
        )
        .unwrap();
        assert_eq!(r.out.to_f64(), vec![4.0, 3.0, 4.0, 1.0]);
        assert_eq!(r.stages, 2);
        let (expect, _) = plan.apply(&p, None, cs.as_deref()).unwrap();
        assert_eq!(r.out, expect);
    }

    #[test]
    fn cycle_formula() {
        let p = AccMatrix::from_vec(8, 16, vec![1; 128]);
        let f = FusedCoeffs {
            cc: WideFixed::product(fx(0.5), fx(1.0)),
            co: WideFixed::zero(16),
            oc: WideFixed::zero(16),
            oo: WideFixed::product(fx(0.5), fx(0.5)),
            out_frac_bits: 8,
            fusion_ops: 2,
        };
        let r = vpu_apply(&VpuConfig::default(), &p, &f, None, None, 3).unwrap();
        assert_eq!(r.cycles, 4);
    }

    #[test]
    fn missing_sums_are_rejected() {
        let p = AccMatrix::from_vec(1, 1, vec![1]);
        let f = FusedCoeffs {
            cc: WideFixed::zero(16),
            co: WideFixed::product(fx(1.0), fx(1.0)),
            oc: WideFixed::zero(16),
            oo: WideFixed::zero(16),
            out_frac_bits: 8,
            fusion_ops: 1,
        };
        assert!(vpu_apply(&VpuConfig::default(), &p, &f, None, None, 1).is_err());
        assert!(vpu_apply(&VpuConfig::default(), &p, &f, Some(&[1, 2]), None, 1).is_err());
    }

    #[test]
    fn validation() {
        let c = VpuConfig {
            vector_width: 0,
            ..Default::default()
        };
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("vector_width"));
        assert_eq!(VpuConfig::default().nonlinear_cycles(129), 3);
    }
}
