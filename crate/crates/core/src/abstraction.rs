//! Computation flow abstraction for quantized matrix multiplication.
//!
//! An affine product `(a X + g)(b Y + d)` summed over the inner dimension `K`
//! is regrouped into one integer matrix product plus three cheap correction
//! terms:
//!
//! ```text
//! out(i, j) = ab * sum_k X(i,k) Y(k,j)      integer MM (Iop)
//!           + ad * rowsum(X)(i)
//!           + gb * colsum(Y)(j)             the 1 x W term
//!           + gd * K
//! ```
//!
//! The four coefficients are fused offline from the operands' scales and
//! offsets. Everything up to the final rounding is exact: the integer stage
//! runs on unsigned payloads, fused coefficients keep every fraction bit of
//! the FIX-16 inputs, and each output element is rounded to FIX-16 once.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{check_signed_width, Error, Result};
use crate::fixed::{round_wide_to_fixed16, Fixed16, FixedMatrix, WideFixed};
use crate::matrix::{col_sums, row_sums, AccMatrix, IntMatrix};
use crate::operand::{AffineOperand, Role};

/// Width of the integer accumulators and sum registers.
pub const ACC_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QmmKind {
    /// Activation times binary weight; rhs is `K x N`.
    ActivationWeight,
    /// Activation times activation; rhs is supplied transposed as `N x K`.
    ActivationActivation,
}

impl fmt::Display for QmmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QmmKind::ActivationWeight => write!(f, "act_x_weight"),
            QmmKind::ActivationActivation => write!(f, "act_x_act"),
        }
    }
}

/// Offline-fused coefficients, all sharing one wide fixed-point format.
///
/// `cc = s_l s_r`, `co = s_l o_r`, `oc = o_l s_r`, `oo = o_l o_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusedCoeffs {
    pub cc: WideFixed,
    pub co: WideFixed,
    pub oc: WideFixed,
    pub oo: WideFixed,
    /// Format of the FIX-16 output.
    pub out_frac_bits: u8,
    /// Full-precision products performed offline.
    pub fusion_ops: u64,
}

impl FusedCoeffs {
    /// Folds a further FIX-16 factor into every coefficient, exactly.
    pub fn scaled(self, s: Fixed16) -> Self {
        Self {
            cc: self.cc.scaled(s),
            co: self.co.scaled(s),
            oc: self.oc.scaled(s),
            oo: self.oo.scaled(s),
            ..self
        }
    }

    pub fn frac_bits(&self) -> u32 {
        self.cc.frac_bits()
    }

    /// The coefficients rounded to FIX-16, `(cc, co, oc, oo)`.
    pub fn to_fixed16(&self) -> [Fixed16; 4] {
        [self.cc, self.co, self.oc, self.oo].map(|c| c.to_fixed16(self.out_frac_bits))
    }

    pub fn nonzero_terms(&self) -> u64 {
        [self.cc, self.co, self.oc, self.oo]
            .iter()
            .filter(|c| !c.is_zero())
            .count() as u64
    }
}

/// Fuses scales and offsets of two operands. Absent offsets contribute an
/// exact zero and cost nothing.
pub fn fuse(lhs: &AffineOperand, rhs: &AffineOperand) -> FusedCoeffs {
    let f = lhs.frac_bits();
    let zero = Fixed16::zero(f);
    let (sl, sr) = (lhs.scale(), rhs.scale());
    let (ol, or) = (lhs.offset(), rhs.offset());
    let fusion_ops =
        1 + ol.is_some() as u64 + or.is_some() as u64 + (ol.is_some() && or.is_some()) as u64;
    FusedCoeffs {
        cc: WideFixed::product(sl, sr),
        co: WideFixed::product(sl, or.unwrap_or(zero)),
        oc: WideFixed::product(ol.unwrap_or(zero), sr),
        oo: WideFixed::product(ol.unwrap_or(zero), or.unwrap_or(zero)),
        out_frac_bits: f,
        fusion_ops,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCount {
    pub iop: u64,
    pub op: u64,
}

/// Integer (Iop) and full-precision (Op) operation counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    iop: u64,
    op: u64,
    stages: BTreeMap<&'static str, StageCount>,
    iop_by_width: BTreeMap<u8, u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn iop(&self) -> u64 {
        self.iop
    }

    pub fn op(&self) -> u64 {
        self.op
    }

    pub fn stages(&self) -> &BTreeMap<&'static str, StageCount> {
        &self.stages
    }

    /// Iop counts keyed by operand width in bits.
    pub fn iop_by_width(&self) -> &BTreeMap<u8, u64> {
        &self.iop_by_width
    }

    pub fn add_iop(&mut self, stage: &'static str, n: u64, width: u8) {
        self.iop += n;
        self.stages.entry(stage).or_default().iop += n;
        *self.iop_by_width.entry(width).or_default() += n;
    }

    pub fn add_op(&mut self, stage: &'static str, n: u64) {
        self.op += n;
        self.stages.entry(stage).or_default().op += n;
    }

    pub fn merge(&mut self, other: &OpCounter) {
        self.iop += other.iop;
        self.op += other.op;
        for (k, v) in &other.stages {
            let e = self.stages.entry(k).or_default();
            e.iop += v.iop;
            e.op += v.op;
        }
        for (w, n) in &other.iop_by_width {
            *self.iop_by_width.entry(*w).or_default() += n;
        }
    }

    pub fn breakdown(&self) -> String {
        self.stages
            .iter()
            .map(|(k, v)| format!("{k}: iop={} op={}", v.iop, v.op))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// A decomposed QMM: fused coefficients plus which correction terms survive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QmmPlan {
    pub kind: QmmKind,
    pub fused: FusedCoeffs,
    pub needs_row_sums_lhs: bool,
    pub needs_col_sums_rhs: bool,
    pub needs_row_sums_rhs: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lhs_bits: u8,
    pub rhs_bits: u8,
}

impl QmmPlan {
    pub fn new(kind: QmmKind, lhs: &AffineOperand, rhs: &AffineOperand) -> Result<Self> {
        if lhs.role() != Role::Activation {
            return Err(Error::ModeMismatch("lhs must be an activation".into()));
        }
        let expected_rhs = match kind {
            QmmKind::ActivationWeight => Role::Weight,
            QmmKind::ActivationActivation => Role::Activation,
        };
        if rhs.role() != expected_rhs {
            return Err(Error::ModeMismatch(format!(
                "{kind} expects a {expected_rhs:?} rhs, got {:?}",
                rhs.role()
            )));
        }
        if lhs.frac_bits() != rhs.frac_bits() {
            return Err(Error::Encoding(format!(
                "operands use Q{} and Q{}",
                lhs.frac_bits(),
                rhs.frac_bits()
            )));
        }
        let (k_rhs, n) = match kind {
            QmmKind::ActivationWeight => (rhs.rows(), rhs.cols()),
            QmmKind::ActivationActivation => (rhs.cols(), rhs.rows()),
        };
        if lhs.cols() != k_rhs {
            return Err(Error::DimensionMismatch(format!(
                "{kind}: lhs is {}x{}, rhs inner dimension is {k_rhs}",
                lhs.rows(),
                lhs.cols()
            )));
        }
        let fused = fuse(lhs, rhs);
        Ok(Self {
            kind,
            needs_row_sums_lhs: !fused.co.is_zero(),
            needs_col_sums_rhs: kind == QmmKind::ActivationWeight && !fused.oc.is_zero(),
            needs_row_sums_rhs: kind == QmmKind::ActivationActivation && !fused.oc.is_zero(),
            fused,
            m: lhs.rows(),
            k: lhs.cols(),
            n,
            lhs_bits: lhs.bits(),
            rhs_bits: rhs.bits(),
        })
    }

    /// Folds an extra output factor (e.g. attention `1/sqrt(d_head)`) into the
    /// fused coefficients.
    pub fn with_output_scale(mut self, s: Fixed16) -> Self {
        self.fused = self.fused.scaled(s);
        self.needs_row_sums_lhs = !self.fused.co.is_zero();
        let oc = !self.fused.oc.is_zero();
        self.needs_col_sums_rhs = self.kind == QmmKind::ActivationWeight && oc;
        self.needs_row_sums_rhs = self.kind == QmmKind::ActivationActivation && oc;
        self
    }

    pub fn iop_width(&self) -> u8 {
        self.lhs_bits.max(self.rhs_bits)
    }

    /// Sums over the lhs rows, if the plan needs them.
    pub fn lhs_sums(&self, lhs: &IntMatrix) -> Result<Option<Vec<i64>>> {
        if !self.needs_row_sums_lhs {
            return Ok(None);
        }
        checked_sums(row_sums(lhs)).map(Some)
    }

    /// Per-output-column sums of the rhs payload, if the plan needs them.
    pub fn rhs_sums(&self, rhs: &IntMatrix) -> Result<Option<Vec<i64>>> {
        let sums = match self.kind {
            QmmKind::ActivationWeight if self.needs_col_sums_rhs => col_sums(rhs),
            QmmKind::ActivationActivation if self.needs_row_sums_rhs => row_sums(rhs),
            _ => return Ok(None),
        };
        checked_sums(sums).map(Some)
    }

    /// Charges the integer stage and the coefficient stage to `counter`.
    pub fn count(&self, counter: &mut OpCounter) {
        let mnk = (self.m * self.n * self.k) as u64;
        counter.add_iop("integer_mm", 2 * mnk, self.iop_width());
        counter.add_op("offline_fusion", self.fused.fusion_ops);
        let mn = (self.m * self.n) as u64;
        let f = &self.fused;
        let terms: [(&'static str, bool); 4] = [
            ("scale_intmm", !f.cc.is_zero()),
            ("scale_lhs_sums", !f.co.is_zero()),
            ("scale_rhs_sums", !f.oc.is_zero()),
            ("scale_constant", !f.oo.is_zero()),
        ];
        let mut live = 0u64;
        for (stage, nonzero) in terms {
            if nonzero {
                counter.add_op(stage, mn);
                live += 1;
            }
        }
        if live > 1 {
            counter.add_op("combine", (live - 1) * mn);
        }
    }

    /// Applies the fused coefficients to an integer product. Rounds once per
    /// element. Returns the result and the number of saturated elements.
    pub fn apply(
        &self,
        product: &AccMatrix,
        lhs_sums: Option<&[i64]>,
        rhs_sums: Option<&[i64]>,
    ) -> Result<(FixedMatrix, u64)> {
        if product.rows() != self.m || product.cols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "product is {}x{}, plan expects {}x{}",
                product.rows(),
                product.cols(),
                self.m,
                self.n
            )));
        }
        let lhs_sums = sums_or_empty(lhs_sums, self.needs_row_sums_lhs, self.m, "lhs")?;
        let rhs_sums = sums_or_empty(
            rhs_sums,
            self.needs_col_sums_rhs || self.needs_row_sums_rhs,
            self.n,
            "rhs",
        )?;
        let f = &self.fused;
        let mut raw = Vec::with_capacity(self.m * self.n);
        let mut saturated = 0u64;
        for i in 0..self.m {
            for j in 0..self.n {
                let mut acc = f.cc.raw() * product.get(i, j) as i128;
                if self.needs_row_sums_lhs {
                    acc += f.co.raw() * lhs_sums[i] as i128;
                }
                if !rhs_sums.is_empty() {
                    acc += f.oc.raw() * rhs_sums[j] as i128;
                }
                acc += f.oo.raw() * self.k as i128;
                let (v, sat) = round_wide_to_fixed16(acc, f.frac_bits(), f.out_frac_bits);
                saturated += sat as u64;
                raw.push(v.raw());
            }
        }
        Ok((
            FixedMatrix::from_raw(self.m, self.n, f.out_frac_bits, raw),
            saturated,
        ))
    }

    /// Runs the plan on the functional integer kernel.
    pub fn execute(
        &self,
        lhs: &AffineOperand,
        rhs: &AffineOperand,
        counter: &mut OpCounter,
    ) -> Result<FixedMatrix> {
        let product = integer_product(self.kind, lhs.payload(), rhs.payload())?;
        let lhs_sums = self.lhs_sums(lhs.payload())?;
        let rhs_sums = self.rhs_sums(rhs.payload())?;
        let (out, _) = self.apply(&product, lhs_sums.as_deref(), rhs_sums.as_deref())?;
        self.count(counter);
        Ok(out)
    }
}

fn sums_or_empty<'a>(
    sums: Option<&'a [i64]>,
    needed: bool,
    len: usize,
    side: &str,
) -> Result<&'a [i64]> {
    match (needed, sums) {
        (false, _) => Ok(&[]),
        (true, Some(s)) if s.len() == len => Ok(s),
        (true, Some(s)) => Err(Error::DimensionMismatch(format!(
            "{side} sums have length {}, expected {len}",
            s.len()
        ))),
        (true, None) => Err(Error::DimensionMismatch(format!(
            "plan needs {side} sums but none were supplied"
        ))),
    }
}

fn checked_sums(sums: Vec<i64>) -> Result<Vec<i64>> {
    for &s in &sums {
        check_signed_width(s as i128, ACC_BITS)?;
    }
    Ok(sums)
}

/// Exact integer product of two unsigned payloads via bit-plane popcounts.
///
/// For `ActivationWeight` the rhs is `K x N`; for `ActivationActivation` it is
/// the transposed `N x K` operand. Every result must fit the 32-bit
/// accumulator.
pub fn integer_product(kind: QmmKind, lhs: &IntMatrix, rhs: &IntMatrix) -> Result<AccMatrix> {
    let rhs_t;
    let rhs_rows = match kind {
        QmmKind::ActivationWeight => {
            rhs_t = rhs.transpose();
            &rhs_t
        }
        QmmKind::ActivationActivation => rhs,
    };
    if lhs.cols() != rhs_rows.cols() {
        return Err(Error::DimensionMismatch(format!(
            "inner dimensions {} and {}",
            lhs.cols(),
            rhs_rows.cols()
        )));
    }
    let lp = lhs.bit_planes();
    let rp = rhs_rows.bit_planes();
    let n = rhs_rows.rows();
    let rows: Vec<Vec<i64>> = (0..lhs.rows())
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut acc = 0i64;
                    for (p, lplane) in lp.iter().enumerate() {
                        let lw = lplane.row_words(i);
                        for (q, rplane) in rp.iter().enumerate() {
                            let rw = rplane.row_words(j);
                            let ones: u32 =
                                lw.iter().zip(rw).map(|(a, b)| (a & b).count_ones()).sum();
                            acc += (ones as i64) << (p + q);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let data: Vec<i64> = rows.into_iter().flatten().collect();
    for &v in &data {
        check_signed_width(v as i128, ACC_BITS)?;
    }
    Ok(AccMatrix::from_vec(lhs.rows(), n, data))
}

/// Activation x weight QMM through the abstracted flow.
pub fn qmm_activation_weight(
    act: &AffineOperand,
    wt: &AffineOperand,
    counter: &mut OpCounter,
) -> Result<FixedMatrix> {
    QmmPlan::new(QmmKind::ActivationWeight, act, wt)?.execute(act, wt, counter)
}

/// Activation x activation QMM; `rhs_t` is the second operand transposed.
pub fn qmm_activation_activation(
    lhs: &AffineOperand,
    rhs_t: &AffineOperand,
    counter: &mut OpCounter,
) -> Result<FixedMatrix> {
    QmmPlan::new(QmmKind::ActivationActivation, lhs, rhs_t)?.execute(lhs, rhs_t, counter)
}

/// Measured vs. closed-form counts for a square `N x N` run in the
/// activation-offset-only configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountReport {
    pub n: u64,
    pub iop: u64,
    pub op: u64,
    pub expected_iop: u64,
    pub expected_op: u64,
    pub iop_formula_match: bool,
    pub op_formula_match: bool,
}

pub fn expected_counts(n: u64) -> (u64, u64) {
    (2 * n * n * n, 3 * n * n + 2)
}

/// Compares a counter against `2N^3` Iop and `3N^2 + 2` Op. A mismatch is an
/// error carrying the per-stage counts.
pub fn count_report(counter: &OpCounter, n: u64) -> Result<CountReport> {
    let (expected_iop, expected_op) = expected_counts(n);
    let report = CountReport {
        n,
        iop: counter.iop(),
        op: counter.op(),
        expected_iop,
        expected_op,
        iop_formula_match: counter.iop() == expected_iop,
        op_formula_match: counter.op() == expected_op,
    };
    if report.iop_formula_match && report.op_formula_match {
        Ok(report)
    } else {
        Err(Error::CountMismatch(format!(
            "N={n}: measured iop={} op={}, expected iop={expected_iop} op={expected_op}; stages: {}",
            counter.iop(),
            counter.op(),
            counter.breakdown()
        )))
    }
}
