//! Binary Transformer blocks (attention then feed-forward) on the engine and
//! VPU models, with a cycle trace.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{OpCounter, QmmKind, QmmPlan};
use crate::engine::{CycleReport, EngineConfig, QmmEngine};
use crate::error::{Error, Result};
use crate::fixed::{Fixed16, FixedMatrix};
use crate::matrix::{is_supported_bits, IntMatrix};
use crate::nonlinear::{gelu, layernorm, softmax, RealTensor};
use crate::operand::AffineOperand;
use crate::quantize::{quantize, QuantScheme};
use crate::vpu::{vpu_apply, VpuConfig};

/// Activation widths of the six QMM sites of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteBits {
    /// Q/K/V projections.
    pub proj_in: u8,
    /// Attention scores.
    pub qk: u8,
    /// Attention-weighted values.
    pub sv: u8,
    pub proj_out: u8,
    pub ffn1: u8,
    pub ffn2: u8,
}

impl SiteBits {
    pub fn uniform(b: u8) -> Self {
        Self {
            proj_in: b,
            qk: b,
            sv: b,
            proj_out: b,
            ffn1: b,
            ffn2: b,
        }
    }

    pub const NAMES: [&'static str; 6] = ["proj_in", "qk", "sv", "proj_out", "ffn1", "ffn2"];

    pub fn get(&self, site: &str) -> Option<u8> {
        Some(match site {
            "proj_in" => self.proj_in,
            "qk" => self.qk,
            "sv" => self.sv,
            "proj_out" => self.proj_out,
            "ffn1" => self.ffn1,
            "ffn2" => self.ffn2,
            _ => return None,
        })
    }

    pub fn set(&mut self, site: &str, b: u8) -> bool {
        let slot = match site {
            "proj_in" => &mut self.proj_in,
            "qk" => &mut self.qk,
            "sv" => &mut self.sv,
            "proj_out" => &mut self.proj_out,
            "ffn1" => &mut self.ffn1,
            "ffn2" => &mut self.ffn2,
            _ => return false,
        };
        *slot = b;
        true
    }
}

/// Shape and precision of one Transformer block. Weights are always binary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub act_bits: SiteBits,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.seq_len", self.seq_len),
            ("model.hidden", self.hidden),
            ("model.heads", self.heads),
            ("model.ffn_dim", self.ffn_dim),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.hidden < 2 {
            return Err(Error::config("model.hidden", "layernorm needs at least 2"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model.heads",
                format!("{} does not divide hidden size {}", self.heads, self.hidden),
            ));
        }
        for site in SiteBits::NAMES {
            let b = self.act_bits.get(site).unwrap();
            if !is_supported_bits(b) {
                return Err(Error::config(
                    format!("model.act_bits_{site}"),
                    format!("{b} is not one of 1, 2, 4, 8"),
                ));
            }
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Binary weights of one block plus layernorm parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub wq: AffineOperand,
    pub wk: AffineOperand,
    pub wv: AffineOperand,
    pub wo: AffineOperand,
    pub w1: AffineOperand,
    pub w2: AffineOperand,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

const WEIGHT_NAMES: [&str; 6] = ["wq", "wk", "wv", "wo", "w1", "w2"];

/// Binary weight decoding to `{-s, +s}` with `s = 1/sqrt(K)`.
pub fn binary_weight(payload: IntMatrix, frac_bits: u8) -> Result<AffineOperand> {
    if payload.bit_width() != 1 {
        return Err(Error::Encoding(format!(
            "weights must be 1-bit, got {}",
            payload.bit_width()
        )));
    }
    let s = Fixed16::from_f64(1.0 / (payload.rows() as f64).sqrt(), frac_bits);
    AffineOperand::weight(payload, s + s, Some(-s))
}

impl BlockWeights {
    fn shapes(spec: &LayerSpec) -> [(usize, usize); 6] {
        let (d, f) = (spec.hidden, spec.ffn_dim);
        [(d, d), (d, d), (d, d), (d, d), (d, f), (f, d)]
    }

    fn assemble(spec: &LayerSpec, ops: Vec<AffineOperand>) -> Self {
        let d = spec.hidden;
        let mut it = ops.into_iter();
        let mut next = || it.next().unwrap();
        Self {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            w1: next(),
            w2: next(),
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
        }
    }

    pub fn random(spec: &LayerSpec, rng: &mut impl Rng, frac_bits: u8) -> Result<Self> {
        let ops = Self::shapes(spec)
            .iter()
            .map(|&(r, c)| {
                let bits = (0..r * c).map(|_| rng.random::<bool>() as u8).collect();
                binary_weight(IntMatrix::new(r, c, 1, bits)?, frac_bits)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(spec, ops))
    }

    /// Reads `block{index}_{wq,wk,wv,wo,w1,w2}.txt` from `dir`.
    pub fn load(dir: &Path, index: usize, spec: &LayerSpec, frac_bits: u8) -> Result<Self> {
        let mut ops = Vec::with_capacity(6);
        for (name, &(r, c)) in WEIGHT_NAMES.iter().zip(&Self::shapes(spec)) {
            let path = dir.join(format!("block{index}_{name}.txt"));
            let m = IntMatrix::read_file(&path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            if (m.rows(), m.cols()) != (r, c) {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{}, block {index} needs {r}x{c}",
                    path.display(),
                    m.rows(),
                    m.cols()
                )));
            }
            ops.push(binary_weight(m, frac_bits)?);
        }
        Ok(Self::assemble(spec, ops))
    }

    pub fn save(&self, dir: &Path, index: usize) -> Result<()> {
        let ops = [&self.wq, &self.wk, &self.wv, &self.wo, &self.w1, &self.w2];
        for (name, op) in WEIGHT_NAMES.iter().zip(ops) {
            op.payload()
                .write_file(dir.join(format!("block{index}_{name}.txt")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub spec: LayerSpec,
    pub weights: BlockWeights,
}

/// Seeded blocks and a uniform `[-1, 1)` input for `specs`.
pub fn random_model(
    specs: &[LayerSpec],
    seed: u64,
    frac_bits: u8,
) -> Result<(Vec<Block>, RealTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, d) = specs.first().map_or((1, 2), |sp| (sp.seq_len, sp.hidden));
    let x = RealTensor::new(
        s,
        d,
        (0..s * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let blocks = specs
        .iter()
        .map(|spec| {
            Ok(Block {
                spec: spec.clone(),
                weights: BlockWeights::random(spec, &mut rng, frac_bits)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((blocks, x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub engine: EngineConfig,
    pub vpu: VpuConfig,
    pub scheme: QuantScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            vpu: VpuConfig::default(),
            scheme: QuantScheme::MinMaxAffine,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.vpu.validate()
    }
}

/// One QMM in the trace. The VPU streams behind the engine, so only the part
/// of its work that outlasts the engine's compute phase is exposed.
#[derive(Clone, Debug, PartialEq)]
pub struct QmmRecord {
    pub site: String,
    pub kind: QmmKind,
    pub report: CycleReport,
    pub vpu_cycles: u64,
    pub vpu_exposed: u64,
    pub saturated: u64,
}

impl QmmRecord {
    pub fn cycles(&self) -> u64 {
        self.report.total_cycles + self.vpu_exposed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Softmax,
    LayerNorm,
    Gelu,
    /// Host-side quantization, charged zero cycles.
    Quantize,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Softmax => "softmax",
            EventKind::LayerNorm => "layernorm",
            EventKind::Gelu => "gelu",
            EventKind::Quantize => "quantize",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub elements: usize,
    pub cycles: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockTrace {
    pub qmms: Vec<QmmRecord>,
    pub events: Vec<Event>,
    pub total_cycles: u64,
    pub effective_ops: u64,
    pub counter: OpCounter,
    pub saturated: u64,
}

impl BlockTrace {
    fn push_qmm(&mut self, r: QmmRecord) {
        self.total_cycles += r.cycles();
        self.effective_ops += r.report.effective_ops;
        self.saturated += r.saturated;
        self.qmms.push(r);
    }

    fn push_event(&mut self, e: Event) {
        self.total_cycles += e.cycles;
        self.events.push(e);
    }

    pub fn extend(&mut self, other: BlockTrace) {
        self.total_cycles += other.total_cycles;
        self.effective_ops += other.effective_ops;
        self.saturated += other.saturated;
        self.counter.merge(&other.counter);
        self.qmms.extend(other.qmms);
        self.events.extend(other.events);
    }

    /// Sum of every component's cycles; equals `total_cycles`.
    pub fn component_cycles(&self) -> u64 {
        self.qmms.iter().map(QmmRecord::cycles).sum::<u64>()
            + self.events.iter().map(|e| e.cycles).sum::<u64>()
    }

    pub fn nonlinear_elements(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| e.kind != EventKind::Quantize)
            .map(|e| e.elements as u64)
            .sum()
    }
}

/// Converts a FIX-16 result to a full-precision tensor.
pub fn to_real(m: &FixedMatrix) -> RealTensor {
    RealTensor::new(m.rows(), m.cols(), m.to_f64()).expect("fixed values are finite")
}

/// FIX-16 attention scale `1/sqrt(d_head)`.
pub fn attention_scale(d_head: usize, frac_bits: u8) -> Fixed16 {
    Fixed16::from_f64(1.0 / (d_head as f64).sqrt(), frac_bits)
}

/// Runs blocks on one engine instance.
pub struct Simulator {
    config: SimConfig,
    engine: QmmEngine,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let engine = QmmEngine::new(config.engine.clone())?;
        Ok(Self { config, engine })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn quantize(
        &self,
        x: &RealTensor,
        bits: u8,
        scheme: QuantScheme,
        trace: &mut BlockTrace,
    ) -> Result<AffineOperand> {
        trace.push_event(Event {
            kind: EventKind::Quantize,
            elements: x.data().len(),
            cycles: 0,
        });
        quantize(x, bits, scheme, self.config.vpu.frac_bits)
    }

    fn nonlinear(&self, kind: EventKind, elements: usize, trace: &mut BlockTrace) {
        trace.push_event(Event {
            kind,
            elements,
            cycles: self.config.vpu.nonlinear_cycles(elements),
        });
    }

    /// One QMM: integer stage on the engine, coefficients on the VPU.
    /// For activation x activation `rhs` is the transposed second operand.
    fn qmm(
        &mut self,
        site: String,
        kind: QmmKind,
        lhs: &AffineOperand,
        rhs: &AffineOperand,
        output_scale: Option<Fixed16>,
        trace: &mut BlockTrace,
    ) -> Result<FixedMatrix> {
        let mut plan = QmmPlan::new(kind, lhs, rhs)?;
        if let Some(s) = output_scale {
            plan = plan.with_output_scale(s);
        }
        let out = self
            .engine
            .schedule_qmm(&plan, lhs.payload(), rhs.payload())?;
        let vpu = vpu_apply(
            &self.config.vpu,
            &out.product,
            &plan.fused,
            out.lhs_sums.as_deref(),
            out.rhs_sums.as_deref(),
            plan.k,
        )?;
        plan.count(&mut trace.counter);
        trace.push_qmm(QmmRecord {
            site,
            kind,
            vpu_exposed: vpu.cycles.saturating_sub(out.report.compute_cycles),
            vpu_cycles: vpu.cycles,
            report: out.report,
            saturated: vpu.saturated,
        });
        debug_assert!(self.engine.is_idle());
        Ok(vpu.out)
    }

    pub fn run_mha(
        &mut self,
        x: &RealTensor,
        w: &BlockWeights,
        spec: &LayerSpec,
    ) -> Result<(RealTensor, BlockTrace)> {
        spec.validate()?;
        check_input(x, spec)?;
        let mut t = BlockTrace::default();
        let scheme = self.config.scheme;
        let aw = QmmKind::ActivationWeight;
        let aa = QmmKind::ActivationActivation;
        let bits = spec.act_bits;
        let f = self.config.vpu.frac_bits;

        let xq = self.quantize(x, bits.proj_in, scheme, &mut t)?;
        let q = to_real(&self.qmm("q_proj".into(), aw, &xq, &w.wq, None, &mut t)?);
        let k = to_real(&self.qmm("k_proj".into(), aw, &xq, &w.wk, None, &mut t)?);
        let v = to_real(&self.qmm("v_proj".into(), aw, &xq, &w.wv, None, &mut t)?);

        let dh = spec.d_head();
        let scale = attention_scale(dh, f);
        let mut heads = Vec::with_capacity(spec.heads);
        for h in 0..spec.heads {
            let qh = self.quantize(&q.col_slice(h * dh, dh)?, bits.qk, scheme, &mut t)?;
            let kh = self.quantize(&k.col_slice(h * dh, dh)?, bits.qk, scheme, &mut t)?;
            let scores = self.qmm(format!("scores.h{h}"), aa, &qh, &kh, Some(scale), &mut t)?;
            let p = softmax(&to_real(&scores));
            self.nonlinear(EventKind::Softmax, p.data().len(), &mut t);
            let pq = self.quantize(&p, bits.sv, QuantScheme::MinMaxAffine, &mut t)?;
            let vh = self.quantize(&v.col_slice(h * dh, dh)?, bits.sv, scheme, &mut t)?;
            let ctx = self.qmm(
                format!("context.h{h}"),
                aa,
                &pq,
                &vh.transposed(),
                None,
                &mut t,
            )?;
            heads.push(to_real(&ctx));
        }
        let ctx = RealTensor::hconcat(&heads)?;
        let cq = self.quantize(&ctx, bits.proj_out, scheme, &mut t)?;
        let o = to_real(&self.qmm("out_proj".into(), aw, &cq, &w.wo, None, &mut t)?);
        let y = layernorm(&x.add(&o)?, &w.ln1_gain, &w.ln1_bias)?;
        self.nonlinear(EventKind::LayerNorm, y.data().len(), &mut t);
        Ok((y, t))
    }

    pub fn run_ffn(
        &mut self,
        x: &RealTensor,
        w: &BlockWeights,
        spec: &LayerSpec,
    ) -> Result<(RealTensor, BlockTrace)> {
        spec.validate()?;
        check_input(x, spec)?;
        let mut t = BlockTrace::default();
        let scheme = self.config.scheme;
        let aw = QmmKind::ActivationWeight;

        let xq = self.quantize(x, spec.act_bits.ffn1, scheme, &mut t)?;
        let h = to_real(&self.qmm("ffn1".into(), aw, &xq, &w.w1, None, &mut t)?);
        let g = gelu(&h);
        self.nonlinear(EventKind::Gelu, g.data().len(), &mut t);
        let gq = self.quantize(&g, spec.act_bits.ffn2, scheme, &mut t)?;
        let o = to_real(&self.qmm("ffn2".into(), aw, &gq, &w.w2, None, &mut t)?);
        let y = layernorm(&x.add(&o)?, &w.ln2_gain, &w.ln2_bias)?;
        self.nonlinear(EventKind::LayerNorm, y.data().len(), &mut t);
        Ok((y, t))
    }

    pub fn run_block(&mut self, x: &RealTensor, block: &Block) -> Result<(RealTensor, BlockTrace)> {
        let (y, mut t) = self.run_mha(x, &block.weights, &block.spec)?;
        let (z, t2) = self.run_ffn(&y, &block.weights, &block.spec)?;
        t.extend(t2);
        Ok((z, t))
    }

    pub fn run_model(
        &mut self,
        blocks: &[Block],
        x: &RealTensor,
    ) -> Result<(RealTensor, BlockTrace)> {
        let mut trace = BlockTrace::default();
        let mut x = x.clone();
        for (i, block) in blocks.iter().enumerate() {
            let (y, t) = self.run_block(&x, block).map_err(|e| annotate(e, i))?;
            trace.extend(t);
            x = y;
        }
        Ok((x, trace))
    }
}

fn annotate(e: Error, block: usize) -> Error {
    match e {
        Error::DimensionMismatch(m) => Error::DimensionMismatch(format!("block {block}: {m}")),
        Error::ModeMismatch(m) => Error::ModeMismatch(format!("block {block}: {m}")),
        other => other,
    }
}

fn check_input(x: &RealTensor, spec: &LayerSpec) -> Result<()> {
    if (x.rows(), x.cols()) != (spec.seq_len, spec.hidden) {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{}, block expects {}x{}",
            x.rows(),
            x.cols(),
            spec.seq_len,
            spec.hidden
        )));
    }
    Ok(())
}

pub fn run_mha(
    x: &RealTensor,
    w: &BlockWeights,
    spec: &LayerSpec,
    config: &SimConfig,
) -> Result<(RealTensor, BlockTrace)> {
    Simulator::new(config.clone())?.run_mha(x, w, spec)
}

pub fn run_ffn(
    x: &RealTensor,
    w: &BlockWeights,
    spec: &LayerSpec,
    config: &SimConfig,
) -> Result<(RealTensor, BlockTrace)> {
    Simulator::new(config.clone())?.run_ffn(x, w, spec)
}

pub fn run_model(
    blocks: &[Block],
    x: &RealTensor,
    config: &SimConfig,
) -> Result<(RealTensor, BlockTrace)> {
    Simulator::new(config.clone())?.run_model(blocks, x)
}
