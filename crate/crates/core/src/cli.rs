//! Run configuration files and the command implementations behind the
//! `beta-sim` binary.
//!
//! Config files are line oriented: `section.key = value`, `#` starts a
//! comment. Machine-readable reports are `metric.<name>=<value>` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{
    count_report, expected_counts, integer_product, qmm_activation_weight, OpCounter, QmmKind,
    QmmPlan,
};
use crate::engine::{
    dpu_dot_product, pass_compute_cycles, EngineConfig, Fault, PEMode, QmmEngine, DRAIN_CYCLES,
};
use crate::error::{Error, Result};
use crate::fixed::{Fixed16, FixedMatrix};
use crate::matrix::IntMatrix;
use crate::nonlinear::RealTensor;
use crate::operand::AffineOperand;
use crate::oracle::{exact_affine_mm, plain_dot, plain_intmm, reference_model};
use crate::perf::{precision_sweep, throughput_report, SweepRow, ThroughputReport};
use crate::pipeline::{
    random_model, Block, BlockTrace, BlockWeights, LayerSpec, SimConfig, Simulator, SiteBits,
};
use crate::quantize::QuantScheme;

/// Exit codes of the binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFY_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SIMULATION: i32 = 3;
}

/// Exit code for an error: configuration and input problems vs. failures
/// during simulation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::Io(_) => exit::CONFIG,
        _ => exit::SIMULATION,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Human,
    Machine,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Format::Human),
            "machine" => Ok(Format::Machine),
            _ => Err(Error::config(
                "format",
                format!("`{s}` is not human or machine"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub blocks: usize,
    pub spec: LayerSpec,
    pub seed: u64,
    pub weights_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            blocks: 1,
            spec: LayerSpec {
                seq_len: 8,
                hidden: 16,
                heads: 2,
                ffn_dim: 32,
                act_bits: SiteBits::uniform(1),
            },
            seed: 0,
            weights_dir: None,
            report: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("invalid value `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("invalid boolean `{value}`"))),
    }
}

impl RunConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = BTreeMap::new();
        let mut site_bits: Vec<(String, String, u8)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno + 1).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
            let e = &mut c.sim.engine;
            let v = &mut c.sim.vpu;
            match key {
                "engine.n_dpu" => e.n_dpu = parse_value(key, value)?,
                "engine.j_unfold" => e.j_unfold = parse_value(key, value)?,
                "engine.pe_width" => e.pe_width = parse_value(key, value)?,
                "engine.acc_width" => e.acc_width = parse_value(key, value)?,
                "engine.freq_hz" => e.freq_hz = parse_value(key, value)?,
                "engine.load_bandwidth" => e.load_bandwidth = parse_value(key, value)?,
                "engine.overlap_load" => e.overlap_load = parse_bool(key, value)?,
                "engine.buffer_capacity_bits" => e.buffer_capacity_bits = parse_value(key, value)?,
                "engine.bit_accurate" => e.bit_accurate = parse_bool(key, value)?,
                "vpu.vector_width" => v.vector_width = parse_value(key, value)?,
                "vpu.frac_bits" => v.frac_bits = parse_value(key, value)?,
                "vpu.nonlinear_width" => v.nonlinear_width = parse_value(key, value)?,
                "model.blocks" => c.blocks = parse_value(key, value)?,
                "model.seq_len" => c.spec.seq_len = parse_value(key, value)?,
                "model.hidden" => c.spec.hidden = parse_value(key, value)?,
                "model.heads" => c.spec.heads = parse_value(key, value)?,
                "model.ffn_dim" => c.spec.ffn_dim = parse_value(key, value)?,
                "model.act_bits" => c.spec.act_bits = SiteBits::uniform(parse_value(key, value)?),
                "quant.scheme" => c.sim.scheme = value.parse()?,
                "run.seed" => c.seed = parse_value(key, value)?,
                "io.weights_dir" => c.weights_dir = Some(base_dir.join(value)),
                "io.report" => c.report = Some(base_dir.join(value)),
                _ => match key.strip_prefix("model.act_bits_") {
                    Some(site) if SiteBits::NAMES.contains(&site) => site_bits.push((
                        key.to_string(),
                        site.to_string(),
                        parse_value(key, value)?,
                    )),
                    _ => return Err(Error::config(key, "unknown key")),
                },
            }
        }
        // per-site overrides apply after the uniform width regardless of order
        for (_, site, b) in site_bits {
            c.spec.act_bits.set(&site, b);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.spec.validate()
    }

    /// Blocks and input for this config, from files or the seeded generator.
    pub fn model(&self) -> Result<(Vec<Block>, RealTensor)> {
        let specs = vec![self.spec.clone(); self.blocks];
        let f = self.sim.vpu.frac_bits;
        let (mut blocks, x) = random_model(&specs, self.seed, f)?;
        if let Some(dir) = &self.weights_dir {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.weights = BlockWeights::load(dir, i, &self.spec, f)?;
            }
        }
        Ok((blocks, x))
    }
}

/// Formats a float with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

const OPS_NOTE: &str = "effective ops count multiply and add separately (2*M*K*N per QMM); \
row/column sums and host quantization are charged 0 cycles";

fn machine(out: &mut String, name: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "metric.{name}={value}");
}

fn phase_totals(trace: &BlockTrace) -> BTreeMap<&'static str, u64> {
    let mut m = BTreeMap::new();
    for q in &trace.qmms {
        *m.entry("load").or_default() += q.report.load_cycles;
        *m.entry("compute").or_default() += q.report.compute_cycles;
        *m.entry("drain").or_default() += q.report.drain_cycles;
        *m.entry("vpu_exposed").or_default() += q.vpu_exposed;
    }
    for e in &trace.events {
        *m.entry("nonlinear").or_default() += e.cycles;
    }
    m
}

/// Runs the configured model and formats its throughput report.
pub fn cmd_run(config: &RunConfig, format: Format) -> Result<String> {
    let (blocks, x) = config.model()?;
    let mut sim = Simulator::new(config.sim.clone())?;
    let (_, trace) = sim.run_model(&blocks, &x)?;
    let r = throughput_report(&trace, &config.sim.engine);
    let phases = phase_totals(&trace);
    let mut out = String::new();
    match format {
        Format::Machine => {
            let _ = writeln!(out, "# {OPS_NOTE}");
            machine(&mut out, "seed", config.seed);
            machine(&mut out, "blocks", config.blocks);
            machine(&mut out, "qmms", trace.qmms.len());
            machine(&mut out, "cycles", r.cycles);
            for (k, v) in &phases {
                machine(&mut out, &format!("cycles.{k}"), v);
            }
            machine(&mut out, "effective_ops", r.effective_ops);
            machine(&mut out, "gops", sig6(r.gops));
            machine(&mut out, "peak_gops", sig6(r.peak_gops));
            machine(&mut out, "utilization", sig6(r.utilization));
            machine(&mut out, "iop", trace.counter.iop());
            machine(&mut out, "op", trace.counter.op());
            machine(&mut out, "saturated", trace.saturated);
        }
        Format::Human => {
            let _ = writeln!(out, "# {OPS_NOTE}");
            let _ = writeln!(
                out,
                "seed {}  blocks {}  scheme {}",
                config.seed, config.blocks, config.sim.scheme
            );
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>8} {:>10} {:>8} {:>6} {:>8}",
                "site", "mode", "load", "compute", "drain", "vpu", "util"
            );
            for q in trace.qmms.iter().take(64) {
                let _ = writeln!(
                    out,
                    "{:<14} {:>6} {:>8} {:>10} {:>8} {:>6} {:>8.3}",
                    q.site,
                    q.report.mode.label(),
                    q.report.load_cycles,
                    q.report.compute_cycles,
                    q.report.drain_cycles,
                    q.vpu_exposed,
                    q.report.utilization
                );
            }
            if trace.qmms.len() > 64 {
                let _ = writeln!(out, "... {} more QMMs", trace.qmms.len() - 64);
            }
            for (k, v) in &phases {
                let _ = writeln!(out, "{k:<14} {v:>12} cycles");
            }
            write_throughput(&mut out, &r);
            let _ = writeln!(out, "{:<14} {:>12}", "saturated", trace.saturated);
        }
    }
    Ok(out)
}

fn write_throughput(out: &mut String, r: &ThroughputReport) {
    let _ = writeln!(out, "{:<14} {:>12}", "cycles", r.cycles);
    let _ = writeln!(out, "{:<14} {:>12}", "effective_ops", r.effective_ops);
    let _ = writeln!(out, "{:<14} {:>12}", "gops", sig6(r.gops));
    let _ = writeln!(out, "{:<14} {:>12}", "peak_gops", sig6(r.peak_gops));
    let _ = writeln!(out, "{:<14} {:>12}", "utilization", sig6(r.utilization));
}

/// Parses a comma-separated bit list.
pub fn parse_bits(csv: &str) -> Result<Vec<u8>> {
    csv.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let b: u8 = parse_value("bits", s.trim())?;
            if crate::matrix::is_supported_bits(b) {
                Ok(b)
            } else {
                Err(Error::config(
                    "bits",
                    format!("{b} is not one of 1, 2, 4, 8"),
                ))
            }
        })
        .collect()
}

pub fn cmd_sweep(config: &RunConfig, bits: &[u8], format: Format) -> Result<String> {
    let specs = vec![config.spec.clone(); config.blocks];
    let rows = precision_sweep(&specs, bits, &config.sim, config.seed)?;
    Ok(format_sweep(config.seed, &rows, format))
}

fn format_sweep(seed: u64, rows: &[SweepRow], format: Format) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {OPS_NOTE}");
    match format {
        Format::Machine => {
            machine(&mut out, "seed", seed);
            for r in rows {
                let p = format!("sweep.w1a{}", r.act_bits);
                machine(&mut out, &format!("{p}.cycles"), r.report.cycles);
                machine(&mut out, &format!("{p}.gops"), sig6(r.report.gops));
                machine(
                    &mut out,
                    &format!("{p}.utilization"),
                    sig6(r.report.utilization),
                );
            }
        }
        Format::Human => {
            let _ = writeln!(out, "seed {seed}");
            let _ = writeln!(
                out,
                "{:>6} {:>14} {:>12} {:>12}",
                "mode", "cycles", "gops", "util"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:>6} {:>14} {:>12} {:>12}",
                    format!("W1A{}", r.act_bits),
                    r.report.cycles,
                    sig6(r.report.gops),
                    sig6(r.report.utilization)
                );
            }
        }
    }
    out
}

/// Measured vs closed-form op counts for square QMMs. Returns the table and
/// whether every row matched.
pub fn cmd_count_ops(ns: &[u64], format: Format) -> Result<(String, bool)> {
    let mut out = String::new();
    let mut all = true;
    if format == Format::Human {
        let _ = writeln!(
            out,
            "{:>6} {:>14} {:>14} {:>12} {:>12} {:>6}",
            "N", "iop", "2N^3", "op", "3N^2+2", "match"
        );
    }
    for &n in ns {
        if n == 0 {
            return Err(Error::config("N", "must be at least 1"));
        }
        let counter = count_square(n as usize)?;
        let (ei, eo) = expected_counts(n);
        let ok = count_report(&counter, n).is_ok();
        all &= ok;
        match format {
            Format::Human => {
                let _ = writeln!(
                    out,
                    "{:>6} {:>14} {:>14} {:>12} {:>12} {:>6}",
                    n,
                    counter.iop(),
                    ei,
                    counter.op(),
                    eo,
                    if ok { "yes" } else { "NO" }
                );
            }
            Format::Machine => {
                machine(&mut out, &format!("count_ops.{n}.iop"), counter.iop());
                machine(&mut out, &format!("count_ops.{n}.op"), counter.op());
                machine(&mut out, &format!("count_ops.{n}.match"), ok);
            }
        }
    }
    Ok((out, all))
}

/// Abstracted `N x N` activation x weight product with an activation offset
/// and no weight offset.
pub fn count_square(n: usize) -> Result<OpCounter> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let bits = |rng: &mut ChaCha8Rng| (0..n * n).map(|_| rng.random::<bool>() as u8).collect();
    let a = AffineOperand::activation(
        IntMatrix::new(n, n, 1, bits(&mut rng))?,
        Fixed16::from_f64(0.5, 8),
        Some(Fixed16::from_f64(-0.25, 8)),
    )?;
    let w = AffineOperand::weight(
        IntMatrix::new(n, n, 1, bits(&mut rng))?,
        Fixed16::from_f64(0.125, 8),
        None,
    )?;
    let mut c = OpCounter::new();
    qmm_activation_weight(&a, &w, &mut c)?;
    Ok(c)
}

/// Outcome of one verification suite.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: u64,
    pub failed: u64,
    pub counterexample: Option<String>,
}

impl SuiteResult {
    fn record(&mut self, outcome: Result<Option<String>>, seed: u64) -> Result<()> {
        match outcome? {
            None => self.passed += 1,
            Some(detail) => {
                self.failed += 1;
                if self.counterexample.is_none() {
                    self.counterexample = Some(format!("trial seed {seed}\n{detail}"));
                }
            }
        }
        Ok(())
    }
}

fn random_fixed(rng: &mut impl Rng, frac_bits: u8) -> Fixed16 {
    Fixed16::from_raw(rng.random(), frac_bits)
}

fn random_payload(rng: &mut impl Rng, rows: usize, cols: usize, bits: u8) -> Result<IntMatrix> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(0..1u16 << bits) as u8)
        .collect();
    IntMatrix::new(rows, cols, bits, data)
}

fn describe(op: &AffineOperand) -> String {
    format!(
        "scale {} offset {:?}\n{}",
        op.scale(),
        op.offset().map(|o| o.to_string()),
        op.payload().to_text()
    )
}

fn ulps(a: &FixedMatrix, b: &FixedMatrix) -> i32 {
    a.raw()
        .iter()
        .zip(b.raw())
        .map(|(&x, &y)| (x as i32 - y as i32).abs())
        .max()
        .unwrap_or(0)
}

/// Random QMM (both kinds, widths 1..8, dims up to 16, random FIX-16 scales
/// and offsets) against the exact rational product.
pub fn verify_abstraction_trial(seed: u64, frac_bits: u8) -> Result<Option<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if rng.random() {
        QmmKind::ActivationWeight
    } else {
        QmmKind::ActivationActivation
    };
    let b = [1u8, 2, 4, 8][rng.random_range(0..4)];
    let (m, k, n) = (
        rng.random_range(1..=16),
        rng.random_range(1..=16),
        rng.random_range(1..=16),
    );
    let offset = |rng: &mut ChaCha8Rng| rng.random_bool(0.75).then(|| random_fixed(rng, frac_bits));
    let lhs_off = offset(&mut rng);
    let rhs_off = offset(&mut rng);
    let lhs = AffineOperand::activation(
        random_payload(&mut rng, m, k, b)?,
        random_fixed(&mut rng, frac_bits),
        lhs_off,
    )?;
    let rhs = match kind {
        QmmKind::ActivationWeight => AffineOperand::weight(
            random_payload(&mut rng, k, n, 1)?,
            random_fixed(&mut rng, frac_bits),
            rhs_off,
        )?,
        QmmKind::ActivationActivation => AffineOperand::activation(
            random_payload(&mut rng, n, k, b)?,
            random_fixed(&mut rng, frac_bits),
            rhs_off,
        )?,
    };
    let rhs_kn = match kind {
        QmmKind::ActivationWeight => rhs.clone(),
        QmmKind::ActivationActivation => rhs.transposed(),
    };

    let plan = QmmPlan::new(kind, &lhs, &rhs)?;
    let product = integer_product(kind, lhs.payload(), rhs.payload())?;
    let plain = plain_intmm(lhs.payload(), rhs_kn.payload());
    let mut counter = OpCounter::new();
    let out = plan.execute(&lhs, &rhs, &mut counter)?;
    let expect = exact_affine_mm(&lhs, &rhs_kn)?.to_fixed(frac_bits);
    let err = ulps(&out, &expect);
    if product.data() != plain.as_slice() || err > 1 {
        return Ok(Some(format!(
            "{kind} W{}A{b} {m}x{k}x{n}: integer stage {}, max error {err} ULP\nlhs {}rhs {}",
            rhs.bits(),
            if product.data() == plain.as_slice() {
                "exact"
            } else {
                "MISMATCH"
            },
            describe(&lhs),
            describe(&rhs)
        )));
    }
    Ok(None)
}

/// Random dot product through the PE / compressor / carry-select path, plus a
/// small bit-accurate scheduled QMM, against plain integer arithmetic.
pub fn verify_engine_trial(seed: u64, engine: &EngineConfig) -> Result<Option<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if rng.random() {
        QmmKind::ActivationWeight
    } else {
        QmmKind::ActivationActivation
    };
    let b = [1u8, 2, 4, 8][rng.random_range(0..4)];
    let mode = PEMode::new(kind, b)?;
    let k = rng.random_range(1..=4096);
    let rb = if kind == QmmKind::ActivationWeight {
        1
    } else {
        b
    };
    let a: Vec<u8> = (0..k)
        .map(|_| rng.random_range(0..1u16 << b) as u8)
        .collect();
    let v: Vec<u8> = (0..k)
        .map(|_| rng.random_range(0..1u16 << rb) as u8)
        .collect();
    let (got, cycles) = dpu_dot_product(engine, mode, &a, &v)?;
    let want = plain_dot(&a, &v);
    let want_cycles = pass_compute_cycles(mode, k, engine.j_unfold) + DRAIN_CYCLES;
    if got != want || cycles != want_cycles {
        return Ok(Some(format!(
            "{} K={k}: got {got} in {cycles} cycles, expected {want} in {want_cycles}\na = {a:?}\nb = {v:?}",
            mode.label()
        )));
    }

    let (m, kk, n) = (
        rng.random_range(1..=24),
        rng.random_range(1..=300),
        rng.random_range(1..=4),
    );
    let lhs =
        AffineOperand::activation(random_payload(&mut rng, m, kk, b)?, Fixed16::one(8), None)?;
    let rhs = match kind {
        QmmKind::ActivationWeight => {
            AffineOperand::weight(random_payload(&mut rng, kk, n, 1)?, Fixed16::one(8), None)?
        }
        QmmKind::ActivationActivation => {
            AffineOperand::activation(random_payload(&mut rng, n, kk, b)?, Fixed16::one(8), None)?
        }
    };
    let plan = QmmPlan::new(kind, &lhs, &rhs)?;
    let mut eng = QmmEngine::new(EngineConfig {
        bit_accurate: true,
        ..engine.clone()
    })?;
    let got = eng.schedule_qmm(&plan, lhs.payload(), rhs.payload())?;
    let rhs_kn = match kind {
        QmmKind::ActivationWeight => rhs.payload().clone(),
        QmmKind::ActivationActivation => rhs.payload().transpose(),
    };
    let want = plain_intmm(lhs.payload(), &rhs_kn);
    if got.product.data() != want.as_slice() {
        return Ok(Some(format!(
            "{} scheduled {m}x{kk}x{n}: engine {:?} vs plain {:?}\nlhs\n{}rhs\n{}",
            mode.label(),
            got.product.data(),
            want,
            lhs.payload().to_text(),
            rhs.payload().to_text()
        )));
    }
    Ok(None)
}

/// Random small block (S <= 8, d <= 32) through the simulator and the
/// straight-line reference.
pub fn verify_pipeline_trial(seed: u64, base: &SimConfig) -> Result<Option<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1usize, 2, 4][rng.random_range(0..3)];
    let hidden = (heads * rng.random_range(1..=32 / heads)).max(2);
    let mut bits = SiteBits::uniform(1);
    for site in SiteBits::NAMES {
        bits.set(site, [1, 2, 4, 8][rng.random_range(0..4)]);
    }
    let spec = LayerSpec {
        seq_len: rng.random_range(1..=8),
        hidden,
        heads,
        ffn_dim: rng.random_range(1..=64),
        act_bits: bits,
    };
    let scheme = if rng.random() {
        QuantScheme::MinMaxAffine
    } else {
        QuantScheme::SignBinary
    };
    let config = SimConfig {
        scheme,
        engine: EngineConfig {
            bit_accurate: true,
            ..base.engine.clone()
        },
        ..base.clone()
    };
    let f = config.vpu.frac_bits;
    let (blocks, x) = random_model(std::slice::from_ref(&spec), seed, f)?;
    let (y, _) = Simulator::new(config)?.run_model(&blocks, &x)?;
    let r = reference_model(&blocks, &x, scheme, f)?;
    if y != r {
        let diff = y
            .data()
            .iter()
            .zip(r.data())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Ok(Some(format!(
            "{spec:?} scheme {scheme}: first difference at element {diff}: {} vs {}",
            y.data()[diff],
            r.data()[diff]
        )));
    }
    Ok(None)
}

/// Runs all three suites with `trials` trials each.
pub fn run_verify(config: &RunConfig, trials: u64) -> Result<Vec<SuiteResult>> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let f = config.sim.vpu.frac_bits;
    let mut suites = vec![
        SuiteResult {
            name: "abstraction_vs_exact",
            ..Default::default()
        },
        SuiteResult {
            name: "engine_vs_plain",
            ..Default::default()
        },
        SuiteResult {
            name: "pipeline_vs_reference",
            ..Default::default()
        },
    ];
    for _ in 0..trials {
        let s = master.next_u64();
        suites[0].record(verify_abstraction_trial(s, f), s)?;
        let s = master.next_u64();
        suites[1].record(verify_engine_trial(s, &config.sim.engine), s)?;
        let s = master.next_u64();
        suites[2].record(verify_pipeline_trial(s, &config.sim), s)?;
    }
    Ok(suites)
}

pub fn cmd_verify(config: &RunConfig, trials: u64, format: Format) -> Result<(String, bool)> {
    let suites = run_verify(config, trials)?;
    let ok = suites.iter().all(|s| s.failed == 0);
    let mut out = String::new();
    match format {
        Format::Machine => {
            machine(&mut out, "seed", config.seed);
            for s in &suites {
                machine(&mut out, &format!("verify.{}.passed", s.name), s.passed);
                machine(&mut out, &format!("verify.{}.failed", s.name), s.failed);
            }
        }
        Format::Human => {
            let _ = writeln!(out, "seed {}", config.seed);
            for s in &suites {
                let _ = writeln!(
                    out,
                    "{:<24} {:>6} passed {:>6} failed",
                    s.name, s.passed, s.failed
                );
            }
        }
    }
    if let Some(s) = suites.iter().find(|s| s.failed > 0) {
        let _ = writeln!(
            out,
            "first counterexample ({}):\n{}",
            s.name,
            s.counterexample.as_deref().unwrap_or("")
        );
    }
    Ok((out, ok))
}

/// Applies the hidden fault hook by name.
pub fn parse_fault(name: &str) -> Result<Fault> {
    match name {
        "lane-rule" => Ok(Fault::LaneRule),
        _ => Err(Error::config("fault", format!("unknown fault `{name}`"))),
    }
}
