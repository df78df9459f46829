use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beta_sim::abstraction::{integer_product, qmm_activation_activation, QmmKind, QmmPlan};
use beta_sim::engine::{cycle_report, EngineConfig, PEMode, QmmEngine};
use beta_sim::fixed::Fixed16;
use beta_sim::matrix::{BinaryMatrix, IntMatrix};
use beta_sim::nonlinear::{layernorm, softmax, RealTensor};
use beta_sim::operand::AffineOperand;
use beta_sim::oracle::{exact_affine_mm, plain_intmm};
use beta_sim::perf::{energy_proxy, naive_counter, throughput_report, EnergyProxyModel};
use beta_sim::pipeline::{random_model, LayerSpec, SimConfig, Simulator, SiteBits};
use beta_sim::quantize::{dequantize, quantize, QuantScheme};
use beta_sim::vpu::{vpu_apply, VpuConfig};

const F: u8 = 8;

fn bits() -> impl Strategy<Value = u8> {
    prop::sample::select(vec![1u8, 2, 4, 8])
}

fn int_matrix(rows: usize, cols: usize, b: u8) -> impl Strategy<Value = IntMatrix> {
    prop::collection::vec(0u8..=((1u16 << b) - 1) as u8, rows * cols)
        .prop_map(move |d| IntMatrix::new(rows, cols, b, d).unwrap())
}

/// Small FIX-16 values so products stay far from saturation.
fn small_fixed() -> impl Strategy<Value = Fixed16> {
    (-64i16..=64).prop_map(|r| Fixed16::from_raw(r, F))
}

fn maybe_offset() -> impl Strategy<Value = Option<Fixed16>> {
    prop::option::of(small_fixed())
}

prop_compose! {
    fn aw_pair()(m in 1usize..6, k in 1usize..40, n in 1usize..6, b in bits())
        (a in int_matrix(m, k, b), w in int_matrix(k, n, 1),
         sa in small_fixed(), oa in maybe_offset(), sw in small_fixed(), ow in maybe_offset())
        -> (AffineOperand, AffineOperand)
    {
        (
            AffineOperand::activation(a, sa, oa).unwrap(),
            AffineOperand::weight(w, sw, ow).unwrap(),
        )
    }
}

fn tensor(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = RealTensor> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| RealTensor::new(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn binary_pack_round_trips(rows in 1usize..5, cols in 1usize..150, seed: u64) {
        let vals: Vec<u8> = (0..rows * cols).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let m = BinaryMatrix::pack(rows, cols, &vals).unwrap();
        prop_assert_eq!(m.unpack(), vals);
        prop_assert!(m.padding_is_clear());
    }

    #[test]
    fn int_bit_planes_round_trip((m, b) in (1usize..5, bits()).prop_flat_map(|(r, b)| (int_matrix(r, 7, b), Just(b)))) {
        let planes = m.bit_planes();
        prop_assert_eq!(planes.len(), b as usize);
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v: u8 = planes.iter().enumerate().map(|(p, pl)| pl.get(i, j) << p).sum();
                prop_assert_eq!(v, m.get(i, j));
            }
        }
    }

    #[test]
    fn abstraction_matches_exact_product((a, w) in aw_pair()) {
        let plan = QmmPlan::new(QmmKind::ActivationWeight, &a, &w).unwrap();
        let mut counter = Default::default();
        let got = plan.execute(&a, &w, &mut counter).unwrap();
        let want = exact_affine_mm(&a, &w).unwrap().to_fixed(F);
        for (x, y) in got.raw().iter().zip(want.raw()) {
            prop_assert!((*x as i32 - *y as i32).abs() <= 1, "{} vs {}", x, y);
        }
    }

    #[test]
    fn zero_offsets_leave_only_the_product((a, w) in aw_pair()) {
        let a = AffineOperand::activation(a.payload().clone(), a.scale(), None).unwrap();
        let w = AffineOperand::weight(w.payload().clone(), w.scale(), None).unwrap();
        let plan = QmmPlan::new(QmmKind::ActivationWeight, &a, &w).unwrap();
        prop_assert!(!plan.needs_row_sums_lhs && !plan.needs_col_sums_rhs);
        prop_assert_eq!(plan.fused.nonzero_terms(), !plan.fused.cc.is_zero() as u64);
    }

    #[test]
    fn vpu_agrees_with_plan((a, w) in aw_pair()) {
        let plan = QmmPlan::new(QmmKind::ActivationWeight, &a, &w).unwrap();
        let product = integer_product(plan.kind, a.payload(), w.payload()).unwrap();
        let ls = plan.lhs_sums(a.payload()).unwrap();
        let rs = plan.rhs_sums(w.payload()).unwrap();
        let (want, _) = plan.apply(&product, ls.as_deref(), rs.as_deref()).unwrap();
        let got = vpu_apply(&VpuConfig::default(), &product, &plan.fused, ls.as_deref(), rs.as_deref(), plan.k).unwrap();
        prop_assert_eq!(got.out, want);
    }

    #[test]
    fn self_product_is_symmetric(
        (a, s, o) in (1usize..6, 1usize..30, bits())
            .prop_flat_map(|(m, k, b)| (int_matrix(m, k, b), small_fixed(), maybe_offset()))
    ) {
        let x = AffineOperand::activation(a, s, o).unwrap();
        let out = qmm_activation_activation(&x, &x, &mut Default::default()).unwrap();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                prop_assert_eq!(out.get(i, j), out.get(j, i));
            }
        }
    }

    #[test]
    fn engine_product_is_exact(
        (a, w, kind) in (1usize..20, 1usize..300, 1usize..4, bits(), any::<bool>())
            .prop_flat_map(|(m, k, n, b, aa)| {
                let rb = if aa { b } else { 1 };
                let kind = if aa { QmmKind::ActivationActivation } else { QmmKind::ActivationWeight };
                (int_matrix(m, k, b), int_matrix(n, k, rb), Just(kind))
            })
    ) {
        let one = Fixed16::one(F);
        let lhs = AffineOperand::activation(a.clone(), one, Some(one)).unwrap();
        let rhs_payload = match kind {
            QmmKind::ActivationWeight => w.transpose(),
            QmmKind::ActivationActivation => w.clone(),
        };
        let rhs = match kind {
            QmmKind::ActivationWeight => AffineOperand::weight(rhs_payload.clone(), one, Some(one)),
            QmmKind::ActivationActivation => AffineOperand::activation(rhs_payload.clone(), one, Some(one)),
        }
        .unwrap();
        let plan = QmmPlan::new(kind, &lhs, &rhs).unwrap();
        let cfg = EngineConfig { bit_accurate: true, ..Default::default() };
        let mut engine = QmmEngine::new(cfg.clone()).unwrap();
        let out = engine.schedule_qmm(&plan, &a, &rhs_payload).unwrap();
        let want = plain_intmm(&a, &w.transpose());
        prop_assert_eq!(out.product.data(), want.as_slice());
        prop_assert!(engine.is_idle());
        let analytic = cycle_report(&cfg, out.report.mode, plan.m, plan.k, plan.n, plan.lhs_bits, plan.rhs_bits).unwrap();
        prop_assert_eq!(out.report, analytic);
    }

    #[test]
    fn cycles_grow_with_every_dimension(m in 1usize..300, k in 1usize..3000, n in 1usize..50, b in bits(), aa: bool) {
        let c = EngineConfig::default();
        let kind = if aa { QmmKind::ActivationActivation } else { QmmKind::ActivationWeight };
        let rb = if aa { b } else { 1 };
        let mode = PEMode::new(kind, b).unwrap();
        let total = |m, k, n| cycle_report(&c, mode, m, k, n, b, rb).unwrap().total_cycles;
        let base = total(m, k, n);
        prop_assert!(total(m + 1, k, n) >= base);
        prop_assert!(total(m, k + 1, n) >= base);
        prop_assert!(total(m, k, n + 1) >= base);
    }

    #[test]
    fn wider_activations_never_run_faster(m in 1usize..300, k in 1usize..3000, n in 1usize..50, aa: bool) {
        let c = EngineConfig::default();
        let kind = if aa { QmmKind::ActivationActivation } else { QmmKind::ActivationWeight };
        let cyc: Vec<u64> = [1u8, 2, 4, 8]
            .iter()
            .map(|&b| {
                let rb = if aa { b } else { 1 };
                cycle_report(&c, PEMode::new(kind, b).unwrap(), m, k, n, b, rb).unwrap().compute_cycles
            })
            .collect();
        prop_assert!(cyc.windows(2).all(|w| w[0] <= w[1]), "{:?}", cyc);
    }

    #[test]
    fn quantize_error_is_half_a_step(x in tensor(3, 9, -50.0, 50.0), b in bits()) {
        let q = quantize(&x, b, QuantScheme::MinMaxAffine, F).unwrap();
        let s = q.scale().to_f64();
        let back = dequantize(&q);
        for (u, v) in x.data().iter().zip(back.data()) {
            prop_assert!((u - v).abs() <= s / 2.0 + 1e-9, "{} -> {} with step {}", u, v, s);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in tensor(4, 12, -40.0, 40.0)) {
        let p = softmax(&x);
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_standardizes_rows(x in tensor(3, 16, -10.0, 10.0)) {
        let cols = x.cols();
        let y = layernorm(&x, &vec![1.0; cols], &vec![0.0; cols]).unwrap();
        for i in 0..y.rows() {
            let xr = x.row(i);
            let xm = xr.iter().sum::<f64>() / cols as f64;
            let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / cols as f64;
            let r = y.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - xv / (xv + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_ratio_ignores_units(n in 1usize..40, k in 0.01f64..100.0) {
        let mut c = Default::default();
        let a = AffineOperand::activation(IntMatrix::zeros(n, n, 1).unwrap(), Fixed16::one(F), Some(Fixed16::one(F))).unwrap();
        let w = AffineOperand::weight(IntMatrix::zeros(n, n, 1).unwrap(), Fixed16::one(F), None).unwrap();
        QmmPlan::new(QmmKind::ActivationWeight, &a, &w).unwrap().count(&mut c);
        let naive = naive_counter(n, n, n);
        let m = EnergyProxyModel::default();
        let r1 = energy_proxy(&c, &naive, &m).unwrap().ratio;
        let r2 = energy_proxy(&c, &naive, &m.scaled(k)).unwrap().ratio;
        prop_assert!((r1 - r2).abs() <= 1e-12 * r1);
    }
}

fn small_spec(bits: SiteBits) -> LayerSpec {
    LayerSpec {
        seq_len: 8,
        hidden: 32,
        heads: 2,
        ffn_dim: 64,
        act_bits: bits,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_throughput_stays_under_peak(seed: u64, b in bits(), sign: bool) {
        let config = SimConfig {
            scheme: if sign { QuantScheme::SignBinary } else { QuantScheme::MinMaxAffine },
            ..Default::default()
        };
        let (blocks, x) = random_model(&[small_spec(SiteBits::uniform(b))], seed, F).unwrap();
        let (_, trace) = Simulator::new(config.clone()).unwrap().run_model(&blocks, &x).unwrap();
        let r = throughput_report(&trace, &config.engine);
        prop_assert!(r.gops > 0.0 && r.gops <= r.peak_gops);
    }

    #[test]
    fn raising_one_site_never_saves_cycles(
        seed: u64,
        site in prop::sample::select(SiteBits::NAMES.to_vec()),
        (lo, hi) in (0usize..4, 0usize..4).prop_map(|(a, b)| (a.min(b), a.max(b))),
    ) {
        let widths = [1u8, 2, 4, 8];
        let cycles = |b: u8| {
            let mut bits = SiteBits::uniform(1);
            bits.set(site, b);
            let spec = small_spec(bits);
            let (blocks, x) = random_model(&[spec], seed, F).unwrap();
            let (_, t) = Simulator::new(SimConfig::default()).unwrap().run_model(&blocks, &x).unwrap();
            t.total_cycles
        };
        prop_assert!(cycles(widths[lo]) <= cycles(widths[hi]));
    }
}

#[test]
fn exact_product_is_bilinear_in_payload_sums() {
    // without an activation offset the product is linear in the payload
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    for _ in 0..50 {
        let (m, k, n) = (
            rng.random_range(1..5),
            rng.random_range(1..20),
            rng.random_range(1..5),
        );
        let p1: Vec<u8> = (0..m * k).map(|_| rng.random_range(0..8)).collect();
        let p2: Vec<u8> = (0..m * k).map(|_| rng.random_range(0..8)).collect();
        let sum: Vec<u8> = p1.iter().zip(&p2).map(|(x, y)| x + y).collect();
        let w = AffineOperand::weight(
            IntMatrix::new(
                k,
                n,
                1,
                (0..k * n).map(|_| rng.random_range(0..2)).collect(),
            )
            .unwrap(),
            Fixed16::from_raw(rng.random_range(1..50), F),
            Some(Fixed16::from_raw(rng.random_range(-50..0), F)),
        )
        .unwrap();
        let s = Fixed16::from_raw(rng.random_range(1..50), F);
        let op = |p: Vec<u8>| {
            AffineOperand::activation(IntMatrix::new(m, k, 4, p).unwrap(), s, None).unwrap()
        };
        let e1 = exact_affine_mm(&op(p1), &w).unwrap();
        let e2 = exact_affine_mm(&op(p2), &w).unwrap();
        let es = exact_affine_mm(&op(sum), &w).unwrap();
        for i in 0..es.data.len() {
            assert_eq!(es.data[i], &e1.data[i] + &e2.data[i]);
        }
    }
}
