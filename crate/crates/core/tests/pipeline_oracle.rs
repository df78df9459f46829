use beta_sim::nonlinear::RealTensor;
use beta_sim::oracle::{reference_block, reference_model};
use beta_sim::pipeline::{random_model, run_model, LayerSpec, SimConfig, Simulator, SiteBits};
use beta_sim::quantize::QuantScheme;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(s: usize, d: usize, h: usize, f: usize, bits: SiteBits) -> LayerSpec {
    LayerSpec {
        seq_len: s,
        hidden: d,
        heads: h,
        ffn_dim: f,
        act_bits: bits,
    }
}

#[test]
fn w1a8_block_matches_reference() {
    let sp = spec(8, 16, 2, 32, SiteBits::uniform(8));
    let (blocks, x) = random_model(std::slice::from_ref(&sp), 42, 8).unwrap();
    let c = SimConfig::default();
    let (y, _) = run_model(&blocks, &x, &c).unwrap();
    let r = reference_block(&x, &blocks[0].weights, &sp, c.scheme, 8).unwrap();
    assert_eq!(y, r);
}

#[test]
fn random_models_match_reference_with_both_schemes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..12 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let d = heads * rng.random_range(1..=8usize);
        let d = d.max(2);
        let mut bits = SiteBits::uniform(1);
        for site in SiteBits::NAMES {
            bits.set(site, [1, 2, 4, 8][rng.random_range(0..4)]);
        }
        let sp = spec(
            rng.random_range(1..=8),
            d,
            heads,
            rng.random_range(1..=32),
            bits,
        );
        let scheme = if trial % 2 == 0 {
            QuantScheme::MinMaxAffine
        } else {
            QuantScheme::SignBinary
        };
        let c = SimConfig {
            scheme,
            ..Default::default()
        };
        let (blocks, x) = random_model(&[sp.clone(), sp.clone()], trial, 8).unwrap();
        let (y, _) = run_model(&blocks, &x, &c).unwrap();
        assert_eq!(
            y,
            reference_model(&blocks, &x, scheme, 8).unwrap(),
            "trial {trial}: {sp:?}"
        );
    }
}

#[test]
fn zero_input_with_sign_binary_activations() {
    let sp = spec(4, 8, 2, 8, SiteBits::uniform(1));
    let (blocks, _) = random_model(std::slice::from_ref(&sp), 3, 8).unwrap();
    let x = RealTensor::zeros(4, 8);
    let c = SimConfig {
        scheme: QuantScheme::SignBinary,
        ..Default::default()
    };
    let mut sim = Simulator::new(c).unwrap();
    let (y, _) = sim.run_model(&blocks, &x).unwrap();
    assert_eq!(
        y,
        reference_model(&blocks, &x, QuantScheme::SignBinary, 8).unwrap()
    );
    assert!(y.data().iter().all(|v| v.is_finite()));
}
