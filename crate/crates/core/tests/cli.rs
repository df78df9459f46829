use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beta_sim::pipeline::{BlockWeights, LayerSpec, SiteBits};

const SMALL: &str = "model.blocks = 1\nmodel.seq_len = 8\nmodel.hidden = 32\nmodel.heads = 2\n\
                     model.ffn_dim = 64\n";

fn beta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beta-sim"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn metric<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("metric.{key}=")))
        .unwrap_or_else(|| panic!("no metric {key} in\n{report}"))
}

#[test]
fn run_reports_machine_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", SMALL);
    let o = beta(&[
        "run", "--config", &cfg, "--format", "machine", "--seed", "5",
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(metric(&s, "seed"), "5");
    assert_eq!(metric(&s, "qmms"), "10");
    let gops: f64 = metric(&s, "gops").parse().unwrap();
    let peak: f64 = metric(&s, "peak_gops").parse().unwrap();
    assert!(gops > 0.0 && gops <= peak);
}

#[test]
fn seeds_change_output_but_reruns_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", SMALL);
    let run = |seed: &str| {
        stdout(&beta(&[
            "run", "--config", &cfg, "--format", "machine", "--seed", seed,
        ]))
    };
    assert_eq!(run("1"), run("1"));
    assert_ne!(run("1"), run("2"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in [
        ("engine.j_unfold = 0\n", "engine.j_unfold"),
        ("model.heads = 3\nmodel.hidden = 32\n", "model.heads"),
        ("model.colour = blue\n", "model.colour"),
        ("model.act_bits = 3\n", "model.act_bits"),
        ("quant.scheme = log\n", "quant.scheme"),
    ] {
        let cfg = write_config(dir.path(), "bad.cfg", &format!("{SMALL}{text}"));
        let o = beta(&["run", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(field), "{text}");
    }
    let missing = dir.path().join("nope.cfg");
    assert_eq!(
        beta(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let cfg = write_config(dir.path(), "a.cfg", SMALL);
    assert_eq!(
        beta(&["sweep", "--config", &cfg, "--bits", "1,3"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        beta(&["run", "--config", &cfg, "--format", "xml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn buffer_overflow_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "a.cfg",
        &format!("{SMALL}engine.buffer_capacity_bits = 64\n"),
    );
    let o = beta(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn count_ops_matches_closed_forms() {
    let o = beta(&["count-ops", "1", "2", "64", "--format", "machine"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("524288"), "{s}");
    assert!(s.contains("12290"), "{s}");
    assert!(beta(&["count-ops"]).status.success());
}

#[test]
fn verify_passes_and_fault_is_caught() {
    let ok = beta(&["verify", "--trials", "20", "--seed", "3"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let bad = beta(&[
        "verify",
        "--trials",
        "20",
        "--seed",
        "3",
        "--fault",
        "lane-rule",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn weights_dir_is_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = LayerSpec {
        seq_len: 8,
        hidden: 32,
        heads: 2,
        ffn_dim: 64,
        act_bits: SiteBits::uniform(1),
    };
    let wdir = dir.path().join("w");
    std::fs::create_dir(&wdir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    BlockWeights::random(&spec, &mut rng, 8)
        .unwrap()
        .save(&wdir, 0)
        .unwrap();
    let cfg = write_config(
        dir.path(),
        "a.cfg",
        &format!("{SMALL}io.weights_dir = w\nio.report = out.txt\n"),
    );
    let o = beta(&["run", "--config", &cfg, "--format", "machine"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("out.txt")).unwrap(),
        stdout(&o)
    );

    std::fs::remove_file(wdir.join("block0_w2.txt")).unwrap();
    let o = beta(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("block0_w2"));
}
