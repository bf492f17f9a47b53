use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "M=16 N=2 T=8 L=3 s_bar=6 s_c=3 s_common=1 snr_db=20
k_train=40 k_val=20 k_test=10
layers_coarse=2 layers_fine=2 coarse_p_min=1 coarse_p_max=3
layerwise_steps_per_stage=5 val_every=5 train_batch=8
ista_grid_samples=5 timing_reps=2
variants=two_stage_cfbss,coarse_only_cbss
";

fn cfbss(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfbss"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cfbss(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

#[test]
fn gen_data_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    let a = ok(d, &["gen-data", "--config", "small.cfg", "--seed", "4", "--out", "a"]);
    let b = ok(d, &["gen-data", "--config", "small.cfg", "--seed", "4", "--out", "b"]);
    let digests = |s: &str| s.lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(digests(&a).len(), 3);
    assert_eq!(digests(&a), digests(&b));
    let c = ok(d, &["gen-data", "--config", "small.cfg", "--seed", "5", "--out", "c"]);
    assert_ne!(digests(&a), digests(&c));
}

#[test]
fn usage_and_audit_failures_have_distinct_exit_codes() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(cfbss(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(cfbss(d, &["sweep", "--axis", "t"]).status.code(), Some(2));
    assert_eq!(cfbss(d, &["gradcheck"]).status.code(), Some(0));
    assert_eq!(cfbss(d, &["gradcheck", "--corrupt-vjp"]).status.code(), Some(1));
    let out = cfbss(d, &["train", "--config", "small.cfg", "--corrupt-vjp"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_artifacts_name_the_command_that_creates_them() {
    let dir = setup();
    let out = cfbss(dir.path(), &["eval", "--config", "small.cfg", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing artifact"), "{err}");
    assert!(err.contains("cfbss gen-data --seed 3"), "{err}");
    assert!(err.contains("--set T=8"), "{err}");
}

#[test]
fn snr_sweep_emits_csv_and_series() {
    let dir = setup();
    let d = dir.path();
    for snr in ["10", "20", "30"] {
        let set = format!("snr_db={snr}");
        ok(d, &["gen-data", "--config", "small.cfg", "--set", &set]);
        ok(d, &["train", "--config", "small.cfg", "--set", &set]);
    }
    let text = ok(d, &["sweep", "--config", "small.cfg", "--axis", "snr", "10,20,30"]);
    assert!(text.contains("two_stage_cfbss"));
    let csv = d.join("out/sweep_snr.csv");
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 1 + 3 * 4);
    for scheme in ["two_stage_cfbss", "coarse_only_cbss", "ista_l21", "oracle_ls"] {
        let dat = d.join(format!("out/sweep_snr_{scheme}.dat"));
        let series = std::fs::read_to_string(&dat).unwrap();
        assert!(series.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count() >= 6, "{scheme}");
    }
    assert!(d.join("out/sweep_snr.meta").exists());
    std::fs::remove_file(d.join("out/sweep_snr_oracle_ls.dat")).unwrap();
    let again = ok(d, &["report", "out/sweep_snr.csv"]);
    assert!(again.contains("oracle_ls"));
    assert!(d.join("out/sweep_snr_oracle_ls.dat").exists());
}
