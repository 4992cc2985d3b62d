use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "data.synthetic.samples_per_class=30",
    "--set",
    "train.epochs=3",
    "--set",
    "train.batch_size=30",
];

fn idml(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idml"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run idml")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--seed", "7"];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_eval_report_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let t = idml(&with_small("train", &[]), out);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    for f in ["checkpoint.bin", "train_log.jsonl", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let e = idml(&with_small("eval", &[]), out);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    let kv = idml::eval::parse_metrics_text(&metrics).unwrap();
    for k in ["recall@1", "nmi", "r_precision", "map_at_r", "u_norm_mixed_mean"] {
        assert!(kv.contains_key(k), "{k}");
    }
    assert!(out.join("uncertainty_hist.csv").exists());

    let r = idml(&["report"], out);
    assert_eq!(code(&r), 0);
    let curve = std::fs::read_to_string(out.join("uncertainty_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        assert_eq!(code(&idml(&with_small("train", &["--set", "mix.mix_prob=0.5"]), d)), 0);
        assert_eq!(code(&idml(&with_small("eval", &["--set", "mix.mix_prob=0.5"]), d)), 0);
    }
    for f in ["train_log.jsonl", "metrics.txt", "checkpoint.bin"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn gen_data_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = idml(&["gen-data", "--seed", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let ds = idml::data::load_csv(&dir.path().join("data.csv")).unwrap();
    assert_eq!(ds.len(), 2000);
    assert!(dir.path().join("data.meta.json").exists());

    // the written CSV can drive training
    let csv = dir.path().join("data.csv");
    let csv_arg = format!("data.csv_path=\"{}\"", csv.display());
    let t = idml(
        &["train", "--set", "data.source=\"csv\"", "--set", &csv_arg, "--set", "train.epochs=1"],
        &dir.path().join("run"),
    );
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
}

#[test]
fn gradcheck_passes_and_catches_a_sign_bug() {
    let dir = tempfile::tempdir().unwrap();
    let ok = idml(&["gradcheck", "--set", "gradcheck.cases=10"], dir.path());
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(dir.path().join("gradcheck.txt").exists());
    let bad = idml(
        &["gradcheck", "--set", "gradcheck.cases=10", "--set", "gradcheck.inject_sign_bug=true"],
        dir.path(),
    );
    assert_eq!(code(&bad), 4);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--set", "metric.tua=1"],
        vec!["train", "--set", "metric.tau=-1"],
        vec!["train", "--set", "data.source=\"csv\"", "--set", "data.csv_path=\"/nonexistent.csv\""],
        vec!["train", "--config", "/nonexistent.json"],
        vec!["eval", "--checkpoint", "/nonexistent.bin"],
        vec!["train", "--bogus-flag"],
        vec!["report"],
    ];
    for args in cases {
        let o = idml(&args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = idml(&with_small("train", &["--set", "optimizer.lr=1e6", "--set", "train.epochs=20"]), dir.path());
    assert_eq!(code(&o), 3);
    // the last finite checkpoint is still there
    assert!(dir.path().join("checkpoint.bin").exists());
}

#[test]
fn sweep_records_failed_cells_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = idml(
        &with_small(
            "sweep",
            &["--set", "train.epochs=1", "--set", "sweep.gammas=[0.0]", "--set", "sweep.taus=[1.0, 0.0]"],
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    let grid = std::fs::read_to_string(dir.path().join("sweep_grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "gamma,tau,recall_at_1,status");
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[2].ends_with(",failed"));
}
