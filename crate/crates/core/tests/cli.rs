use std::path::Path;
use std::process::{Command, Output};

use emoctx::cli::load_checkpoint;
use emoctx::model::{init_model, ModelConfig};

const TOY: [&str; 6] = [
    "--set",
    "model.hidden_dim=6",
    "--set",
    "model.context_dim=4",
    "--set",
    "run.seed=3",
];

fn emoctx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoctx"))
        .args(args)
        .env_remove("EMOCTX_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = emoctx(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus; returns its manifest path.
fn corpus(dir: &Path) -> String {
    ok(&[
        "synth",
        "--dest",
        s(dir),
        "--train-per-class",
        "2",
        "--test-per-class",
        "2",
    ]);
    dir.join("manifest.jsonl").display().to_string()
}

fn with_toy<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(TOY);
    v
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["frobnicate"][..], &["train", "--no-such-flag"], &["attend"]] {
        let out = emoctx(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    }
}

#[test]
fn dump_config_lists_every_default_and_loads_back() {
    let dump = ok(&["--dump-config"]);
    for key in ["frame.hop_len", "mel.n_filters", "model.hidden_dim", "train.clip_norm", "ablation.specs", "run.seed"] {
        assert!(dump.contains(&format!("{key} = ")), "{key}");
    }
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, dump.replace("model.hidden_dim = 512", "model.hidden_dim = 64")).unwrap();
    let again = ok(&["--config", s(&conf), "--dump-config"]);
    assert!(again.contains("model.hidden_dim = 64\n"));

    std::fs::write(&conf, "model.hidden_dim = 64\n").unwrap();
    let out = emoctx(&["--config", s(&conf), "--dump-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.seed"));
}

#[test]
fn experiment_workflow_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(&tmp.path().join("corpus"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    for out in [&a, &b] {
        ok(&with_toy(&["train", "--epochs", "0", "--manifest", &manifest, "--out-dir", s(out)]));
    }
    let ck_a = std::fs::read(a.join("model.batt")).unwrap();
    assert_eq!(ck_a, std::fs::read(b.join("model.batt")).unwrap());
    let ck = load_checkpoint(&a.join("model.batt")).unwrap();
    assert_eq!(ck.params, init_model::<f32>(&ModelConfig::toy(6, 4), 3).unwrap());
    assert_eq!((ck.meta.seed, ck.meta.epoch), (3, 0));

    for out in [&a, &b] {
        let args = ["ablate", "--specs", "0-0,0-30,0-100,0-200", "--manifest", &manifest, "--out-dir", s(out)];
        ok(&with_toy(&args));
        let args = ["attend", "--utt", "test-sad-000", "--specs", "0-0,20-0", "--manifest", &manifest, "--out-dir", s(out)];
        ok(&with_toy(&args));
    }
    let csv = std::fs::read_to_string(a.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], "context,ua,wa,segs");
    assert!(rows[1].starts_with("0-0,") && rows[1].ends_with(",-"));
    for (row, spec) in rows[2..].iter().zip(["0-30", "0-100", "0-200"]) {
        assert!(row.starts_with(&format!("{spec},")));
    }
    for f in ["ablation.csv", "ablation.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    for spec in ["0-0", "20-0"] {
        let name = format!("attend/test-sad-000_{spec}.svg");
        let svg = std::fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(svg.as_bytes(), std::fs::read(b.join(&name)).unwrap());
        assert!(svg.contains(&format!("context {spec} | predicted ")));
        assert!(svg.contains("reference sad"));
        assert!(svg.contains("config hash"));
    }
}

#[test]
fn evaluate_checks_feature_fingerprint() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    ok(&with_toy(&["train", "--epochs", "0", "--manifest", &manifest, "--out-dir", s(&out)]));
    let report = ok(&with_toy(&["evaluate", "--manifest", &manifest, "--out-dir", s(&out)]));
    assert!(report.contains("\nua ") && report.contains("\nwa "));

    let mut args = with_toy(&["evaluate", "--manifest", &manifest, "--out-dir", s(&out)]);
    args.extend(["--set", "frame.hop_len=0.02"]);
    let refused = emoctx(&args);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    args.push("--force");
    ok(&args);
}

#[test]
fn env_var_overrides_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("from-env");
    let run = Command::new(env!("CARGO_BIN_EXE_emoctx"))
        .args(with_toy(&["train", "--epochs", "0", "--manifest", &manifest]))
        .env("EMOCTX_OUT_DIR", &out)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(out.join("model.batt").exists());
    assert!(out.join("run.conf").exists());
}

#[test]
fn pitch_and_gradcheck() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(&tmp.path().join("corpus"));
    let csv = tmp.path().join("p.csv");
    let wav = tmp.path().join("corpus/wav/train-anger-000.wav");
    ok(&["pitch", s(&wav), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("time_sec,f0_hz,voiced\n"));
    assert!(text.lines().count() > 50);

    let report = ok(&["gradcheck"]);
    assert!(report.contains("checked 200 coordinates"));
    let strict = emoctx(&["gradcheck", "--tolerance", "1e-30"]);
    assert_eq!(strict.status.code(), Some(1));
}
