use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqc"))
        .args(args)
        .env_remove("EQC_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn write_config(dir: &Path, name: &str, env: Value, episodes: usize) -> String {
    let cfg = serde_json::json!({
        "env": env,
        "model": { "hidden": 8, "lstm": true },
        "mode": { "kind": "selfplay" },
        "episodes": episodes,
        "epsilon": { "start": 1.0, "end": 0.1, "decay_episodes": episodes / 2 },
        "batch_size": 4,
        "replay_capacity": 50,
        "target_sync": 10,
        "epoch_episodes": episodes,
        "eval_episodes": 2
    });
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn train(dir: &Path, config: &str, seed: &str, out: &str) -> String {
    let out = s(&dir.join(out));
    let o = eqc(&["train", "--serial", "--config", config, "--seed", seed, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn verify_exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "ref.json", serde_json::json!({ "kind": "referential", "items": 5 }), 20);
    let raw = train(d, &cfg, "1", "raw");

    let sym = s(&d.join("sym"));
    let o = eqc(&["symmetrize", "--checkpoint", &raw, "--group", "C5", "--out", &sym]);
    assert_eq!(code(&o), 0);

    let o = eqc(&["verify", "--checkpoint", &sym, "--samples", "10", "--out", &s(&d.join("v1"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    let line = stdout.lines().find(|l| l.starts_with("equivariance max violation")).unwrap();
    let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(v < 1e-9, "{stdout}");

    let o = eqc(&["verify", "--checkpoint", &raw, "--group", "C5", "--samples", "10", "--out", &s(&d.join("v2"))]);
    assert_eq!(code(&o), 3);
    // the report and manifest are still written
    assert!(d.join("v2/verify.json").exists() && d.join("v2/manifest.json").exists());

    let o = eqc(&["verify", "--checkpoint", &raw, "--out", &s(&d.join("v3"))]);
    assert_eq!(code(&o), 2);
    let o = eqc(&["verify", "--checkpoint", &raw, "--group", "C4", "--out", &s(&d.join("v4"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn crossplay_validates_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lever = write_config(d, "lever.json", serde_json::json!({ "kind": "lever" }), 20);
    let refg = write_config(d, "ref.json", serde_json::json!({ "kind": "referential" }), 20);
    let a = train(d, &lever, "1", "a");
    let b = train(d, &lever, "2", "b");
    let r = train(d, &refg, "1", "r");

    let o = eqc(&["crossplay", "--bundle", &a, "--out", &s(&d.join("x1"))]);
    assert_eq!(code(&o), 2);
    let o = eqc(&["crossplay", "--bundle", &a, "--bundle", &r, "--out", &s(&d.join("x2"))]);
    assert_eq!(code(&o), 2);
    let o = eqc(&["crossplay", "--bundle", &a, "--bundle", &b, "--groups", "C7", "--out", &s(&d.join("x3"))]);
    assert_eq!(code(&o), 2);

    let o = eqc(&["crossplay", "--bundle", &a, "--bundle", &b, "--groups", "trivial,C9", "--episodes", "3", "--out", &s(&d.join("x4"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["crossplay.json", "crossplay_matrix.csv", "comparison.json", "comparison.csv", "manifest.json"] {
        assert!(d.join("x4").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("x4/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn bad_configs_are_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = d.join("bad.json");
    std::fs::write(&p, r#"{"env":{"kind":"lever"},"mode":{"kind":"selfplay"},"episodes":5,"epsilon":{"start":0.1,"end":0.5,"decay_episodes":1}}"#).unwrap();
    let out = d.join("never");
    let o = eqc(&["train", "--config", &s(&p), "--out", &s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    let o = eqc(&["train", "--config", &s(&d.join("missing.json")), "--out", &s(&out)]);
    assert_eq!(code(&o), 2);
    let o = eqc(&["train", "--threads", "0", "--config", &s(&p), "--out", &s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runs_are_reproducible_and_leave_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "h.json", serde_json::json!({ "kind": "mini_hanabi" }), 12);
    let before = std::fs::read(&cfg).unwrap();
    let a = train(d, &cfg, "4", "a");
    let b = train(d, &cfg, "4", "b");
    assert_eq!(std::fs::read(&cfg).unwrap(), before);
    let ma: Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&a).join("manifest.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&b).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["seed"], 4);

    let policy = std::fs::read(Path::new(&a).join("policy.json")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_eqc"))
        .args(["symmetrize", "--checkpoint", &a, "--group", "S3", "--out", &s(&d.join("s"))])
        .env("EQC_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(Path::new(&a).join("policy.json")).unwrap(), policy);
}

#[test]
fn report_summarises_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "h.json", serde_json::json!({ "kind": "mini_hanabi" }), 12);
    let a = train(d, &cfg, "1", "a");
    let b = train(d, &cfg, "2", "b");
    let x = s(&d.join("x"));
    let o = eqc(&["crossplay", "--serial", "--bundle", &a, "--bundle", &b, "--groups", "S3", "--episodes", "4", "--out", &x]);
    assert_eq!(code(&o), 0);
    let rep = d.join("rep");
    let o = eqc(&["report", "--run", &a, &x, "--episodes", "30", "--out", &s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(rep.join("summary.csv")).unwrap();
    assert!(summary.contains("S3-symmetrized"));
    assert!(summary.contains("self-play"));
    let cams: Vec<_> = std::fs::read_dir(&rep)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("cam_"))
        .collect();
    assert_eq!(cams.len(), 1);
    let o = eqc(&["report", "--run", &s(&d.join("nothing")), "--out", &s(&d.join("rep2"))]);
    assert_eq!(code(&o), 2);
}
