use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cml::config::{parse_config_str, FileConfig, SCHEMA};

const SMALL: &str = "rounds = 40\nn_agents = 2\ndim = 3\n[data]\nheldout_size = 200\n";

fn cml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cml"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn cml")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_small(dir: &Path, cfg_text: &str, out: &str) -> std::path::PathBuf {
    let cfg = write(dir, "cfg.toml", cfg_text);
    let out = dir.join(out);
    let o = cml(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn metrics_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), SMALL, "r");
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "t,agent0_strategy,agent0_eval,agent0_grad_sq,agent0_weight,agent0_radius,\
         agent1_strategy,agent1_eval,agent1_grad_sq,agent1_weight,agent1_radius,\
         train_loss,grad_l_sq,omega_norm,heldout_loss,heldout_error"
    );
    assert_eq!(text.lines().count(), 41);
    for f in ["records.jsonl", "checkpoint.txt", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn minimal_config_takes_defaults() {
    let file = parse_config_str("rounds = 5\n").unwrap();
    assert_eq!(
        file,
        FileConfig {
            rounds: 5,
            ..FileConfig::default()
        }
    );
    let cfg = file.to_experiment().unwrap();
    assert_eq!(cfg.n_agents(), 4);
    assert_eq!(cfg.dim, 10);
    assert_eq!(cfg.arbiter.lambda_omega, 0.1);
}

#[test]
fn schema_text_is_the_default_config() {
    assert_eq!(parse_config_str(SCHEMA).unwrap(), FileConfig::default());
    let o = cml(&["describe-config"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout), SCHEMA);
}

#[test]
fn invalid_values_name_their_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[arbiter]\nlambda_omega = 0.7\n", "arbiter.lambda_omega"),
        ("[agent]\ntrain_fraction = 0.5\n", "agent.train_fraction"),
        (
            "[arbiter]\ntrain_fraction = 0.5\n",
            "arbiter.train_fraction",
        ),
        (
            "[[agents]]\nid = 1\nlabel_flip_rate = 0.7\n",
            "agents[0].label_flip_rate",
        ),
        ("[agent]\nunknown_key = 1\n", "unknown_key"),
    ];
    for (text, key) in cases {
        let cfg = write(dir.path(), "bad.toml", text);
        let o = cml(&[
            "run",
            "--config",
            &cfg,
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ]);
        assert!(!o.status.success(), "{text}");
        assert!(stderr(&o).contains(key), "{text}: {}", stderr(&o));
    }
}

#[test]
fn nonempty_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), SMALL, "r");
    let cfg = dir.path().join("cfg.toml");
    let args = [
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let o = cml(&args);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(cml(&forced).status.success());
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(
        dir.path(),
        "seed = 17\nrounds = 30\n[data]\nheldout_size = 300\n",
        "a",
    );
    let b = dir.path().join("b");
    let manifest = a.join("manifest.toml");
    let o = cml(&[
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "records.jsonl", "checkpoint.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn edited_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(dir.path(), SMALL, "a");
    let text = fs::read_to_string(a.join("manifest.toml")).unwrap();
    let edited = text.replacen("rounds = 40", "rounds = 41", 1);
    assert_ne!(text, edited);
    let err = parse_config_str(&edited).unwrap_err();
    assert!(format!("{err:#}").contains("sha256"), "{err:#}");
}

#[test]
fn verify_passes_on_a_clean_run_and_fails_on_tampered_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), SMALL, "r");
    let o = cml(&["verify", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let path = out.join("records.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replace("\"lambda_omega\":0.1", "\"lambda_omega\":0.3");
    assert_ne!(text, tampered);
    fs::write(&path, tampered).unwrap();
    let o = cml(&["verify", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_reports_missing_records() {
    let dir = tempfile::tempdir().unwrap();
    let o = cml(&["verify", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));
    fs::write(dir.path().join("records.jsonl"), "").unwrap();
    let o = cml(&["verify", dir.path().to_str().unwrap()]);
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));
}

fn summary(out: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.toml", SMALL);
    let out = dir.path().join("s");
    let o = cml(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "rounds=20,60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = summary(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "20");
    assert_eq!(rows[1][1], "ok");
    let lines = fs::read_to_string(out.join("01-60").join("metrics.csv")).unwrap();
    assert_eq!(lines.lines().count(), 61);
}

#[test]
fn sweep_over_distortion_changes_radii() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.toml", SMALL);
    let out = dir.path().join("s");
    let o = cml(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "arbiter.distortion.kind=\"identity\",\"quadratic\"",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = csv::Reader::from_path(out.join("summary.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    let col = header
        .iter()
        .position(|h| h == "agent0_mean_radius")
        .unwrap();
    let rows = summary(&out);
    assert_ne!(rows[0][col], rows[1][col]);
}

#[test]
fn sweep_rejects_bad_axes_and_reports_failed_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.toml", SMALL);
    let o = cml(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "rounds=",
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty value list"), "{}", stderr(&o));

    let out = dir.path().join("f");
    let o = cml(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "arbiter.lambda_omega=0.1,0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let rows = summary(&out);
    assert_eq!(rows[0][1], "ok");
    assert_ne!(rows[1][1], "ok");
}
