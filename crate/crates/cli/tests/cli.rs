use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_MODEL: &str = r#"
[model]
hidden = 8
time_embed_dim = 4

[igo]
steps = 30
batch_size = 16
log_every = 10

[data]
n_points = 200
"#;

fn igo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(command: &str, config: &Path, out: &Path) -> Output {
    let o = igo(&[command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn ou_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "ou.toml",
        r#"
seed = 7

[process]
kind = "ornstein_uhlenbeck"
dim = 1
theta = 1.0
sigma = 1.0
x0 = [0.0]
dt = 0.01
capture_times = [0.5]
"#,
    )
}

#[test]
fn simulate_writes_trajectory_with_header() {
    let tmp = TempDir::new().unwrap();
    let cfg = ou_config(tmp.path());
    let out = tmp.path().join("a");
    run_ok("simulate", &cfg, &out);
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x0"));
    assert_eq!(lines.count(), 101);
    let caps = fs::read_to_string(out.join("captures.csv")).unwrap();
    assert!(caps.starts_with("tau,x0\n5.0000000000000000e-1,"));
    assert!(out.join("resolved_config.toml").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = ou_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("simulate", &cfg, &a);
    run_ok("simulate", &cfg, &b);
    for f in ["trajectory.csv", "captures.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn seed_override_changes_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = ou_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("simulate", &cfg, &a);
    let o = igo(&["simulate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    let resolved = fs::read_to_string(b.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 8"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[igo]\nalpah = 0.5\n");
    let o = igo(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("config error") && err.contains("alpah"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn module_errors_name_the_module() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad_dt.toml",
        "[process]\nkind = \"ornstein_uhlenbeck\"\ndim = 1\nx0 = [0.0]\ndt = 0.3\n",
    );
    let out = tmp.path().join("out");
    let o = igo(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sde-core error"));
    assert!(!out.exists(), "no partial artifacts on failure");
}

#[test]
fn train_replay_reproduces_log() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "train.toml", &format!("seed = 3\n{SMALL_MODEL}"));
    let a = tmp.path().join("a");
    run_ok("train", &cfg, &a);
    let log = fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert!(log.starts_with("step,loss_total,loss_std,loss_R,cos_E,cos_D,eucl_E,eucl_D\n"));
    assert_eq!(log.lines().count(), 1 + 4);

    let b = tmp.path().join("b");
    run_ok("replay", &a.join("resolved_config.toml"), &b);
    for f in ["training_log.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn edited_or_foreign_resolved_configs_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    run_ok("simulate", &ou_config(tmp.path()), &a);
    let resolved = fs::read_to_string(a.join("resolved_config.toml")).unwrap();

    let edited = write_config(tmp.path(), "edited.toml", &resolved.replace("theta = 1.0", "theta = 2.0"));
    let o = igo(&["replay", "--config", edited.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let start = resolved.find("build = \"").unwrap() + 9;
    let end = start + resolved[start..].find('"').unwrap();
    let foreign = format!("{}igo-cli-0.0.0+0000{}", &resolved[..start], &resolved[end..]);
    let foreign = write_config(tmp.path(), "foreign.toml", &foreign);
    let o = igo(&["replay", "--config", foreign.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version mismatch"));

    let plain = ou_config(tmp.path());
    let o = igo(&["replay", "--config", plain.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gpca_replay_reproduces_vector() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "gpca.toml",
        "seed = 5\n[downstream]\ngenerator = \"linear\"\nn = 8\nk = 2\niters = 20\n[data]\nn_points = 300\n",
    );
    let a = tmp.path().join("a");
    run_ok("gpca", &cfg, &a);
    let text = fs::read_to_string(a.join("vhat.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# seed=5,config_hash="));
    assert_eq!(lines[1], "v0,v1,v2,v3,v4,v5,v6,v7");
    let norm: f64 = lines[2].split(',').map(|v| v.parse::<f64>().unwrap().powi(2)).sum();
    assert!((norm - 1.0).abs() < 1e-12);

    let b = tmp.path().join("b");
    run_ok("replay", &a.join("resolved_config.toml"), &b);
    assert_eq!(fs::read(a.join("vhat.csv")).unwrap(), fs::read(b.join("vhat.csv")).unwrap());
}

#[test]
fn sample_from_trained_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "train.toml", SMALL_MODEL);
    let a = tmp.path().join("a");
    run_ok("train", &cfg, &a);
    let ckpt = a.join("checkpoint.bin");
    let body = SMALL_MODEL.replace(
        "time_embed_dim = 4",
        &format!("time_embed_dim = 4\ncheckpoint = {:?}", ckpt.to_str().unwrap()),
    );
    let sample_cfg = write_config(
        tmp.path(),
        "sample.toml",
        &format!("{body}\n[sampler]\nn_samples = 20\nn_steps = 50\npathway = \"intermediate\"\n"),
    );
    let b = tmp.path().join("b");
    run_ok("sample", &sample_cfg, &b);
    assert!(!b.join("training_log.csv").exists());
    let text = fs::read_to_string(b.join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("# pathway=intermediate,t_start=5.0000000000000000e-1,seed=0")
    );
    assert_eq!(lines.next(), Some("x0,x1"));
    assert_eq!(lines.count(), 20);
}

#[test]
fn probability_flow_sampling_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "pf.toml",
        &format!("{SMALL_MODEL}\n[sampler]\nmethod = \"probability_flow\"\nn_samples = 10\n"),
    );
    let out = tmp.path().join("o");
    run_ok("sample", &cfg, &out);
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap().lines().count(), 12);
}

#[test]
fn downstream_commands_emit_reports() {
    let tmp = TempDir::new().unwrap();
    let sweep = write_config(
        tmp.path(),
        "sweep.toml",
        "[downstream]\nm_list = [4, 32]\ntrials = 2\n",
    );
    let out = tmp.path().join("sweep");
    run_ok("sweep", &sweep, &out);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.contains("\nm,mean_rel_error,trials\n4,"));

    let csgm = write_config(tmp.path(), "csgm.toml", "[downstream]\nm = 24\n");
    let out = tmp.path().join("csgm");
    run_ok("csgm", &csgm, &out);
    let text = fs::read_to_string(out.join("recovery.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 32);

    let probe = write_config(
        tmp.path(),
        "probe.toml",
        "[downstream]\ngenerator = \"segments\"\nradius = 1.0\ntest_points = 10\nprobe_samples = 200\n",
    );
    let out = tmp.path().join("probe");
    run_ok("probe", &probe, &out);
    let text = fs::read_to_string(out.join("coverage.csv")).unwrap();
    assert!(text.lines().nth(1) == Some("point,d_base,d_sum,improved"));

    let metrics = write_config(tmp.path(), "metrics.toml", &format!("{SMALL_MODEL}\n[downstream]\nn_pairs = 50\n"));
    let out = tmp.path().join("metrics");
    run_ok("metrics", &metrics, &out);
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(text.contains("\ncos_E,") && text.contains("\nL_hat_lower_final,"));
    assert!(!text.contains("NaN"));
}

#[test]
fn net_probe_and_union_gpca() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "net.toml",
        &format!("{SMALL_MODEL}\n[downstream]\ngenerator = \"union\"\niters = 5\nproject_steps = 10\ntest_points = 5\nprobe_samples = 50\n"),
    );
    let out = tmp.path().join("gpca");
    run_ok("gpca", &cfg, &out);
    assert!(out.join("vhat.csv").exists());
    let out = tmp.path().join("probe");
    run_ok("probe", &cfg, &out);
    assert!(fs::read_to_string(out.join("coverage.csv")).unwrap().lines().count() == 2 + 5);
}
