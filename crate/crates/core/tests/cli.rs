use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lesp::trainer::LespConfig;

const SMALL: &[&str] = &[
    "--set", "hidden=16,16",
    "--set", "repr_hidden=16",
    "--set", "reach_hidden=16",
    "--set", "pretrain_episodes=4",
    "--set", "walk_length=60",
    "--set", "pretrain_repr_steps=20",
    "--set", "repr_steps=10",
    "--set", "reach_steps=20",
    "--set", "batch_size=16",
    "--set", "warmup_steps=200",
    "--set", "fps_pool=50",
    "--set", "n_cov=5",
    "--set", "repr_interval=1",
    "--eval-every", "500",
    "--episodes", "2",
];

fn lesp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesp")).args(args).env_remove("LESP_OUT_DIR").output().unwrap()
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    lesp(&args)
}

fn write_run(dir: &Path, cfg: &LespConfig, series: &[(u64, f64)]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("manifest.txt"), format!("meta.seeds={}\n{}", cfg.seed, cfg.to_text())).unwrap();
    let mut text = String::from("env_step,episode,eval_success_rate,critic_loss,actor_loss,reg_loss,triplet_loss,coverage_cells\n");
    for (s, v) in series {
        text.push_str(&format!("{s},0,{v},0,0,0,0,0\n"));
    }
    fs::write(dir.join("metrics.csv"), text).unwrap();
}

#[test]
fn train_smoke_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_small(tmp.path(), &["--env", "u_maze", "--seed", "1", "--steps", "1000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("u_maze_seed1");
    for f in ["manifest.txt", "metrics.csv", "events.csv", "checkpoint/meta.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
}

#[test]
fn out_dir_defaults_to_env_var() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--env", "u_maze", "--seed", "2", "--steps", "0"];
    args.extend_from_slice(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_lesp")).args(&args).env("LESP_OUT_DIR", tmp.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("u_maze_seed2/manifest.txt").exists());
}

#[test]
fn bogus_env_is_a_usage_error() {
    let out = lesp(&["train", "--env", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("u_maze") && err.contains("four_rooms") && err.contains("w_maze"), "{err}");
}

#[test]
fn ablation_is_recorded_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_small(tmp.path(), &["--seed", "3", "--steps", "0", "--ablation", "no-prospect"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(tmp.path().join("u_maze_no-prospect_seed3/manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "alpha=0"), "{manifest}");
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = train_small(a.path(), &["--seed", "5", "--steps", "1500", "--p", "0.6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = a.path().join("u_maze_seed5/manifest.txt");
    let out = lesp(&["train", "--config", manifest.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "events.csv", "episodes.csv"] {
        let x = fs::read(a.path().join("u_maze_seed5").join(f)).unwrap();
        let y = fs::read(b.path().join("u_maze_seed5").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn eval_of_untrained_checkpoint_reports_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_small(tmp.path(), &["--seed", "6", "--steps", "0"]);
    assert!(out.status.success());
    let ckpt = tmp.path().join("u_maze_seed6/checkpoint");
    let out = lesp(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(ckpt.join("eval.txt")).unwrap();
    assert!(text.contains("episodes=3"));
    let rate: f64 = text.lines().find_map(|l| l.strip_prefix("success_rate=")).unwrap().parse().unwrap();
    assert!(rate <= 0.34, "{rate}");
}

#[test]
fn eval_defaults_to_fifty_episodes_and_oracle_fixture_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("meta.txt"),
        "lesp-agent 1\ncontroller=waypoints\nenv=u_maze\nwaypoints=1,1.5;7,1.5;7,6.5;1,6.5\n",
    )
    .unwrap();
    let out = lesp(&["eval", "--checkpoint", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("episodes=50"), "{stdout}");
    assert!(stdout.contains("success_rate=1\n"), "{stdout}");
}

#[test]
fn eval_without_checkpoint_fails() {
    let out = lesp(&["eval", "--checkpoint", "/nonexistent/ckpt"]);
    assert!(!out.status.success());
}

#[test]
fn export_averages_five_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let series: Vec<Vec<(u64, f64)>> = (0..5)
        .map(|k| (0..4).map(|i| (i * 100, ((k * 7 + i * 3) % 10) as f64 / 10.0)).collect())
        .collect();
    let mut dirs = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let mut cfg = LespConfig::for_env("u_maze").unwrap();
        cfg.seed = k as u64;
        let dir = tmp.path().join(format!("u_maze_seed{k}"));
        write_run(&dir, &cfg, s);
        dirs.push(dir.to_str().unwrap().to_string());
    }
    let out_csv = tmp.path().join("band.csv");
    let mut args = vec!["export", "--out", out_csv.to_str().unwrap()];
    args.extend(dirs.iter().map(String::as_str));
    let out = lesp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(&out_csv).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = series.iter().map(|s| s[i].1).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        let got: f64 = row[2].parse().unwrap();
        let band: f64 = row[5].parse::<f64>().unwrap() - got;
        assert!((got - mean).abs() < 1e-12);
        assert!((band - 1.96 * var.sqrt() / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(&row[1], "5");
    }
}

#[test]
fn export_of_one_run_has_zero_width() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = LespConfig::for_env("u_maze").unwrap();
    let dir = tmp.path().join("r");
    write_run(&dir, &cfg, &[(0, 0.2), (10, 0.4)]);
    let out = lesp(&["export", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[4], f[5]);
        assert_eq!(f[3], "0");
    }
}

#[test]
fn export_refuses_mixed_envs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    write_run(&a, &LespConfig::for_env("u_maze").unwrap(), &[(0, 0.0)]);
    write_run(&b, &LespConfig::for_env("four_rooms").unwrap(), &[(0, 0.0)]);
    let out = lesp(&["export", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env"));
}
