use std::path::Path;
use std::process::{Command, Output};

use pfqvi::artifact::Manifest;
use pfqvi::config::RunConfig;

fn pfqvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfqvi"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("stderr ends with error JSON")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.toml");
    let text = format!(
        "output = \"{}\"\n{extra}\n[grid]\nsz_points = 11\nq_points = 7\nq_max = 6.0\nmin_t_steps = 20\nvolume_points = 1\n\n[sim]\npaths = 200\n\n[maps]\ntimes = [0.5]\ninventories = [0.0, 2.0]\n\n[sweep]\nlevels = [1, 2]\n",
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn defaults_print_a_loadable_config() {
    let out = pfqvi(&["defaults"]);
    assert!(out.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[grid]\nsz_pionts = 5\n").unwrap();
    let out = pfqvi(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["key"], "sz_pionts");
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[market]\ndepth = -1.0\n");
    let out = pfqvi(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["key"], "market");
}

#[test]
fn maps_without_a_solve_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for cmd in ["regions", "fees", "simulate", "compare"] {
        let out = pfqvi(&[cmd, "--config", &cfg]);
        assert_eq!(out.status.code(), Some(4), "{cmd}");
        assert_eq!(error_json(&out)["error"], "missing_artifact");
    }
}

#[test]
fn pipeline_writes_hashed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for cmd in ["solve", "simulate", "regions", "fees", "sweep", "compare"] {
        let out = pfqvi(&[cmd, "--config", &cfg]);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out_dir = dir.path().join("out");
    let hash = RunConfig::load(Path::new(&cfg)).unwrap().problem_hash();
    let manifest = Manifest::load(&out_dir).unwrap().unwrap();
    assert_eq!(manifest.config_hash, hash);
    assert_eq!(manifest.commands.len(), 6);
    for (cmd, files) in &manifest.commands {
        for f in files {
            let path = out_dir.join(&f.name);
            assert_eq!(
                pfqvi::artifact::file_sha256(&path).unwrap(),
                f.sha256,
                "{cmd}/{}",
                f.name
            );
        }
    }
    let short = &hash[..12];
    assert!(out_dir
        .join(format!("regions_t0.500_q+2.000_N3_{short}.png"))
        .exists());
    assert!(out_dir
        .join(format!("fees_t0.500_q+0.000_N3_{short}.csv"))
        .exists());

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash);
    assert_eq!(report["obstacle"]["violations"], 0);
    let sweep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);
    assert_eq!(sweep["non_decreasing"], true);
    let lines = std::fs::read_to_string(out_dir.join("sim_records.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 200);

    // off-grid map time is a config-level error
    let out = pfqvi(&["regions", "--config", &cfg, "--t", "0.123"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "off_grid");

    // artifacts from a different problem are refused
    let other = tiny_config(dir.path(), "[market]\nkappa = 2.0\n");
    let out = pfqvi(&["regions", "--config", &other]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "artifact");
}

#[test]
fn cli_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let alt = dir.path().join("alt");
    let out = pfqvi(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        alt.to_str().unwrap(),
        "--n-levels",
        "2",
        "--threads",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = Manifest::load(&alt).unwrap().unwrap();
    assert_eq!(m.config["ladder"]["levels"], 2);
    assert!(m.config["threads"].is_null());
    let out = pfqvi(&[
        "regions",
        "--config",
        &cfg,
        "--out",
        alt.to_str().unwrap(),
        "--n-levels",
        "2",
        "--q",
        "-2",
        "--t",
        "0.5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(alt.join("regions_report.json")).unwrap()).unwrap();
    assert_eq!(report["maps"].as_array().unwrap().len(), 1);
    assert_eq!(report["maps"][0]["q"], -2.0);
}
