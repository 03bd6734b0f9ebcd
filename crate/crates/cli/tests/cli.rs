use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn nudge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nudge"))
        .args(args)
        .env_remove("NUDGE_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let oval = workspace().join("assets/oval");
    let text = body
        .replace("@MAP", &oval.join("map.pgm").display().to_string())
        .replace("@WAYPOINTS", &oval.join("waypoints.csv").display().to_string())
        .replace("@OUT", &dir.join(name).display().to_string());
    let path = dir.join(format!("{name}.yaml"));
    fs::write(&path, text).unwrap();
    path
}

const TINY_BC: &str = "\
mode: bc-train
seed: 3
map: @MAP
waypoints: @WAYPOINTS
train:
  total_timesteps: 200
  num_envs: 2
  rollout_steps: 50
  minibatch_size: 50
  update_epochs: 1
eval:
  episodes: 1
  max_steps: 30
checkpoint_interval: 100
output_dir: @OUT
";

#[test]
fn bundled_checkpoint_completes_every_evaluation_lap() {
    let tmp = tempfile::tempdir().unwrap();
    let config = workspace().join("configs/eval-bc.yaml");
    let out_dir = tmp.path().join("eval");
    let stdout = ok(&nudge(&[
        "eval",
        config.to_str().unwrap(),
        "--checkpoint",
        workspace().join("assets/checkpoints/bc-pp-oval.ckpt").to_str().unwrap(),
        "--episodes",
        "3",
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    assert!(stdout.contains("completion_rate: 1.0"), "{stdout}");
    assert!(stdout.contains("collision_rate: 0.0"), "{stdout}");
    for k in 0..3 {
        assert!(out_dir.join(format!("episodes/episode_{k:03}.csv")).is_file());
    }
    assert!(out_dir.join("summary.yaml").is_file());
}

#[test]
fn missing_waypoint_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let body = TINY_BC.replace("@WAYPOINTS", "/nonexistent/waypoints.csv");
    let config = write_config(tmp.path(), "missing", &body);
    let out = nudge(&["run", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/waypoints.csv"), "{stderr}");
}

#[test]
fn same_seed_gives_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a", TINY_BC);
    let b = write_config(tmp.path(), "b", TINY_BC);
    ok(&nudge(&["run", a.to_str().unwrap()]));
    ok(&nudge(&["run", b.to_str().unwrap()]));
    for file in [
        "returns.csv",
        "losses.csv",
        "policy.ckpt",
        "summary.yaml",
        "episodes/episode_000.csv",
        "checkpoints/step_000000100.ckpt",
        "checkpoints/step_000000200.ckpt",
    ] {
        let fa = fs::read(tmp.path().join("a").join(file)).unwrap();
        let fb = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(fa == fb, "{file} differs");
    }
    // a different seed changes the policy
    let c = write_config(tmp.path(), "c", &TINY_BC.replace("seed: 3", "seed: 4"));
    ok(&nudge(&["run", c.to_str().unwrap()]));
    assert_ne!(
        fs::read(tmp.path().join("a/policy.ckpt")).unwrap(),
        fs::read(tmp.path().join("c/policy.ckpt")).unwrap()
    );
}

#[test]
fn compare_merges_run_curves() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, rows) in [("x", "10;1\n20;3\n"), ("y", "15;2\n")] {
        let d = tmp.path().join(name);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("returns.csv"), format!("step;episodic_return\n{rows}")).unwrap();
    }
    let merged = tmp.path().join("merged.csv");
    let stdout = ok(&nudge(&[
        "compare",
        tmp.path().join("x").to_str().unwrap(),
        tmp.path().join("y").to_str().unwrap(),
        "--threshold",
        "2",
        "-o",
        merged.to_str().unwrap(),
    ]));
    assert_eq!(fs::read_to_string(&merged).unwrap(), "step;x;y\n10;1;\n15;1;2\n20;2;2\n");
    assert!(stdout.contains(";2;2;20\n"), "{stdout}");
    assert!(stdout.contains(";1;2;15\n"), "{stdout}");

    let out = nudge(&["compare", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn raceline_subcommand_writes_loadable_waypoints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("wp.csv");
    let stdout = ok(&nudge(&[
        "raceline",
        workspace().join("assets/oval/centerline.csv").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--margin",
        "0.4",
        "--tolerance",
        "1e-2",
    ]));
    assert!(stdout.starts_with("objective: "));
    let line = nudge_core::track::load_waypoints(&out).unwrap();
    assert_eq!(line.len(), 348);
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "bad", &format!("{TINY_BC}learning_rat: 1\n"));
    let out = nudge(&["run", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}
