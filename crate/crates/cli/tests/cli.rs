use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_sim.cfg")
}

fn ovs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn plan_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("plan");
    let out = ovs(&[
        "plan",
        "--scenario",
        scenario().to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    for key in ["cost", "iterations", "max defect", "s_nom", "in view"] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    let csv = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(ovs_core::trajectory::TRAJECTORY_HEADER));
    assert_eq!(lines.count(), 56);
}

#[test]
fn missing_scenario_is_a_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let missing = dir.path().join("absent.cfg");
    let out = ovs(&[
        "plan",
        "--scenario",
        missing.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.cfg"));
    assert!(!out_dir.exists());
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(ovs(&["plan", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        ovs(&["compare", "--method", "sideways"]).status.code(),
        Some(1)
    );
    assert_eq!(ovs(&["plan", "--set", "nope.key=1"]).status.code(), Some(1));
    assert_eq!(
        ovs(&["plan", "--set", "missing-equals"]).status.code(),
        Some(1)
    );
    assert_eq!(ovs(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_trials_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovs(&[
        "compare",
        "--trials",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trials"));
    assert!(!dir.path().join("comparison.csv").exists());
}

#[test]
fn target_out_of_view_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovs(&[
        "plan",
        "--scenario",
        scenario().to_str().unwrap(),
        "--set",
        "target.position=[8.0, -20.0, 14.0]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn compare_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovs(&[
        "compare",
        "--scenario",
        scenario().to_str().unwrap(),
        "--tf-list",
        "6.6",
        "--trials",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], ovs_core::sim::COMPARISON_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",OVS,") && lines[1].ends_with(",ok"));
    assert!(lines[2].contains(",PBVS,"));
    let long = fs::read_to_string(dir.path().join("comparison_long.csv")).unwrap();
    assert!(long.starts_with(ovs_core::sim::LONG_HEADER));
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sc = scenario();
    let out = ovs(&[
        "run",
        "--scenario",
        sc.to_str().unwrap(),
        "--method",
        "ovs",
        "--out",
        d,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let episode = dir.path().join("episode_ovs.csv");
    assert!(episode.exists());
    assert!(!dir.path().join("episode_pbvs.csv").exists());

    let out = ovs(&[
        "replay",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        d,
        episode.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let replayed = fs::read_to_string(dir.path().join("replay.csv")).unwrap();
    let episode_rows = fs::read_to_string(&episode).unwrap().lines().count();
    assert_eq!(replayed.lines().next(), Some(ovs_core::sim::REPLAY_HEADER));
    assert_eq!(replayed.lines().count(), episode_rows);
}

#[test]
fn malformed_episode_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    let mut text = String::from(ovs_core::sim::EPISODE_HEADER);
    text.push_str("\n0,1,2\n");
    fs::write(&bad, text).unwrap();
    let out = ovs(&[
        "replay",
        "--out",
        dir.path().to_str().unwrap(),
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(!dir.path().join("replay.csv").exists());
}

const NOISELESS: [&str; 6] = [
    "--set",
    "noise.sigma_pixel=0.0",
    "--set",
    "noise.sigma_position=0.0",
    "--set",
    "noise.sigma_yaw=0.0",
];

#[test]
fn plan_from_the_goal_is_hover() {
    let overrides: Vec<_> = NOISELESS
        .chunks(2)
        .map(|kv| ovs_core::config::parse_override(kv[1]).unwrap())
        .collect();
    let sc = ovs_core::config::load_scenario(&scenario(), &overrides).unwrap();
    let goal = ovs_core::sim::estimate_goal(&sc)
        .unwrap()
        .x_goal
        .to_vector();
    let items: Vec<String> = goal.iter().map(|v| format!("{v:?}")).collect();
    let init = format!("init.state=[{}]", items.join(","));

    let dir = tempfile::tempdir().unwrap();
    let sc_path = scenario();
    let mut args = vec![
        "plan",
        "--scenario",
        sc_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        &init,
    ];
    args.extend_from_slice(&NOISELESS);
    let out = ovs(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let cost: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("cost"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(cost < 1e-8, "cost {cost}");
    let traj = ovs_core::trajectory::Trajectory::from_csv(
        &fs::read_to_string(dir.path().join("trajectory.csv")).unwrap(),
    )
    .unwrap();
    let hover = ovs_core::dynamics::hover_input(&sc.vehicle);
    for u in &traj.inputs {
        assert!((u.thrust - hover.thrust).abs() < 1e-6);
        assert!(u.roll.abs() < 1e-6 && u.pitch.abs() < 1e-6 && u.yaw_rate.abs() < 1e-6);
    }
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sc = scenario();
    for dir in [&a, &b] {
        for cmd in ["plan", "run"] {
            let out = ovs(&[
                cmd,
                "--scenario",
                sc.to_str().unwrap(),
                "--seed",
                "4",
                "--out",
                dir.path().to_str().unwrap(),
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        }
    }
    for name in ["trajectory.csv", "episode_ovs.csv", "episode_pbvs.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}
