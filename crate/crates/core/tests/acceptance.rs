//! Acceptance suite. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails. Run with `-- --nocapture` to see the table.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ovs_core::baseline::{interpolate_poses, reference_to_trajectory};
use ovs_core::config::load_scenario;
use ovs_core::dynamics::{
    hover_input, propagate, rk4_step, state_derivative, ControlInput, UavState, VehicleParams,
};
use ovs_core::geometry::{EulerAngles, Pose};
use ovs_core::nmpc::{
    DisturbanceEstimate, MpcConfig, MpcController, ObserverConfig, TrackingReference,
};
use ovs_core::sim::{
    estimate_goal, run_episode, sweep_nominal_speeds, trajectory_problem, ComparisonTable, Method,
    Scenario,
};
use ovs_core::trajectory::Trajectory;
use ovs_core::trajopt::{cost_gradient, solve_trajectory, total_cost};

const FOV_SPEED_LIMIT: f64 = 3.10;

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped_scenarios() -> Vec<(String, Scenario)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (
                name,
                load_scenario(&p, &[]).expect("shipped scenario loads"),
            )
        })
        .collect()
}

fn default_scenario() -> Scenario {
    load_scenario(&scenario_dir().join("paper_sim.cfg"), &[]).expect("paper_sim.cfg loads")
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rows_by_speed(table: &ComparisonTable, method: Method) -> Vec<(f64, f64)> {
    let mut rows: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.s_nom, r.avg_pixel_error))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows
}

fn paired(
    table: &ComparisonTable,
) -> Vec<(
    f64,
    &ovs_core::sim::ComparisonRow,
    &ovs_core::sim::ComparisonRow,
)> {
    table
        .rows
        .iter()
        .filter(|r| r.method == Method::Ovs)
        .map(|o| {
            (
                o.tf,
                o,
                table
                    .row(o.tf, Method::Pbvs)
                    .expect("PBVS row for every tf"),
            )
        })
        .collect()
}

fn c1_avg_ordering(table: &ComparisonTable) -> Outcome {
    let mut ok = table.all_completed();
    let mut parts = Vec::new();
    for (tf, o, p) in paired(table) {
        ok &= o.avg_pixel_error < p.avg_pixel_error;
        parts.push(format!(
            "tf {tf}: {:.1} < {:.1}",
            o.avg_pixel_error, p.avg_pixel_error
        ));
    }
    outcome(ok, parts.join(", "))
}

fn c2_max_ordering(table: &ComparisonTable) -> Outcome {
    let mut ok = table.all_completed();
    let mut parts = Vec::new();
    for (tf, o, p) in paired(table) {
        ok &= o.max_pixel_error < p.max_pixel_error;
        parts.push(format!(
            "tf {tf}: {:.1} < {:.1}",
            o.max_pixel_error, p.max_pixel_error
        ));
    }
    outcome(ok, parts.join(", "))
}

fn c3_speed_monotonicity(table: &ComparisonTable) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let rows = rows_by_speed(table, method);
        let violations: Vec<f64> = rows
            .windows(2)
            .filter(|w| w[1].1 < w[0].1)
            .map(|w| (w[0].1 - w[1].1) / w[0].1)
            .collect();
        let method_ok = violations.is_empty() || (violations.len() == 1 && violations[0] <= 0.05);
        ok &= method_ok;
        let series: Vec<String> = rows.iter().map(|(s, e)| format!("{s:.2}:{e:.1}")).collect();
        parts.push(format!(
            "{method} [{}] violations {}",
            series.join(" "),
            violations.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn c4_thrust_trend(table: &ComparisonTable) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (tf, o, p) in paired(table) {
        let ratio = o.rms_thrust / p.rms_thrust;
        ok &= ratio >= 0.99;
        parts.push(format!("tf {tf}: {ratio:.4}"));
    }
    outcome(ok, format!("OVS/PBVS rms thrust {}", parts.join(", ")))
}

fn c5_field_of_view(table: &ComparisonTable) -> Outcome {
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.method == Method::Ovs && r.s_nom <= FOV_SPEED_LIMIT)
        .collect();
    let ok = !rows.is_empty()
        && rows
            .iter()
            .all(|r| r.all_completed() && r.visibility == 1.0);
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("s_nom {:.2}: {:.4}", r.s_nom, r.visibility))
        .collect();
    outcome(
        ok,
        format!("{} rows checked, {}", rows.len(), parts.join(", ")),
    )
}

fn perturbed(base: &Trajectory, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut t = base.clone();
    for x in t.states.iter_mut() {
        x.position += Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        x.attitude.roll += rng.random_range(-0.15..0.15);
        x.attitude.pitch += rng.random_range(-0.15..0.15);
        x.attitude.yaw += rng.random_range(-0.2..0.2);
        x.velocity += Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    }
    for u in t.inputs.iter_mut() {
        u.roll = rng.random_range(-0.5..0.5);
        u.pitch = rng.random_range(-0.5..0.5);
        u.yaw_rate = rng.random_range(-1.2..1.2);
        u.thrust = rng.random_range(15.0..40.0);
    }
    t
}

fn c6_gradient_oracle() -> Outcome {
    let scenario = default_scenario();
    let goal = estimate_goal(&scenario).expect("target visible at start");
    let problem = trajectory_problem(&scenario, &goal);
    let base = problem.default_guess();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let traj = perturbed(&base, &mut rng);
        let g = cost_gradient(&traj, &problem).expect("shape matches");
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..traj.states.len() {
            let x = traj.states[k].to_vector();
            for j in 0..x.len() {
                let eval = |delta: f64| {
                    let mut t = traj.clone();
                    let mut v = x;
                    v[j] += delta;
                    t.states[k] = UavState::from_vector(&v);
                    total_cost(&t, &problem).unwrap()
                };
                analytic.push(g.states[k][j]);
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        for k in 0..traj.inputs.len() {
            let u = traj.inputs[k].to_vector();
            for j in 0..u.len() {
                let eval = |delta: f64| {
                    let mut t = traj.clone();
                    let mut v = u;
                    v[j] += delta;
                    t.inputs[k] = ControlInput::from_vector(&v);
                    total_cost(&t, &problem).unwrap()
                };
                analytic.push(g.inputs[k][j]);
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(err / scale);
    }
    outcome(
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over 100 points"),
    )
}

fn c7_dynamics() -> Outcome {
    let p = VehicleParams::default();
    let mut notes = Vec::new();

    let hover_norm = [0.0, 1.0, -2.5, 3.1]
        .iter()
        .map(|&yaw| {
            state_derivative(
                &UavState::at_rest(Vector3::new(1.0, -2.0, 4.0), yaw),
                &hover_input(&p),
                &p,
            )
            .norm()
        })
        .fold(0.0f64, f64::max);
    notes.push(format!("hover {hover_norm:.1e}"));

    let cmd = 0.3;
    let u = ControlInput::new(cmd, -cmd, 0.0, p.weight());
    let dt = 1e-3;
    let mut x = UavState::default();
    let mut step_err: f64 = 0.0;
    for i in 1..=1000 {
        x = rk4_step(&x, &u, dt, &p);
        let t = i as f64 * dt;
        let roll = p.gain_roll * cmd * (1.0 - (-t / p.tau_roll).exp());
        let pitch = -p.gain_pitch * cmd * (1.0 - (-t / p.tau_pitch).exp());
        step_err = step_err
            .max((x.attitude.roll - roll).abs())
            .max((x.attitude.pitch - pitch).abs());
    }
    notes.push(format!("attitude step {step_err:.1e}"));

    let x0 = UavState::new(
        Vector3::new(0.0, 0.0, 5.0),
        EulerAngles::new(0.1, -0.2, 0.4),
        Vector3::new(1.0, -0.5, 0.3),
    );
    let u = ControlInput::new(0.35, 0.25, 0.8, 33.0);
    let horizon = 1.0;
    let run = |dt: f64| {
        let n = (horizon / dt).round() as usize;
        (0..n).fold(x0, |s, _| rk4_step(&s, &u, dt, &p)).to_vector()
    };
    let truth = run(1e-4);
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| (run(dt) - truth).norm())
        .collect();
    let order = ((errs[0] / errs[1]).log2()).min((errs[1] / errs[2]).log2());
    notes.push(format!("rk4 order {order:.2}"));

    let yaw0 = 0.3;
    let rate = 0.7;
    let u = ControlInput::new(0.1, -0.1, rate, p.weight());
    let x = (0..100).fold(UavState::at_rest(Vector3::zeros(), yaw0), |s, _| {
        rk4_step(&s, &u, 0.01, &p)
    });
    let yaw_err = (x.attitude.yaw - (yaw0 + rate)).abs();
    notes.push(format!("yaw {yaw_err:.1e}"));

    let ok = hover_norm < 1e-9 && step_err < 1e-6 && order >= 3.8 && yaw_err <= 1e-12;
    outcome(ok, notes.join(", "))
}

fn hold(state: UavState, params: &VehicleParams) -> Trajectory {
    Trajectory::new(vec![state; 2], vec![hover_input(params)], 1.0).unwrap()
}

/// Closed loop around a fixed hover reference; returns the position error
/// after every control tick.
fn regulate(
    start: UavState,
    goal: UavState,
    plant: &VehicleParams,
    observer: ObserverConfig,
    seconds: f64,
) -> Vec<(f64, f64)> {
    let model = VehicleParams::default();
    let cfg = MpcConfig::default();
    let traj = hold(goal, &model);
    let reference = TrackingReference::with_hold(&traj, goal);
    let mut ctrl = MpcController::new(cfg, model);
    let mut x = start;
    let mut d = DisturbanceEstimate::default();
    let ticks = (seconds / cfg.dt).round() as usize;
    let mut errors = Vec::with_capacity(ticks);
    for i in 0..ticks {
        let t = i as f64 * cfg.dt;
        let u = ctrl.step(&x, &d, &reference, t).first_input;
        let predicted = propagate(&x, &u, cfg.dt, 1e-3, &model.with_extra_force(d.force));
        x = propagate(&x, &u, cfg.dt, 1e-3, plant);
        d = observer.update(&predicted, &x, &d, cfg.dt, model.mass);
        errors.push((t + cfg.dt, (x.position - goal.position).norm()));
    }
    errors
}

fn c8_nmpc_regulation() -> Outcome {
    let model = VehicleParams::default();
    let goal = UavState::at_rest(Vector3::new(0.0, 0.0, 5.0), 0.0);
    let offset = Vector3::new(0.3, -0.3, 0.2).normalize() * 0.5;
    let start = UavState::at_rest(goal.position + offset, 0.2);
    let errors = regulate(start, goal, &model, ObserverConfig::default(), 3.0);
    let reached = errors.iter().find(|(_, e)| *e < 0.05).map(|(t, _)| *t);

    let mut steady: f64 = 0.0;
    for force in [
        Vector3::new(2.8, 0.0, 0.0),
        Vector3::new(0.0, 2.8, 0.0),
        Vector3::new(0.0, 0.0, -2.8),
    ] {
        let plant = model.with_extra_force(force);
        let errors = regulate(goal, goal, &plant, ObserverConfig::default(), 15.0);
        let tail = errors
            .iter()
            .filter(|(t, _)| *t >= 12.0)
            .fold(0.0f64, |m, (_, e)| m.max(*e));
        steady = steady.max(tail);
    }
    let ok = reached.is_some() && steady < 0.05;
    let reach = reached.map_or("never".to_string(), |t| format!("{t:.2} s"));
    outcome(
        ok,
        format!("0.05 m reached at {reach}, steady error under 2.8 N {steady:.4} m"),
    )
}

/// The PBVS closed-loop flight resampled on the knot grid of `plan`.
fn pbvs_tracked_knots(scenario: &Scenario, plan: &Trajectory) -> Trajectory {
    let log = run_episode(scenario, Method::Pbvs, &scenario.mpc).expect("PBVS episode runs");
    let n = log.records.len();
    let flown = Trajectory::new(
        log.records.iter().map(|r| r.state).collect(),
        log.records[..n - 1].iter().map(|r| r.input).collect(),
        log.dt,
    )
    .unwrap();
    let states = (0..=plan.steps())
        .map(|k| flown.sample_state(plan.knot_time(k)))
        .collect();
    let inputs = (0..plan.steps())
        .map(|k| flown.input_at(plan.knot_time(k)).unwrap())
        .collect();
    Trajectory::new(states, inputs, plan.dt).unwrap()
}

fn c9_solver_hygiene() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, scenario) in shipped_scenarios() {
        let mut tfs = scenario.tf_list.clone();
        if !tfs.contains(&scenario.tf) {
            tfs.push(scenario.tf);
        }
        for tf in tfs {
            let sc = scenario.with_tf(tf);
            let goal = estimate_goal(&sc).expect("target visible at start");
            let problem = trajectory_problem(&sc, &goal);
            let (traj, report) = solve_trajectory(&problem, None).expect("planner runs");
            let monotone = report.cost_history.windows(2).all(|w| w[1] <= w[0]);
            let start = Pose::new(
                sc.x_init.position,
                EulerAngles::yaw_only(sc.x_init.attitude.yaw),
            );
            let end = Pose::new(goal.x_goal.position, goal.x_goal.attitude);
            let interp = reference_to_trajectory(
                &interpolate_poses(&start, &end, sc.steps, 0.0, tf).unwrap(),
                &sc.vehicle,
            );
            let tracked = pbvs_tracked_knots(&sc, &traj);
            let j_ovs = total_cost(&traj, &problem).unwrap();
            let j_tracked = total_cost(&tracked, &problem).unwrap();
            let j_interp = total_cost(&interp, &problem).unwrap();
            let case_ok = report.converged
                && monotone
                && report.max_dynamics_defect < 1e-6
                && j_ovs <= j_tracked;
            ok &= case_ok;
            parts.push(format!(
                "{name} tf {tf}: {} it, defect {:.1e}, J {:.1} vs tracked PBVS {:.1} (raw interpolant {:.1}){}",
                report.iterations,
                report.max_dynamics_defect,
                j_ovs,
                j_tracked,
                j_interp,
                if monotone { "" } else { ", history not monotone" }
            ));
        }
    }
    outcome(ok, parts.join("; "))
}

fn c10_determinism(first_csv: &str, scenario: &Scenario) -> Outcome {
    let again = sweep_nominal_speeds(scenario, &scenario.tf_list, &Method::ALL, scenario.trials)
        .expect("sweep runs");
    let same = again.to_csv() == first_csv;
    outcome(
        same,
        format!("{} bytes, identical: {same}", first_csv.len()),
    )
}

#[test]
fn acceptance() {
    let scenario = default_scenario();
    let table = sweep_nominal_speeds(&scenario, &scenario.tf_list, &Method::ALL, scenario.trials)
        .expect("sweep runs");
    let csv = table.to_csv();
    println!("{csv}");

    let results = [
        ("1 avg pixel error ordering", c1_avg_ordering(&table)),
        ("2 max pixel error ordering", c2_max_ordering(&table)),
        ("3 speed monotonicity", c3_speed_monotonicity(&table)),
        ("4 thrust effort trend", c4_thrust_trend(&table)),
        ("5 field of view", c5_field_of_view(&table)),
        ("6 gradient oracle", c6_gradient_oracle()),
        ("7 dynamics suite", c7_dynamics()),
        ("8 nmpc regulation", c8_nmpc_regulation()),
        ("9 solver hygiene", c9_solver_hygiene()),
        ("10 determinism", c10_determinism(&csv, &scenario)),
    ];
    for (name, r) in &results {
        println!(
            "{} criterion {name}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, r)| !r.passed)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
