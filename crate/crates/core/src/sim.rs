//! Closed-loop simulation of the visual-servoing experiment and the
//! pixel-error and control-effort statistics computed from it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{interpolate_poses, reference_to_trajectory};
use crate::dynamics::{propagate, ControlInput, UavState, VehicleParams};
use crate::geometry::{
    project, world_to_camera, CameraExtrinsics, CameraIntrinsics, EulerAngles, Pose,
};
use crate::nmpc::{
    DisturbanceEstimate, MpcConfig, MpcController, ObserverConfig, TrackingReference,
};
use crate::perception::{compute_goal_pose, Detector, DetectorNoise, GoalSpec};
use crate::trajectory::{parse_row, Trajectory};
use crate::trajopt::{solve_trajectory, CostWeights, InputBounds, SolveReport, TrajectoryProblem};
use crate::Error;

pub const EPISODE_HEADER: &str =
    "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,u_roll,u_pitch,u_yawrate,u_thrust,pix_u,pix_v,visible";
pub const COMPARISON_HEADER: &str =
    "tf,s_nom,method,avg_px_err,max_px_err,visibility,rms_thrust_N,rms_roll_deg,rms_pitch_deg,rms_yawrate,status";
pub const LONG_HEADER: &str = "tf,s_nom,method,trial,metric,value";
pub const REPLAY_HEADER: &str = "t,err_u,err_v,err_norm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ovs,
    Pbvs,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Ovs, Method::Pbvs];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Method::Ovs => "OVS",
            Method::Pbvs => "PBVS",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "ovs" => Ok(Method::Ovs),
            "pbvs" => Ok(Method::Pbvs),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Fractional offsets applied to the simulated plant only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantPerturbation {
    pub mass: f64,
    pub drag: f64,
    /// Constant inertial force acting on the plant, newtons.
    pub external_force: Vector3<f64>,
}

impl PlantPerturbation {
    pub fn apply(&self, model: &VehicleParams) -> VehicleParams {
        VehicleParams {
            mass: model.mass * (1.0 + self.mass),
            drag_coeff: model.drag_coeff * (1.0 + self.drag),
            external_force: model.external_force + self.external_force,
            ..*model
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub x_init: UavState,
    pub target_pose_world: Pose,
    pub goal_spec: GoalSpec,
    pub tf: f64,
    pub steps: usize,
    pub vehicle: VehicleParams,
    pub intr: CameraIntrinsics,
    pub ext: CameraExtrinsics,
    pub noise: DetectorNoise,
    pub plant: PlantPerturbation,
    pub seed: u64,
    pub weights: CostWeights,
    pub bounds: InputBounds,
    pub planner_max_iterations: usize,
    pub mpc: MpcConfig,
    pub observer: ObserverConfig,
    /// Extra simulated time after `tf` for the vehicle to settle.
    pub settle_time: f64,
    pub inner_step: f64,
    pub tf_list: Vec<f64>,
    pub trials: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tf > 0.0) {
            return bad(format!("tf must be positive, got {}", self.tf));
        }
        if self.steps < 2 {
            return bad(format!("steps must be at least 2, got {}", self.steps));
        }
        if !(self.settle_time >= 0.0) {
            return bad("settle_time must be non-negative".into());
        }
        if !(self.inner_step > 0.0 && self.inner_step <= self.mpc.dt) {
            return bad(format!(
                "inner_step must lie in (0, mpc.dt], got {}",
                self.inner_step
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.tf_list.iter().any(|t| !(*t > 0.0)) {
            return bad("every tf in tf_list must be positive".into());
        }
        if self.noise.sigma_pixel < 0.0
            || self.noise.sigma_position < 0.0
            || self.noise.sigma_yaw < 0.0
        {
            return bad("noise standard deviations must be non-negative".into());
        }
        if !(self.plant.mass > -1.0) || !(self.plant.drag >= -1.0) {
            return bad("plant perturbation leaves a non-physical vehicle".into());
        }
        let to_config = |e: Error| match e {
            Error::InvalidInput(m) => Error::Config(m),
            other => other,
        };
        self.vehicle.validate().map_err(Error::Config)?;
        self.intr.validate().map_err(Error::Config)?;
        self.weights.validate().map_err(to_config)?;
        self.bounds.validate().map_err(to_config)?;
        self.mpc.validate().map_err(to_config)?;
        self.observer.validate().map_err(to_config)?;
        Ok(())
    }

    pub fn plant_params(&self) -> VehicleParams {
        self.plant.apply(&self.vehicle)
    }

    pub fn with_tf(&self, tf: f64) -> Self {
        Self { tf, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    /// NaN when the target is behind the camera.
    pub pixel: Vector2<f64>,
    pub visible: bool,
}

/// True projection of a world point; visible when in front and inside the
/// image.
pub fn observe_pixel(
    state: &UavState,
    target: &Vector3<f64>,
    intr: &CameraIntrinsics,
    ext: &CameraExtrinsics,
) -> PixelSample {
    match project(&world_to_camera(state, ext, target), intr) {
        Ok(p) => PixelSample {
            pixel: p,
            visible: intr.contains(&p),
        },
        Err(_) => PixelSample {
            pixel: Vector2::new(f64::NAN, f64::NAN),
            visible: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub t: f64,
    pub state: UavState,
    pub estimate: UavState,
    pub input: ControlInput,
    pub pixel: PixelSample,
    pub kkt_residual: f64,
    pub sqp_iterations: usize,
    pub solver_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub method: Method,
    pub records: Vec<EpisodeRecord>,
    pub plan: Trajectory,
    pub plan_report: Option<SolveReport>,
    pub goal: UavState,
    pub target_world: Vector3<f64>,
    pub desired_pixel: Vector2<f64>,
    pub flight_time: f64,
    pub half_diagonal: f64,
    pub dt: f64,
}

impl EpisodeLog {
    pub fn final_state(&self) -> &UavState {
        &self.records.last().expect("episode has records").state
    }

    pub fn nominal_speed(&self) -> f64 {
        (self.goal.position - self.records[0].state.position).norm() / self.flight_time
    }

    pub fn mean_sqp_iterations(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.sqp_iterations as f64)
            .sum::<f64>()
            / self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(96 * (self.records.len() + 1));
        out.push_str(EPISODE_HEADER);
        out.push('\n');
        for r in &self.records {
            let (s, u) = (&r.state, &r.input);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.attitude.roll,
                s.attitude.pitch,
                s.attitude.yaw,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                u.roll,
                u.pitch,
                u.yaw_rate,
                u.thrust,
                r.pixel.pixel.x,
                r.pixel.pixel.y,
                u8::from(r.pixel.visible)
            );
        }
        out
    }
}

/// Goal state and target position estimated from one detection at the
/// initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalEstimate {
    pub x_goal: UavState,
    pub target_world: Vector3<f64>,
}

pub fn estimate_goal(scenario: &Scenario) -> Result<GoalEstimate, Error> {
    let mut detector = Detector::new(DetectorNoise {
        seed: scenario.seed,
        ..scenario.noise
    });
    let obs = detector
        .detect(
            &scenario.target_pose_world,
            &scenario.x_init,
            &scenario.intr,
            &scenario.ext,
        )
        .ok_or(Error::TargetLostAtStart)?;
    let goal_pose = compute_goal_pose(&obs, &scenario.x_init, &scenario.ext, &scenario.goal_spec);
    let r_body = scenario.x_init.attitude.to_rotation();
    let target_world = scenario.x_init.position
        + r_body * (scenario.ext.rotation * obs.position_cam + scenario.ext.translation);
    Ok(GoalEstimate {
        x_goal: UavState::at_rest(goal_pose.position, goal_pose.orientation.yaw),
        target_world,
    })
}

pub fn trajectory_problem(scenario: &Scenario, goal: &GoalEstimate) -> TrajectoryProblem {
    TrajectoryProblem {
        x_init: scenario.x_init,
        x_goal: goal.x_goal,
        target_world: goal.target_world,
        desired_pixel: scenario.goal_spec.desired_pixel,
        steps: scenario.steps,
        t0: 0.0,
        tf: scenario.tf,
        weights: scenario.weights,
        params: scenario.vehicle,
        intr: scenario.intr,
        ext: scenario.ext,
        bounds: scenario.bounds,
        max_iterations: scenario.planner_max_iterations,
    }
}

/// Reference trajectory for `method`: the optimized plan for OVS, the pose
/// interpolant for PBVS.
pub fn plan(
    scenario: &Scenario,
    method: Method,
    goal: &GoalEstimate,
) -> Result<(Trajectory, Option<SolveReport>), Error> {
    match method {
        Method::Ovs => {
            let (traj, report) = solve_trajectory(&trajectory_problem(scenario, goal), None)?;
            if !report.converged && report.max_dynamics_defect > 1e-3 {
                return Err(Error::PlanningFailure(format!(
                    "no feasible plan after {} iterations (defect {:.3e})",
                    report.iterations, report.max_dynamics_defect
                )));
            }
            Ok((traj, Some(report)))
        }
        Method::Pbvs => {
            let start = Pose::new(
                scenario.x_init.position,
                EulerAngles::yaw_only(scenario.x_init.attitude.yaw),
            );
            let end = Pose::new(goal.x_goal.position, goal.x_goal.attitude);
            let reference = interpolate_poses(&start, &end, scenario.steps, 0.0, scenario.tf)?;
            Ok((reference_to_trajectory(&reference, &scenario.vehicle), None))
        }
    }
}

/// Detects the target, plans with `method` and flies the plan with the
/// tracking controller on the (possibly perturbed) plant.
pub fn run_episode(
    scenario: &Scenario,
    method: Method,
    mpc_cfg: &MpcConfig,
) -> Result<EpisodeLog, Error> {
    scenario.validate()?;
    let goal = estimate_goal(scenario)?;
    let x_goal = goal.x_goal;
    let (plan, plan_report) = plan(scenario, method, &goal)?;
    let reference = TrackingReference::with_hold(&plan, x_goal);

    let model = scenario.vehicle;
    let plant = scenario.plant_params();
    let mut controller = MpcController::new(*mpc_cfg, model);
    let dt = mpc_cfg.dt;
    let ticks = ((scenario.tf + scenario.settle_time) / dt).round() as usize;
    let target = scenario.target_pose_world.position;
    let mut x = scenario.x_init;
    let mut d = DisturbanceEstimate::default();
    let mut records = Vec::with_capacity(ticks + 1);
    for i in 0..=ticks {
        let t = i as f64 * dt;
        let x_est = x;
        let sol = controller.step(&x_est, &d, &reference, t);
        let u = sol.first_input;
        records.push(EpisodeRecord {
            t,
            state: x,
            estimate: x_est,
            input: u,
            pixel: observe_pixel(&x, &target, &scenario.intr, &scenario.ext),
            kkt_residual: sol.kkt_residual,
            sqp_iterations: sol.iterations,
            solver_failed: sol.failed,
        });
        if i == ticks {
            break;
        }
        let predicted = propagate(
            &x_est,
            &u,
            dt,
            scenario.inner_step,
            &model.with_extra_force(d.force),
        );
        x = propagate(&x, &u, dt, scenario.inner_step, &plant);
        if !x.is_finite() {
            return Err(Error::PlanningFailure(format!(
                "closed loop diverged at t = {t}"
            )));
        }
        d = scenario.observer.update(&predicted, &x, &d, dt, model.mass);
    }
    Ok(EpisodeLog {
        method,
        records,
        plan,
        plan_report,
        goal: x_goal,
        target_world: target,
        desired_pixel: scenario.goal_spec.desired_pixel,
        flight_time: scenario.tf,
        half_diagonal: scenario.intr.half_diagonal(),
        dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub avg_pixel_error: f64,
    pub max_pixel_error: f64,
    pub mse_series: Vec<f64>,
    pub visibility_fraction: f64,
    pub rms_thrust: f64,
    /// RMS thrust divided by the vehicle weight.
    pub rms_thrust_to_weight: f64,
    pub rms_roll_deg: f64,
    pub rms_pitch_deg: f64,
    pub rms_yaw_rate: f64,
}

/// Statistics over the flight window `t <= flight_time`. Ticks without a
/// visible target count as the image half-diagonal.
pub fn compute_stats(log: &EpisodeLog, weight: f64) -> ErrorStats {
    let window: Vec<&EpisodeRecord> = log
        .records
        .iter()
        .filter(|r| r.t <= log.flight_time + 1e-9)
        .collect();
    assert!(!window.is_empty(), "episode log is empty");
    let n = window.len() as f64;
    let errors: Vec<f64> = window
        .iter()
        .map(|r| {
            if r.pixel.visible {
                (r.pixel.pixel - log.desired_pixel).norm()
            } else {
                log.half_diagonal
            }
        })
        .collect();
    let rms = |f: &dyn Fn(&ControlInput) -> f64| {
        (window.iter().map(|r| f(&r.input).powi(2)).sum::<f64>() / n).sqrt()
    };
    let rms_thrust = rms(&|u| u.thrust);
    ErrorStats {
        avg_pixel_error: errors.iter().sum::<f64>() / n,
        max_pixel_error: errors.iter().cloned().fold(0.0, f64::max),
        mse_series: errors.iter().map(|e| e * e).collect(),
        visibility_fraction: window.iter().filter(|r| r.pixel.visible).count() as f64 / n,
        rms_thrust,
        rms_thrust_to_weight: rms_thrust / weight,
        rms_roll_deg: rms(&|u| u.roll).to_degrees(),
        rms_pitch_deg: rms(&|u| u.pitch).to_degrees(),
        rms_yaw_rate: rms(&|u| u.yaw_rate),
    }
}

/// Per-trial seed, shared by both methods and every flight time so that
/// each trial flies to the same noisy goal.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub s_nom: f64,
    pub stats: Result<ErrorStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub tf: f64,
    pub s_nom: f64,
    pub method: Method,
    pub avg_pixel_error: f64,
    pub max_pixel_error: f64,
    pub visibility: f64,
    pub rms_thrust: f64,
    pub rms_roll_deg: f64,
    pub rms_pitch_deg: f64,
    pub rms_yaw_rate: f64,
    pub completed: usize,
    pub trials: Vec<TrialResult>,
}

impl ComparisonRow {
    pub fn status(&self) -> String {
        let failed = self.trials.len() - self.completed;
        if failed == 0 {
            "ok".into()
        } else {
            format!("failed_{failed}_of_{}", self.trials.len())
        }
    }

    pub fn all_completed(&self) -> bool {
        self.completed == self.trials.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn all_completed(&self) -> bool {
        self.rows.iter().all(ComparisonRow::all_completed)
    }

    pub fn row(&self, tf: f64, method: Method) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.tf == tf && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.4},{:.4},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.tf,
                r.s_nom,
                r.method,
                r.avg_pixel_error,
                r.max_pixel_error,
                r.visibility,
                r.rms_thrust,
                r.rms_roll_deg,
                r.rms_pitch_deg,
                r.rms_yaw_rate,
                r.status()
            );
        }
        out
    }

    /// One row per trial and metric, for plotting.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from(LONG_HEADER);
        out.push('\n');
        for r in &self.rows {
            for t in &r.trials {
                let Ok(s) = &t.stats else { continue };
                let metrics = [
                    ("avg_px_err", s.avg_pixel_error),
                    ("max_px_err", s.max_pixel_error),
                    ("visibility", s.visibility_fraction),
                    ("rms_thrust_N", s.rms_thrust),
                    ("rms_thrust_tw", s.rms_thrust_to_weight),
                    ("rms_roll_deg", s.rms_roll_deg),
                    ("rms_pitch_deg", s.rms_pitch_deg),
                    ("rms_yawrate", s.rms_yaw_rate),
                ];
                for (name, value) in metrics {
                    let _ = writeln!(
                        out,
                        "{:.4},{:.4},{},{},{},{:.6}",
                        r.tf, t.s_nom, r.method, t.trial, name, value
                    );
                }
            }
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Runs every (tf, method, trial) episode, in parallel, and averages the
/// statistics over trials. Output order and values do not depend on the
/// thread schedule.
pub fn sweep_nominal_speeds(
    base: &Scenario,
    tf_list: &[f64],
    methods: &[Method],
    trials: usize,
) -> Result<ComparisonTable, Error> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    base.validate()?;
    let jobs: Vec<(f64, Method, usize)> = tf_list
        .iter()
        .flat_map(|&tf| {
            methods
                .iter()
                .flat_map(move |&m| (0..trials).map(move |k| (tf, m, k)))
        })
        .collect();
    let weight = base.vehicle.weight();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(tf, method, trial)| {
            let scenario = Scenario {
                tf,
                seed: trial_seed(base.seed, trial),
                ..base.clone()
            };
            match run_episode(&scenario, method, &scenario.mpc) {
                Ok(log) => TrialResult {
                    trial,
                    s_nom: log.nominal_speed(),
                    stats: Ok(compute_stats(&log, weight)),
                },
                Err(e) => TrialResult {
                    trial,
                    s_nom: f64::NAN,
                    stats: Err(e.to_string()),
                },
            }
        })
        .collect();

    let rows = results
        .chunks(trials)
        .zip(jobs.chunks(trials))
        .map(|(trial_results, job)| {
            let (tf, method, _) = job[0];
            let ok: Vec<&ErrorStats> = trial_results
                .iter()
                .filter_map(|t| t.stats.as_ref().ok())
                .collect();
            let avg = |f: fn(&ErrorStats) -> f64| mean(ok.iter().map(|s| f(s)));
            ComparisonRow {
                tf,
                s_nom: mean(
                    trial_results
                        .iter()
                        .filter(|t| t.stats.is_ok())
                        .map(|t| t.s_nom),
                ),
                method,
                avg_pixel_error: avg(|s| s.avg_pixel_error),
                max_pixel_error: avg(|s| s.max_pixel_error),
                visibility: avg(|s| s.visibility_fraction),
                rms_thrust: avg(|s| s.rms_thrust),
                rms_roll_deg: avg(|s| s.rms_roll_deg),
                rms_pitch_deg: avg(|s| s.rms_pitch_deg),
                rms_yaw_rate: avg(|s| s.rms_yaw_rate),
                completed: ok.len(),
                trials: trial_results.to_vec(),
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRow {
    pub t: f64,
    pub state: UavState,
    pub input: ControlInput,
    pub pixel: Vector2<f64>,
    pub visible: bool,
}

pub fn parse_episode_csv(text: &str) -> Result<Vec<EpisodeRow>, Error> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EPISODE_HEADER => {}
        Some(_) => {
            return Err(Error::Parse {
                line: 1,
                message: "unexpected episode CSV header".into(),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut rows: Vec<EpisodeRow> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(line, 17, line_no)?;
        let visible = if v[16] == 0.0 {
            false
        } else if v[16] == 1.0 {
            true
        } else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("visible must be 0 or 1, got {}", v[16]),
            });
        };
        if rows.last().is_some_and(|r| !(v[0] > r.t)) {
            return Err(Error::Parse {
                line: line_no,
                message: "time stamps must be strictly increasing".into(),
            });
        }
        rows.push(EpisodeRow {
            t: v[0],
            state: UavState::new(
                Vector3::new(v[1], v[2], v[3]),
                EulerAngles::new(v[4], v[5], v[6]),
                Vector3::new(v[7], v[8], v[9]),
            ),
            input: ControlInput::new(v[10], v[11], v[12], v[13]),
            pixel: Vector2::new(v[14], v[15]),
            visible,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Per-axis pixel error series; rows without a visible target carry NaN.
pub fn replay(rows: &[EpisodeRow], desired_pixel: &Vector2<f64>) -> String {
    let mut out = String::from(REPLAY_HEADER);
    out.push('\n');
    for r in rows {
        let e = if r.visible {
            r.pixel - desired_pixel
        } else {
            Vector2::new(f64::NAN, f64::NAN)
        };
        let _ = writeln!(out, "{},{},{},{}", r.t, e.x, e.y, e.norm());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::hover_input;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn log_with(errors: &[Option<f64>], inputs: &[ControlInput]) -> EpisodeLog {
        let desired = Vector2::new(376.0, 240.0);
        let records = errors
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(i, (e, u))| EpisodeRecord {
                t: i as f64 * 0.02,
                state: UavState::default(),
                estimate: UavState::default(),
                input: *u,
                pixel: match e {
                    Some(e) => PixelSample {
                        pixel: desired + Vector2::new(*e, 0.0),
                        visible: true,
                    },
                    None => PixelSample {
                        pixel: Vector2::new(f64::NAN, f64::NAN),
                        visible: false,
                    },
                },
                kkt_residual: 0.0,
                sqp_iterations: 1,
                solver_failed: false,
            })
            .collect();
        EpisodeLog {
            method: Method::Ovs,
            records,
            plan: Trajectory::new(
                vec![UavState::default(); 2],
                vec![ControlInput::default()],
                1.0,
            )
            .unwrap(),
            plan_report: None,
            goal: UavState::default(),
            target_world: Vector3::zeros(),
            desired_pixel: desired,
            flight_time: 1e6,
            half_diagonal: 446.0,
            dt: 0.02,
        }
    }

    #[test]
    fn constant_error_and_hover() {
        let params = VehicleParams::default();
        let log = log_with(&[Some(7.0); 10], &[hover_input(&params); 10]);
        let s = compute_stats(&log, params.weight());
        assert_relative_eq!(s.avg_pixel_error, 7.0, epsilon = 1e-12);
        assert_relative_eq!(s.max_pixel_error, 7.0, epsilon = 1e-12);
        assert!(s.mse_series.iter().all(|m| (m - 49.0).abs() < 1e-9));
        assert_relative_eq!(s.rms_thrust, params.weight(), epsilon = 1e-12);
        assert_relative_eq!(s.rms_thrust_to_weight, 1.0, epsilon = 1e-12);
        assert_eq!(s.visibility_fraction, 1.0);
    }

    #[test]
    fn randomized_log_matches_one_pass_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errors: Vec<Option<f64>> = (0..200)
            .map(|_| {
                if rng.random_bool(0.1) {
                    None
                } else {
                    Some(rng.random_range(-80.0..80.0))
                }
            })
            .collect();
        let inputs: Vec<ControlInput> = (0..200)
            .map(|_| {
                ControlInput::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(20.0..35.0),
                )
            })
            .collect();
        let log = log_with(&errors, &inputs);
        let s = compute_stats(&log, 27.468);

        let (mut sum, mut max, mut vis, mut thrust2, mut roll2, mut pitch2, mut yaw2) =
            (0.0f64, 0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (e, u) in errors.iter().zip(&inputs) {
            let v = e.map_or(446.0, f64::abs);
            sum += v;
            max = max.max(v);
            vis += f64::from(u8::from(e.is_some()));
            thrust2 += u.thrust * u.thrust;
            roll2 += u.roll * u.roll;
            pitch2 += u.pitch * u.pitch;
            yaw2 += u.yaw_rate * u.yaw_rate;
        }
        let n = 200.0;
        assert_relative_eq!(s.avg_pixel_error, sum / n, epsilon = 1e-9);
        assert_relative_eq!(s.max_pixel_error, max, epsilon = 1e-12);
        assert_relative_eq!(s.visibility_fraction, vis / n, epsilon = 1e-12);
        assert_relative_eq!(s.rms_thrust, (thrust2 / n).sqrt(), epsilon = 1e-9);
        assert_relative_eq!(
            s.rms_roll_deg,
            (roll2 / n).sqrt() * 180.0 / std::f64::consts::PI,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            s.rms_pitch_deg,
            (pitch2 / n).sqrt() * 180.0 / std::f64::consts::PI,
            epsilon = 1e-9
        );
        assert_relative_eq!(s.rms_yaw_rate, (yaw2 / n).sqrt(), epsilon = 1e-9);
        assert!(s.avg_pixel_error <= s.max_pixel_error);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..10).map(|k| trial_seed(42, k)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert_eq!(
            seeds,
            (0..10).map(|k| trial_seed(42, k)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn perturbation_touches_only_the_plant() {
        let model = VehicleParams::default();
        let p = PlantPerturbation {
            mass: 0.03,
            drag: 0.2,
            external_force: Vector3::zeros(),
        };
        let plant = p.apply(&model);
        assert_relative_eq!(plant.mass, 2.8 * 1.03, epsilon = 1e-12);
        assert_relative_eq!(plant.drag_coeff, 0.016 * 1.2, epsilon = 1e-12);
        assert_eq!(model, VehicleParams::default());
    }

    #[test]
    fn method_names() {
        assert_eq!("ovs".parse::<Method>().unwrap(), Method::Ovs);
        assert_eq!("PBVS".parse::<Method>().unwrap(), Method::Pbvs);
        assert!("ibvs".parse::<Method>().is_err());
        assert_eq!(Method::Pbvs.to_string(), "PBVS");
    }

    #[test]
    fn episode_csv_errors_name_the_line() {
        let good = format!("{EPISODE_HEADER}\n0,0,0,0,0,0,0,0,0,0,0,0,0,27,376,240,1\n");
        assert_eq!(parse_episode_csv(&good).unwrap().len(), 1);
        let truncated = format!("{good}0.02,0,0,0,0,0\n");
        match parse_episode_csv(&truncated) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let rows = parse_episode_csv(&good).unwrap();
        let series = replay(&rows, &Vector2::new(376.0, 240.0));
        assert_eq!(series, format!("{REPLAY_HEADER}\n0,0,0,0\n"));
    }
}
