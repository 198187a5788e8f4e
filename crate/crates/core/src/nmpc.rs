//! Receding-horizon tracking controller.
//!
//! Each tick solves a short multiple-shooting problem whose stage
//! references are sampled from the global trajectory, with the current
//! disturbance estimate held constant over the horizon. Only the first
//! input is applied; the rest seeds the next solve.

use std::time::Instant;

use nalgebra::{Matrix4, Vector3};

use crate::dynamics::{
    hover_input, rk4_step, ControlInput, InputVector, StateMatrix, StateVector, UavState,
    VehicleParams,
};
use crate::ocp::{self, Ocp, SqpSettings};
use crate::trajectory::Trajectory;
use crate::trajopt::InputBounds;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q: StateMatrix,
    pub r: Matrix4<f64>,
    pub p: StateMatrix,
    pub bounds: InputBounds,
    pub max_sqp_iterations: usize,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.horizon < 2 {
            return Err(Error::InvalidInput(format!(
                "MPC horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "MPC step must be positive, got {}",
                self.dt
            )));
        }
        if self.max_sqp_iterations == 0 {
            return Err(Error::InvalidInput(
                "MPC needs at least one SQP iteration".into(),
            ));
        }
        self.bounds.validate()
    }
}

impl Default for MpcConfig {
    fn default() -> Self {
        let q = StateMatrix::from_diagonal(&StateVector::from_row_slice(&[
            20.0, 20.0, 30.0, 1.0, 1.0, 8.0, 4.0, 4.0, 4.0,
        ]));
        Self {
            horizon: 20,
            dt: 0.02,
            q,
            r: Matrix4::from_diagonal(&InputVector::new(2.0, 2.0, 2.0, 0.02)),
            p: q * 10.0,
            bounds: InputBounds::default(),
            max_sqp_iterations: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceEstimate {
    /// Inertial-frame external force, newtons.
    pub force: Vector3<f64>,
}

impl DisturbanceEstimate {
    pub fn new(force: Vector3<f64>) -> Self {
        Self { force }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub first_input: ControlInput,
    pub predicted_states: Vec<UavState>,
    pub predicted_inputs: Vec<ControlInput>,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Wall-clock seconds; not part of any deterministic output.
    pub solve_time: f64,
    /// Set when the solve failed and this is the previous plan shifted.
    pub failed: bool,
}

/// Time-indexed reference for the controller. After the trajectory ends
/// the reference holds `hold` (or the last knot when unset).
#[derive(Debug, Clone, Copy)]
pub struct TrackingReference<'a> {
    pub trajectory: &'a Trajectory,
    pub hold: Option<UavState>,
}

impl<'a> TrackingReference<'a> {
    pub fn new(trajectory: &'a Trajectory) -> Self {
        Self {
            trajectory,
            hold: None,
        }
    }

    pub fn with_hold(trajectory: &'a Trajectory, hold: UavState) -> Self {
        Self {
            trajectory,
            hold: Some(hold),
        }
    }

    pub fn state_at(&self, t: f64) -> UavState {
        let end = self.trajectory.t0 + self.trajectory.duration();
        match self.hold {
            Some(h) if t > end => h,
            _ => self.trajectory.sample_state(t),
        }
    }
}

impl<'a> From<&'a Trajectory> for TrackingReference<'a> {
    fn from(trajectory: &'a Trajectory) -> Self {
        Self::new(trajectory)
    }
}

/// Drops the first stage and repeats the last one.
pub fn shift_warm_start(prev: &MpcSolution) -> MpcSolution {
    let mut states = prev.predicted_states[1..].to_vec();
    states.push(*prev.predicted_states.last().expect("non-empty prediction"));
    let mut inputs = prev.predicted_inputs[1..].to_vec();
    inputs.push(*prev.predicted_inputs.last().expect("non-empty prediction"));
    MpcSolution {
        first_input: inputs[0],
        predicted_states: states,
        predicted_inputs: inputs,
        ..prev.clone()
    }
}

fn build_ocp(
    x_est: &UavState,
    d_est: &DisturbanceEstimate,
    reference: &TrackingReference,
    ref_time: f64,
    cfg: &MpcConfig,
    model: &VehicleParams,
) -> Ocp {
    let hover = hover_input(model);
    let k = cfg.horizon;
    let times = (0..=k).map(|j| ref_time + j as f64 * cfg.dt);
    let state_refs = times
        .clone()
        .map(|t| reference.state_at(t).to_vector())
        .collect();
    let input_refs = times
        .take(k)
        .map(|t| {
            reference
                .trajectory
                .input_at(t)
                .unwrap_or(hover)
                .to_vector()
        })
        .collect();
    Ocp {
        x_init: *x_est,
        dt: cfg.dt,
        params: model.with_extra_force(d_est.force),
        state_refs,
        input_refs,
        q: cfg.q,
        r: cfg.r,
        p: cfg.p,
        pixel: None,
        lower: cfg.bounds.lower.to_vector(),
        upper: cfg.bounds.upper.to_vector(),
    }
}

/// Solves one receding-horizon problem. `warm` is used as the initial guess
/// verbatim (shift it first with [`shift_warm_start`] when advancing a
/// tick); without it the reference inputs are rolled out from `x_est`.
pub fn mpc_step(
    x_est: &UavState,
    d_est: &DisturbanceEstimate,
    reference: &TrackingReference,
    ref_time: f64,
    cfg: &MpcConfig,
    model: &VehicleParams,
    warm: Option<&MpcSolution>,
) -> MpcSolution {
    let started = Instant::now();
    let problem = build_ocp(x_est, d_est, reference, ref_time, cfg, model);
    let (xs, us): (Vec<StateVector>, Vec<InputVector>) = match warm {
        Some(w) if w.predicted_inputs.len() == cfg.horizon => (
            w.predicted_states.iter().map(UavState::to_vector).collect(),
            w.predicted_inputs
                .iter()
                .map(ControlInput::to_vector)
                .collect(),
        ),
        _ => {
            let mut xs = vec![x_est.to_vector()];
            let mut x = *x_est;
            for u in &problem.input_refs {
                x = rk4_step(&x, &ControlInput::from_vector(u), cfg.dt, &problem.params);
                xs.push(x.to_vector());
            }
            (xs, problem.input_refs.clone())
        }
    };
    let settings = SqpSettings {
        max_iterations: cfg.max_sqp_iterations,
        ..Default::default()
    };
    let out = ocp::solve(&problem, &xs, &us, &settings);
    let solve_time = started.elapsed().as_secs_f64();

    let finite = out.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
        && out.inputs.iter().all(|u| u.iter().all(|v| v.is_finite()));
    if !finite || out.report.max_dynamics_defect > 1e-2 {
        let mut fallback = match warm {
            Some(w) => w.clone(),
            None => {
                let hover = cfg.bounds.clamp(&hover_input(model));
                MpcSolution {
                    first_input: hover,
                    predicted_states: vec![*x_est; cfg.horizon + 1],
                    predicted_inputs: vec![hover; cfg.horizon],
                    kkt_residual: f64::INFINITY,
                    iterations: out.report.iterations,
                    solve_time,
                    failed: true,
                }
            }
        };
        fallback.first_input = cfg.bounds.clamp(&fallback.first_input);
        fallback.failed = true;
        fallback.solve_time = solve_time;
        return fallback;
    }
    let inputs = out.inputs();
    MpcSolution {
        first_input: cfg.bounds.clamp(&inputs[0]),
        predicted_states: out.states(),
        predicted_inputs: inputs,
        kkt_residual: out.report.kkt_residual,
        iterations: out.report.iterations,
        solve_time,
        failed: false,
    }
}

/// Owns the warm-start state of one controller instance.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub model: VehicleParams,
    pub warm_start: bool,
    last: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, model: VehicleParams) -> Self {
        Self {
            cfg,
            model,
            warm_start: true,
            last: None,
        }
    }

    pub fn with_warm_start(mut self, enabled: bool) -> Self {
        self.warm_start = enabled;
        self
    }

    pub fn step(
        &mut self,
        x_est: &UavState,
        d_est: &DisturbanceEstimate,
        reference: &TrackingReference,
        t: f64,
    ) -> MpcSolution {
        let guess = if self.warm_start {
            self.last.as_ref().map(shift_warm_start)
        } else {
            None
        };
        let sol = mpc_step(
            x_est,
            d_est,
            reference,
            t,
            &self.cfg,
            &self.model,
            guess.as_ref(),
        );
        self.last = Some(sol.clone());
        sol
    }

    pub fn reset(&mut self) {
        self.last = None;
    }
}

/// First-order observer on the velocity prediction error.
pub fn estimate_disturbance(
    v_pred: &Vector3<f64>,
    v_meas: &Vector3<f64>,
    d_prev: &DisturbanceEstimate,
    gain: f64,
    dt: f64,
    mass: f64,
    max_force: f64,
) -> DisturbanceEstimate {
    let mut d = d_prev.force + gain * mass * (v_meas - v_pred) / dt;
    let norm = d.norm();
    if norm > max_force {
        d *= max_force / norm;
    }
    DisturbanceEstimate { force: d }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverConfig {
    pub enabled: bool,
    pub gain: f64,
    pub max_force: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gain: 0.1,
            max_force: 10.0,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "observer gain must lie in (0, 1], got {}",
                self.gain
            )));
        }
        if !(self.max_force >= 0.0) {
            return Err(Error::InvalidInput(
                "observer force bound must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Updates `d` from the model's one-step prediction and the measured state.
    pub fn update(
        &self,
        prediction: &UavState,
        measured: &UavState,
        d: &DisturbanceEstimate,
        dt: f64,
        mass: f64,
    ) -> DisturbanceEstimate {
        if !self.enabled {
            return *d;
        }
        estimate_disturbance(
            &prediction.velocity,
            &measured.velocity,
            d,
            self.gain,
            dt,
            mass,
            self.max_force,
        )
    }
}
