//! Global perception-aware trajectory optimization.
//!
//! The cost penalizes deviation from the goal state, input effort about
//! hover trim and the target reprojection error at every knot, plus a
//! terminal goal cost. The problem is transcribed with direct multiple
//! shooting and solved with the Gauss-Newton SQP in [`crate::ocp`].

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector3};

use crate::baseline::{interpolate_poses, reference_to_trajectory};
use crate::dynamics::{
    hover_input, ControlInput, InputVector, StateMatrix, StateVector, UavState, VehicleParams,
    STATE_DIM,
};
use crate::geometry::{build_pixel_weight, CameraExtrinsics, CameraIntrinsics, Pose};
pub use crate::ocp::SolveReport;
use crate::ocp::{self, Ocp, PixelEval, PixelObjective, SqpSettings, BARRIER_DEPTH};
use crate::trajectory::Trajectory;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub q: StateMatrix,
    pub r: Matrix4<f64>,
    pub h: Matrix2<f64>,
    pub p: StateMatrix,
}

impl CostWeights {
    pub fn diagonal(
        q: [f64; STATE_DIM],
        r: [f64; 4],
        h: Matrix2<f64>,
        terminal_scale: f64,
    ) -> Self {
        let q = StateMatrix::from_diagonal(&StateVector::from_row_slice(&q));
        Self {
            q,
            r: Matrix4::from_diagonal(&InputVector::from_row_slice(&r)),
            h,
            p: q * terminal_scale,
        }
    }

    /// Default tuning for the given camera.
    pub fn defaults(intr: &CameraIntrinsics) -> Self {
        Self::diagonal(
            [0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1],
            [5.0, 5.0, 5.0, 0.01],
            build_pixel_weight(intr, 1e-3),
            100.0,
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: self.q * factor,
            r: self.r * factor,
            h: self.h * factor,
            p: self.p * factor,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        fn psd<const D: usize>(name: &str, m: &nalgebra::SMatrix<f64, D, D>) -> Result<(), Error> {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "weight matrix {name} is not symmetric"
                )));
            }
            let min = SymmetricEigen::new(DMatrix::from_column_slice(D, D, m.as_slice()))
                .eigenvalues
                .min();
            if min < -1e-10 {
                return Err(Error::InvalidInput(format!(
                    "weight matrix {name} is not PSD (eigenvalue {min})"
                )));
            }
            Ok(())
        }
        psd("Q", &self.q)?;
        psd("R", &self.r)?;
        psd("P", &self.p)?;
        if self.h[(0, 1)] != 0.0
            || self.h[(1, 0)] != 0.0
            || self.h[(0, 0)] < 0.0
            || self.h[(1, 1)] < 0.0
        {
            return Err(Error::InvalidInput(
                "pixel weight H must be diagonal and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub lower: ControlInput,
    pub upper: ControlInput,
}

impl InputBounds {
    pub fn validate(&self) -> Result<(), Error> {
        let (lo, hi) = (self.lower.to_vector(), self.upper.to_vector());
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidInput(
                "input bounds need U_min < U_max componentwise".into(),
            ));
        }
        Ok(())
    }

    pub fn clamp(&self, u: &ControlInput) -> ControlInput {
        let (lo, hi, v) = (
            self.lower.to_vector(),
            self.upper.to_vector(),
            u.to_vector(),
        );
        ControlInput::from_vector(&InputVector::from_fn(|j, _| v[j].clamp(lo[j], hi[j])))
    }

    pub fn contains(&self, u: &ControlInput) -> bool {
        let (lo, hi, v) = (
            self.lower.to_vector(),
            self.upper.to_vector(),
            u.to_vector(),
        );
        (0..4).all(|j| v[j] >= lo[j] && v[j] <= hi[j])
    }
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            lower: ControlInput::new(-0.6, -0.6, -1.5, 10.0),
            upper: ControlInput::new(0.6, 0.6, 1.5, 45.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryProblem {
    pub x_init: UavState,
    pub x_goal: UavState,
    pub target_world: Vector3<f64>,
    pub desired_pixel: Vector2<f64>,
    pub steps: usize,
    pub t0: f64,
    pub tf: f64,
    pub weights: CostWeights,
    pub params: VehicleParams,
    pub intr: CameraIntrinsics,
    pub ext: CameraExtrinsics,
    pub bounds: InputBounds,
    pub max_iterations: usize,
}

impl TrajectoryProblem {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.tf > self.t0) {
            return Err(Error::InvalidInput(format!(
                "tf ({}) must exceed t0 ({})",
                self.tf, self.t0
            )));
        }
        if self.steps < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 steps, got {}",
                self.steps
            )));
        }
        self.weights.validate()?;
        self.bounds.validate()?;
        self.params.validate().map_err(Error::InvalidInput)?;
        self.intr.validate().map_err(Error::InvalidInput)?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.tf - self.t0) / self.steps as f64
    }

    pub fn nominal_speed(&self) -> f64 {
        (self.x_goal.position - self.x_init.position).norm() / (self.tf - self.t0)
    }

    pub fn pixel_objective(&self) -> PixelObjective {
        PixelObjective {
            target_world: self.target_world,
            desired_pixel: self.desired_pixel,
            intr: self.intr,
            ext: self.ext,
            weight: self.weights.h,
        }
    }

    /// The multiple-shooting transcription.
    pub fn to_ocp(&self) -> Ocp {
        let hover = hover_input(&self.params).to_vector();
        let goal = self.x_goal.to_vector();
        Ocp {
            x_init: self.x_init,
            dt: self.dt(),
            params: self.params,
            state_refs: vec![goal; self.steps + 1],
            input_refs: vec![hover; self.steps],
            q: self.weights.q,
            r: self.weights.r,
            p: self.weights.p,
            pixel: Some(self.pixel_objective()),
            lower: self.bounds.lower.to_vector(),
            upper: self.bounds.upper.to_vector(),
        }
    }

    /// Straight-line, constant-yaw-rate interpolant with hover inputs.
    pub fn default_guess(&self) -> Trajectory {
        let start = Pose::new(
            self.x_init.position,
            crate::geometry::EulerAngles::yaw_only(self.x_init.attitude.yaw),
        );
        let goal = Pose::new(
            self.x_goal.position,
            crate::geometry::EulerAngles::yaw_only(self.x_goal.attitude.yaw),
        );
        let reference = interpolate_poses(&start, &goal, self.steps, self.t0, self.tf)
            .expect("problem validated");
        reference_to_trajectory(&reference, &self.params)
    }
}

/// Pixel error of the target relative to the desired pixel.
pub fn reprojection_error(
    x: &UavState,
    target_world: &Vector3<f64>,
    desired_pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
    ext: &CameraExtrinsics,
) -> Result<Vector2<f64>, Error> {
    let objective = PixelObjective {
        target_world: *target_world,
        desired_pixel: *desired_pixel,
        intr: *intr,
        ext: *ext,
        weight: Matrix2::zeros(),
    };
    match objective.evaluate(&x.to_vector()) {
        PixelEval::Visible { error, .. } => Ok(error),
        PixelEval::Barrier { .. } => Err(Error::OutOfView {
            depth_limit: BARRIER_DEPTH,
        }),
    }
}

pub fn stage_cost(x: &UavState, u: &ControlInput, problem: &TrajectoryProblem) -> f64 {
    problem
        .to_ocp()
        .stage_cost(0, &x.to_vector(), &u.to_vector())
}

fn check_shape(traj: &Trajectory, problem: &TrajectoryProblem) -> Result<(), Error> {
    if traj.steps() != problem.steps || traj.states.len() != problem.steps + 1 {
        return Err(Error::DimensionMismatch {
            expected: problem.steps,
            found: traj.steps(),
        });
    }
    Ok(())
}

fn vectors(traj: &Trajectory) -> (Vec<StateVector>, Vec<InputVector>) {
    (
        traj.states.iter().map(UavState::to_vector).collect(),
        traj.inputs.iter().map(ControlInput::to_vector).collect(),
    )
}

pub fn total_cost(traj: &Trajectory, problem: &TrajectoryProblem) -> Result<f64, Error> {
    check_shape(traj, problem)?;
    let (xs, us) = vectors(traj);
    Ok(problem.to_ocp().cost(&xs, &us))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGradient {
    pub states: Vec<StateVector>,
    pub inputs: Vec<InputVector>,
}

impl TrajectoryGradient {
    pub fn norm(&self) -> f64 {
        let s: f64 = self.states.iter().map(|g| g.norm_squared()).sum::<f64>()
            + self.inputs.iter().map(|g| g.norm_squared()).sum::<f64>();
        s.sqrt()
    }
}

/// Exact gradient of [`total_cost`] with respect to every knot state and
/// input.
pub fn cost_gradient(
    traj: &Trajectory,
    problem: &TrajectoryProblem,
) -> Result<TrajectoryGradient, Error> {
    check_shape(traj, problem)?;
    let (xs, us) = vectors(traj);
    let (states, inputs) = problem.to_ocp().gradient(&xs, &us);
    Ok(TrajectoryGradient { states, inputs })
}

pub fn solve_trajectory(
    problem: &TrajectoryProblem,
    initial_guess: Option<&Trajectory>,
) -> Result<(Trajectory, SolveReport), Error> {
    problem.validate()?;
    let guess = match initial_guess {
        Some(g) => {
            check_shape(g, problem)?;
            g.clone()
        }
        None => problem.default_guess(),
    };
    let ocp = problem.to_ocp();
    let (xs, us) = vectors(&guess);
    let start_cost = ocp.cost(&xs, &us);
    if !start_cost.is_finite() {
        return Err(Error::InfeasibleStart(format!(
            "initial guess has non-finite cost {start_cost}"
        )));
    }
    let settings = SqpSettings {
        max_iterations: problem.max_iterations,
        ..Default::default()
    };
    let out = ocp::solve(&ocp, &xs, &us, &settings);
    let mut traj = Trajectory::new(out.states(), out.inputs(), problem.dt())?;
    traj.t0 = problem.t0;
    Ok((traj, out.report))
}
