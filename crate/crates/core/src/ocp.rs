//! Multiple-shooting optimal control problem and its Gauss-Newton SQP solver.
//!
//! Decision variables are every knot state and every input. The knots are
//! tied together by RK4 defect constraints, the input box is handled inside
//! the QP subproblem (see [`crate::lq`]) and globalization uses an exact
//! l1 merit function with Armijo backtracking.

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector3};

use crate::dynamics::{
    rk4_step_jacobians, state_difference, ControlInput, InputMatrix, InputVector, StateMatrix,
    StateVector, UavState, VehicleParams, INPUT_DIM, STATE_DIM, YAW_INDEX,
};
use crate::geometry::{
    euler_rotation_partials, euler_to_rotmat, wrap_angle, CameraExtrinsics, CameraIntrinsics,
    EulerAngles,
};
use crate::lq::{self, LqStage};

/// Depth below which the pixel term switches to its barrier surrogate.
pub const BARRIER_DEPTH: f64 = 0.05;

/// Target reprojection term `1/2 e' H e` with `e = project(x) - desired`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObjective {
    pub target_world: Vector3<f64>,
    pub desired_pixel: Vector2<f64>,
    pub intr: CameraIntrinsics,
    pub ext: CameraExtrinsics,
    pub weight: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum PixelEval {
    Visible {
        error: Vector2<f64>,
        jacobian: SMatrix<f64, 2, STATE_DIM>,
    },
    /// Target at or behind the barrier depth.
    Barrier { value: f64, gradient: StateVector },
}

impl PixelObjective {
    pub fn barrier_scale(&self) -> f64 {
        let half = Vector2::new(self.intr.width as f64, self.intr.height as f64) * 0.5;
        0.5 * (half.transpose() * self.weight * half)[0]
    }

    /// Camera-frame target position and its Jacobian with respect to the state.
    pub fn camera_point(&self, x: &StateVector) -> (Vector3<f64>, SMatrix<f64, 3, STATE_DIM>) {
        let att = EulerAngles::new(x[3], x[4], x[5]);
        let r_ib = *euler_to_rotmat(att).matrix();
        let r_cb_t = self.ext.rotation.matrix().transpose();
        let rel = self.target_world - Vector3::new(x[0], x[1], x[2]);
        let point = r_cb_t * (r_ib.transpose() * rel - self.ext.translation);
        let mut jac = SMatrix::<f64, 3, STATE_DIM>::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(-r_cb_t * r_ib.transpose()));
        for (i, dr) in euler_rotation_partials(att).iter().enumerate() {
            jac.fixed_view_mut::<3, 1>(0, 3 + i)
                .copy_from(&(r_cb_t * dr.transpose() * rel));
        }
        (point, jac)
    }

    pub fn evaluate(&self, x: &StateVector) -> PixelEval {
        let (pc, dpc) = self.camera_point(x);
        if pc.z <= BARRIER_DEPTH {
            let c = self.barrier_scale();
            return PixelEval::Barrier {
                value: c * (1.0 + (BARRIER_DEPTH - pc.z)),
                gradient: -c * dpc.row(2).transpose(),
            };
        }
        let (fx, fy) = (self.intr.fx, self.intr.fy);
        let iz = 1.0 / pc.z;
        let pixel = Vector2::new(fx * pc.x * iz + self.intr.cx, fy * pc.y * iz + self.intr.cy);
        let dproj = SMatrix::<f64, 2, 3>::new(
            fx * iz,
            0.0,
            -fx * pc.x * iz * iz,
            0.0,
            fy * iz,
            -fy * pc.y * iz * iz,
        );
        PixelEval::Visible {
            error: pixel - self.desired_pixel,
            jacobian: dproj * dpc,
        }
    }

    pub fn cost(&self, x: &StateVector) -> f64 {
        match self.evaluate(x) {
            PixelEval::Visible { error, .. } => 0.5 * (error.transpose() * self.weight * error)[0],
            PixelEval::Barrier { value, .. } => value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ocp {
    pub x_init: UavState,
    pub dt: f64,
    pub params: VehicleParams,
    /// `N + 1` entries; the last is the terminal reference.
    pub state_refs: Vec<StateVector>,
    /// `N` entries.
    pub input_refs: Vec<InputVector>,
    pub q: StateMatrix,
    pub r: Matrix4<f64>,
    pub p: StateMatrix,
    pub pixel: Option<PixelObjective>,
    pub lower: InputVector,
    pub upper: InputVector,
}

fn quad<const D: usize>(m: &SMatrix<f64, D, D>, v: &SMatrix<f64, D, 1>) -> f64 {
    0.5 * (v.transpose() * m * v)[0]
}

impl Ocp {
    pub fn horizon(&self) -> usize {
        self.input_refs.len()
    }

    pub fn stage_cost(&self, k: usize, x: &StateVector, u: &InputVector) -> f64 {
        let dx = state_difference(x, &self.state_refs[k]);
        let du = u - self.input_refs[k];
        let pix = self.pixel.as_ref().map_or(0.0, |p| p.cost(x));
        quad(&self.q, &dx) + quad(&self.r, &du) + pix
    }

    pub fn terminal_cost(&self, x: &StateVector) -> f64 {
        quad(
            &self.p,
            &state_difference(x, &self.state_refs[self.horizon()]),
        )
    }

    pub fn cost(&self, xs: &[StateVector], us: &[InputVector]) -> f64 {
        let n = self.horizon();
        let stages: f64 = (0..n).map(|k| self.stage_cost(k, &xs[k], &us[k])).sum();
        stages + self.terminal_cost(&xs[n])
    }

    pub fn stage_gradient(
        &self,
        k: usize,
        x: &StateVector,
        u: &InputVector,
    ) -> (StateVector, InputVector) {
        let mut gx = self.q * state_difference(x, &self.state_refs[k]);
        if let Some(p) = &self.pixel {
            gx += match p.evaluate(x) {
                PixelEval::Visible { error, jacobian } => jacobian.transpose() * p.weight * error,
                PixelEval::Barrier { gradient, .. } => gradient,
            };
        }
        (gx, self.r * (u - self.input_refs[k]))
    }

    pub fn terminal_gradient(&self, x: &StateVector) -> StateVector {
        self.p * state_difference(x, &self.state_refs[self.horizon()])
    }

    /// Gradient with respect to every knot state and input.
    pub fn gradient(
        &self,
        xs: &[StateVector],
        us: &[InputVector],
    ) -> (Vec<StateVector>, Vec<InputVector>) {
        let n = self.horizon();
        let (mut gx, gu): (Vec<_>, Vec<_>) = (0..n)
            .map(|k| self.stage_gradient(k, &xs[k], &us[k]))
            .unzip();
        gx.push(self.terminal_gradient(&xs[n]));
        (gx, gu)
    }

    fn gauss_newton_state_hessian(&self, x: &StateVector) -> StateMatrix {
        let mut h = self.q;
        if let Some(p) = &self.pixel {
            if let PixelEval::Visible { jacobian, .. } = p.evaluate(x) {
                h += jacobian.transpose() * p.weight * jacobian;
            }
        }
        h
    }

    pub fn defect(&self, k: usize, xs: &[StateVector], us: &[InputVector]) -> StateVector {
        let (next, _, _) = rk4_step_jacobians(&xs[k], &us[k], self.dt, &self.params);
        state_difference(&next, &xs[k + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Objective at the returned iterate.
    pub final_cost: f64,
    pub max_dynamics_defect: f64,
    pub converged: bool,
    /// l1 merit (objective plus penalized defects) at the initial point and
    /// after every accepted step. Equals the objective once the defects are
    /// closed.
    pub cost_history: Vec<f64>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub defect_tolerance: f64,
    pub stall_tolerance: f64,
    pub stall_window: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kkt_tolerance: 1e-5,
            defect_tolerance: 1e-6,
            stall_tolerance: 1e-9,
            stall_window: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SqpOutcome {
    pub states: Vec<StateVector>,
    pub inputs: Vec<InputVector>,
    pub costates: Vec<StateVector>,
    pub report: SolveReport,
}

impl SqpOutcome {
    pub fn states(&self) -> Vec<UavState> {
        self.states.iter().map(UavState::from_vector).collect()
    }

    pub fn inputs(&self) -> Vec<ControlInput> {
        self.inputs.iter().map(ControlInput::from_vector).collect()
    }
}

struct Linearization {
    defects: Vec<StateVector>,
    a: Vec<StateMatrix>,
    b: Vec<InputMatrix>,
}

fn linearize(ocp: &Ocp, xs: &[StateVector], us: &[InputVector]) -> Linearization {
    let n = ocp.horizon();
    let mut lin = Linearization {
        defects: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (next, a, b) = rk4_step_jacobians(&xs[k], &us[k], ocp.dt, &ocp.params);
        lin.defects.push(state_difference(&next, &xs[k + 1]));
        lin.a.push(a);
        lin.b.push(b);
    }
    lin
}

fn defect_norms(defects: &[StateVector]) -> (f64, f64) {
    defects.iter().fold((0.0, 0.0), |(l1, linf), d| {
        (l1 + d.abs().sum(), f64::max(linf, d.abs().max()))
    })
}

fn clamp_input(u: &InputVector, lo: &InputVector, hi: &InputVector) -> InputVector {
    InputVector::from_fn(|j, _| u[j].clamp(lo[j], hi[j]))
}

fn merit_at(ocp: &Ocp, xs: &[StateVector], us: &[InputVector], mu: f64) -> (f64, f64, f64) {
    let n = ocp.horizon();
    let cost = ocp.cost(xs, us);
    let defects: Vec<StateVector> = (0..n).map(|k| ocp.defect(k, xs, us)).collect();
    let (l1, linf) = defect_norms(&defects);
    (cost + mu * l1, cost, linf)
}

fn kkt_residual(
    ocp: &Ocp,
    us: &[InputVector],
    grad: &(Vec<StateVector>, Vec<InputVector>),
    lin: &Linearization,
    lambda: &[StateVector],
) -> f64 {
    let n = ocp.horizon();
    let mut res: f64 = 0.0;
    for k in 1..=n {
        let mut g = grad.0[k] - lambda[k];
        if k < n {
            g += lin.a[k].transpose() * lambda[k + 1];
        }
        res = res.max(g.abs().max());
    }
    for k in 0..n {
        let g = grad.1[k] + lin.b[k].transpose() * lambda[k + 1];
        for j in 0..INPUT_DIM {
            let at_lower = us[k][j] <= ocp.lower[j] + 1e-12;
            let at_upper = us[k][j] >= ocp.upper[j] - 1e-12;
            let gj = if (at_lower && g[j] > 0.0) || (at_upper && g[j] < 0.0) {
                0.0
            } else {
                g[j]
            };
            res = res.max(gj.abs());
        }
    }
    res
}

/// Runs the SQP from the given guess. The first knot is pinned to
/// `ocp.x_init`; inputs are projected into the box before the first
/// iteration.
pub fn solve(
    ocp: &Ocp,
    states_guess: &[StateVector],
    inputs_guess: &[InputVector],
    settings: &SqpSettings,
) -> SqpOutcome {
    let n = ocp.horizon();
    assert_eq!(states_guess.len(), n + 1);
    assert_eq!(inputs_guess.len(), n);
    let mut xs = states_guess.to_vec();
    xs[0] = ocp.x_init.to_vector();
    let mut us: Vec<InputVector> = inputs_guess
        .iter()
        .map(|u| clamp_input(u, &ocp.lower, &ocp.upper))
        .collect();

    let mut history = Vec::new();
    let mut mu: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut costates = vec![StateVector::zeros(); n + 1];
    let mut damping = 0.0;

    for iter in 0..settings.max_iterations {
        iterations = iter;
        let lin = linearize(ocp, &xs, &us);
        let grad = ocp.gradient(&xs, &us);
        let (l1, linf) = defect_norms(&lin.defects);

        let stages: Vec<LqStage> = (0..n)
            .map(|k| LqStage {
                a: lin.a[k],
                b: lin.b[k],
                c: lin.defects[k],
                q: ocp.gauss_newton_state_hessian(&xs[k]) + StateMatrix::identity() * damping,
                q_lin: grad.0[k],
                r: ocp.r + Matrix4::identity() * damping,
                r_lin: grad.1[k],
                lower: ocp.lower - us[k],
                upper: ocp.upper - us[k],
            })
            .collect();
        let terminal = ocp.p + StateMatrix::identity() * damping;
        let qp = lq::solve(&stages, (&terminal, &grad.0[n]), &StateVector::zeros());
        costates.clone_from(&qp.lambda);
        kkt = kkt_residual(ocp, &us, &grad, &lin, &qp.lambda);

        let lambda_max = qp
            .lambda
            .iter()
            .skip(1)
            .fold(0.0f64, |m, l| m.max(l.abs().max()));
        if mu == 0.0 {
            mu = (2.0 * lambda_max).max(1.0);
        } else if 1.1 * lambda_max > mu {
            mu = 2.0 * lambda_max;
        }
        let cost = ocp.cost(&xs, &us);
        let merit0 = cost + mu * l1;
        if history.is_empty() {
            history.push(merit0);
        }

        if kkt < settings.kkt_tolerance && linf < settings.defect_tolerance {
            converged = true;
            break;
        }

        let slope: f64 = (0..=n).map(|k| grad.0[k].dot(&qp.dx[k])).sum::<f64>()
            + (0..n).map(|k| grad.1[k].dot(&qp.du[k])).sum::<f64>()
            - mu * l1;
        let curvature: f64 = (0..n)
            .map(|k| {
                qp.dx[k].dot(&(stages[k].q * qp.dx[k])) + qp.du[k].dot(&(stages[k].r * qp.du[k]))
            })
            .sum::<f64>()
            + qp.dx[n].dot(&(terminal * qp.dx[n]));
        let predicted = -(slope + 0.5 * curvature);

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let trial_x: Vec<StateVector> = xs
                .iter()
                .zip(&qp.dx)
                .map(|(x, d)| {
                    let mut t = x + alpha * d;
                    t[YAW_INDEX] = wrap_angle(t[YAW_INDEX]);
                    t
                })
                .collect();
            let trial_u: Vec<InputVector> = us
                .iter()
                .zip(&qp.du)
                .map(|(u, d)| clamp_input(&(u + alpha * d), &ocp.lower, &ocp.upper))
                .collect();
            let (merit, _, _) = merit_at(ocp, &trial_x, &trial_u, mu);
            if merit.is_finite() && merit <= merit0 + 1e-4 * alpha * slope.min(0.0) {
                accepted = Some((trial_x, trial_u, merit));
                break;
            }
            alpha *= 0.5;
        }
        let Some((tx, tu, merit)) = accepted else {
            // no progress possible along the QP direction
            converged = linf < settings.defect_tolerance;
            break;
        };
        // Levenberg-Marquardt style damping driven by model agreement
        let ratio = if predicted > 0.0 {
            (merit0 - merit) / predicted
        } else {
            1.0
        };
        if alpha < 1.0 || ratio < 0.25 {
            damping = (damping * 10.0).clamp(1e-4, 1e6);
        } else if ratio > 0.75 {
            damping = if damping < 1e-6 { 0.0 } else { damping / 10.0 };
        }
        xs = tx;
        us = tu;
        history.push(merit);
        iterations = iter + 1;

        let w = settings.stall_window;
        if history.len() > w {
            let tail = &history[history.len() - w - 1..];
            let stalled = tail
                .windows(2)
                .all(|p| p[0] - p[1] < settings.stall_tolerance);
            if stalled {
                let (_, _, linf) = merit_at(ocp, &xs, &us, mu);
                if linf < settings.defect_tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }

    let (_, final_cost, max_defect) = merit_at(ocp, &xs, &us, 0.0);
    SqpOutcome {
        states: xs,
        inputs: us,
        costates,
        report: SolveReport {
            iterations,
            final_cost,
            max_dynamics_defect: max_defect,
            converged,
            cost_history: history,
            kkt_residual: kkt,
        },
    }
}
