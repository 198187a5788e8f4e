//! Multirotor model: point-mass translational dynamics with a lumped
//! rotor-drag term and first-order roll/pitch inner loops.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::geometry::{euler_rotation_partials, euler_to_rotmat, wrap_angle, EulerAngles};

pub const STATE_DIM: usize = 9;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Index of yaw inside [`StateVector`].
pub const YAW_INDEX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UavState {
    pub position: Vector3<f64>,
    pub attitude: EulerAngles,
    pub velocity: Vector3<f64>,
}

impl UavState {
    pub fn new(position: Vector3<f64>, attitude: EulerAngles, velocity: Vector3<f64>) -> Self {
        Self {
            position,
            attitude,
            velocity,
        }
    }

    pub fn at_rest(position: Vector3<f64>, yaw: f64) -> Self {
        Self::new(position, EulerAngles::yaw_only(yaw), Vector3::zeros())
    }

    /// Layout: position, (roll, pitch, yaw), velocity.
    pub fn to_vector(&self) -> StateVector {
        let a = &self.attitude;
        StateVector::from_column_slice(&[
            self.position.x,
            self.position.y,
            self.position.z,
            a.roll,
            a.pitch,
            a.yaw,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        ])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            attitude: EulerAngles::new(v[3], v[4], v[5]),
            velocity: Vector3::new(v[6], v[7], v[8]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Difference `a - b` with the yaw component wrapped.
pub fn state_difference(a: &StateVector, b: &StateVector) -> StateVector {
    let mut d = a - b;
    d[YAW_INDEX] = wrap_angle(d[YAW_INDEX]);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub roll: f64,
    pub pitch: f64,
    pub yaw_rate: f64,
    /// Collective thrust along body z, newtons.
    pub thrust: f64,
}

impl ControlInput {
    pub const fn new(roll: f64, pitch: f64, yaw_rate: f64, thrust: f64) -> Self {
        Self {
            roll,
            pitch,
            yaw_rate,
            thrust,
        }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.roll, self.pitch, self.yaw_rate, self.thrust)
    }

    pub fn from_vector(v: &InputVector) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub drag_coeff: f64,
    pub tau_roll: f64,
    pub tau_pitch: f64,
    pub gain_roll: f64,
    pub gain_pitch: f64,
    pub external_force: Vector3<f64>,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 2.8,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            drag_coeff: 0.016,
            tau_roll: 0.18,
            tau_pitch: 0.18,
            gain_roll: 1.0,
            gain_pitch: 1.0,
            external_force: Vector3::zeros(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.tau_roll > 0.0 && self.tau_pitch > 0.0) {
            return Err("inner-loop time constants must be positive".into());
        }
        if !(self.drag_coeff >= 0.0) {
            return Err(format!(
                "drag coefficient must be non-negative, got {}",
                self.drag_coeff
            ));
        }
        Ok(())
    }

    /// Copy with `force` added to the external force.
    pub fn with_extra_force(&self, force: Vector3<f64>) -> Self {
        Self {
            external_force: self.external_force + force,
            ..*self
        }
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity.norm()
    }
}

/// Lumped blade-flapping and induced-drag force, body frame.
pub fn aero_force(
    thrust: f64,
    params: &VehicleParams,
    r: &Matrix3<f64>,
    v: &Vector3<f64>,
) -> Vector3<f64> {
    let v_body = r.transpose() * v;
    thrust * params.drag_coeff * Vector3::new(v_body.x, v_body.y, 0.0)
}

fn drag_matrix(params: &VehicleParams) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(params.drag_coeff, params.drag_coeff, 0.0))
}

pub fn state_derivative(x: &UavState, u: &ControlInput, params: &VehicleParams) -> StateVector {
    let r = *euler_to_rotmat(x.attitude).matrix();
    let body_force =
        Vector3::new(0.0, 0.0, u.thrust) - aero_force(u.thrust, params, &r, &x.velocity);
    let accel = (r * body_force + params.external_force) / params.mass + params.gravity;
    let a = &x.attitude;
    let mut d = StateVector::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&x.velocity);
    d[3] = (params.gain_roll * u.roll - a.roll) / params.tau_roll;
    d[4] = (params.gain_pitch * u.pitch - a.pitch) / params.tau_pitch;
    d[5] = u.yaw_rate;
    d.fixed_rows_mut::<3>(6).copy_from(&accel);
    d
}

fn derivative_vec(x: &StateVector, u: &InputVector, params: &VehicleParams) -> StateVector {
    state_derivative(
        &UavState::from_vector(x),
        &ControlInput::from_vector(u),
        params,
    )
}

/// Continuous-time Jacobians `(df/dx, df/du)`.
pub fn derivative_jacobians(
    x: &StateVector,
    u: &InputVector,
    params: &VehicleParams,
) -> (StateMatrix, InputMatrix) {
    let att = EulerAngles::new(x[3], x[4], x[5]);
    let r = *euler_to_rotmat(att).matrix();
    let partials = euler_rotation_partials(att);
    let v = Vector3::new(x[6], x[7], x[8]);
    let thrust = u[3];
    let kd = drag_matrix(params);
    let m = params.mass;

    let mut fx = StateMatrix::zeros();
    fx.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&Matrix3::identity());
    fx[(3, 3)] = -1.0 / params.tau_roll;
    fx[(4, 4)] = -1.0 / params.tau_pitch;
    let drag_map = r * kd * r.transpose();
    fx.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(-thrust / m * drag_map));
    let e3 = Vector3::z();
    for (i, dr) in partials.iter().enumerate() {
        let d_drag = dr * kd * r.transpose() + r * kd * dr.transpose();
        let col = (dr * e3 * thrust - thrust * d_drag * v) / m;
        fx.fixed_view_mut::<3, 1>(6, 3 + i).copy_from(&col);
    }

    let mut fu = InputMatrix::zeros();
    fu[(3, 0)] = params.gain_roll / params.tau_roll;
    fu[(4, 1)] = params.gain_pitch / params.tau_pitch;
    fu[(5, 2)] = 1.0;
    let col = (r * e3 - drag_map * v) / m;
    fu.fixed_view_mut::<3, 1>(6, 3).copy_from(&col);
    (fx, fu)
}

/// Classical RK4 with zero-order-hold input; yaw is wrapped afterwards.
pub fn rk4_step(x: &UavState, u: &ControlInput, dt: f64, params: &VehicleParams) -> UavState {
    let mut next = rk4_vec(&x.to_vector(), &u.to_vector(), dt, params);
    next[YAW_INDEX] = wrap_angle(next[YAW_INDEX]);
    UavState::from_vector(&next)
}

fn rk4_vec(x: &StateVector, u: &InputVector, dt: f64, params: &VehicleParams) -> StateVector {
    let k1 = derivative_vec(x, u, params);
    let k2 = derivative_vec(&(x + 0.5 * dt * k1), u, params);
    let k3 = derivative_vec(&(x + 0.5 * dt * k2), u, params);
    let k4 = derivative_vec(&(x + dt * k3), u, params);
    x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// One RK4 step together with its exact sensitivities with respect to the
/// initial state and the held input. The returned state is not yaw-wrapped.
pub fn rk4_step_jacobians(
    x: &StateVector,
    u: &InputVector,
    dt: f64,
    params: &VehicleParams,
) -> (StateVector, StateMatrix, InputMatrix) {
    let h = dt;
    let eye = StateMatrix::identity();

    let k1 = derivative_vec(x, u, params);
    let (a1, b1) = derivative_jacobians(x, u, params);
    let (dk1x, dk1u) = (a1, b1);

    let x2 = x + 0.5 * h * k1;
    let k2 = derivative_vec(&x2, u, params);
    let (a2, b2) = derivative_jacobians(&x2, u, params);
    let dk2x = a2 * (eye + 0.5 * h * dk1x);
    let dk2u = a2 * (0.5 * h * dk1u) + b2;

    let x3 = x + 0.5 * h * k2;
    let k3 = derivative_vec(&x3, u, params);
    let (a3, b3) = derivative_jacobians(&x3, u, params);
    let dk3x = a3 * (eye + 0.5 * h * dk2x);
    let dk3u = a3 * (0.5 * h * dk2u) + b3;

    let x4 = x + h * k3;
    let k4 = derivative_vec(&x4, u, params);
    let (a4, b4) = derivative_jacobians(&x4, u, params);
    let dk4x = a4 * (eye + h * dk3x);
    let dk4u = a4 * (h * dk3u) + b4;

    let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let a = eye + h / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x);
    let b = h / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
    (next, a, b)
}

pub fn hover_input(params: &VehicleParams) -> ControlInput {
    ControlInput::new(0.0, 0.0, 0.0, params.weight())
}

/// Integrates over `duration` using steps no longer than `max_step`.
pub fn propagate(
    x: &UavState,
    u: &ControlInput,
    duration: f64,
    max_step: f64,
    params: &VehicleParams,
) -> UavState {
    let steps = (duration / max_step - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    (0..steps).fold(*x, |s, _| rk4_step(&s, u, dt, params))
}
