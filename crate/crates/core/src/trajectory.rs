//! Time-stamped state/input sequences and their CSV form.

use std::fmt::Write as _;

use crate::dynamics::{ControlInput, UavState};
use crate::geometry::{wrap_angle, EulerAngles};
use crate::Error;

pub const TRAJECTORY_HEADER: &str =
    "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,u_roll,u_pitch,u_yawrate,u_thrust";

/// `states.len() == inputs.len() + 1`; input `k` is held over
/// `[t0 + k*dt, t0 + (k+1)*dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<UavState>,
    pub inputs: Vec<ControlInput>,
    pub dt: f64,
    pub t0: f64,
}

impl Trajectory {
    pub fn new(states: Vec<UavState>, inputs: Vec<ControlInput>, dt: f64) -> Result<Self, Error> {
        let traj = Self {
            states,
            inputs,
            dt,
            t0: 0.0,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.states.len() != self.inputs.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.inputs.len() + 1,
                found: self.states.len(),
            });
        }
        if self.inputs.is_empty() {
            return Err(Error::InvalidInput(
                "trajectory needs at least one step".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "trajectory step must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    /// Linear interpolation between knots (shortest arc for yaw), clamped to
    /// the first/last knot outside the time span.
    pub fn sample_state(&self, t: f64) -> UavState {
        let s = (t - self.t0) / self.dt;
        let n = self.steps();
        if s <= 0.0 {
            return self.states[0];
        }
        if s >= n as f64 {
            return self.states[n];
        }
        let k = (s.floor() as usize).min(n - 1);
        let w = s - k as f64;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        UavState {
            position: a.position.lerp(&b.position, w),
            attitude: EulerAngles::new(
                lerp(a.attitude.roll, b.attitude.roll),
                lerp(a.attitude.pitch, b.attitude.pitch),
                wrap_angle(a.attitude.yaw + w * wrap_angle(b.attitude.yaw - a.attitude.yaw)),
            ),
            velocity: a.velocity.lerp(&b.velocity, w),
        }
    }

    /// Zero-order-hold input at `t`, `None` past the end.
    pub fn input_at(&self, t: f64) -> Option<ControlInput> {
        let s = (t - self.t0) / self.dt;
        if s >= self.steps() as f64 {
            None
        } else {
            Some(self.inputs[(s.max(0.0).floor() as usize).min(self.steps() - 1)])
        }
    }

    /// One row per knot. The final knot has no input of its own and repeats
    /// the last one.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.states.len() + 1));
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for (k, s) in self.states.iter().enumerate() {
            let u = self.inputs[k.min(self.steps() - 1)];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.knot_time(k),
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
                u.thrust
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing trajectory header".into(),
                })
            }
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_row(line, 14, i + 1)?;
            times.push(v[0]);
            states.push(UavState::new(
                nalgebra::Vector3::new(v[1], v[2], v[3]),
                EulerAngles::new(v[4], v[5], v[6]),
                nalgebra::Vector3::new(v[7], v[8], v[9]),
            ));
            inputs.push(ControlInput::new(v[10], v[11], v[12], v[13]));
        }
        if states.len() < 2 {
            return Err(Error::Parse {
                line: 2,
                message: "trajectory needs at least two knots".into(),
            });
        }
        inputs.pop();
        let dt = times[1] - times[0];
        let mut traj = Trajectory::new(states, inputs, dt)?;
        traj.t0 = times[0];
        Ok(traj)
    }
}

pub(crate) fn parse_row(line: &str, columns: usize, line_no: usize) -> Result<Vec<f64>, Error> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != columns {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {columns} columns, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad number {f:?}: {e}"),
            })
        })
        .collect()
}
