//! PBVS comparison reference: straight-line pose interpolation between
//! start and goal, handed to the same tracking controller.

use nalgebra::Vector3;

use crate::dynamics::{hover_input, UavState, VehicleParams};
use crate::geometry::{wrap_angle, EulerAngles, Pose};
use crate::trajectory::Trajectory;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedReference {
    pub poses: Vec<Pose>,
    pub dt: f64,
    pub t0: f64,
}

pub fn interpolate_poses(
    start: &Pose,
    goal: &Pose,
    steps: usize,
    t0: f64,
    tf: f64,
) -> Result<InterpolatedReference, Error> {
    if steps < 1 {
        return Err(Error::InvalidInput(
            "interpolation needs at least one step".into(),
        ));
    }
    if !(tf > t0) {
        return Err(Error::InvalidInput(format!(
            "tf ({tf}) must exceed t0 ({t0})"
        )));
    }
    let dpsi = wrap_angle(goal.orientation.yaw - start.orientation.yaw);
    let poses = (0..=steps)
        .map(|k| {
            let s = k as f64 / steps as f64;
            let position = if k == steps {
                goal.position
            } else {
                start.position + (goal.position - start.position) * s
            };
            let yaw = if k == steps {
                goal.orientation.yaw
            } else {
                start.orientation.yaw + s * dpsi
            };
            Pose::new(position, EulerAngles::yaw_only(wrap_angle(yaw)))
        })
        .collect();
    Ok(InterpolatedReference {
        poses,
        dt: (tf - t0) / steps as f64,
        t0,
    })
}

/// Central-difference velocities at interior knots, rest at both ends,
/// hover inputs throughout.
pub fn reference_to_trajectory(
    reference: &InterpolatedReference,
    params: &VehicleParams,
) -> Trajectory {
    let n = reference.poses.len() - 1;
    let states = (0..=n)
        .map(|k| {
            let pose = &reference.poses[k];
            let velocity = if k == 0 || k == n {
                Vector3::zeros()
            } else {
                (reference.poses[k + 1].position - reference.poses[k - 1].position)
                    / (2.0 * reference.dt)
            };
            UavState::new(pose.position, pose.orientation, velocity)
        })
        .collect();
    let mut traj = Trajectory::new(states, vec![hover_input(params); n], reference.dt)
        .expect("interpolant has a valid shape");
    traj.t0 = reference.t0;
    traj
}
