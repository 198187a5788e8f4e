//! Simulated target detector and goal-pose computation.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::UavState;
use crate::geometry::{
    euler_to_rotmat, project, world_to_camera, wrap_angle, CameraExtrinsics, CameraIntrinsics,
    EulerAngles, Pose,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetObservation {
    pub pixel: Vector2<f64>,
    /// Target position in the camera frame.
    pub position_cam: Vector3<f64>,
    /// Target yaw relative to the camera heading.
    pub yaw_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorNoise {
    pub sigma_pixel: f64,
    pub sigma_position: f64,
    pub sigma_yaw: f64,
    pub seed: u64,
}

impl DetectorNoise {
    pub fn noiseless() -> Self {
        Self {
            sigma_pixel: 0.0,
            sigma_position: 0.0,
            sigma_yaw: 0.0,
            seed: 0,
        }
    }
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            sigma_pixel: 2.0,
            sigma_position: 0.05,
            sigma_yaw: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSpec {
    /// Where the target should sit in the camera frame at the goal.
    pub desired_offset: Vector3<f64>,
    pub desired_pixel: Vector2<f64>,
}

/// Stand-in for a fiducial detector. The world pose of the target is known
/// to the simulator; its yaw is the heading a vehicle must adopt to face it
/// squarely.
#[derive(Debug, Clone)]
pub struct Detector {
    noise: DetectorNoise,
    rng: ChaCha8Rng,
}

impl Detector {
    pub fn new(noise: DetectorNoise) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
        }
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .expect("sigma is positive")
                .sample(&mut self.rng)
        } else {
            0.0
        }
    }

    /// Returns `None` when the noiseless projection is behind the camera or
    /// outside the image.
    pub fn detect(
        &mut self,
        target_pose_world: &Pose,
        state: &UavState,
        intr: &CameraIntrinsics,
        ext: &CameraExtrinsics,
    ) -> Option<TargetObservation> {
        let position_cam = world_to_camera(state, ext, &target_pose_world.position);
        let pixel = project(&position_cam, intr)
            .ok()
            .filter(|p| intr.contains(p))?;
        let yaw_rel = wrap_angle(
            target_pose_world.orientation.yaw - state.attitude.yaw - ext.heading_offset(),
        );

        let sp = self.noise.sigma_pixel;
        let spos = self.noise.sigma_position;
        let noisy_pixel = pixel + Vector2::new(self.gaussian(sp), self.gaussian(sp));
        let noisy_pos = position_cam
            + Vector3::new(
                self.gaussian(spos),
                self.gaussian(spos),
                self.gaussian(spos),
            );
        let noisy_yaw = yaw_rel + self.gaussian(self.noise.sigma_yaw);
        let max_u = (intr.width as f64).next_down();
        let max_v = (intr.height as f64).next_down();
        Some(TargetObservation {
            pixel: Vector2::new(
                noisy_pixel.x.clamp(0.0, max_u),
                noisy_pixel.y.clamp(0.0, max_v),
            ),
            position_cam: Vector3::new(
                noisy_pos.x,
                noisy_pos.y,
                noisy_pos.z.max(f64::MIN_POSITIVE),
            ),
            yaw_rel: wrap_angle(noisy_yaw),
        })
    }
}

/// Pose from which the observed target appears at `spec.desired_offset`
/// in the camera frame. Roll and pitch are zero at the goal; the heading is
/// the current heading composed with the camera mount and the observed
/// relative yaw.
pub fn compute_goal_pose(
    obs: &TargetObservation,
    state: &UavState,
    ext: &CameraExtrinsics,
    spec: &GoalSpec,
) -> Pose {
    let r_body = euler_to_rotmat(state.attitude);
    let target_world =
        state.position + r_body * (ext.rotation * obs.position_cam + ext.translation);
    let goal_yaw = wrap_angle(state.attitude.yaw + ext.heading_offset() + obs.yaw_rel);
    let goal_att = EulerAngles::yaw_only(goal_yaw);
    let r_goal = euler_to_rotmat(goal_att);
    let position = target_world - r_goal * (ext.rotation * spec.desired_offset + ext.translation);
    Pose::new(position, goal_att)
}
