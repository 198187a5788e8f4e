//! Rotations, frame chains and the pinhole camera.
//!
//! Attitude is carried as ZYX Euler angles (roll about x, then pitch about
//! y, then yaw about z) and expanded to a body-to-inertial rotation matrix
//! whenever a frame transform is needed. The inertial frame is z-up; the
//! camera optical frame is z-forward, x-right, y-down.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2, Vector3};

use crate::dynamics::UavState;

/// Pixel depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("gimbal lock: |r[2][0]| = {0} is too close to 1")]
    GimbalLock(f64),
    #[error("point is behind the camera (depth {0} m)")]
    BehindCamera(f64),
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return 2*pi for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub const fn yaw_only(yaw: f64) -> Self {
        Self::new(0.0, 0.0, yaw)
    }

    pub fn normalized(self) -> Self {
        Self {
            yaw: wrap_angle(self.yaw),
            ..self
        }
    }

    pub fn to_rotation(self) -> Rotation3<f64> {
        euler_to_rotmat(self)
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-inertial rotation `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_rotmat(e: EulerAngles) -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll))
}

/// Partial derivatives of [`euler_to_rotmat`] with respect to roll, pitch
/// and yaw, in that order.
pub fn euler_rotation_partials(e: EulerAngles) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(e.roll), rot_y(e.pitch), rot_z(e.yaw));
    [
        rz * ry * d_rot_x(e.roll),
        rz * d_rot_y(e.pitch) * rx,
        d_rot_z(e.yaw) * ry * rx,
    ]
}

pub fn rotmat_to_euler(r: &Rotation3<f64>) -> Result<EulerAngles, GeometryError> {
    let m = r.matrix();
    let r20 = m[(2, 0)];
    if r20.abs() >= 1.0 - 1e-9 {
        return Err(GeometryError::GimbalLock(r20.abs()));
    }
    let pitch = (-r20).asin();
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(EulerAngles::new(roll, pitch, wrap_angle(yaw)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: EulerAngles,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: EulerAngles) -> Self {
        Self {
            position,
            orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(format!("cx={} outside (0, {})", self.cx, self.width));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(format!("cy={} outside (0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.x < self.width as f64
            && pixel.y >= 0.0
            && pixel.y < self.height as f64
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.width as f64).hypot(self.height as f64)
    }
}

impl Default for CameraIntrinsics {
    /// 752x480 global-shutter sensor with a wide lens.
    fn default() -> Self {
        Self {
            fx: 460.0,
            fy: 460.0,
            cx: 376.0,
            cy: 240.0,
            width: 752,
            height: 480,
        }
    }
}

/// Camera pose in the body frame: origin `translation` and the
/// camera-to-body rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    /// A camera looking along body +x, mounted with the extra body-frame
    /// rotation `mount` (positive pitch tilts the view downwards).
    pub fn forward_looking(translation: Vector3<f64>, mount: EulerAngles) -> Self {
        // columns: optical x, y, z expressed in a forward-looking body frame
        let optical = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let rotation = Rotation3::from_matrix_unchecked(euler_to_rotmat(mount).matrix() * optical);
        Self {
            translation,
            rotation,
        }
    }

    /// Heading of the optical axis in the body x-y plane.
    pub fn heading_offset(&self) -> f64 {
        let axis = self.rotation * Vector3::z();
        if axis.x.abs() < 1e-12 && axis.y.abs() < 1e-12 {
            0.0
        } else {
            axis.y.atan2(axis.x)
        }
    }
}

impl Default for CameraExtrinsics {
    fn default() -> Self {
        Self::forward_looking(
            Vector3::new(0.1, 0.0, -0.05),
            EulerAngles::new(0.0, 0.3, 0.0),
        )
    }
}

/// Camera-frame coordinates of a world point seen from `state`.
pub fn world_to_camera(
    state: &UavState,
    ext: &CameraExtrinsics,
    point_world: &Vector3<f64>,
) -> Vector3<f64> {
    let r_ib = euler_to_rotmat(state.attitude);
    let in_body = r_ib.inverse() * (point_world - state.position);
    ext.rotation.inverse() * (in_body - ext.translation)
}

pub fn project(
    point_cam: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    if point_cam.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(point_cam.z));
    }
    Ok(Vector2::new(
        intr.fx * point_cam.x / point_cam.z + intr.cx,
        intr.fy * point_cam.y / point_cam.z + intr.cy,
    ))
}

/// Diagonal pixel-error weight. The axis along the larger image dimension
/// receives `base_weight`; the other axis is scaled up by the aspect ratio
/// so that errors along the short side are penalized more.
pub fn build_pixel_weight(intr: &CameraIntrinsics, base_weight: f64) -> Matrix2<f64> {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let (hx, hy) = if w >= h {
        (base_weight, base_weight * w / h)
    } else {
        (base_weight * h / w, base_weight)
    };
    Matrix2::new(hx, 0.0, 0.0, hy)
}
