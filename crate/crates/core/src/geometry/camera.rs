use serde::{Deserialize, Serialize};

use super::{FrameTag, JointSchema, Keypoints2D, Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::mat3::{self, Mat3};
use crate::scalar::Real;

/// Pinhole camera orbiting the world origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose<T> {
    /// Radians in `[0, 2π)`, about the world vertical axis.
    pub azimuth: T,
    /// Radians in `[−π/2, π/2]`; positive looks down on the subject.
    pub elevation: T,
    /// Meters from the world origin.
    pub distance: T,
    pub focal_px: T,
    pub principal_point: [T; 2],
    pub image_size: [u32; 2],
}

impl<T: Real> CameraPose<T> {
    pub const DEFAULT_DISTANCE: f64 = 4.5;
    pub const DEFAULT_FOCAL: f64 = 1000.0;
    pub const DEFAULT_IMAGE: [u32; 2] = [1280, 720];

    /// Default intrinsics at the given orbit angles. The principal point sits
    /// at the exact image center so a horizontal image flip is a mirror of the
    /// camera-frame x axis.
    pub fn orbit(azimuth: T, elevation: T) -> Self {
        let [w, h] = Self::DEFAULT_IMAGE;
        Self {
            azimuth: wrap_angle(azimuth),
            elevation,
            distance: T::lit(Self::DEFAULT_DISTANCE),
            focal_px: T::lit(Self::DEFAULT_FOCAL),
            principal_point: [T::lit((w as f64 - 1.0) / 2.0), T::lit((h as f64 - 1.0) / 2.0)],
            image_size: [w, h],
        }
    }

    /// World-to-camera rotation `R_x(elevation) · R_y(azimuth)`.
    pub fn rotation(&self) -> Mat3<T> {
        mat3::mul(&mat3::rot_x(self.elevation), &mat3::rot_y(self.azimuth))
    }

    pub fn image_width(&self) -> T {
        T::lit(self.image_size[0] as f64)
    }

    pub fn image_height(&self) -> T {
        T::lit(self.image_size[1] as f64)
    }
}

fn wrap_angle<T: Real>(a: T) -> T {
    let tau = T::lit(std::f64::consts::TAU);
    let r = a % tau;
    if r < T::zero() {
        r + tau
    } else {
        r
    }
}

/// Rigid world-to-camera transform: rotate about the vertical axis by the
/// azimuth, tilt by the elevation, then push the subject `distance` meters
/// along the optical axis.
pub fn world_to_camera<T: Real>(s: &Skeleton<T>, cam: &CameraPose<T>) -> Skeleton<T> {
    let r = cam.rotation();
    let offset = [T::zero(), T::zero(), cam.distance];
    let mut joints = s.joints;
    for p in joints.iter_mut() {
        *p = mat3::add(mat3::mul_vec(&r, *p), offset);
    }
    Skeleton { joints, frame: FrameTag::Camera }
}

/// Pinhole projection `u = f·x/z + cx`, `v = f·y/z + cy` with full confidence.
pub fn project_perspective<T: Real>(s: &Skeleton<T>, cam: &CameraPose<T>) -> Result<Keypoints2D<T>> {
    let mut points = [[T::zero(); 2]; NUM_JOINTS];
    for (j, (p, out)) in s.joints.iter().zip(points.iter_mut()).enumerate() {
        if !(p[2] > T::zero()) {
            return Err(Error::NonPositiveDepth { joint: j, depth: p[2].as_f64() });
        }
        out[0] = cam.focal_px * p[0] / p[2] + cam.principal_point[0];
        out[1] = cam.focal_px * p[1] / p[2] + cam.principal_point[1];
    }
    Ok(Keypoints2D { points, confidence: [T::one(); NUM_JOINTS] })
}

/// Mirror an image horizontally: `u' = width − 1 − u`, with left/right joint
/// slots (and their confidences) swapped.
pub fn horizontal_flip<T: Real>(kp: &Keypoints2D<T>, image_width: T) -> Keypoints2D<T> {
    let schema = JointSchema::standard();
    let last = image_width - T::one();
    let mut out = kp.clone();
    for j in 0..NUM_JOINTS {
        let src = schema.mirror(j);
        out.points[j] = [last - kp.points[src][0], kp.points[src][1]];
        out.confidence[j] = kp.confidence[src];
    }
    out
}
