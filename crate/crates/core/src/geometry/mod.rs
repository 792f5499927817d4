//! Skeletons, cameras and deterministic synthetic multi-view motion data.

mod camera;
mod dataset;
mod render;
pub mod schema;
mod synth;

use serde::{Deserialize, Serialize};

use crate::mat3::{self, Vec3};
use crate::scalar::Real;

pub use camera::{horizontal_flip, project_perspective, world_to_camera, CameraPose};
pub use dataset::{read_dataset, write_dataset, write_sample, SCHEMA_VERSION};
pub use render::{render_views, NoiseSpec, ViewRecord, MultiViewSample};
pub use schema::{JointSchema, NUM_JOINTS};
pub use synth::{synth_motion, MotionClip, MotionKind, NUM_POSE_PARAMS};

/// Coordinate frame a skeleton is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    World,
    Camera,
}

/// One frame of 17 joint positions in meters.
///
/// Axes follow the camera convention: x right, y down, z forward. In the world
/// frame the subject faces −z, so its left side is +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton<T> {
    pub joints: [Vec3<T>; NUM_JOINTS],
    pub frame: FrameTag,
}

impl<T: Real> Skeleton<T> {
    pub fn new(joints: [Vec3<T>; NUM_JOINTS], frame: FrameTag) -> Self {
        Self { joints, frame }
    }

    pub fn zeros(frame: FrameTag) -> Self {
        Self { joints: [[T::zero(); 3]; NUM_JOINTS], frame }
    }

    #[inline]
    pub fn joint(&self, j: usize) -> Vec3<T> {
        self.joints[j]
    }

    pub fn hip_l(&self) -> Vec3<T> {
        self.joints[schema::HIP_L]
    }

    pub fn hip_r(&self) -> Vec3<T> {
        self.joints[schema::HIP_R]
    }

    pub fn shoulder_l(&self) -> Vec3<T> {
        self.joints[schema::SHOULDER_L]
    }

    pub fn shoulder_r(&self) -> Vec3<T> {
        self.joints[schema::SHOULDER_R]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn translated(&self, offset: Vec3<T>) -> Self {
        let mut out = self.clone();
        for p in out.joints.iter_mut() {
            *p = mat3::add(*p, offset);
        }
        out
    }

    /// Pelvis-centered copy.
    pub fn root_relative(&self) -> Self {
        let root = self.joints[schema::PELVIS];
        self.translated([-root[0], -root[1], -root[2]])
    }

    /// Reflect across the x = 0 plane and swap left/right labels.
    pub fn mirrored(&self) -> Self {
        let schema = JointSchema::standard();
        let mut joints = self.joints;
        for (j, p) in joints.iter_mut().enumerate() {
            let src = self.joints[schema.mirror(j)];
            *p = [-src[0], src[1], src[2]];
        }
        Self { joints, frame: self.frame }
    }

    /// Row-major `J×3` flattening.
    pub fn to_flat(&self) -> Vec<T> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[T], frame: FrameTag) -> Self {
        assert_eq!(flat.len(), NUM_JOINTS * 3, "flat skeleton must have J*3 entries");
        let mut joints = [[T::zero(); 3]; NUM_JOINTS];
        for (j, p) in joints.iter_mut().enumerate() {
            p.copy_from_slice(&flat[3 * j..3 * j + 3]);
        }
        Self { joints, frame }
    }

    pub fn cast<U: Real>(&self) -> Skeleton<U> {
        let mut joints = [[U::zero(); 3]; NUM_JOINTS];
        for (dst, src) in joints.iter_mut().zip(&self.joints) {
            for k in 0..3 {
                dst[k] = U::lit(src[k].as_f64());
            }
        }
        Skeleton { joints, frame: self.frame }
    }
}

/// Projected 2D joints with per-joint detector confidence.
///
/// A confidence of 0 marks an occluded joint whose coordinates carry no
/// information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D<T> {
    pub points: [[T; 2]; NUM_JOINTS],
    pub confidence: [T; NUM_JOINTS],
}

impl<T: Real> Keypoints2D<T> {
    pub fn is_visible(&self, j: usize) -> bool {
        self.confidence[j] > T::zero()
    }
}

/// Body-frame pose parameters: one angle per articulated degree of freedom.
/// Contains no global rotation or translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPose<T> {
    pub angles: [T; NUM_POSE_PARAMS],
    pub root_free: bool,
}
