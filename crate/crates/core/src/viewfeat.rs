//! Geometric view features from the hips and shoulders.
//!
//! Each frame yields a 10-vector `[v_hip, v_shoulder, z_hip_L, z_hip_R,
//! z_shoulder_L, z_shoulder_R]` where the width vectors are left-minus-right
//! joint differences and the depths are camera-frame z coordinates.

use crate::geometry::schema::{HIP_L, HIP_R, SHOULDER_L, SHOULDER_R};
use crate::geometry::{FrameTag, Skeleton};
use crate::mat3::{self, Vec3};
use crate::scalar::Real;

/// Width of a flattened view feature.
pub const VIEW_FEATURE_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGeomFeature<T> {
    pub v_hip: Vec3<T>,
    pub v_shoulder: Vec3<T>,
    pub z_hip_l: T,
    pub z_hip_r: T,
    pub z_shoulder_l: T,
    pub z_shoulder_r: T,
}

impl<T: Real> ViewGeomFeature<T> {
    pub fn to_array(&self) -> [T; VIEW_FEATURE_DIM] {
        let [a, b, c] = self.v_hip;
        let [d, e, f] = self.v_shoulder;
        [a, b, c, d, e, f, self.z_hip_l, self.z_hip_r, self.z_shoulder_l, self.z_shoulder_r]
    }
}

/// The `T×10` matrix of per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGeomSequence<T> {
    pub rows: Vec<ViewGeomFeature<T>>,
}

impl<T: Real> ViewGeomSequence<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major `T×10` data.
    pub fn to_flat(&self) -> Vec<T> {
        self.rows.iter().flat_map(|r| r.to_array()).collect()
    }
}

pub fn extract_view_feature<T: Real>(s: &Skeleton<T>) -> ViewGeomFeature<T> {
    debug_assert_eq!(s.frame, FrameTag::Camera, "view features need camera-frame depths");
    let (hl, hr, sl, sr) = (s.joints[HIP_L], s.joints[HIP_R], s.joints[SHOULDER_L], s.joints[SHOULDER_R]);
    ViewGeomFeature {
        v_hip: mat3::sub(hl, hr),
        v_shoulder: mat3::sub(sl, sr),
        z_hip_l: hl[2],
        z_hip_r: hr[2],
        z_shoulder_l: sl[2],
        z_shoulder_r: sr[2],
    }
}

pub fn extract_sequence<T: Real>(k3d: &[Skeleton<T>]) -> ViewGeomSequence<T> {
    assert!(!k3d.is_empty(), "view feature sequence needs at least one frame");
    ViewGeomSequence { rows: k3d.iter().map(extract_view_feature).collect() }
}

/// Feature of a flattened `J×3` keypoint row.
pub(crate) fn feature_from_flat<T: Real>(k3d: &[T], out: &mut [T]) {
    let j = |idx: usize, c: usize| k3d[3 * idx + c];
    for c in 0..3 {
        out[c] = j(HIP_L, c) - j(HIP_R, c);
        out[3 + c] = j(SHOULDER_L, c) - j(SHOULDER_R, c);
    }
    out[6] = j(HIP_L, 2);
    out[7] = j(HIP_R, 2);
    out[8] = j(SHOULDER_L, 2);
    out[9] = j(SHOULDER_R, 2);
}

/// Accumulate the vector-Jacobian product of [`feature_from_flat`] into
/// `grad_k3d`.
pub(crate) fn feature_from_flat_backward<T: Real>(grad_feat: &[T], grad_k3d: &mut [T]) {
    for c in 0..3 {
        grad_k3d[3 * HIP_L + c] += grad_feat[c];
        grad_k3d[3 * HIP_R + c] -= grad_feat[c];
        grad_k3d[3 * SHOULDER_L + c] += grad_feat[3 + c];
        grad_k3d[3 * SHOULDER_R + c] -= grad_feat[3 + c];
    }
    grad_k3d[3 * HIP_L + 2] += grad_feat[6];
    grad_k3d[3 * HIP_R + 2] += grad_feat[7];
    grad_k3d[3 * SHOULDER_L + 2] += grad_feat[8];
    grad_k3d[3 * SHOULDER_R + 2] += grad_feat[9];
}
