//! Deterministic procedural motion: sinusoidal joint angles driven through
//! forward kinematics.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::*;
use super::{CanonicalPose, FrameTag, Skeleton};
use crate::mat3::{self, Mat3, Vec3};
use crate::scalar::Real;

/// Dimension of [`CanonicalPose::angles`].
pub const NUM_POSE_PARAMS: usize = 24;

const FPS: f64 = 30.0;

// Angle slots.
const SPINE_PITCH: usize = 0;
const SPINE_ROLL: usize = 1;
const SPINE_YAW: usize = 2;
const THORAX_PITCH: usize = 3;
const THORAX_ROLL: usize = 4;
const NECK_PITCH: usize = 5;
const NECK_YAW: usize = 6;
const HIP_L_FLEX: usize = 7;
const HIP_L_ABD: usize = 8;
const HIP_L_TWIST: usize = 9;
const HIP_R_FLEX: usize = 10;
const HIP_R_ABD: usize = 11;
const HIP_R_TWIST: usize = 12;
const KNEE_L_FLEX: usize = 13;
const KNEE_R_FLEX: usize = 14;
const SH_L_FLEX: usize = 15;
const SH_L_ABD: usize = 16;
const SH_L_TWIST: usize = 17;
const SH_R_FLEX: usize = 18;
const SH_R_ABD: usize = 19;
const SH_R_TWIST: usize = 20;
const ELBOW_L_FLEX: usize = 21;
const ELBOW_R_FLEX: usize = 22;
const NECK_ROLL: usize = 23;

/// Which angle slots drive a joint's local rotation `R_y(yaw)·R_x(pitch)·R_z(roll)`,
/// each with a sign so that positive values read naturally (flexion forward,
/// abduction outward).
#[derive(Clone, Copy)]
struct Dof {
    pitch: Option<(usize, f64)>,
    roll: Option<(usize, f64)>,
    yaw: Option<(usize, f64)>,
}

const NONE: Dof = Dof { pitch: None, roll: None, yaw: None };

fn joint_dofs() -> [Dof; NUM_JOINTS] {
    let mut d = [NONE; NUM_JOINTS];
    d[SPINE] = Dof { pitch: Some((SPINE_PITCH, 1.0)), roll: Some((SPINE_ROLL, 1.0)), yaw: Some((SPINE_YAW, 1.0)) };
    d[THORAX] = Dof { pitch: Some((THORAX_PITCH, 1.0)), roll: Some((THORAX_ROLL, 1.0)), yaw: None };
    d[NECK] = Dof { pitch: Some((NECK_PITCH, 1.0)), roll: Some((NECK_ROLL, 1.0)), yaw: Some((NECK_YAW, 1.0)) };
    d[HIP_L] = Dof { pitch: Some((HIP_L_FLEX, -1.0)), roll: Some((HIP_L_ABD, -1.0)), yaw: Some((HIP_L_TWIST, 1.0)) };
    d[HIP_R] = Dof { pitch: Some((HIP_R_FLEX, -1.0)), roll: Some((HIP_R_ABD, 1.0)), yaw: Some((HIP_R_TWIST, -1.0)) };
    d[KNEE_L] = Dof { pitch: Some((KNEE_L_FLEX, 1.0)), ..NONE };
    d[KNEE_R] = Dof { pitch: Some((KNEE_R_FLEX, 1.0)), ..NONE };
    d[SHOULDER_L] = Dof { pitch: Some((SH_L_FLEX, -1.0)), roll: Some((SH_L_ABD, -1.0)), yaw: Some((SH_L_TWIST, 1.0)) };
    d[SHOULDER_R] = Dof { pitch: Some((SH_R_FLEX, -1.0)), roll: Some((SH_R_ABD, 1.0)), yaw: Some((SH_R_TWIST, -1.0)) };
    d[ELBOW_L] = Dof { pitch: Some((ELBOW_L_FLEX, -1.0)), ..NONE };
    d[ELBOW_R] = Dof { pitch: Some((ELBOW_R_FLEX, -1.0)), ..NONE };
    d
}

/// Rest-pose bone vectors (child relative to parent), meters, subject facing −z.
const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [-0.11, 0.03, 0.0],
    [0.0, 0.44, 0.0],
    [0.0, 0.42, 0.0],
    [0.11, 0.03, 0.0],
    [0.0, 0.44, 0.0],
    [0.0, 0.42, 0.0],
    [0.0, -0.22, 0.0],
    [0.0, -0.26, 0.0],
    [0.0, -0.12, 0.0],
    [0.0, -0.14, -0.04],
    [0.17, 0.02, 0.0],
    [0.0, 0.28, 0.0],
    [0.0, 0.25, 0.0],
    [-0.17, 0.02, 0.0],
    [0.0, 0.28, 0.0],
    [0.0, 0.25, 0.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Walk,
    Jog,
    Squat,
    Bend,
    Hop,
    Mixed,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] =
        [MotionKind::Walk, MotionKind::Jog, MotionKind::Squat, MotionKind::Bend, MotionKind::Hop, MotionKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Jog => "jog",
            MotionKind::Squat => "squat",
            MotionKind::Bend => "bend",
            MotionKind::Hop => "hop",
            MotionKind::Mixed => "mixed",
        }
    }

    fn index(self) -> u64 {
        MotionKind::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl std::str::FromStr for MotionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MotionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown motion kind `{s}`"))
    }
}

/// A world-frame motion sequence with its view-independent pose parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip<T> {
    pub frames: Vec<Skeleton<T>>,
    pub canon: Vec<CanonicalPose<T>>,
    pub motion_id: String,
    pub kind: MotionKind,
    pub seed: u64,
}

impl<T> MotionClip<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-clip randomization.
struct Style {
    amp: f64,
    freq: f64,
    phase: f64,
    bone_scale: f64,
    bias: [f64; NUM_POSE_PARAMS],
    mirror_hop: bool,
    speed: f64,
}

impl Style {
    fn sample(kind: MotionKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ kind.index());
        let mut bias = [0.0; NUM_POSE_PARAMS];
        for b in bias.iter_mut() {
            *b = rng.random_range(-0.06..0.06);
        }
        Style {
            amp: rng.random_range(0.8..1.2),
            freq: rng.random_range(0.85..1.15),
            phase: rng.random_range(0.0..TAU),
            bone_scale: rng.random_range(0.9..1.1),
            bias,
            mirror_hop: rng.random_bool(0.5),
            speed: rng.random_range(0.1..0.2),
        }
    }
}

/// Raw angles plus pelvis translation for one time instant.
fn pose_at(kind: MotionKind, style: &Style, t: f64, center_t: f64) -> ([f64; NUM_POSE_PARAMS], [f64; 3]) {
    let mut a = [0.0; NUM_POSE_PARAMS];
    let mut root = [0.0; 3];
    let amp = style.amp;
    match kind {
        MotionKind::Walk | MotionKind::Jog => {
            let jog = kind == MotionKind::Jog;
            let (f, s) = if jog { (1.4, 1.6) } else { (0.9, 1.0) };
            let w = TAU * f * style.freq * t + style.phase;
            a[HIP_L_FLEX] = 0.4 * s * amp * w.sin();
            a[HIP_R_FLEX] = -0.4 * s * amp * w.sin();
            a[KNEE_L_FLEX] = 0.35 * s * amp * (1.0 + (w + 0.5 * PI).sin());
            a[KNEE_R_FLEX] = 0.35 * s * amp * (1.0 - (w + 0.5 * PI).sin());
            a[SH_L_FLEX] = -0.35 * s * amp * w.sin();
            a[SH_R_FLEX] = 0.35 * s * amp * w.sin();
            let elbow = if jog { 1.3 } else { 0.25 };
            a[ELBOW_L_FLEX] = elbow + 0.15 * amp * (w + 0.3).sin();
            a[ELBOW_R_FLEX] = elbow - 0.15 * amp * (w + 0.3).sin();
            a[SPINE_YAW] = 0.08 * amp * w.sin();
            a[SPINE_PITCH] = if jog { 0.15 } else { 0.03 };
            a[SH_L_ABD] = 0.1;
            a[SH_R_ABD] = 0.1;
            let speed = if jog { 1.5 * style.speed } else { style.speed };
            root[0] = speed * (t - center_t);
            root[1] = -0.025 * s * (2.0 * w).cos().abs();
        }
        MotionKind::Squat => {
            let w = TAU * 0.4 * style.freq * t + style.phase;
            let depth = 0.5 * (1.0 - w.cos()) * amp;
            a[HIP_L_FLEX] = 1.1 * depth;
            a[HIP_R_FLEX] = 1.1 * depth;
            a[KNEE_L_FLEX] = 1.8 * depth;
            a[KNEE_R_FLEX] = 1.8 * depth;
            a[SPINE_PITCH] = 0.35 * depth;
            a[SH_L_FLEX] = 1.3 * depth;
            a[SH_R_FLEX] = 1.3 * depth;
            a[HIP_L_ABD] = 0.15 * depth;
            a[HIP_R_ABD] = 0.15 * depth;
            a[NECK_PITCH] = -0.2 * depth;
            root[1] = 0.38 * depth;
        }
        MotionKind::Bend => {
            let w = TAU * 0.3 * style.freq * t + style.phase;
            let depth = 0.5 * (1.0 - w.cos()) * amp;
            a[SPINE_PITCH] = 0.9 * depth;
            a[THORAX_PITCH] = 0.35 * depth;
            a[HIP_L_FLEX] = 0.45 * depth;
            a[HIP_R_FLEX] = 0.45 * depth;
            a[SH_L_FLEX] = 0.5 * depth;
            a[SH_R_FLEX] = 0.5 * depth;
            a[SPINE_ROLL] = 0.12 * (0.5 * w).sin();
            a[NECK_YAW] = 0.3 * (0.7 * w).sin();
            root[2] = 0.05 * depth;
        }
        MotionKind::Hop => {
            let w = TAU * 1.8 * style.freq * t + style.phase;
            let (lift_flex, lift_knee, stance_knee) = if style.mirror_hop {
                (HIP_R_FLEX, KNEE_R_FLEX, KNEE_L_FLEX)
            } else {
                (HIP_L_FLEX, KNEE_L_FLEX, KNEE_R_FLEX)
            };
            a[lift_flex] = 0.5 * amp;
            a[lift_knee] = 1.3 * amp;
            a[stance_knee] = 0.25 * amp * (1.0 - w.cos());
            a[SH_L_ABD] = 0.5 + 0.25 * amp * w.sin();
            a[SH_R_ABD] = 0.5 + 0.25 * amp * w.sin();
            a[ELBOW_L_FLEX] = 0.6;
            a[ELBOW_R_FLEX] = 0.6;
            a[THORAX_ROLL] = 0.08 * (0.5 * w).sin();
            root[1] = -0.07 * amp * (1.0 - w.cos());
        }
        MotionKind::Mixed => {
            let (walk, walk_root) = pose_at(MotionKind::Walk, style, t, center_t);
            let (bend, _) = pose_at(MotionKind::Bend, style, t, center_t);
            let mix = 0.5 * (1.0 + (TAU * 0.15 * t + style.phase).sin());
            for k in 0..NUM_POSE_PARAMS {
                a[k] = (1.0 - mix) * walk[k] + mix * bend[k];
            }
            a[SH_L_TWIST] = 0.3 * mix;
            a[SH_R_TWIST] = 0.3 * mix;
            root = walk_root;
        }
    }
    for (x, b) in a.iter_mut().zip(&style.bias) {
        *x += b;
    }
    (a, root)
}

fn local_rotation<T: Real>(dof: &Dof, angles: &[T; NUM_POSE_PARAMS]) -> Mat3<T> {
    let get = |slot: Option<(usize, f64)>| slot.map_or(T::zero(), |(i, s)| angles[i] * T::lit(s));
    let ry = mat3::rot_y(get(dof.yaw));
    let rx = mat3::rot_x(get(dof.pitch));
    let rz = mat3::rot_z(get(dof.roll));
    mat3::mul(&ry, &mat3::mul(&rx, &rz))
}

/// Forward kinematics: pelvis at `root`, bones scaled by `bone_scale`.
pub(crate) fn forward_kinematics<T: Real>(
    pose: &CanonicalPose<T>,
    root: Vec3<T>,
    bone_scale: T,
) -> Skeleton<T> {
    let schema = JointSchema::standard();
    let dofs = joint_dofs();
    let mut global: [Mat3<T>; NUM_JOINTS] = [mat3::identity(); NUM_JOINTS];
    let mut joints = [[T::zero(); 3]; NUM_JOINTS];
    joints[PELVIS] = root;
    global[PELVIS] = local_rotation(&dofs[PELVIS], &pose.angles);
    for j in 1..NUM_JOINTS {
        let p = schema.parents[j];
        let off = REST_OFFSETS[j].map(|x| T::lit(x) * bone_scale);
        joints[j] = mat3::add(joints[p], mat3::mul_vec(&global[p], off));
        global[j] = mat3::mul(&global[p], &local_rotation(&dofs[j], &pose.angles));
    }
    Skeleton::new(joints, FrameTag::World)
}

/// Deterministic motion clip of `frames` frames at 30 fps.
///
/// Joint angles are sinusoids with kind-specific amplitudes and per-seed
/// style jitter; the pelvis follows a smooth trajectory centered on the world
/// origin. Walking and jogging translate along +x.
pub fn synth_motion<T: Real>(kind: MotionKind, frames: usize, seed: u64) -> MotionClip<T> {
    assert!(frames >= 2, "a motion clip needs at least two frames");
    let style = Style::sample(kind, seed);
    let center_t = (frames as f64 - 1.0) / (2.0 * FPS);
    let scale = T::lit(style.bone_scale);
    let mut out_frames = Vec::with_capacity(frames);
    let mut canon = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 / FPS;
        let (angles, root) = pose_at(kind, &style, t, center_t);
        let pose = CanonicalPose { angles: angles.map(T::lit), root_free: true };
        out_frames.push(forward_kinematics(&pose, root.map(T::lit), scale));
        canon.push(pose);
    }
    MotionClip {
        frames: out_frames,
        canon,
        motion_id: format!("{}-{}", kind.name(), seed),
        kind,
        seed,
    }
}
