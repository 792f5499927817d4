//! The fixed 17-joint skeleton layout.

/// Number of joints in every skeleton.
pub const NUM_JOINTS: usize = 17;

pub const PELVIS: usize = 0;
pub const HIP_R: usize = 1;
pub const KNEE_R: usize = 2;
pub const ANKLE_R: usize = 3;
pub const HIP_L: usize = 4;
pub const KNEE_L: usize = 5;
pub const ANKLE_L: usize = 6;
pub const SPINE: usize = 7;
pub const THORAX: usize = 8;
pub const NECK: usize = 9;
pub const HEAD: usize = 10;
pub const SHOULDER_L: usize = 11;
pub const ELBOW_L: usize = 12;
pub const WRIST_L: usize = 13;
pub const SHOULDER_R: usize = 14;
pub const ELBOW_R: usize = 15;
pub const WRIST_R: usize = 16;

/// Joint names, left/right mirror pairs and the four key joints used for view
/// features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointSchema {
    pub names: [&'static str; NUM_JOINTS],
    pub lr_pairs: [(usize, usize); 6],
    /// `[hip_L, hip_R, shoulder_L, shoulder_R]`.
    pub key_joints: [usize; 4],
    /// Parent of each joint in the kinematic tree; the pelvis is its own parent.
    pub parents: [usize; NUM_JOINTS],
    mirror: [usize; NUM_JOINTS],
}

static STANDARD: JointSchema = JointSchema {
    names: [
        "pelvis", "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l", "spine", "thorax",
        "neck", "head", "shoulder_l", "elbow_l", "wrist_l", "shoulder_r", "elbow_r", "wrist_r",
    ],
    lr_pairs: [
        (HIP_L, HIP_R),
        (KNEE_L, KNEE_R),
        (ANKLE_L, ANKLE_R),
        (SHOULDER_L, SHOULDER_R),
        (ELBOW_L, ELBOW_R),
        (WRIST_L, WRIST_R),
    ],
    key_joints: [HIP_L, HIP_R, SHOULDER_L, SHOULDER_R],
    parents: [0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15],
    mirror: [0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13],
};

impl JointSchema {
    pub fn standard() -> &'static JointSchema {
        &STANDARD
    }

    /// Index of the mirror partner of `joint` (itself for midline joints).
    #[inline]
    pub fn mirror(&self, joint: usize) -> usize {
        self.mirror[joint]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }

    pub fn is_midline(&self, joint: usize) -> bool {
        self.mirror[joint] == joint
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_is_an_involution_consistent_with_pairs() {
        let s = JointSchema::standard();
        for j in 0..NUM_JOINTS {
            assert_eq!(s.mirror(s.mirror(j)), j);
        }
        let mut seen = [0usize; NUM_JOINTS];
        for &(l, r) in &s.lr_pairs {
            assert_eq!(s.mirror(l), r);
            assert_eq!(s.mirror(r), l);
            assert!(s.names[l].ends_with("_l") && s.names[r].ends_with("_r"));
            seen[l] += 1;
            seen[r] += 1;
        }
        let midline: Vec<_> = (0..NUM_JOINTS).filter(|&j| seen[j] == 0).collect();
        assert_eq!(midline, vec![PELVIS, SPINE, THORAX, NECK, HEAD]);
        assert!(seen.iter().all(|&c| c <= 1));
    }

    #[test]
    fn key_joints_resolve_by_name() {
        let s = JointSchema::standard();
        assert_eq!(s.index_of("hip_l"), Some(s.key_joints[0]));
        assert_eq!(s.index_of("hip_r"), Some(s.key_joints[1]));
        assert_eq!(s.index_of("shoulder_l"), Some(s.key_joints[2]));
        assert_eq!(s.index_of("shoulder_r"), Some(s.key_joints[3]));
    }

    #[test]
    fn parents_are_topologically_ordered() {
        let s = JointSchema::standard();
        for j in 1..NUM_JOINTS {
            assert!(s.parents[j] < j);
        }
    }
}
