//! Skeleton topology, rest pose and parametric limb motions.

use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 13;

pub const HEAD: usize = 0;
pub const NECK: usize = 1;
pub const PELVIS: usize = 2;
pub const L_SHOULDER: usize = 3;
pub const L_ELBOW: usize = 4;
pub const L_WRIST: usize = 5;
pub const R_SHOULDER: usize = 6;
pub const R_ELBOW: usize = 7;
pub const R_WRIST: usize = 8;
pub const L_KNEE: usize = 9;
pub const L_ANKLE: usize = 10;
pub const R_KNEE: usize = 11;
pub const R_ANKLE: usize = 12;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head", "neck", "pelvis", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist", "l_knee",
    "l_ankle", "r_knee", "r_ankle",
];

/// Parent of every joint; the pelvis is the root. Thighs hang directly off
/// the pelvis (no separate hip joints).
pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    Some(NECK),
    Some(PELVIS),
    None,
    Some(NECK),
    Some(L_SHOULDER),
    Some(L_ELBOW),
    Some(NECK),
    Some(R_SHOULDER),
    Some(R_ELBOW),
    Some(PELVIS),
    Some(L_KNEE),
    Some(PELVIS),
    Some(R_KNEE),
];

/// Standing pose in meters: x toward the subject's left, y up, z toward
/// the identity camera.
pub const REST_POSE: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.75, 0.0],
    [0.0, 0.55, 0.0],
    [0.0, 0.0, 0.0],
    [0.2, 0.5, 0.0],
    [0.22, 0.22, 0.0],
    [0.24, -0.04, 0.0],
    [-0.2, 0.5, 0.0],
    [-0.22, 0.22, 0.0],
    [-0.24, -0.04, 0.0],
    [0.11, -0.45, 0.0],
    [0.11, -0.9, 0.0],
    [-0.11, -0.45, 0.0],
    [-0.11, -0.9, 0.0],
];

pub fn bones() -> impl Iterator<Item = (usize, usize)> {
    PARENTS
        .iter()
        .enumerate()
        .filter_map(|(child, p)| p.map(|parent| (parent, child)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    Wave,
    Raise,
    Swing,
}

impl Motion {
    pub const ALL: [Motion; 3] = [Motion::Wave, Motion::Raise, Motion::Swing];

    pub fn word(self) -> &'static str {
        match self {
            Motion::Wave => "wave",
            Motion::Raise => "raise",
            Motion::Swing => "swing",
        }
    }

    /// Cycles per clip before per-sample jitter.
    pub fn base_frequency(self) -> f64 {
        match self {
            Motion::Wave => 2.0,
            Motion::Raise => 1.0,
            Motion::Swing => 1.5,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Motion> {
        Motion::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Limb {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Limb {
    pub const ALL: [Limb; 4] = [Limb::LeftArm, Limb::RightArm, Limb::LeftLeg, Limb::RightLeg];

    pub fn side_word(self) -> &'static str {
        match self {
            Limb::LeftArm | Limb::LeftLeg => "left",
            Limb::RightArm | Limb::RightLeg => "right",
        }
    }

    pub fn limb_word(self) -> &'static str {
        match self {
            Limb::LeftArm | Limb::RightArm => "arm",
            Limb::LeftLeg | Limb::RightLeg => "leg",
        }
    }

    pub fn is_leg(self) -> bool {
        matches!(self, Limb::LeftLeg | Limb::RightLeg)
    }

    fn side_sign(self) -> f64 {
        match self {
            Limb::LeftArm | Limb::LeftLeg => 1.0,
            Limb::RightArm | Limb::RightLeg => -1.0,
        }
    }

    /// Joints that move, in chain order.
    pub fn moving_joints(self) -> [usize; 2] {
        match self {
            Limb::LeftArm => [L_ELBOW, L_WRIST],
            Limb::RightArm => [R_ELBOW, R_WRIST],
            Limb::LeftLeg => [L_KNEE, L_ANKLE],
            Limb::RightLeg => [R_KNEE, R_ANKLE],
        }
    }

    /// Bones drawn for this limb (parent, child).
    pub fn bones(self) -> [(usize, usize); 2] {
        let [a, b] = self.moving_joints();
        [(PARENTS[a].expect("limb joints have parents"), a), (a, b)]
    }

    fn pivot(self) -> [f64; 3] {
        match self {
            Limb::LeftArm => REST_POSE[L_SHOULDER],
            Limb::RightArm => REST_POSE[R_SHOULDER],
            Limb::LeftLeg => [0.11, 0.0, 0.0],
            Limb::RightLeg => [-0.11, 0.0, 0.0],
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Limb> {
        Limb::ALL.get(c as usize).copied()
    }
}

/// Per-sample realisation of a class motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub motion: Motion,
    pub limb: Limb,
    /// Peak joint angle in radians.
    pub amplitude: f64,
    /// Cycles over the whole sequence.
    pub frequency: f64,
    pub phase: f64,
}

impl MotionSample {
    /// (forward flexion, outward abduction) angles at normalized time `tau`.
    fn angles(&self, tau: f64) -> (f64, f64) {
        let w = 2.0 * std::f64::consts::PI * self.frequency * tau + self.phase;
        let a = self.amplitude;
        match self.motion {
            Motion::Wave => (0.0, a * (1.0 + 0.5 * w.sin())),
            Motion::Raise => (a * (0.5 - 0.5 * w.cos()) * 1.6, 0.0),
            Motion::Swing => (a * w.sin(), 0.0),
        }
    }

    /// Joint positions (world frame, before body jitter) at normalized time `tau`.
    pub fn pose(&self, tau: f64) -> [[f64; 3]; NUM_JOINTS] {
        let mut pose = REST_POSE;
        let (flex, abd) = self.angles(tau);
        let pivot = self.limb.pivot();
        let s = self.limb.side_sign();
        let (cf, sf) = (flex.cos(), flex.sin());
        let (ca, sa) = (abd.cos(), abd.sin());
        for j in self.limb.moving_joints() {
            let r = [pose[j][0] - pivot[0], pose[j][1] - pivot[1], pose[j][2] - pivot[2]];
            // forward flexion about the lateral axis
            let r = [r[0], r[1] * cf + r[2] * sf, -r[1] * sf + r[2] * cf];
            // outward abduction about the depth axis
            let r = [r[0] * ca - r[1] * s * sa, r[0] * s * sa + r[1] * ca, r[2]];
            pose[j] = [pivot[0] + r[0], pivot[1] + r[1], pivot[2] + r[2]];
        }
        pose
    }
}

/// Rotation applied to world joints to obtain camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Rotation about the vertical axis, radians.
    pub azimuth: f64,
    /// Rotation about the lateral axis, radians.
    pub elevation: f64,
}

impl Camera {
    pub fn identity() -> Self {
        Camera {
            azimuth: 0.0,
            elevation: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.azimuth == 0.0 && self.elevation == 0.0
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        if self.is_identity() {
            return p;
        }
        let (ca, sa) = (self.azimuth.cos(), self.azimuth.sin());
        let q = [ca * p[0] + sa * p[2], p[1], -sa * p[0] + ca * p[2]];
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        [q[0], ce * q[1] - se * q[2], se * q[1] + ce * q[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bone_len(p: &[[f64; 3]; NUM_JOINTS], a: usize, b: usize) -> f64 {
        (0..3).map(|k| (p[a][k] - p[b][k]).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn parents_form_a_tree() {
        assert_eq!(PARENTS.iter().filter(|p| p.is_none()).count(), 1);
        assert_eq!(bones().count(), NUM_JOINTS - 1);
        for j in 0..NUM_JOINTS {
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = PARENTS[cur] {
                cur = p;
                steps += 1;
                assert!(steps < NUM_JOINTS);
            }
            assert_eq!(cur, PELVIS);
        }
    }

    #[test]
    fn motions_are_rigid_about_the_pivot() {
        let dist = |a: [f64; 3], b: [f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        for motion in Motion::ALL {
            for limb in Limb::ALL {
                let m = MotionSample {
                    motion,
                    limb,
                    amplitude: 0.7,
                    frequency: motion.base_frequency(),
                    phase: 0.3,
                };
                let pivot = limb.pivot();
                for t in 0..10 {
                    let pose = m.pose(t as f64 / 10.0);
                    for j in limb.moving_joints() {
                        assert!((dist(pose[j], pivot) - dist(REST_POSE[j], pivot)).abs() < 1e-12);
                    }
                    let [e, w] = limb.moving_joints();
                    assert!((bone_len(&pose, e, w) - bone_len(&REST_POSE, e, w)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn only_the_named_limb_moves() {
        let m = MotionSample {
            motion: Motion::Swing,
            limb: Limb::LeftLeg,
            amplitude: 0.5,
            frequency: 1.5,
            phase: 1.0,
        };
        let pose = m.pose(0.4);
        for j in 0..NUM_JOINTS {
            let moved = (0..3).any(|k| pose[j][k] != REST_POSE[j][k]);
            assert_eq!(moved, j == L_KNEE || j == L_ANKLE, "joint {}", JOINT_NAMES[j]);
        }
    }

    #[test]
    fn camera_full_turn_is_identity_up_to_roundoff() {
        let c = Camera {
            azimuth: 2.0 * std::f64::consts::PI,
            elevation: 0.0,
        };
        let p = c.apply([0.3, -0.2, 0.1]);
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[2] - 0.1).abs() < 1e-15);
    }
}
