//! Body skeleton, forward kinematics and root-motion transforms.
//!
//! World frame is Y-up; a body in its rest pose faces +Z with its left side
//! toward +X. The default skeleton has 22 joints: the pelvis root and 21
//! articulated body joints in the usual SMPL body ordering.

use crate::error::{Error, Result};
use crate::rotmath::{Rot3, Vec3};

pub const NUM_JOINTS: usize = 22;
pub const NUM_BODY_JOINTS: usize = 21;
pub const DEFAULT_FPS: u32 = 30;

/// Facing axis of a body frame.
pub const FORWARD: [f64; 3] = [0.0, 0.0, 1.0];
pub const UP: [f64; 3] = [0.0, 1.0, 0.0];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
}

/// Kinematic tree with rest offsets expressed in the parent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::body22()
    }
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, offsets: Vec<Vec3>) -> Result<Self> {
        let n = names.len();
        if n == 0 || parents.len() != n || offsets.len() != n {
            return Err(Error::ShapeMismatch("skeleton tables differ in length".into()));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidConfig("joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(Error::InvalidConfig(format!("joint {j} has no earlier parent"))),
            }
            let len = offsets[j].norm();
            if !(len > 0.0 && len < 1.0) {
                return Err(Error::InvalidConfig(format!("joint {j} offset length {len} outside (0, 1)")));
            }
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::InvalidConfig("joint names must be unique".into()));
        }
        Ok(Skeleton { names, parents, offsets })
    }

    /// The fixed 22-joint body used throughout the crate (meters).
    pub fn body22() -> Self {
        use joint::*;
        let table: [(&str, Option<usize>, [f64; 3]); NUM_JOINTS] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("left_hip", Some(PELVIS), [0.09, -0.08, 0.0]),
            ("right_hip", Some(PELVIS), [-0.09, -0.08, 0.0]),
            ("spine1", Some(PELVIS), [0.0, 0.11, -0.01]),
            ("left_knee", Some(L_HIP), [0.0, -0.40, 0.0]),
            ("right_knee", Some(R_HIP), [0.0, -0.40, 0.0]),
            ("spine2", Some(SPINE1), [0.0, 0.14, 0.0]),
            ("left_ankle", Some(L_KNEE), [0.0, -0.40, -0.02]),
            ("right_ankle", Some(R_KNEE), [0.0, -0.40, -0.02]),
            ("spine3", Some(SPINE2), [0.0, 0.06, 0.01]),
            ("left_foot", Some(L_ANKLE), [0.0, -0.06, 0.12]),
            ("right_foot", Some(R_ANKLE), [0.0, -0.06, 0.12]),
            ("neck", Some(SPINE3), [0.0, 0.21, -0.01]),
            ("left_collar", Some(SPINE3), [0.08, 0.14, 0.0]),
            ("right_collar", Some(SPINE3), [-0.08, 0.14, 0.0]),
            ("head", Some(NECK), [0.0, 0.09, 0.03]),
            ("left_shoulder", Some(L_COLLAR), [0.11, 0.03, 0.0]),
            ("right_shoulder", Some(R_COLLAR), [-0.11, 0.03, 0.0]),
            ("left_elbow", Some(L_SHOULDER), [0.26, 0.0, 0.0]),
            ("right_elbow", Some(R_SHOULDER), [-0.26, 0.0, 0.0]),
            ("left_wrist", Some(L_ELBOW), [0.25, 0.0, 0.0]),
            ("right_wrist", Some(R_ELBOW), [-0.25, 0.0, 0.0]),
        ];
        Skeleton {
            names: table.iter().map(|t| t.0.to_string()).collect(),
            parents: table.iter().map(|t| t.1).collect(),
            offsets: table.iter().map(|t| Vec3::from(t.2)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn body_joint_count(&self) -> usize {
        self.len() - 1
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn offset(&self, j: usize) -> Vec3 {
        self.offsets[j]
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Height of the pelvis above the lowest joint in the rest pose.
    pub fn rest_pelvis_height(&self) -> f64 {
        let seq = MotionSequence::rest(self, 1, DEFAULT_FPS);
        let pose = forward_kinematics(self, &seq, 0);
        -pose.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min)
    }

    /// Joint positions followed by the midpoint of every bone.
    pub fn virtual_vertices(&self, joints: &[Vec3]) -> Vec<Vec3> {
        let mut out = joints.to_vec();
        for j in 1..self.len() {
            let p = self.parents[j].expect("non-root joint has a parent");
            out.push((joints[j] + joints[p]) * 0.5);
        }
        out
    }
}

/// Absolute motion: root trajectory plus parent-relative joint rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: u32,
    pub root_translation: Vec<Vec3>,
    pub root_orientation: Vec<Rot3>,
    /// Per frame, one rotation per non-root joint.
    pub joint_rotations: Vec<Vec<Rot3>>,
}

impl MotionSequence {
    /// Rest pose with the pelvis at the origin.
    pub fn rest(skel: &Skeleton, frames: usize, fps: u32) -> Self {
        MotionSequence {
            fps,
            root_translation: vec![Vec3::zeros(); frames],
            root_orientation: vec![Rot3::identity(); frames],
            joint_rotations: vec![vec![Rot3::identity(); skel.body_joint_count()]; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.root_translation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root_translation.is_empty()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.is_empty() || self.fps == 0 {
            return Err(Error::InsufficientData("motion needs T ≥ 1 and fps > 0".into()));
        }
        let t = self.len();
        if self.root_orientation.len() != t || self.joint_rotations.len() != t {
            return Err(Error::ShapeMismatch("motion channels differ in length".into()));
        }
        let ok = self.root_orientation.iter().all(|r| r.is_valid(tol))
            && self.joint_rotations.iter().flatten().all(|r| r.is_valid(tol))
            && self.root_translation.iter().all(|p| p.iter().all(|x| x.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("motion contains invalid rotations".into()))
        }
    }

    pub fn crop(&self, start: usize, length: usize) -> Result<Self> {
        let end = start + length;
        if length == 0 || end > self.len() {
            return Err(Error::OutOfRange { start, end, len: self.len() });
        }
        Ok(MotionSequence {
            fps: self.fps,
            root_translation: self.root_translation[start..end].to_vec(),
            root_orientation: self.root_orientation[start..end].to_vec(),
            joint_rotations: self.joint_rotations[start..end].to_vec(),
        })
    }

    /// Repeats the last frame until the length is a multiple of `multiple`.
    pub fn padded_to_multiple(&self, multiple: usize) -> Self {
        let mut out = self.clone();
        let target = self.len().div_ceil(multiple) * multiple;
        while out.len() < target {
            let last = out.len() - 1;
            out.root_translation.push(out.root_translation[last]);
            out.root_orientation.push(out.root_orientation[last]);
            let j = out.joint_rotations[last].clone();
            out.joint_rotations.push(j);
        }
        out
    }
}

/// Global joint positions and rotations for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Rot3>,
}

pub fn forward_kinematics(skel: &Skeleton, seq: &MotionSequence, frame: usize) -> Pose {
    fk_frame(skel, &seq.root_translation[frame], &seq.root_orientation[frame], &seq.joint_rotations[frame])
}

pub fn fk_frame(skel: &Skeleton, root_t: &Vec3, root_r: &Rot3, local: &[Rot3]) -> Pose {
    let n = skel.len();
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    positions.push(*root_t);
    rotations.push(*root_r);
    for j in 1..n {
        let p = skel.parents[j].expect("non-root joint has a parent");
        let pos = positions[p] + rotations[p].rotate(&skel.offsets[j]);
        let rot = rotations[p] * local[j - 1];
        positions.push(pos);
        rotations.push(rot);
    }
    Pose { positions, rotations }
}

/// Global joint positions for every frame.
pub fn joint_positions(skel: &Skeleton, seq: &MotionSequence) -> Vec<Vec<Vec3>> {
    (0..seq.len()).map(|f| forward_kinematics(skel, seq, f).positions).collect()
}

/// Yaw angle (about +Y) of a frame's facing axis projected on the ground.
pub fn heading_angle(r: &Rot3) -> f64 {
    let f = r.rotate(&Vec3::from(FORWARD));
    if f.x.hypot(f.z) > 1e-9 {
        f.x.atan2(f.z)
    } else {
        // Facing axis is vertical; use the lateral axis instead.
        let l = r.column(0);
        let (x, z) = (-l.z, l.x);
        x.atan2(z)
    }
}

/// Rotation about +Y matching the heading of `r`.
pub fn yaw_rotation(r: &Rot3) -> Rot3 {
    Rot3::ry(heading_angle(r))
}

/// Rotation about gravity plus a horizontal shift, applied to whole sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizontalTransform {
    pub rotation: Rot3,
    /// Subtracted before rotating.
    pub origin: Vec3,
}

impl HorizontalTransform {
    pub fn identity() -> Self {
        HorizontalTransform { rotation: Rot3::identity(), origin: Vec3::zeros() }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(&(p - self.origin))
    }

    pub fn apply_rotation(&self, r: &Rot3) -> Rot3 {
        self.rotation * *r
    }

    pub fn apply(&self, seq: &MotionSequence) -> MotionSequence {
        MotionSequence {
            fps: seq.fps,
            root_translation: seq.root_translation.iter().map(|p| self.apply_point(p)).collect(),
            root_orientation: seq.root_orientation.iter().map(|r| self.apply_rotation(r)).collect(),
            joint_rotations: seq.joint_rotations.clone(),
        }
    }
}

/// Transform that puts frame 0 at the horizontal origin facing +Z.
/// Vertical translation is kept.
pub fn canonical_transform(seq: &MotionSequence) -> HorizontalTransform {
    let t0 = seq.root_translation[0];
    HorizontalTransform {
        rotation: Rot3::ry(-heading_angle(&seq.root_orientation[0])),
        origin: Vec3::new(t0.x, 0.0, t0.z),
    }
}

pub fn canonicalize(seq: &MotionSequence) -> MotionSequence {
    canonical_transform(seq).apply(seq)
}

/// Crops and re-aligns to the first cropped frame, returning the transform
/// so that attached data (scene objects) can follow.
pub fn crop_and_align(seq: &MotionSequence, start: usize, length: usize) -> Result<(MotionSequence, HorizontalTransform)> {
    let cropped = seq.crop(start, length)?;
    let tf = canonical_transform(&cropped);
    Ok((tf.apply(&cropped), tf))
}

/// Root motion as frame-to-frame deltas plus absolute joint rotations.
///
/// Translation deltas live in the heading frame of the previous root, so
/// they do not depend on where the sequence sits in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeRootSequence {
    pub fps: u32,
    pub anchor_translation: Vec3,
    pub anchor_orientation: Rot3,
    /// Frame 0 carries a zero delta.
    pub translation_delta: Vec<Vec3>,
    /// Frame 0 carries the identity.
    pub rotation_delta: Vec<Rot3>,
    pub joint_rotations: Vec<Vec<Rot3>>,
}

impl RelativeRootSequence {
    pub fn len(&self) -> usize {
        self.translation_delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.translation_delta.is_empty()
    }
}

pub fn to_relative_root(seq: &MotionSequence) -> RelativeRootSequence {
    let t = seq.len();
    let mut translation_delta = Vec::with_capacity(t);
    let mut rotation_delta = Vec::with_capacity(t);
    translation_delta.push(Vec3::zeros());
    rotation_delta.push(Rot3::identity());
    for f in 1..t {
        let prev = &seq.root_orientation[f - 1];
        let yaw = yaw_rotation(prev);
        translation_delta.push(yaw.transpose().rotate(&(seq.root_translation[f] - seq.root_translation[f - 1])));
        rotation_delta.push(prev.transpose() * seq.root_orientation[f]);
    }
    RelativeRootSequence {
        fps: seq.fps,
        anchor_translation: seq.root_translation[0],
        anchor_orientation: seq.root_orientation[0],
        translation_delta,
        rotation_delta,
        joint_rotations: seq.joint_rotations.clone(),
    }
}

pub fn from_relative_root(rel: &RelativeRootSequence) -> MotionSequence {
    let t = rel.len();
    let mut root_translation = Vec::with_capacity(t);
    let mut root_orientation = Vec::with_capacity(t);
    let mut pos = rel.anchor_translation;
    let mut rot = rel.anchor_orientation;
    for f in 0..t {
        if f > 0 {
            pos += yaw_rotation(&rot).rotate(&rel.translation_delta[f]);
            rot = rot * rel.rotation_delta[f];
        }
        root_translation.push(pos);
        root_orientation.push(rot);
    }
    MotionSequence { fps: rel.fps, root_translation, root_orientation, joint_rotations: rel.joint_rotations.clone() }
}
