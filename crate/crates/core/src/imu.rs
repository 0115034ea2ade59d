//! Virtual IMU synthesis, sensor noise and device masking.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_frame, joint, MotionSequence, Skeleton};
use crate::rotmath::{so3_exp, so3_log, AxisAngle, Rot3, Vec3};

pub const NUM_SLOTS: usize = 5;
/// Readings per device per frame: accel 3, gyro 3, rotation 9 (row-major).
pub const IMU_DIM: usize = 15;
pub const GRAVITY: [f64; 3] = [0.0, -9.81, 0.0];

/// Device slots in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Ear = 0,
    LeftWrist = 1,
    RightWrist = 2,
    LeftThigh = 3,
    RightThigh = 4,
}

impl Slot {
    pub const ALL: [Slot; NUM_SLOTS] = [Slot::Ear, Slot::LeftWrist, Slot::RightWrist, Slot::LeftThigh, Slot::RightThigh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Ear => "ear",
            Slot::LeftWrist => "left_wrist",
            Slot::RightWrist => "right_wrist",
            Slot::LeftThigh => "left_thigh",
            Slot::RightThigh => "right_thigh",
        }
    }

    pub fn from_name(s: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Set of active device slots as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SlotSet(pub [bool; NUM_SLOTS]);

impl SlotSet {
    pub const ALL: SlotSet = SlotSet([true; NUM_SLOTS]);

    pub fn from_slots(slots: &[Slot]) -> Self {
        let mut s = [false; NUM_SLOTS];
        for x in slots {
            s[x.index()] = true;
        }
        SlotSet(s)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn contains(&self, slot: usize) -> bool {
        self.0[slot]
    }

    pub fn intersect(&self, other: &SlotSet) -> SlotSet {
        let mut s = [false; NUM_SLOTS];
        for (i, v) in s.iter_mut().enumerate() {
            *v = self.0[i] && other.0[i];
        }
        SlotSet(s)
    }

    /// Five characters of '0'/'1', slot 0 first.
    pub fn to_bits(&self) -> String {
        self.0.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }

    pub fn from_bits(s: &str) -> Option<Self> {
        if s.len() != NUM_SLOTS {
            return None;
        }
        let mut out = [false; NUM_SLOTS];
        for (i, c) in s.chars().enumerate() {
            out[i] = match c {
                '1' => true,
                '0' => false,
                _ => return None,
            };
        }
        Some(SlotSet(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPlacement {
    pub slot: Slot,
    pub joint: usize,
    pub offset: Vec3,
    pub orientation: Rot3,
}

/// Earbud, two watches and two pocket phones on the default skeleton.
pub fn default_placements() -> Vec<SensorPlacement> {
    let p = |slot, joint, o: [f64; 3]| SensorPlacement { slot, joint, offset: Vec3::from(o), orientation: Rot3::identity() };
    vec![
        p(Slot::Ear, joint::HEAD, [0.075, 0.02, 0.0]),
        p(Slot::LeftWrist, joint::L_WRIST, [0.02, 0.02, 0.0]),
        p(Slot::RightWrist, joint::R_WRIST, [-0.02, 0.02, 0.0]),
        p(Slot::LeftThigh, joint::L_HIP, [0.03, -0.18, 0.07]),
        p(Slot::RightThigh, joint::R_HIP, [-0.03, -0.18, 0.07]),
    ]
}

/// Per-frame readings for the five device slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    pub fps: u32,
    /// `frames[t][slot]` = accel (3), gyro (3), rotation (9, row-major).
    pub frames: Vec<[[f64; IMU_DIM]; NUM_SLOTS]>,
    pub active: SlotSet,
}

impl ImuSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn accel(&self, t: usize, slot: usize) -> Vec3 {
        Vec3::from_column_slice(&self.frames[t][slot][0..3])
    }

    pub fn gyro(&self, t: usize, slot: usize) -> Vec3 {
        Vec3::from_column_slice(&self.frames[t][slot][3..6])
    }

    pub fn rotation(&self, t: usize, slot: usize) -> Rot3 {
        let mut r = [0.0; 9];
        r.copy_from_slice(&self.frames[t][slot][6..15]);
        Rot3::from_matrix_unchecked(nalgebra::Matrix3::from_row_slice(&r))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.active.count();
        if n == 0 {
            return Err(Error::EmptyActiveSet);
        }
        for frame in &self.frames {
            for (s, vals) in frame.iter().enumerate() {
                if !vals.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("imu readings".into()));
                }
                if !self.active.contains(s) && vals.iter().any(|v| *v != 0.0) {
                    return Err(Error::ShapeMismatch(format!("inactive slot {s} holds data")));
                }
            }
        }
        for t in 0..self.len() {
            for s in 0..NUM_SLOTS {
                if self.active.contains(s) && !self.rotation(t, s).is_valid(1e-6) {
                    return Err(Error::NonFinite(format!("rotation at frame {t} slot {s}")));
                }
            }
        }
        Ok(())
    }

    /// Frames `start..start+length` with rotations re-expressed relative to
    /// the first kept frame.
    pub fn crop(&self, start: usize, length: usize) -> Result<Self> {
        let end = start + length;
        if length == 0 || end > self.len() {
            return Err(Error::OutOfRange { start, end, len: self.len() });
        }
        let mut frames = self.frames[start..end].to_vec();
        for s in 0..NUM_SLOTS {
            if !self.active.contains(s) {
                continue;
            }
            let r0t = self.rotation(start, s).transpose();
            for (k, f) in frames.iter_mut().enumerate() {
                let r = r0t * self.rotation(start + k, s);
                f[s][6..15].copy_from_slice(&r.to_row_major());
            }
        }
        Ok(ImuSequence { fps: self.fps, frames, active: self.active })
    }

    pub fn padded_to_multiple(&self, multiple: usize) -> Self {
        let mut out = self.clone();
        let target = self.len().div_ceil(multiple) * multiple;
        while out.frames.len() < target {
            let last = *out.frames.last().expect("non-empty imu");
            out.frames.push(last);
        }
        out
    }

    /// `window` frames of one slot flattened frame-major, padding by repetition.
    pub fn window_features(&self, slot: usize, start: usize, window: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(window * IMU_DIM);
        for k in 0..window {
            let t = (start + k).min(self.len() - 1);
            out.extend_from_slice(&self.frames[t][slot]);
        }
        out
    }
}

fn second_difference(p: &[Vec3], t: usize, fps: f64) -> Vec3 {
    let n = p.len();
    let (a, b, c) = if t == 0 {
        (p[0], p[1], p[2])
    } else if t == n - 1 {
        (p[n - 3], p[n - 2], p[n - 1])
    } else {
        (p[t - 1], p[t], p[t + 1])
    };
    (a - b * 2.0 + c) * (fps * fps)
}

/// Readings of one sensor given its world trajectory.
pub fn readings_from_trajectory(pos: &[Vec3], rot: &[Rot3], fps: f64) -> Vec<[f64; IMU_DIM]> {
    let n = pos.len();
    let g = Vec3::from(GRAVITY);
    let r0t = rot[0].transpose();
    let gyro: Vec<Vec3> = (0..n.saturating_sub(1)).map(|t| so3_log(&(rot[t].transpose() * rot[t + 1])).0 * fps).collect();
    (0..n)
        .map(|t| {
            let acc = rot[t].transpose().rotate(&(second_difference(pos, t, fps) - g));
            let w = if t + 1 < n { gyro[t] } else { gyro[t - 1] };
            let r = (r0t * rot[t]).to_row_major();
            let mut out = [0.0; IMU_DIM];
            out[0..3].copy_from_slice(acc.as_slice());
            out[3..6].copy_from_slice(w.as_slice());
            out[6..15].copy_from_slice(&r);
            out
        })
        .collect()
}

/// Virtual IMU readings from forward kinematics and finite differences.
pub fn synthesize_imu(skel: &Skeleton, seq: &MotionSequence, placements: &[SensorPlacement]) -> Result<ImuSequence> {
    let n = seq.len();
    if n < 3 {
        return Err(Error::TooShort { frames: n, min: 3 });
    }
    for p in placements {
        if p.joint >= skel.len() {
            return Err(Error::InvalidConfig(format!("sensor joint {} not in skeleton", p.joint)));
        }
    }
    let poses: Vec<_> = (0..n)
        .map(|f| fk_frame(skel, &seq.root_translation[f], &seq.root_orientation[f], &seq.joint_rotations[f]))
        .collect();
    let mut frames = vec![[[0.0; IMU_DIM]; NUM_SLOTS]; n];
    let mut active = [false; NUM_SLOTS];
    for p in placements {
        let (pos, rot): (Vec<Vec3>, Vec<Rot3>) = poses
            .iter()
            .map(|pose| {
                let jr = pose.rotations[p.joint];
                (pose.positions[p.joint] + jr.rotate(&p.offset), jr * p.orientation)
            })
            .unzip();
        let readings = readings_from_trajectory(&pos, &rot, seq.fps as f64);
        for (f, r) in frames.iter_mut().zip(readings) {
            f[p.slot.index()] = r;
        }
        active[p.slot.index()] = true;
    }
    Ok(ImuSequence { fps: seq.fps, frames, active: SlotSet(active) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub accel_std: f64,
    pub gyro_std: f64,
    pub accel_bias_std: f64,
    pub gyro_bias_std: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { accel_std: 0.05, gyro_std: 0.01, accel_bias_std: 0.02, gyro_bias_std: 0.005, seed: 0 }
    }
}

impl NoiseParams {
    pub fn zero() -> Self {
        NoiseParams { accel_std: 0.0, gyro_std: 0.0, accel_bias_std: 0.0, gyro_bias_std: 0.0, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.accel_std, self.gyro_std, self.accel_bias_std, self.gyro_bias_std];
        if all.iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("noise standard deviations must be ≥ 0".into()))
        }
    }
}

fn gaussian3<R: Rng>(rng: &mut R, std: f64) -> Vec3 {
    if std == 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, std).expect("finite std");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Adds per-sequence biases and white noise; rotations are re-integrated
/// from the noisy gyro so all fifteen channels stay consistent.
pub fn inject_noise(imu: &ImuSequence, params: &NoiseParams) -> Result<ImuSequence> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = imu.clone();
    let dt = 1.0 / imu.fps as f64;
    let gyro_noisy = params.gyro_std > 0.0 || params.gyro_bias_std > 0.0;
    for s in 0..NUM_SLOTS {
        if !imu.active.contains(s) {
            continue;
        }
        let acc_bias = gaussian3(&mut rng, params.accel_bias_std);
        let gyro_bias = gaussian3(&mut rng, params.gyro_bias_std);
        for t in 0..imu.len() {
            let a = imu.accel(t, s) + acc_bias + gaussian3(&mut rng, params.accel_std);
            let w = imu.gyro(t, s) + gyro_bias + gaussian3(&mut rng, params.gyro_std);
            out.frames[t][s][0..3].copy_from_slice(a.as_slice());
            out.frames[t][s][3..6].copy_from_slice(w.as_slice());
        }
        if gyro_noisy {
            let mut r = Rot3::identity();
            for t in 0..imu.len() {
                out.frames[t][s][6..15].copy_from_slice(&r.to_row_major());
                r = (r * so3_exp(&AxisAngle(out.gyro(t, s) * dt))).orthonormalized();
            }
        }
    }
    Ok(out)
}

/// Zeroes every slot outside `active` and clears its mask bit.
pub fn mask_devices(imu: &ImuSequence, active: &SlotSet) -> Result<ImuSequence> {
    let keep = imu.active.intersect(active);
    if active.count() == 0 || keep.count() == 0 {
        return Err(Error::EmptyActiveSet);
    }
    let mut out = imu.clone();
    for f in out.frames.iter_mut() {
        for (s, vals) in f.iter_mut().enumerate() {
            if !keep.contains(s) {
                *vals = [0.0; IMU_DIM];
            }
        }
    }
    out.active = keep;
    Ok(out)
}

/// Device combinations considered plausible for sampling, by size.
///
/// With a single ear slot every subset holds at most one ear device and the
/// list is closed under left/right mirroring, so it is all 31 non-empty subsets.
pub fn plausible_combinations(n_devices: usize) -> Vec<SlotSet> {
    (1u32..(1 << NUM_SLOTS))
        .filter(|m| m.count_ones() as usize == n_devices)
        .map(|m| {
            let mut s = [false; NUM_SLOTS];
            for (i, v) in s.iter_mut().enumerate() {
                *v = m & (1 << i) != 0;
            }
            SlotSet(s)
        })
        .collect()
}

pub fn sample_device_config<R: Rng>(rng: &mut R, n_devices: usize) -> Result<SlotSet> {
    if !(1..=NUM_SLOTS).contains(&n_devices) {
        return Err(Error::InvalidConfig(format!("device count {n_devices} outside 1..=5")));
    }
    let table = plausible_combinations(n_devices);
    Ok(*table.choose(rng).expect("non-empty combination table"))
}
