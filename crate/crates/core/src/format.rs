//! Line-oriented text formats for motion, IMU and scene files.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imu::{ImuSequence, SlotSet, IMU_DIM, NUM_SLOTS};
use crate::kinematics::{MotionSequence, NUM_BODY_JOINTS, NUM_JOINTS};
use crate::rotmath::{matrix_from_rot6, rot6_from_matrix, Rot3, Rot6, Vec3};
use crate::scene::{ObjectInstance, SceneLayout};

const MOTION_MAGIC: &str = "IMU4D-MOTION";
const IMU_MAGIC: &str = "IMU4D-IMU";
const SCENE_MAGIC: &str = "IMU4D-SCENE";

/// Nine significant digits.
fn push_f(out: &mut String, v: f64) {
    if !out.is_empty() && !out.ends_with('\n') {
        out.push(' ');
    }
    let _ = write!(out, "{v:.8e}");
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses `MAGIC v1 key=value ...` and returns the key/value pairs in order.
fn header<'a>(line: Option<&'a str>, magic: &str, keys: &[&str]) -> Result<Vec<&'a str>> {
    let line = line.ok_or_else(|| parse_err(1, "empty file"))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(parse_err(1, format!("expected {magic} header")));
    }
    if parts.next() != Some("v1") {
        return Err(parse_err(1, "unsupported format version"));
    }
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let kv = parts.next().ok_or_else(|| parse_err(1, format!("missing {key}=")))?;
        let v = kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| parse_err(1, format!("expected {key}=, got {kv}")))?;
        out.push(v);
    }
    if let Some(extra) = parts.next() {
        return Err(parse_err(1, format!("unexpected header field {extra}")));
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, format!("invalid {what}: {s}")))
}

fn floats(line: &str, n: usize, lineno: usize) -> Result<Vec<f64>> {
    let v = line.split_whitespace().map(|t| number::<f64>(t, lineno, "number")).collect::<Result<Vec<_>>>()?;
    if v.len() != n {
        return Err(parse_err(lineno, format!("expected {n} values, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(parse_err(lineno, "non-finite value"));
    }
    Ok(v)
}

fn rot6(v: &[f64], lineno: usize) -> Result<Rot3> {
    matrix_from_rot6(&Rot6::from_slice(v)).map_err(|e| parse_err(lineno, e.to_string()))
}

fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().skip(1).map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

pub fn write_motion(seq: &MotionSequence) -> String {
    let mut out = format!("{MOTION_MAGIC} v1 fps={} joints={NUM_JOINTS} frames={}\n", seq.fps, seq.len());
    for t in 0..seq.len() {
        let mut line = String::new();
        for v in seq.root_translation[t].iter() {
            push_f(&mut line, *v);
        }
        for r in std::iter::once(&seq.root_orientation[t]).chain(&seq.joint_rotations[t]) {
            for v in rot6_from_matrix(r).0 {
                push_f(&mut line, v);
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_motion(text: &str) -> Result<MotionSequence> {
    let h = header(text.lines().next(), MOTION_MAGIC, &["fps", "joints", "frames"])?;
    let fps: u32 = number(h[0], 1, "fps")?;
    let joints: usize = number(h[1], 1, "joint count")?;
    let frames: usize = number(h[2], 1, "frame count")?;
    if joints != NUM_JOINTS {
        return Err(parse_err(1, format!("expected {NUM_JOINTS} joints, got {joints}")));
    }
    let width = 3 + 6 + NUM_BODY_JOINTS * 6;
    let mut seq = MotionSequence { fps, root_translation: Vec::new(), root_orientation: Vec::new(), joint_rotations: Vec::new() };
    for (lineno, line) in body_lines(text) {
        let v = floats(line, width, lineno)?;
        seq.root_translation.push(Vec3::new(v[0], v[1], v[2]));
        seq.root_orientation.push(rot6(&v[3..9], lineno)?);
        seq.joint_rotations.push((0..NUM_BODY_JOINTS).map(|j| rot6(&v[9 + 6 * j..15 + 6 * j], lineno)).collect::<Result<_>>()?);
    }
    if seq.len() != frames {
        return Err(Error::LengthMismatch(seq.len(), frames));
    }
    Ok(seq)
}

pub fn write_imu(imu: &ImuSequence) -> String {
    let mut out = format!("{IMU_MAGIC} v1 fps={} frames={} mask={}\n", imu.fps, imu.len(), imu.active.to_bits());
    for frame in &imu.frames {
        let mut line = String::new();
        for slot in frame {
            for v in slot {
                push_f(&mut line, *v);
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_imu(text: &str) -> Result<ImuSequence> {
    let h = header(text.lines().next(), IMU_MAGIC, &["fps", "frames", "mask"])?;
    let fps: u32 = number(h[0], 1, "fps")?;
    let frames: usize = number(h[1], 1, "frame count")?;
    let active = SlotSet::from_bits(h[2]).ok_or_else(|| parse_err(1, format!("invalid mask {}", h[2])))?;
    let mut imu = ImuSequence { fps, frames: Vec::with_capacity(frames), active };
    for (lineno, line) in body_lines(text) {
        let v = floats(line, NUM_SLOTS * IMU_DIM, lineno)?;
        let mut f = [[0.0; IMU_DIM]; NUM_SLOTS];
        for (s, slot) in f.iter_mut().enumerate() {
            slot.copy_from_slice(&v[s * IMU_DIM..(s + 1) * IMU_DIM]);
        }
        imu.frames.push(f);
    }
    if imu.len() != frames {
        return Err(Error::LengthMismatch(imu.len(), frames));
    }
    Ok(imu)
}

pub fn write_scene(layout: &SceneLayout) -> String {
    let mut out = format!("{SCENE_MAGIC} v1 objects={}\n", layout.len());
    for o in &layout.objects {
        let mut line = o.class_id.to_string();
        for v in o.pose_vector() {
            push_f(&mut line, v);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str) -> Result<SceneLayout> {
    let h = header(text.lines().next(), SCENE_MAGIC, &["objects"])?;
    let count: usize = number(h[0], 1, "object count")?;
    let mut objects = Vec::with_capacity(count);
    for (lineno, line) in body_lines(text) {
        let (id, rest) = line.trim().split_once(char::is_whitespace).ok_or_else(|| parse_err(lineno, "expected class id and pose"))?;
        let class_id: usize = number(id, lineno, "class id")?;
        let v = floats(rest, 9, lineno)?;
        objects.push(ObjectInstance::from_pose_vector(class_id, &v));
    }
    if objects.len() != count {
        return Err(Error::LengthMismatch(objects.len(), count));
    }
    Ok(SceneLayout::new(objects))
}
