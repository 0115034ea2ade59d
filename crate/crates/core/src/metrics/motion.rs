use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{joint_positions, MotionSequence, Skeleton};
use crate::rotmath::{geodesic_angle, similarity_align, Vec3};

/// How joint positions are registered before measuring distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JointAlign {
    /// Pelvis subtracted from both sides in every frame.
    #[default]
    Pelvis,
    Global,
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no frames to compare".into()));
    }
    Ok(())
}

/// Mean per-point distance in millimeters over frames of point sets.
pub fn mean_point_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], align: JointAlign) -> Result<f64> {
    check_lengths(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        check_lengths(p, g)?;
        let (op, og) = match align {
            JointAlign::Pelvis => (p[0], g[0]),
            JointAlign::Global => (Vec3::zeros(), Vec3::zeros()),
        };
        for (a, b) in p.iter().zip(g) {
            sum += ((a - op) - (b - og)).norm();
        }
        n += p.len();
    }
    Ok(1000.0 * sum / n as f64)
}

/// Mean distance after a per-frame similarity alignment of `pred` onto `gt`.
pub fn pa_point_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        check_lengths(p, g)?;
        let s = similarity_align(p, g, true)?;
        sum += p.iter().zip(g).map(|(a, b)| (s.apply(a) - b).norm()).sum::<f64>();
        n += p.len();
    }
    Ok(1000.0 * sum / n as f64)
}

pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    mpjpe_with(pred, gt, skel, JointAlign::Pelvis)
}

pub fn mpjpe_with(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton, align: JointAlign) -> Result<f64> {
    check_lengths(&pred.root_translation, &gt.root_translation)?;
    mean_point_error(&joint_positions(skel, pred), &joint_positions(skel, gt), align)
}

pub fn pa_mpjpe(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    check_lengths(&pred.root_translation, &gt.root_translation)?;
    pa_point_error(&joint_positions(skel, pred), &joint_positions(skel, gt))
}

/// Mean geodesic angle in degrees over the root orientation and every
/// parent-relative joint rotation.
pub fn mpjre(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    check_lengths(&pred.root_orientation, &gt.root_orientation)?;
    check_lengths(&pred.joint_rotations, &gt.joint_rotations)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 0..pred.len() {
        check_lengths(&pred.joint_rotations[t], &gt.joint_rotations[t])?;
        sum += geodesic_angle(&pred.root_orientation[t], &gt.root_orientation[t]);
        for (a, b) in pred.joint_rotations[t].iter().zip(&gt.joint_rotations[t]) {
            sum += geodesic_angle(a, b);
        }
        n += 1 + pred.joint_rotations[t].len();
    }
    Ok((sum / n as f64).to_degrees())
}

pub fn mpjve(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    check_lengths(&pred.root_translation, &gt.root_translation)?;
    let verts = |s: &MotionSequence| -> Vec<Vec<Vec3>> { joint_positions(skel, s).iter().map(|j| skel.virtual_vertices(j)).collect() };
    mean_point_error(&verts(pred), &verts(gt), JointAlign::Pelvis)
}

/// Mean global root translation error in millimeters.
pub fn mte(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    check_lengths(&pred.root_translation, &gt.root_translation)?;
    let sum: f64 = pred.root_translation.iter().zip(&gt.root_translation).map(|(a, b)| (a - b).norm()).sum();
    Ok(1000.0 * sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionMetricsReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpjre: f64,
    pub mpjve: f64,
    pub mte: f64,
}

impl MotionMetricsReport {
    pub fn compute(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton, align: JointAlign) -> Result<Self> {
        Ok(MotionMetricsReport {
            mpjpe: mpjpe_with(pred, gt, skel, align)?,
            pa_mpjpe: pa_mpjpe(pred, gt, skel)?,
            mpjre: mpjre(pred, gt)?,
            mpjve: mpjve(pred, gt, skel)?,
            mte: mte(pred, gt)?,
        })
    }

    /// Unweighted mean over sequences.
    pub fn mean(reports: &[MotionMetricsReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut out = MotionMetricsReport::default();
        for r in reports {
            out.mpjpe += r.mpjpe / n;
            out.pa_mpjpe += r.pa_mpjpe / n;
            out.mpjre += r.mpjre / n;
            out.mpjve += r.mpjve / n;
            out.mte += r.mte / n;
        }
        out
    }

    pub fn entries(&self) -> Vec<(&'static str, f64, &'static str)> {
        vec![
            ("motion.mpjpe", self.mpjpe, "mm"),
            ("motion.pa_mpjpe", self.pa_mpjpe, "mm"),
            ("motion.mpjre", self.mpjre, "deg"),
            ("motion.mpjve", self.mpjve, "mm"),
            ("motion.mte", self.mte, "mm"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::test_util::random_sequence;
    use crate::rotmath::test_util::random_rotation;
    use crate::rotmath::Rot3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Skeleton, MotionSequence, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skel = Skeleton::body22();
        let seq = random_sequence(&mut rng, &skel, 12);
        (skel, seq, rng)
    }

    #[test]
    fn identical_sequences_score_zero() {
        let (skel, seq, _) = setup(1);
        let r = MotionMetricsReport::compute(&seq, &seq, &skel, JointAlign::Pelvis).unwrap();
        assert_eq!(r.mpjpe, 0.0);
        assert!(r.pa_mpjpe < 1e-6);
        assert_eq!(r.mpjve, 0.0);
        assert_eq!(r.mte, 0.0);
        assert!(r.mpjre < 1e-6);
    }

    #[test]
    fn global_shift_moves_only_trajectory_error() {
        let (skel, seq, _) = setup(2);
        let mut shifted = seq.clone();
        shifted.root_translation.iter_mut().for_each(|t| *t += Vec3::new(0.1, 0.0, 0.0));
        assert!(mpjpe(&shifted, &seq, &skel).unwrap() < 1e-9);
        assert!((mte(&shifted, &seq).unwrap() - 100.0).abs() < 1e-9);
        assert!((mpjpe_with(&shifted, &seq, &skel, JointAlign::Global).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn single_joint_offset_matches_direct_sum() {
        let (skel, seq, _) = setup(3);
        let gt = joint_positions(&skel, &seq);
        let mut pred = gt.clone();
        pred[4][7] += Vec3::new(0.0, 0.01, 0.0);
        let got = mean_point_error(&pred, &gt, JointAlign::Pelvis).unwrap();
        let mut sum = 0.0;
        for f in 0..gt.len() {
            for j in 0..gt[f].len() {
                sum += ((pred[f][j] - pred[f][0]) - (gt[f][j] - gt[f][0])).norm();
            }
        }
        let frames = gt.len() as f64;
        assert!((got - 1000.0 * sum / (22.0 * frames)).abs() < 1e-9);
        assert!((got - 10.0 / (22.0 * frames)).abs() < 1e-9);
    }

    #[test]
    fn similarity_copies_have_zero_pa_error() {
        let (skel, seq, mut rng) = setup(4);
        let gt = joint_positions(&skel, &seq);
        let pred: Vec<Vec<Vec3>> = gt
            .iter()
            .map(|frame| {
                let (r, _) = random_rotation(&mut rng);
                let s = rng.random_range(0.5..2.0);
                let t = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                frame.iter().map(|p| r.rotate(p) * s + t).collect()
            })
            .collect();
        assert!(pa_point_error(&pred, &gt).unwrap() < 1e-6);
    }

    #[test]
    fn pa_never_exceeds_plain() {
        let skel = Skeleton::body22();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_sequence(&mut rng, &skel, 3);
            let b = random_sequence(&mut rng, &skel, 3);
            let pa = pa_mpjpe(&a, &b, &skel).unwrap();
            let plain = mpjpe(&a, &b, &skel).unwrap();
            assert!(pa <= plain + 1e-9, "{pa} > {plain}");
        }
    }

    #[test]
    fn one_joint_rotated_ninety_degrees() {
        let (_, seq, _) = setup(6);
        let mut pred = seq.clone();
        for f in pred.joint_rotations.iter_mut() {
            f[3] = f[3] * Rot3::rx(std::f64::consts::FRAC_PI_2);
        }
        let got = mpjre(&pred, &seq).unwrap();
        let mut sum = 0.0;
        for t in 0..seq.len() {
            sum += geodesic_angle(&pred.root_orientation[t], &seq.root_orientation[t]).to_degrees();
            for j in 0..21 {
                sum += geodesic_angle(&pred.joint_rotations[t][j], &seq.joint_rotations[t][j]).to_degrees();
            }
        }
        assert!((got - sum / (22.0 * seq.len() as f64)).abs() < 1e-9);
        assert!((got - 90.0 / 22.0).abs() < 1e-9);
    }

    #[test]
    fn vertex_error_counts_bone_midpoints() {
        let (skel, seq, _) = setup(7);
        let mut pred = seq.clone();
        for f in pred.joint_rotations.iter_mut() {
            f[18] = f[18] * Rot3::ry(0.3);
        }
        let v = mpjve(&pred, &seq, &skel).unwrap();
        let verts = |s: &MotionSequence| -> Vec<Vec<Vec3>> { joint_positions(&skel, s).iter().map(|j| skel.virtual_vertices(j)).collect() };
        let (a, b) = (verts(&pred), verts(&seq));
        assert_eq!(a[0].len(), 22 + 21);
        let mut sum = 0.0;
        for f in 0..a.len() {
            for k in 0..a[f].len() {
                sum += ((a[f][k] - a[f][0]) - (b[f][k] - b[f][0])).norm();
            }
        }
        assert!((v - 1000.0 * sum / (43.0 * a.len() as f64)).abs() < 1e-9);
        assert!(v > 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (skel, seq, _) = setup(8);
        let short = seq.crop(0, 5).unwrap();
        assert!(matches!(mpjpe(&short, &seq, &skel), Err(Error::LengthMismatch(5, 12))));
        assert!(matches!(mte(&short, &seq), Err(Error::LengthMismatch(..))));
    }
}
