//! Fixtures shared by the benchmarks.

use imu4d_core::kinematics::{MotionSequence, Skeleton, DEFAULT_FPS};
use imu4d_core::model::{make_sample, ModelConfig, RawSample, Sample, Variant, Vocabs};
use imu4d_core::imu::{default_placements, synthesize_imu};
use imu4d_core::rotmath::{Rot3, Vec3};
use imu4d_core::tokenizer::{MotionTokenizer, TextVocab, TokenizerConfig, VqConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A walking-like clip with swinging legs and a slowly turning root.
pub fn walking_clip(frames: usize, seed: u64) -> MotionSequence {
    let skel = Skeleton::body22();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed = rng.random_range(0.8..1.4);
    let turn = rng.random_range(-0.5..0.5);
    let mut seq = MotionSequence::rest(&skel, frames, DEFAULT_FPS);
    for f in 0..frames {
        let t = f as f64 / DEFAULT_FPS as f64;
        let yaw = turn * t;
        seq.root_orientation[f] = Rot3::ry(yaw);
        seq.root_translation[f] = Vec3::new(speed * t * yaw.sin(), skel.rest_pelvis_height(), speed * t * yaw.cos());
        let phase = (2.0 * std::f64::consts::PI * t).sin();
        seq.joint_rotations[f][0] = Rot3::rx(-0.4 * phase);
        seq.joint_rotations[f][1] = Rot3::rx(0.4 * phase);
    }
    seq
}

pub fn small_tokenizer() -> MotionTokenizer {
    let corpus: Vec<_> = (0..16).map(|s| walking_clip(64, s)).collect();
    let cfg = TokenizerConfig { vq: VqConfig { codebook_size: 32, code_dim: 16, hidden: 32, steps: 50, ..VqConfig::default() }, ..TokenizerConfig::default() };
    MotionTokenizer::fit(&corpus, &cfg).expect("fit").0
}

pub fn small_model_inputs(frames: usize, variant: Variant) -> (imu4d_core::model::Model, MotionTokenizer, Sample) {
    let tok = small_tokenizer();
    let text = TextVocab::build(["a person walks forward"]);
    let vocabs = Vocabs::from_parts(&tok, &text, 16);
    let cfg = ModelConfig { hidden: 64, layers: 2, heads: 4, dropout: 0.0, variant, ..ModelConfig::default() };
    let model = imu4d_core::model::Model::new(cfg, vocabs).expect("model");
    let skel = Skeleton::body22();
    let motion = walking_clip(frames, 99);
    let imu = synthesize_imu(&skel, &motion, &default_placements()).expect("imu");
    let raw = RawSample { motion, imu, text: text.encode("a person walks forward"), scene: None };
    let sample = make_sample(&raw, &tok, false).expect("sample");
    (model, tok, sample)
}
