//! Training samples and on-the-fly augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::{inject_noise, mask_devices, sample_device_config, ImuSequence, NoiseParams, NUM_SLOTS};
use crate::kinematics::{crop_and_align, MotionSequence};
use crate::scene::{layout_to_token_stream, SceneLayout, SceneTokens};
use crate::tokenizer::{MotionTokenSeq, MotionTokenizer};

/// A motion clip with its synchronized IMU, caption ids and optional scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub motion: MotionSequence,
    pub imu: ImuSequence,
    pub text: Vec<usize>,
    pub scene: Option<SceneLayout>,
}

/// Model-ready sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub imu: ImuSequence,
    pub motion: MotionTokenSeq,
    pub text: Vec<usize>,
    /// Text inputs are replaced by `<PAD>` and the text loss is skipped.
    pub text_dropped: bool,
    pub scene: Option<SceneTokens>,
}

impl Sample {
    pub fn frames(&self) -> usize {
        self.motion.frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Crop length; clips shorter than this are used whole.
    pub frames: usize,
    pub random_crop: bool,
    pub text_dropout: f64,
    pub noise: bool,
    pub noise_params: NoiseParams,
    /// Sample a plausible device subset of size `min_devices..=5`.
    pub random_devices: bool,
    pub min_devices: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            frames: 60,
            random_crop: true,
            text_dropout: 0.3,
            noise: true,
            noise_params: NoiseParams::default(),
            random_devices: true,
            min_devices: 1,
        }
    }
}

impl AugmentConfig {
    /// No randomness at all: whole clips, all devices, clean signals, text kept.
    pub fn none(frames: usize) -> Self {
        AugmentConfig {
            frames,
            random_crop: false,
            text_dropout: 0.0,
            noise: false,
            noise_params: NoiseParams::zero(),
            random_devices: false,
            min_devices: NUM_SLOTS,
        }
    }
}

/// Tokenizes an already aligned clip.
pub fn make_sample(raw: &RawSample, tok: &MotionTokenizer, text_dropped: bool) -> Result<Sample> {
    if raw.imu.len() != raw.motion.len() {
        return Err(Error::LengthMismatch(raw.imu.len(), raw.motion.len()));
    }
    Ok(Sample {
        imu: raw.imu.clone(),
        motion: tok.encode(&raw.motion)?,
        text: raw.text.clone(),
        text_dropped,
        scene: raw.scene.as_ref().map(layout_to_token_stream),
    })
}

pub fn augment_sample<R: Rng>(rng: &mut R, raw: &RawSample, tok: &MotionTokenizer, cfg: &AugmentConfig) -> Result<Sample> {
    if raw.imu.len() != raw.motion.len() {
        return Err(Error::LengthMismatch(raw.imu.len(), raw.motion.len()));
    }
    let t = raw.motion.len();
    let len = cfg.frames.min(t);
    let start = if cfg.random_crop && t > len { rng.random_range(0..=t - len) } else { 0 };
    let (motion, tf) = crop_and_align(&raw.motion, start, len)?;
    let mut imu = raw.imu.crop(start, len)?;
    if cfg.noise {
        let params = NoiseParams { seed: rng.random(), ..cfg.noise_params };
        imu = inject_noise(&imu, &params)?;
    }
    if cfg.random_devices {
        let lo = cfg.min_devices.clamp(1, NUM_SLOTS);
        let n = rng.random_range(lo..=NUM_SLOTS);
        imu = mask_devices(&imu, &sample_device_config(rng, n)?)?;
    }
    let text_dropped = cfg.text_dropout > 0.0 && rng.random_bool(cfg.text_dropout.min(1.0));
    let scene = raw.scene.as_ref().map(|s| s.transformed(&tf));
    make_sample(&RawSample { motion, imu, text: raw.text.clone(), scene }, tok, text_dropped)
}

pub fn augment_batch<R: Rng>(rng: &mut R, raws: &[RawSample], tok: &MotionTokenizer, cfg: &AugmentConfig) -> Result<Vec<Sample>> {
    raws.iter().map(|r| augment_sample(rng, r, tok, cfg)).collect()
}
