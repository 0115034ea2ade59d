//! Multimodal transformer mapping IMU windows to motion tokens, a caption
//! and a scene layout.

mod infer;
pub mod layout;
mod net;
mod sample;

use serde::{Deserialize, Serialize};

pub use infer::{average_motions, sample_token, shifted_window_average, Prediction, SamplingConfig};
pub use layout::{attention_mask, Layout, LayoutSpec, PosKind};
pub use net::{LossBreakdown, Model, StepStats};
pub use sample::{augment_batch, augment_sample, make_sample, AugmentConfig, RawSample, Sample};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "bi")]
    Bidirectional,
    #[serde(rename = "ar")]
    Autoregressive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Bidirectional => "bi",
            Variant::Autoregressive => "ar",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "bi" => Some(Variant::Bidirectional),
            "ar" => Some(Variant::Autoregressive),
            _ => None,
        }
    }
}

/// Stage 1 trains motion and text; stage 2 adds the scene block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `hidden`.
    pub ffn_mult: usize,
    /// Frames per IMU window and per body token.
    pub body_window: usize,
    pub max_len: usize,
    pub variant: Variant,
    pub dropout: f64,
    pub seed: u64,
    pub lambda_body: f64,
    pub lambda_pose: f64,
    pub lambda_anchor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            layers: 4,
            heads: 4,
            ffn_mult: 4,
            body_window: 4,
            max_len: 512,
            variant: Variant::Bidirectional,
            dropout: 0.1,
            seed: 0,
            lambda_body: 1.0,
            lambda_pose: 1.0,
            lambda_anchor: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig("hidden size must be a positive multiple of the head count".into()));
        }
        if self.ffn_mult == 0 || self.body_window == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig("ffn multiple, body window and max length must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Vocabulary and token-shape sizes fixed by the tokenizer, caption corpus and taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub codebook: usize,
    /// Bins per μ/σ channel; the composite vocabularies hold 9 × bins ids.
    pub bins: usize,
    pub text: usize,
    /// Object classes excluding the stop class.
    pub classes: usize,
    pub root_window: usize,
    pub codes_per_window: usize,
}

impl Vocabs {
    pub fn from_parts(tok: &crate::tokenizer::MotionTokenizer, text: &crate::tokenizer::TextVocab, classes: usize) -> Self {
        Vocabs {
            codebook: tok.codebook_size(),
            bins: tok.bins.bins,
            text: text.len(),
            classes,
            root_window: tok.config.window,
            codes_per_window: tok.codes_per_window(),
        }
    }

    pub fn stat_vocab(&self) -> usize {
        crate::tokenizer::ROOT_CHANNELS * self.bins
    }
}
