use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{attention_mask, Layout, PosKind};
use super::net::{Head, MotionInput, SeqInputs};
use super::{Model, Stage, Variant};
use crate::error::{Error, Result};
use crate::imu::ImuSequence;
use crate::kinematics::MotionSequence;
use crate::nn::{AttentionMask, Graph, NodeId};
use crate::rotmath::{matrix_from_rot6, rot6_from_matrix, Rot3, Rot6, Vec3};
use crate::scene::{token_stream_to_layout, SceneLayout, MAX_OBJECTS, POSE_DIM, STOP_CLASS};
use crate::tokenizer::text as tk;
use crate::tokenizer::{MotionTokenSeq, MotionTokenizer, RootTokens, ANCHOR_DIM, BODY_FRAME_DIM, ROOT_CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Text sampling temperature; 0 picks the arg-max.
    pub temperature: f64,
    pub seed: u64,
    pub max_text_tokens: usize,
    pub max_objects: usize,
    /// Fail instead of truncating when a budget is hit.
    pub strict: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 0.0, seed: 0, max_text_tokens: 64, max_objects: MAX_OBJECTS, strict: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tokens: MotionTokenSeq,
    pub motion: MotionSequence,
    pub text: Vec<usize>,
    pub text_truncated: bool,
    pub scene: Option<SceneLayout>,
    pub scene_truncated: bool,
}

/// Draws a token from `logits / temperature`. Temperature 0 (or below)
/// returns the arg-max, preferring the lowest id on ties.
pub fn sample_token<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(!logits.is_empty(), "empty logits");
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| ((l - m) / temperature).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_rotation(a: &Rot3, b: &Rot3) -> Rot3 {
    let (x, y) = (rot6_from_matrix(a).0, rot6_from_matrix(b).0);
    let mut m = [0.0; 6];
    for i in 0..6 {
        m[i] = 0.5 * (x[i] + y[i]);
    }
    matrix_from_rot6(&Rot6(m)).unwrap_or(*a)
}

/// Blends `b` into `a` starting at frame `offset` of `a`: positions are
/// averaged, rotations take the chordal mean of their 6D encodings.
pub fn average_motions(a: &MotionSequence, b: &MotionSequence, offset: usize) -> Result<MotionSequence> {
    if offset + b.len() > a.len() {
        return Err(Error::OutOfRange { start: offset, end: offset + b.len(), len: a.len() });
    }
    let mut out = a.clone();
    for (k, t) in (offset..offset + b.len()).enumerate() {
        out.root_translation[t] = (a.root_translation[t] + b.root_translation[k]) * 0.5;
        out.root_orientation[t] = mean_rotation(&a.root_orientation[t], &b.root_orientation[k]);
        if a.joint_rotations[t].len() != b.joint_rotations[k].len() {
            return Err(Error::LengthMismatch(a.joint_rotations[t].len(), b.joint_rotations[k].len()));
        }
        for (j, r) in out.joint_rotations[t].iter_mut().enumerate() {
            *r = mean_rotation(&a.joint_rotations[t][j], &b.joint_rotations[k][j]);
        }
    }
    Ok(out)
}

/// Runs inference on the full clip and on the clip shifted by two frames
/// (anchored at the first result's frame 2), then averages the overlap.
pub fn shifted_window_average(model: &Model, imu: &ImuSequence, tok: &MotionTokenizer, stage: Stage, cfg: &SamplingConfig) -> Result<Prediction> {
    const SHIFT: usize = 2;
    let first = model.infer(imu, tok, stage, cfg)?;
    if imu.len() <= SHIFT + 1 {
        return Ok(first);
    }
    let shifted = imu.crop(SHIFT, imu.len() - SHIFT)?;
    let anchor = (first.motion.root_translation[SHIFT], first.motion.root_orientation[SHIFT]);
    let second = model.infer_anchored(&shifted, tok, stage, cfg, Some(anchor))?;
    let motion = average_motions(&first.motion, &second.motion, SHIFT)?;
    Ok(Prediction { motion, ..first })
}

struct Decoder<'a> {
    model: &'a Model,
    imu: &'a ImuSequence,
    root: RootTokens,
    body: Vec<Vec<f64>>,
    text: Vec<usize>,
    classes: Vec<usize>,
}

impl Decoder<'_> {
    fn run(&self, g: &mut Graph, layout: &Layout, len: usize, motion: MotionInput, mask: AttentionMask) -> Result<NodeId> {
        let inp = SeqInputs {
            imu: self.imu,
            codes: &self.root.vq,
            means: &self.root.mean,
            stds: &self.root.std,
            body: &self.body,
            text: &self.text,
            text_dropped: false,
            classes: &self.classes,
        };
        let x = self.model.embed(g, &inp, layout, len, motion)?;
        Ok(self.model.forward(g, x, &Rc::new(mask), None))
    }

    /// Fills the token at `p` from the hidden row `row`.
    fn fill(&mut self, g: &mut Graph, h: NodeId, layout: &Layout, p: usize, row: usize) {
        let bins = self.model.vocabs.bins;
        let cpw = layout.spec.codes_per_window;
        match layout.kind(p) {
            PosKind::RootCode { window, k } => {
                self.root.vq[window * cpw + k] = argmax(&self.model.logits_at(g, h, row, Head::Code));
            }
            PosKind::RootMean { window, channel } => {
                let l = self.model.logits_at(g, h, row, Head::Mean);
                self.root.mean[window * ROOT_CHANNELS + channel] = channel * bins + argmax(&l[channel * bins..(channel + 1) * bins]);
            }
            PosKind::RootStd { window, channel } => {
                let l = self.model.logits_at(g, h, row, Head::Std);
                self.root.std[window * ROOT_CHANNELS + channel] = channel * bins + argmax(&l[channel * bins..(channel + 1) * bins]);
            }
            PosKind::Body(i) => self.body[i] = self.model.logits_at(g, h, row, Head::Body),
            k => unreachable!("not a motion position: {k:?}"),
        }
    }
}

impl Model {
    pub fn infer(&self, imu: &ImuSequence, tok: &MotionTokenizer, stage: Stage, cfg: &SamplingConfig) -> Result<Prediction> {
        self.infer_anchored(imu, tok, stage, cfg, None)
    }

    /// Inference with an optional world anchor for frame 0; without one the
    /// predicted canonical anchor is used.
    pub fn infer_anchored(
        &self,
        imu: &ImuSequence,
        tok: &MotionTokenizer,
        stage: Stage,
        cfg: &SamplingConfig,
        anchor: Option<(Vec3, Rot3)>,
    ) -> Result<Prediction> {
        if imu.is_empty() {
            return Err(Error::TooShort { frames: 0, min: 1 });
        }
        if imu.active.count() == 0 {
            return Err(Error::EmptyActiveSet);
        }
        if tok.config.window != self.vocabs.root_window || tok.codebook_size() != self.vocabs.codebook || tok.bins.bins != self.vocabs.bins {
            return Err(Error::ShapeMismatch("tokenizer does not match the model vocabularies".into()));
        }
        let frames = imu.len();
        let spec = self.layout_spec(frames, 0, None);
        let nw = spec.root_windows;
        let mut dec = Decoder {
            model: self,
            imu,
            root: RootTokens { vq: vec![0; nw * spec.codes_per_window], mean: vec![0; nw * ROOT_CHANNELS], std: vec![0; nw * ROOT_CHANNELS] },
            body: vec![vec![0.0; self.config.body_window * BODY_FRAME_DIM]; spec.body_windows],
            text: Vec::new(),
            classes: Vec::new(),
        };
        let layout = Layout::new(spec);
        let motion_end = layout.motion_end();
        let anchor_vec: Vec<f64>;
        match self.config.variant {
            Variant::Bidirectional => {
                let mut g = Graph::new(&self.params);
                let h = dec.run(&mut g, &layout, motion_end, MotionInput::Queries, AttentionMask::full(motion_end))?;
                for p in layout.som + 1..motion_end {
                    dec.fill(&mut g, h, &layout, p, p);
                }
                anchor_vec = self.logits_at(&mut g, h, layout.som, Head::Anchor);
            }
            Variant::Autoregressive => {
                let mut a = None;
                for p in layout.som + 1..motion_end {
                    let mut g = Graph::new(&self.params);
                    let h = dec.run(&mut g, &layout, p, MotionInput::Tokens, AttentionMask::causal(p))?;
                    if a.is_none() {
                        a = Some(self.logits_at(&mut g, h, layout.som, Head::Anchor));
                    }
                    dec.fill(&mut g, h, &layout, p, p - 1);
                }
                anchor_vec = a.expect("motion block is never empty");
            }
        }
        let mut anchor_arr = [0.0; ANCHOR_DIM];
        anchor_arr.copy_from_slice(&anchor_vec);
        let tokens = MotionTokenSeq { frames, root: dec.root.clone(), body: dec.body.clone(), anchor: anchor_arr };
        let (at, ar) = match anchor {
            Some(a) => a,
            None => tokens.anchor_pose()?,
        };
        let motion = tok.decode(&tokens, at, ar, imu.fps)?;

        // Caption, one token at a time.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut text_truncated = true;
        while dec.text.len() < cfg.max_text_tokens {
            let layout = Layout::new(self.layout_spec(frames, dec.text.len(), None));
            let len = layout.text.end;
            let mut g = Graph::new(&self.params);
            let h = dec.run(&mut g, &layout, len, MotionInput::Tokens, attention_mask(&layout, self.config.variant, len))?;
            let next = sample_token(&self.logits_at(&mut g, h, len - 1, Head::Text), cfg.temperature, &mut rng);
            if next == tk::EOT {
                text_truncated = false;
                break;
            }
            dec.text.push(next);
        }
        if text_truncated && cfg.strict {
            return Err(Error::BudgetExceeded { what: "text", budget: cfg.max_text_tokens });
        }

        let (scene, scene_truncated) = match stage {
            Stage::One => (None, false),
            Stage::Two => {
                let (s, t) = self.decode_scene(&mut dec, frames, cfg)?;
                (Some(s), t)
            }
        };
        Ok(Prediction { tokens, motion, text: dec.text, text_truncated, scene, scene_truncated })
    }

    fn decode_scene(&self, dec: &mut Decoder, frames: usize, cfg: &SamplingConfig) -> Result<(SceneLayout, bool)> {
        let text_len = dec.text.len();
        let mut truncated = true;
        while dec.classes.len() < cfg.max_objects {
            let layout = Layout::new(self.layout_spec(frames, text_len, Some(dec.classes.len())));
            let len = layout.scene.as_ref().expect("scene block").classes.end;
            let mut g = Graph::new(&self.params);
            let h = dec.run(&mut g, &layout, len, MotionInput::Tokens, attention_mask(&layout, self.config.variant, len))?;
            let next = argmax(&self.logits_at(&mut g, h, len - 1, Head::Class));
            if next == STOP_CLASS {
                truncated = false;
                break;
            }
            dec.classes.push(next);
        }
        if truncated && cfg.strict {
            return Err(Error::BudgetExceeded { what: "object", budget: cfg.max_objects });
        }
        let k = dec.classes.len();
        if k == 0 {
            return Ok((SceneLayout::new(Vec::new()), truncated));
        }
        let layout = Layout::new(self.layout_spec(frames, text_len, Some(k)));
        let mut g = Graph::new(&self.params);
        let h = dec.run(&mut g, &layout, layout.len, MotionInput::Tokens, attention_mask(&layout, self.config.variant, layout.len))?;
        let rows: Vec<usize> = layout.scene.as_ref().expect("scene block").poses.clone().collect();
        let t = self.poses_at(&mut g, h, &rows);
        let poses: Vec<[f64; POSE_DIM]> = (0..k)
            .map(|i| {
                let mut p = [0.0; POSE_DIM];
                p.copy_from_slice(t.row(i));
                p
            })
            .collect();
        Ok((token_stream_to_layout(&dec.classes, &poses)?, truncated))
    }
}
