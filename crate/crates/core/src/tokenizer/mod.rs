//! Motion tokenization: relative root motion becomes discrete window tokens
//! (VQ codes for the normalized shape, binned μ/σ for scale), body pose stays
//! continuous. Also hosts the caption vocabulary.

pub mod bins;
pub mod text;
pub mod vq;

use serde::{Deserialize, Serialize};

pub use bins::{BinQuantizer, ChannelBins, Stat};
pub use text::TextVocab;
pub use vq::{train_vq, Codebook, VqAutoencoder, VqConfig, VqReport};

use crate::error::{Error, Result};
use crate::kinematics::{
    from_relative_root, to_relative_root, yaw_rotation, MotionSequence, RelativeRootSequence, NUM_BODY_JOINTS,
};
use crate::rotmath::{matrix_from_rot6, rot6_from_matrix, Rot3, Rot6, Vec3};

/// Translation delta (3) followed by the rotation delta in 6D (6).
pub const ROOT_CHANNELS: usize = 9;
pub type RootFrame = [f64; ROOT_CHANNELS];
/// Floats in one frame of body target (21 joints × 6D).
pub const BODY_FRAME_DIM: usize = NUM_BODY_JOINTS * 6;
/// First-frame root tilt (6D, heading removed) and pelvis height.
pub const ANCHOR_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Frames per root window.
    pub window: usize,
    /// Frames folded into one VQ token.
    pub downsample: usize,
    pub bins: usize,
    pub sigma_floor: f64,
    /// Frames per body target vector.
    pub body_window: usize,
    /// Stride of the sliding windows used for fitting.
    pub train_stride: usize,
    pub vq: VqConfig,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            window: 16,
            downsample: 4,
            bins: 64,
            sigma_floor: 1e-6,
            body_window: 4,
            train_stride: 4,
            vq: VqConfig::default(),
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.downsample == 0 || !self.window.is_multiple_of(self.downsample) {
            return Err(Error::InvalidConfig("window must be ≥ 2 and a multiple of the downsample factor".into()));
        }
        if self.bins == 0 || self.body_window == 0 || self.train_stride == 0 {
            return Err(Error::InvalidConfig("bins, body window and stride must be positive".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma floor must be positive".into()));
        }
        Ok(())
    }

    pub fn codes_per_window(&self) -> usize {
        self.window / self.downsample
    }
}

/// Per-channel mean and std (floored at `eps`) with the standardized window.
pub fn window_normalize(w: &[RootFrame], eps: f64) -> (Vec<RootFrame>, RootFrame, RootFrame) {
    let n = w.len() as f64;
    let mut mu = [0.0; ROOT_CHANNELS];
    let mut sigma = [0.0; ROOT_CHANNELS];
    for c in 0..ROOT_CHANNELS {
        mu[c] = w.iter().map(|f| f[c]).sum::<f64>() / n;
        let var = w.iter().map(|f| (f[c] - mu[c]).powi(2)).sum::<f64>() / n;
        sigma[c] = var.sqrt().max(eps);
    }
    let norm = w.iter().map(|f| std::array::from_fn(|c| (f[c] - mu[c]) / sigma[c])).collect();
    (norm, mu, sigma)
}

pub fn window_denormalize(w: &[RootFrame], mu: &RootFrame, sigma: &RootFrame) -> Vec<RootFrame> {
    w.iter().map(|f| std::array::from_fn(|c| f[c] * sigma[c] + mu[c])).collect()
}

/// Per-frame root channels. Frame 0 has no delta and reuses frame 1 so the
/// first window carries no artificial outlier.
pub fn root_channels(rel: &RelativeRootSequence) -> Vec<RootFrame> {
    let mut out: Vec<RootFrame> = (0..rel.len())
        .map(|t| {
            let d = rel.translation_delta[t];
            let r = rot6_from_matrix(&rel.rotation_delta[t]).0;
            [d.x, d.y, d.z, r[0], r[1], r[2], r[3], r[4], r[5]]
        })
        .collect();
    if out.len() > 1 {
        out[0] = out[1];
    }
    out
}

/// Channels padded to a multiple of `window` with still frames.
fn padded_channels(rel: &RelativeRootSequence, window: usize) -> Vec<RootFrame> {
    let mut ch = root_channels(rel);
    let still = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let target = ch.len().div_ceil(window) * window;
    ch.resize(target, still);
    ch
}

/// Discrete root tokens; per window: `codes_per_window` VQ ids, then one
/// composite μ id and one composite σ id per channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootTokens {
    pub vq: Vec<usize>,
    pub mean: Vec<usize>,
    pub std: Vec<usize>,
}

impl RootTokens {
    pub fn windows(&self) -> usize {
        self.mean.len() / ROOT_CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTokenSeq {
    pub frames: usize,
    pub root: RootTokens,
    /// One vector of `body_window × 21 × 6` floats per body window.
    pub body: Vec<Vec<f64>>,
    pub anchor: [f64; ANCHOR_DIM],
}

impl MotionTokenSeq {
    /// Frame-0 root pose in the canonical frame: origin below the pelvis, heading +Z.
    pub fn anchor_pose(&self) -> Result<(Vec3, Rot3)> {
        let r = matrix_from_rot6(&Rot6::from_slice(&self.anchor[..6]))?;
        let r = yaw_rotation(&r).transpose() * r;
        Ok((Vec3::new(0.0, self.anchor[6], 0.0), r))
    }
}

pub fn anchor_vector(root_t: &Vec3, root_r: &Rot3) -> [f64; ANCHOR_DIM] {
    let tilt = rot6_from_matrix(&(yaw_rotation(root_r).transpose() * *root_r)).0;
    let mut out = [0.0; ANCHOR_DIM];
    out[..6].copy_from_slice(&tilt);
    out[6] = root_t.y;
    out
}

/// Groups absolute joint rotations into body-window target vectors,
/// padding the last window by frame repetition.
pub fn encode_body(joint_rotations: &[Vec<Rot3>], body_window: usize) -> Vec<Vec<f64>> {
    let t = joint_rotations.len();
    let windows = t.div_ceil(body_window);
    (0..windows)
        .map(|w| {
            let mut v = Vec::with_capacity(body_window * BODY_FRAME_DIM);
            for k in 0..body_window {
                let f = (w * body_window + k).min(t - 1);
                for r in &joint_rotations[f] {
                    v.extend_from_slice(&rot6_from_matrix(r).0);
                }
            }
            v
        })
        .collect()
}

/// Inverse of [`encode_body`], truncated to `frames`.
pub fn body_targets_to_rotations(vectors: &[Vec<f64>], frames: usize, body_window: usize) -> Result<Vec<Vec<Rot3>>> {
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let v = vectors
            .get(f / body_window)
            .ok_or_else(|| Error::ShapeMismatch(format!("no body window for frame {f}")))?;
        if v.len() != body_window * BODY_FRAME_DIM {
            return Err(Error::ShapeMismatch(format!("body vector of length {}", v.len())));
        }
        let base = (f % body_window) * BODY_FRAME_DIM;
        let rots = (0..NUM_BODY_JOINTS)
            .map(|j| matrix_from_rot6(&Rot6::from_slice(&v[base + 6 * j..base + 6 * j + 6])))
            .collect::<Result<Vec<_>>>()?;
        out.push(rots);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub windows: usize,
    pub vq: VqReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTokenizer {
    pub config: TokenizerConfig,
    pub vq: VqAutoencoder,
    pub bins: BinQuantizer,
}

impl MotionTokenizer {
    /// Fits bins and the autoencoder on sliding windows of `corpus`.
    pub fn fit(corpus: &[MotionSequence], config: &TokenizerConfig) -> Result<(Self, FitReport)> {
        config.validate()?;
        let mut normalized = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for seq in corpus {
            seq.validate(1e-6)?;
            let ch = padded_channels(&to_relative_root(seq), config.window);
            let mut start = 0;
            while start + config.window <= ch.len() {
                let (n, mu, sigma) = window_normalize(&ch[start..start + config.window], config.sigma_floor);
                normalized.push(n.into_iter().flatten().collect::<Vec<f64>>());
                means.push(mu);
                stds.push(sigma);
                start += config.train_stride;
            }
        }
        if normalized.is_empty() {
            return Err(Error::InsufficientData("no training windows".into()));
        }
        let bins = BinQuantizer::fit(&means, &stds, config.bins)?;
        let (vq, report) = train_vq(&normalized, config.downsample * ROOT_CHANNELS, &config.vq)?;
        let windows = normalized.len();
        Ok((MotionTokenizer { config: config.clone(), vq, bins }, FitReport { windows, vq: report }))
    }

    pub fn codes_per_window(&self) -> usize {
        self.config.codes_per_window()
    }

    pub fn codebook_size(&self) -> usize {
        self.vq.codebook.len()
    }

    /// Composite μ (and σ) vocabulary size.
    pub fn stat_vocab(&self) -> usize {
        self.bins.vocab_size()
    }

    pub fn root_windows(&self, frames: usize) -> usize {
        frames.div_ceil(self.config.window)
    }

    pub fn body_windows(&self, frames: usize) -> usize {
        frames.div_ceil(self.config.body_window)
    }

    pub fn encode_root(&self, rel: &RelativeRootSequence) -> Result<RootTokens> {
        if rel.is_empty() {
            return Err(Error::InsufficientData("empty motion".into()));
        }
        let win = self.config.window;
        let ch = padded_channels(rel, win);
        let mut tokens = RootTokens { vq: Vec::new(), mean: Vec::new(), std: Vec::new() };
        let mut flat = Vec::new();
        for w in ch.chunks(win) {
            let (n, mu, sigma) = window_normalize(w, self.config.sigma_floor);
            flat.push(n.into_iter().flatten().collect::<Vec<f64>>());
            for c in 0..ROOT_CHANNELS {
                tokens.mean.push(self.bins.composite(c, self.bins.quantize_stat(Stat::Mean, c, mu[c])));
                tokens.std.push(self.bins.composite(c, self.bins.quantize_stat(Stat::Std, c, sigma[c])));
            }
        }
        tokens.vq = self.vq.encode(&vq::segments_of(&flat, self.vq.segment_dim));
        Ok(tokens)
    }

    /// Root channels of one window from its tokens.
    fn decode_window(&self, vq_ids: &[usize], mean: &[usize], std: &[usize]) -> Result<Vec<RootFrame>> {
        let seg = self.vq.decode(vq_ids)?;
        let mut frames: Vec<RootFrame> =
            seg.data.chunks(ROOT_CHANNELS).map(|c| std::array::from_fn(|i| c[i])).collect();
        // Re-center so the window mean is carried by μ alone.
        for c in 0..ROOT_CHANNELS {
            let m = frames.iter().map(|f| f[c]).sum::<f64>() / frames.len() as f64;
            frames.iter_mut().for_each(|f| f[c] -= m);
        }
        let mut mu = [0.0; ROOT_CHANNELS];
        let mut sigma = [0.0; ROOT_CHANNELS];
        for c in 0..ROOT_CHANNELS {
            let (mc, mb) = self.bins.split(mean[c])?;
            let (sc, sb) = self.bins.split(std[c])?;
            if mc != c || sc != c {
                return Err(Error::InvalidToken { id: if mc != c { mean[c] } else { std[c] }, vocab: self.stat_vocab() });
            }
            mu[c] = self.bins.dequantize_stat(Stat::Mean, c, mb);
            sigma[c] = self.bins.dequantize_stat(Stat::Std, c, sb);
        }
        Ok(window_denormalize(&frames, &mu, &sigma))
    }

    /// Accumulates decoded deltas from the anchor; joint rotations are left at identity.
    pub fn decode_root(&self, tokens: &RootTokens, frames: usize, anchor_t: Vec3, anchor_r: Rot3) -> Result<RelativeRootSequence> {
        let nw = self.root_windows(frames);
        let cpw = self.codes_per_window();
        if tokens.windows() != nw || tokens.vq.len() != nw * cpw || tokens.std.len() != nw * ROOT_CHANNELS {
            return Err(Error::LengthMismatch(tokens.windows(), nw));
        }
        let mut channels = Vec::with_capacity(nw * self.config.window);
        for w in 0..nw {
            let r = w * ROOT_CHANNELS..(w + 1) * ROOT_CHANNELS;
            channels.extend(self.decode_window(&tokens.vq[w * cpw..(w + 1) * cpw], &tokens.mean[r.clone()], &tokens.std[r])?);
        }
        let mut rel = RelativeRootSequence {
            fps: crate::kinematics::DEFAULT_FPS,
            anchor_translation: anchor_t,
            anchor_orientation: anchor_r,
            translation_delta: Vec::with_capacity(frames),
            rotation_delta: Vec::with_capacity(frames),
            joint_rotations: vec![vec![Rot3::identity(); NUM_BODY_JOINTS]; frames],
        };
        for (t, f) in channels.iter().take(frames).enumerate() {
            if t == 0 {
                rel.translation_delta.push(Vec3::zeros());
                rel.rotation_delta.push(Rot3::identity());
            } else {
                rel.translation_delta.push(Vec3::new(f[0], f[1], f[2]));
                rel.rotation_delta.push(matrix_from_rot6(&Rot6::from_slice(&f[3..]))?);
            }
        }
        Ok(rel)
    }

    pub fn encode(&self, seq: &MotionSequence) -> Result<MotionTokenSeq> {
        let rel = to_relative_root(seq);
        Ok(MotionTokenSeq {
            frames: seq.len(),
            root: self.encode_root(&rel)?,
            body: encode_body(&seq.joint_rotations, self.config.body_window),
            anchor: anchor_vector(&seq.root_translation[0], &seq.root_orientation[0]),
        })
    }

    pub fn decode(&self, tokens: &MotionTokenSeq, anchor_t: Vec3, anchor_r: Rot3, fps: u32) -> Result<MotionSequence> {
        let mut rel = self.decode_root(&tokens.root, tokens.frames, anchor_t, anchor_r)?;
        rel.fps = fps;
        rel.joint_rotations = body_targets_to_rotations(&tokens.body, tokens.frames, self.config.body_window)?;
        Ok(from_relative_root(&rel))
    }

    /// Decoded channels of all training-style windows, for diagnostics.
    pub fn reconstruct_channels(&self, rel: &RelativeRootSequence) -> Result<Vec<RootFrame>> {
        let toks = self.encode_root(rel)?;
        let cpw = self.codes_per_window();
        let mut out = Vec::new();
        for w in 0..toks.windows() {
            let r = w * ROOT_CHANNELS..(w + 1) * ROOT_CHANNELS;
            out.extend(self.decode_window(&toks.vq[w * cpw..(w + 1) * cpw], &toks.mean[r.clone()], &toks.std[r])?);
        }
        out.truncate(rel.len());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::test_util::random_sequence;
    use crate::kinematics::Skeleton;
    use crate::rotmath::{geodesic_angle, test_util::random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_constant_window() {
        let v = [0.375, -1.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let (n, mu, sigma) = window_normalize(&[v; 16], 1e-6);
        assert!(n.iter().flatten().all(|x| *x == 0.0));
        assert_eq!(mu, v);
        assert_eq!(sigma, [1e-6; 9]);
    }

    #[test]
    fn normalize_plus_minus_one() {
        let mut a = [0.0; 9];
        let mut b = [0.0; 9];
        a[4] = -1.0;
        b[4] = 1.0;
        let (n, mu, sigma) = window_normalize(&[a, b, a, b], 1e-6);
        assert_eq!(mu[4], 0.0);
        assert_eq!(sigma[4], 1.0);
        assert_eq!(n.iter().map(|f| f[4]).collect::<Vec<_>>(), vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let w: Vec<RootFrame> = (0..16).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
            let (n, mu, sigma) = window_normalize(&w, 1e-6);
            let back = window_denormalize(&n, &mu, &sigma);
            for (a, b) in back.iter().flatten().zip(w.iter().flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn body_identity_and_padding() {
        let rots = vec![vec![Rot3::identity(); NUM_BODY_JOINTS]; 7];
        let v = encode_body(&rots, 4);
        assert_eq!(v.len(), 2);
        for chunk in v[0].chunks(6) {
            assert_eq!(chunk, Rot6::IDENTITY.0);
        }
        assert_eq!(v[1].len(), 4 * BODY_FRAME_DIM);
        assert_eq!(body_targets_to_rotations(&v, 7, 4).unwrap().len(), 7);
    }

    #[test]
    fn body_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rots: Vec<Vec<Rot3>> = (0..10).map(|_| (0..NUM_BODY_JOINTS).map(|_| random_rotation(&mut rng).0).collect()).collect();
        let back = body_targets_to_rotations(&encode_body(&rots, 4), 10, 4).unwrap();
        for (a, b) in rots.iter().flatten().zip(back.iter().flatten()) {
            assert!(geodesic_angle(a, b) < 1e-9);
        }
    }

    fn small_config() -> TokenizerConfig {
        TokenizerConfig {
            bins: 16,
            vq: VqConfig { codebook_size: 16, code_dim: 8, hidden: 32, steps: 150, batch: 16, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn static_sequence_decodes_static() {
        let skel = Skeleton::body22();
        let mut seq = MotionSequence::rest(&skel, 40, 30);
        seq.root_translation.iter_mut().for_each(|p| p.y = 0.94);
        let corpus = vec![seq.clone(); 20];
        let (tok, _) = MotionTokenizer::fit(&corpus, &small_config()).unwrap();
        let toks = tok.encode(&seq).unwrap();
        assert_eq!(toks.root.windows(), 3);
        assert_eq!(toks.body.len(), 10);
        let out = tok.decode(&toks, seq.root_translation[0], seq.root_orientation[0], 30).unwrap();
        for (a, b) in out.root_translation.iter().zip(&seq.root_translation) {
            assert!((a - b).norm() < 1e-4);
        }
        let (t0, r0) = toks.anchor_pose().unwrap();
        assert!((t0 - seq.root_translation[0]).norm() < 1e-12);
        assert!(r0.max_abs_diff(&Rot3::identity()) < 1e-12);
    }

    #[test]
    fn anchor_keeps_tilt_drops_heading() {
        let tilt = Rot3::rx(0.2);
        let r = Rot3::ry(1.1) * tilt;
        let toks = MotionTokenSeq {
            frames: 1,
            root: RootTokens { vq: vec![], mean: vec![], std: vec![] },
            body: vec![],
            anchor: anchor_vector(&Vec3::new(3.0, 0.8, -2.0), &r),
        };
        let (t, a) = toks.anchor_pose().unwrap();
        assert_eq!(t, Vec3::new(0.0, 0.8, 0.0));
        assert!(a.max_abs_diff(&tilt) < 1e-12);
    }

    #[test]
    fn invalid_tokens_are_errors() {
        let skel = Skeleton::body22();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus: Vec<_> = (0..20).map(|_| random_sequence(&mut rng, &skel, 40)).collect();
        let (tok, _) = MotionTokenizer::fit(&corpus, &small_config()).unwrap();
        let mut toks = tok.encode(&corpus[0]).unwrap();
        toks.root.vq[0] = tok.codebook_size();
        assert!(matches!(tok.decode(&toks, Vec3::zeros(), Rot3::identity(), 30), Err(Error::InvalidToken { .. })));
        let mut toks = tok.encode(&corpus[0]).unwrap();
        toks.root.mean[0] = tok.stat_vocab() + 3;
        assert!(matches!(tok.decode(&toks, Vec3::zeros(), Rot3::identity(), 30), Err(Error::InvalidToken { .. })));
        let mut toks = tok.encode(&corpus[0]).unwrap();
        // μ id of channel 1 placed in channel 0's slot
        toks.root.mean[0] = tok.bins.composite(1, 0);
        assert!(matches!(tok.decode(&toks, Vec3::zeros(), Rot3::identity(), 30), Err(Error::InvalidToken { .. })));
    }

    #[test]
    fn fitting_is_deterministic() {
        let skel = Skeleton::body22();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus: Vec<_> = (0..20).map(|_| random_sequence(&mut rng, &skel, 40)).collect();
        let a = MotionTokenizer::fit(&corpus, &small_config()).unwrap().0;
        let b = MotionTokenizer::fit(&corpus, &small_config()).unwrap().0;
        assert_eq!(a, b);
    }
}
