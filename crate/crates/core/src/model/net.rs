use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{attention_mask, Layout, LayoutSpec, PosKind};
use super::sample::Sample;
use super::{ModelConfig, Stage, Variant, Vocabs};
use crate::error::{Error, Result};
use crate::imu::{ImuSequence, IMU_DIM, NUM_SLOTS};
use crate::nn::{AdamW, AttentionMask, CeTarget, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::rotmath::Rot6;
use crate::scene::POSE_DIM;
use crate::tokenizer::text as tk;
use crate::tokenizer::{ANCHOR_DIM, BODY_FRAME_DIM, ROOT_CHANNELS};

const ACCEL_SCALE: f64 = 1.0 / 9.81;
const GYRO_SCALE: f64 = 0.25;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: Dense,
    ln2: (ParamId, ParamId),
    ff1: Dense,
    ff2: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    imu1: Dense,
    imu2: Dense,
    body1: Dense,
    body2: Dense,
    emb_code: ParamId,
    emb_mean: ParamId,
    emb_std: ParamId,
    emb_text: ParamId,
    emb_class: ParamId,
    /// Learned stand-ins for motion positions: code, mean, std, body.
    motion_query: ParamId,
    pose_query: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    lnf: (ParamId, ParamId),
    head_code: Dense,
    head_mean: Dense,
    head_std: Dense,
    head_text: Dense,
    head_class: Dense,
    head_body: Dense,
    pose1: Dense,
    pose2: Dense,
    head_anchor: Dense,
}

struct Builder<'a> {
    p: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize, std: f64, decay: bool) -> ParamId {
        let t = Tensor::randn(rows, cols, std, self.rng);
        self.p.add(name, t, decay)
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, std: f64) -> Dense {
        let w = self.matrix(&format!("{name}.w"), fan_in, fan_out, std, true);
        let b = self.p.add(format!("{name}.b"), Tensor::zeros(1, fan_out), false);
        Dense { w, b }
    }

    fn norm(&mut self, name: &str, d: usize) -> (ParamId, ParamId) {
        (self.p.add(format!("{name}.g"), Tensor::filled(1, d, 1.0), false), self.p.add(format!("{name}.b"), Tensor::zeros(1, d), false))
    }
}

fn tiled(pattern: &[f64], times: usize) -> Vec<f64> {
    pattern.iter().copied().cycle().take(pattern.len() * times).collect()
}

/// Per-term loss values of one forward pass (already weighted).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub code: f64,
    pub mean: f64,
    pub std: f64,
    pub body: f64,
    pub anchor: f64,
    pub text: f64,
    pub class: f64,
    pub pose: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.code += o.code;
        self.mean += o.mean;
        self.std += o.std;
        self.body += o.body;
        self.anchor += o.anchor;
        self.text += o.text;
        self.class += o.class;
        self.pose += o.pose;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        for v in [
            &mut self.code,
            &mut self.mean,
            &mut self.std,
            &mut self.body,
            &mut self.anchor,
            &mut self.text,
            &mut self.class,
            &mut self.pose,
            &mut self.total,
        ] {
            *v *= s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Model input for one sequence. Unknown trailing tokens may hold anything;
/// only the first `len` positions are embedded.
pub(crate) struct SeqInputs<'a> {
    pub imu: &'a ImuSequence,
    pub codes: &'a [usize],
    pub means: &'a [usize],
    pub stds: &'a [usize],
    pub body: &'a [Vec<f64>],
    pub text: &'a [usize],
    pub text_dropped: bool,
    pub classes: &'a [usize],
}

/// Motion positions either carry their tokens or learned queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MotionInput {
    Tokens,
    Queries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    ids: Ids,
}

impl Model {
    pub fn new(config: ModelConfig, vocabs: Vocabs) -> Result<Self> {
        config.validate()?;
        if vocabs.codebook < 2 || vocabs.bins == 0 || vocabs.text <= tk::UNK || vocabs.codes_per_window == 0 {
            return Err(Error::InvalidConfig("vocabularies too small".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden;
        let ff = config.ffn_mult * d;
        let body_dim = config.body_window * BODY_FRAME_DIM;
        let imu_dim = config.body_window * IMU_DIM;
        let resid_std = INIT_STD / (2.0 * config.layers.max(1) as f64).sqrt();
        let sv = vocabs.stat_vocab();
        let mut b = Builder { p: ParamStore::new(), rng: &mut rng };
        let imu1 = b.dense("imu1", imu_dim, d, (1.0 / imu_dim as f64).sqrt());
        let imu2 = b.dense("imu2", d, d, (1.0 / d as f64).sqrt());
        let body1 = b.dense("body1", body_dim, d, (1.0 / body_dim as f64).sqrt());
        let body2 = b.dense("body2", d, d, (1.0 / d as f64).sqrt());
        let emb_code = b.matrix("emb.code", vocabs.codebook, d, INIT_STD, false);
        let emb_mean = b.matrix("emb.mean", sv, d, INIT_STD, false);
        let emb_std = b.matrix("emb.std", sv, d, INIT_STD, false);
        let emb_text = b.matrix("emb.text", vocabs.text, d, INIT_STD, false);
        let emb_class = b.matrix("emb.class", vocabs.classes + 1, d, INIT_STD, false);
        let motion_query = b.matrix("emb.motion_query", 4, d, INIT_STD, false);
        let pose_query = b.matrix("emb.pose_query", crate::scene::MAX_OBJECTS, d, INIT_STD, false);
        let pos = b.matrix("emb.pos", config.max_len, d, INIT_STD, false);
        let blocks = (0..config.layers)
            .map(|l| Block {
                ln1: b.norm(&format!("block{l}.ln1"), d),
                wq: b.matrix(&format!("block{l}.wq"), d, d, INIT_STD, true),
                wk: b.matrix(&format!("block{l}.wk"), d, d, INIT_STD, true),
                wv: b.matrix(&format!("block{l}.wv"), d, d, INIT_STD, true),
                wo: b.dense(&format!("block{l}.wo"), d, d, resid_std),
                ln2: b.norm(&format!("block{l}.ln2"), d),
                ff1: b.dense(&format!("block{l}.ff1"), d, ff, INIT_STD),
                ff2: b.dense(&format!("block{l}.ff2"), ff, d, resid_std),
            })
            .collect();
        let lnf = b.norm("lnf", d);
        let head_code = b.dense("head.code", d, vocabs.codebook, INIT_STD);
        let head_mean = b.dense("head.mean", d, sv, INIT_STD);
        let head_std = b.dense("head.std", d, sv, INIT_STD);
        let head_text = b.dense("head.text", d, vocabs.text, INIT_STD);
        let head_class = b.dense("head.class", d, vocabs.classes + 1, INIT_STD);
        let head_body = b.dense("head.body", d, body_dim, INIT_STD);
        let pose1 = b.dense("head.pose1", d, d, (1.0 / d as f64).sqrt());
        let pose2 = b.dense("head.pose2", d, POSE_DIM, INIT_STD);
        let head_anchor = b.dense("head.anchor", d, ANCHOR_DIM, INIT_STD);
        let mut params = b.p;
        // Regression heads start at the identity rotation.
        *params.get_mut(head_body.b) = Tensor::row_vector(tiled(&Rot6::IDENTITY.0, body_dim / 6));
        let mut pose_bias = Rot6::IDENTITY.0.to_vec();
        pose_bias.extend([0.0; 3]);
        *params.get_mut(pose2.b) = Tensor::row_vector(pose_bias);
        let mut anchor_bias = Rot6::IDENTITY.0.to_vec();
        anchor_bias.push(crate::kinematics::Skeleton::body22().rest_pelvis_height());
        *params.get_mut(head_anchor.b) = Tensor::row_vector(anchor_bias);
        let ids = Ids {
            imu1,
            imu2,
            body1,
            body2,
            emb_code,
            emb_mean,
            emb_std,
            emb_text,
            emb_class,
            motion_query,
            pose_query,
            pos,
            blocks,
            lnf,
            head_code,
            head_mean,
            head_std,
            head_text,
            head_class,
            head_body,
            pose1,
            pose2,
            head_anchor,
        };
        Ok(Model { config, vocabs, params, ids })
    }

    /// Rebuilds a model around stored parameters, which must match the
    /// names and shapes produced by [`Model::new`] for the same sizes.
    pub fn from_params(config: ModelConfig, vocabs: Vocabs, params: ParamStore) -> Result<Self> {
        let mut m = Model::new(config, vocabs)?;
        if params.len() != m.params.len() {
            return Err(Error::ShapeMismatch(format!("{} stored tensors, model has {}", params.len(), m.params.len())));
        }
        for id in m.params.ids() {
            let (a, b) = (m.params.get(id), params.get(id));
            if m.params.name(id) != params.name(id) || a.shape() != b.shape() || m.params.decays(id) != params.decays(id) {
                return Err(Error::ShapeMismatch(format!("parameter {} does not match", m.params.name(id))));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn layout_spec(&self, frames: usize, text_len: usize, objects: Option<usize>) -> LayoutSpec {
        LayoutSpec {
            slots: NUM_SLOTS,
            imu_windows: frames.div_ceil(self.config.body_window),
            root_windows: frames.div_ceil(self.vocabs.root_window),
            codes_per_window: self.vocabs.codes_per_window,
            root_channels: ROOT_CHANNELS,
            body_windows: frames.div_ceil(self.config.body_window),
            text_len,
            objects,
        }
    }

    pub fn layout_for(&self, s: &Sample, stage: Stage) -> Layout {
        let objects = match (stage, &s.scene) {
            (Stage::Two, Some(sc)) => Some(sc.poses.len()),
            _ => None,
        };
        Layout::new(self.layout_spec(s.frames(), s.text.len(), objects))
    }

    /// IMU window features, slot-major, with accelerations in g.
    fn imu_features(&self, imu: &ImuSequence, windows: usize) -> Tensor {
        let w = self.config.body_window;
        let mut t = Tensor::zeros(NUM_SLOTS * windows, w * IMU_DIM);
        for s in 0..NUM_SLOTS {
            for k in 0..windows {
                let mut f = imu.window_features(s, k * w, w);
                for frame in f.chunks_mut(IMU_DIM) {
                    frame[..3].iter_mut().for_each(|v| *v *= ACCEL_SCALE);
                    frame[3..6].iter_mut().for_each(|v| *v *= GYRO_SCALE);
                }
                t.row_mut(s * windows + k).copy_from_slice(&f);
            }
        }
        t
    }

    fn mlp(g: &mut Graph, x: NodeId, a: Dense, b: Dense) -> NodeId {
        let h = g.linear(x, a.w, a.b);
        let h = g.gelu(h);
        g.linear(h, b.w, b.b)
    }

    /// Embeddings (plus positions) of the first `len` layout positions.
    pub(crate) fn embed(&self, g: &mut Graph, inp: &SeqInputs, layout: &Layout, len: usize, motion: MotionInput) -> Result<NodeId> {
        if len > self.config.max_len {
            return Err(Error::ShapeMismatch(format!("sequence of {len} positions exceeds maximum {}", self.config.max_len)));
        }
        if len == 0 || len > layout.len {
            return Err(Error::ShapeMismatch(format!("cannot embed {len} of {} positions", layout.len)));
        }
        let s = &layout.spec;
        let id = &self.ids;
        let mut parts = Vec::new();

        // IMU: shared MLP per (slot, window); masked slots take the <MASK> row.
        let feats = g.input(self.imu_features(inp.imu, s.imu_windows));
        let imu_rows = Self::mlp(g, feats, id.imu1, id.imu2);
        let mask_row = g.embed(id.emb_text, &[tk::MASK]);
        let pool = g.concat_rows(&[imu_rows, mask_row]);
        let idx: Vec<usize> = (0..NUM_SLOTS * s.imu_windows)
            .map(|i| if inp.imu.active.contains(i / s.imu_windows) { i } else { NUM_SLOTS * s.imu_windows })
            .collect();
        parts.push(g.select_rows(pool, &idx));
        parts.push(g.embed(id.emb_text, &[tk::SOM]));

        let root_len = s.root_windows * s.root_tokens_per_window();
        let (cpw, ch) = (s.codes_per_window, s.root_channels);
        match motion {
            MotionInput::Queries => {
                let kinds: Vec<usize> = (0..root_len)
                    .map(|o| match o % s.root_tokens_per_window() {
                        k if k < cpw => 0,
                        k if k < cpw + ch => 1,
                        _ => 2,
                    })
                    .chain(std::iter::repeat_n(3, s.body_windows))
                    .collect();
                parts.push(g.embed(id.motion_query, &kinds));
            }
            MotionInput::Tokens => {
                let need = |v: &[usize], n: usize, what: &str| -> Result<Vec<usize>> {
                    if v.len() < n {
                        return Err(Error::ShapeMismatch(format!("{what}: {} tokens for {n} positions", v.len())));
                    }
                    Ok(v[..n].to_vec())
                };
                let codes = need(inp.codes, s.root_windows * cpw, "codes")?;
                let means = need(inp.means, s.root_windows * ch, "means")?;
                let stds = need(inp.stds, s.root_windows * ch, "stds")?;
                self.check_ids(&codes, self.vocabs.codebook)?;
                self.check_ids(&means, self.vocabs.stat_vocab())?;
                self.check_ids(&stds, self.vocabs.stat_vocab())?;
                let a = g.embed(id.emb_code, &codes);
                let b = g.embed(id.emb_mean, &means);
                let c = g.embed(id.emb_std, &stds);
                let all = g.concat_rows(&[a, b, c]);
                let (nb, nc) = (codes.len(), codes.len() + means.len());
                let order: Vec<usize> = (0..s.root_windows)
                    .flat_map(|w| {
                        (0..cpw).map(move |k| w * cpw + k).chain((0..ch).map(move |c| nb + w * ch + c)).chain((0..ch).map(move |c| nc + w * ch + c))
                    })
                    .collect();
                parts.push(g.select_rows(all, &order));
                if inp.body.len() < s.body_windows {
                    return Err(Error::ShapeMismatch(format!("{} body vectors for {} positions", inp.body.len(), s.body_windows)));
                }
                let bd = self.config.body_window * BODY_FRAME_DIM;
                let mut data = Vec::with_capacity(s.body_windows * bd);
                for v in &inp.body[..s.body_windows] {
                    if v.len() != bd {
                        return Err(Error::ShapeMismatch(format!("body vector of length {}", v.len())));
                    }
                    data.extend_from_slice(v);
                }
                let x = g.input(Tensor::from_vec(s.body_windows, bd, data));
                parts.push(Self::mlp(g, x, id.body1, id.body2));
            }
        }
        if len > layout.eom {
            let text: Vec<usize> = if inp.text_dropped {
                vec![tk::PAD; s.text_len]
            } else {
                inp.text.iter().copied().chain(std::iter::repeat(tk::PAD)).take(s.text_len).collect()
            };
            self.check_ids(&text, self.vocabs.text)?;
            let mut ids = vec![tk::EOM, tk::SOT];
            ids.extend(text);
            ids.push(tk::EOT);
            if s.objects.is_some() {
                ids.push(tk::SOOBJ);
            }
            parts.push(g.embed(id.emb_text, &ids));
        }
        if let (Some(k), Some(sc)) = (s.objects, &layout.scene) {
            if len > sc.classes.start {
                let classes: Vec<usize> = inp.classes.iter().copied().chain(std::iter::repeat(0)).take(k).collect();
                self.check_ids(&classes, self.vocabs.classes + 1)?;
                if k > 0 {
                    parts.push(g.embed(id.emb_class, &classes));
                }
                parts.push(g.embed(id.emb_text, &[tk::STOPOBJ]));
                if k > 0 {
                    let q = g.embed(id.pose_query, &(0..k).collect::<Vec<_>>());
                    let c = g.embed(id.emb_class, &classes);
                    parts.push(g.add(q, c));
                }
                parts.push(g.embed(id.emb_text, &[tk::EOOBJ]));
            }
        }
        let mut x = g.concat_rows(&parts);
        let built = g.value(x).rows;
        if built < len {
            return Err(Error::ShapeMismatch(format!("built {built} of {len} positions")));
        }
        if built > len {
            x = g.select_rows(x, &(0..len).collect::<Vec<_>>());
        }
        let pos = g.embed(id.pos, &(0..len).collect::<Vec<_>>());
        Ok(g.add(x, pos))
    }

    fn check_ids(&self, ids: &[usize], vocab: usize) -> Result<()> {
        match ids.iter().find(|&&i| i >= vocab) {
            Some(&id) => Err(Error::InvalidToken { id, vocab }),
            None => Ok(()),
        }
    }

    /// Transformer stack plus final normalization. `drop` enables dropout.
    pub(crate) fn forward(&self, g: &mut Graph, x: NodeId, mask: &Rc<AttentionMask>, mut drop: Option<&mut ChaCha8Rng>) -> NodeId {
        let mut x = x;
        for b in &self.ids.blocks {
            let h = g.layer_norm(x, b.ln1.0, b.ln1.1);
            let (wq, wk, wv) = (g.param(b.wq), g.param(b.wk), g.param(b.wv));
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let a = g.attention(q, k, v, self.config.heads, mask);
            let o = g.linear(a, b.wo.w, b.wo.b);
            let o = self.dropout(g, o, drop.as_deref_mut());
            x = g.add(x, o);
            let h = g.layer_norm(x, b.ln2.0, b.ln2.1);
            let f = Self::mlp(g, h, b.ff1, b.ff2);
            let f = self.dropout(g, f, drop.as_deref_mut());
            x = g.add(x, f);
        }
        g.layer_norm(x, self.ids.lnf.0, self.ids.lnf.1)
    }

    fn dropout(&self, g: &mut Graph, x: NodeId, rng: Option<&mut ChaCha8Rng>) -> NodeId {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = (0..g.value(x).len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
                g.dropout(x, mask)
            }
            _ => x,
        }
    }

    fn head(g: &mut Graph, h: NodeId, rows: &[usize], d: Dense) -> NodeId {
        let sel = g.select_rows(h, rows);
        g.linear(sel, d.w, d.b)
    }

    fn pose_head(&self, g: &mut Graph, h: NodeId, rows: &[usize]) -> NodeId {
        let sel = g.select_rows(h, rows);
        Self::mlp(g, sel, self.ids.pose1, self.ids.pose2)
    }

    fn body_target(&self, s: &Sample, rows: usize) -> Result<Tensor> {
        let bd = self.config.body_window * BODY_FRAME_DIM;
        if s.motion.body.len() != rows || s.motion.body.iter().any(|v| v.len() != bd) {
            return Err(Error::ShapeMismatch("body targets do not match the layout".into()));
        }
        Ok(Tensor::from_vec(rows, bd, s.motion.body.concat()))
    }

    /// Motion losses. `pred(p)` gives the hidden row that predicts position `p`.
    fn motion_losses(
        &self,
        g: &mut Graph,
        h: NodeId,
        s: &Sample,
        layout: &Layout,
        pred: &dyn Fn(usize) -> usize,
        out: &mut Vec<NodeId>,
        br: &mut LossBreakdown,
    ) -> Result<()> {
        let spec = &layout.spec;
        let root = &s.motion.root;
        if root.vq.len() != spec.root_windows * spec.codes_per_window || root.mean.len() != spec.root_windows * ROOT_CHANNELS {
            return Err(Error::ShapeMismatch("root tokens do not match the layout".into()));
        }
        self.check_ids(&root.vq, self.vocabs.codebook)?;
        let bins = self.vocabs.bins;
        let (mut code_rows, mut code_t) = (Vec::new(), Vec::new());
        let (mut mean_rows, mut mean_t) = (Vec::new(), Vec::new());
        let (mut std_rows, mut std_t) = (Vec::new(), Vec::new());
        for p in layout.root.clone() {
            match layout.kind(p) {
                PosKind::RootCode { window, k } => {
                    let t = root.vq[window * spec.codes_per_window + k];
                    code_t.push(CeTarget { row: code_rows.len(), target: t, start: 0, len: self.vocabs.codebook });
                    code_rows.push(pred(p));
                }
                PosKind::RootMean { window, channel } => {
                    let t = root.mean[window * ROOT_CHANNELS + channel];
                    mean_t.push(CeTarget { row: mean_rows.len(), target: t - channel * bins, start: channel * bins, len: bins });
                    mean_rows.push(pred(p));
                }
                PosKind::RootStd { window, channel } => {
                    let t = root.std[window * ROOT_CHANNELS + channel];
                    std_t.push(CeTarget { row: std_rows.len(), target: t - channel * bins, start: channel * bins, len: bins });
                    std_rows.push(pred(p));
                }
                _ => unreachable!("root block holds root tokens only"),
            }
        }
        for t in mean_t.iter().chain(&std_t) {
            if t.target >= bins {
                return Err(Error::InvalidToken { id: t.start + t.target, vocab: self.vocabs.stat_vocab() });
            }
        }
        for (rows, targets, head, slot) in [
            (&code_rows, &code_t, self.ids.head_code, &mut br.code),
            (&mean_rows, &mean_t, self.ids.head_mean, &mut br.mean),
            (&std_rows, &std_t, self.ids.head_std, &mut br.std),
        ] {
            let logits = Self::head(g, h, rows, head);
            let l = g.cross_entropy(logits, targets, 1.0 / targets.len() as f64);
            *slot = g.value(l).scalar();
            out.push(l);
        }
        let body_rows: Vec<usize> = layout.body.clone().map(pred).collect();
        let target = self.body_target(s, body_rows.len())?;
        let pred_body = Self::head(g, h, &body_rows, self.ids.head_body);
        let n = target.len() as f64;
        let l = g.l1(pred_body, target, self.config.lambda_body / n);
        br.body = g.value(l).scalar();
        out.push(l);
        let a = Self::head(g, h, &[layout.som], self.ids.head_anchor);
        let l = g.l1(a, Tensor::row_vector(s.motion.anchor.to_vec()), self.config.lambda_anchor / ANCHOR_DIM as f64);
        br.anchor = g.value(l).scalar();
        out.push(l);
        Ok(())
    }

    /// Text and scene losses on a teacher-forced full pass.
    fn later_losses(&self, g: &mut Graph, h: NodeId, s: &Sample, layout: &Layout, out: &mut Vec<NodeId>, br: &mut LossBreakdown) -> Result<()> {
        if !s.text_dropped {
            let rows: Vec<usize> = (layout.sot..layout.eot).collect();
            let targets: Vec<CeTarget> = s
                .text
                .iter()
                .chain(std::iter::once(&tk::EOT))
                .enumerate()
                .map(|(r, &t)| CeTarget { row: r, target: t, start: 0, len: self.vocabs.text })
                .collect();
            self.check_ids(&s.text, self.vocabs.text)?;
            let logits = Self::head(g, h, &rows, self.ids.head_text);
            let l = g.cross_entropy(logits, &targets, 1.0 / targets.len() as f64);
            br.text = g.value(l).scalar();
            out.push(l);
        }
        if let (Some(sc), Some(tok)) = (&layout.scene, &s.scene) {
            if tok.classes.len() != tok.poses.len() + 1 {
                return Err(Error::LengthMismatch(tok.classes.len(), tok.poses.len() + 1));
            }
            self.check_ids(&tok.classes, self.vocabs.classes + 1)?;
            let rows: Vec<usize> = (sc.soobj..sc.stopobj).collect();
            let targets: Vec<CeTarget> =
                tok.classes.iter().enumerate().map(|(r, &t)| CeTarget { row: r, target: t, start: 0, len: self.vocabs.classes + 1 }).collect();
            let logits = Self::head(g, h, &rows, self.ids.head_class);
            let l = g.cross_entropy(logits, &targets, 1.0 / targets.len() as f64);
            br.class = g.value(l).scalar();
            out.push(l);
            if !tok.poses.is_empty() {
                let rows: Vec<usize> = sc.poses.clone().collect();
                let pred = self.pose_head(g, h, &rows);
                let target = Tensor::from_vec(rows.len(), POSE_DIM, tok.poses.concat());
                let n = target.len() as f64;
                let l = g.l1(pred, target, self.config.lambda_pose / n);
                br.pose = g.value(l).scalar();
                out.push(l);
            }
        }
        Ok(())
    }

    fn inputs<'a>(s: &'a Sample) -> SeqInputs<'a> {
        SeqInputs {
            imu: &s.imu,
            codes: &s.motion.root.vq,
            means: &s.motion.root.mean,
            stds: &s.motion.root.std,
            body: &s.motion.body,
            text: &s.text,
            text_dropped: s.text_dropped,
            classes: s.scene.as_ref().map(|sc| &sc.classes[..]).unwrap_or(&[]),
        }
    }

    /// Builds the loss graph for one sample; returns the scalar node.
    pub fn loss_graph(&self, g: &mut Graph, s: &Sample, stage: Stage, mut drop: Option<&mut ChaCha8Rng>) -> Result<(NodeId, LossBreakdown)> {
        if s.imu.len() != s.frames() {
            return Err(Error::LengthMismatch(s.imu.len(), s.frames()));
        }
        let layout = self.layout_for(s, stage);
        let inp = Self::inputs(s);
        let mut terms = Vec::new();
        let mut br = LossBreakdown::default();
        match self.config.variant {
            Variant::Bidirectional => {
                let len = layout.motion_end();
                let x = self.embed(g, &inp, &layout, len, MotionInput::Queries)?;
                let mask = Rc::new(AttentionMask::full(len));
                let h = self.forward(g, x, &mask, drop.as_deref_mut());
                self.motion_losses(g, h, s, &layout, &|p| p, &mut terms, &mut br)?;
                if !s.text_dropped || layout.scene.is_some() {
                    let x = self.embed(g, &inp, &layout, layout.len, MotionInput::Tokens)?;
                    let mask = Rc::new(attention_mask(&layout, Variant::Bidirectional, layout.len));
                    let h = self.forward(g, x, &mask, drop.as_deref_mut());
                    self.later_losses(g, h, s, &layout, &mut terms, &mut br)?;
                }
            }
            Variant::Autoregressive => {
                let x = self.embed(g, &inp, &layout, layout.len, MotionInput::Tokens)?;
                let mask = Rc::new(AttentionMask::causal(layout.len));
                let h = self.forward(g, x, &mask, drop);
                self.motion_losses(g, h, s, &layout, &|p| p - 1, &mut terms, &mut br)?;
                self.later_losses(g, h, s, &layout, &mut terms, &mut br)?;
            }
        }
        let total = g.sum(&terms);
        br.total = g.value(total).scalar();
        if !br.total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((total, br))
    }

    /// Loss and dense parameter gradients of one sample, without dropout.
    pub fn loss_and_grads(&self, s: &Sample, stage: Stage) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let mut g = Graph::new(&self.params);
        let (l, br) = self.loss_graph(&mut g, s, stage, None)?;
        Ok((br, g.backward(l)))
    }

    /// Mean loss over the batch followed by one optimizer update.
    pub fn train_step(&mut self, opt: &mut AdamW, batch: &[Sample], stage: Stage, rng: &mut ChaCha8Rng) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let mut grads = self.params.zeros_like();
        let mut loss = LossBreakdown::default();
        for s in batch {
            let mut g = Graph::new(&self.params);
            let (l, br) = match self.loss_graph(&mut g, s, stage, Some(rng)) {
                Err(Error::NonFinite(m)) => return Err(Error::Diverged(m)),
                r => r?,
            };
            for (acc, gr) in grads.iter_mut().zip(g.backward(l)) {
                acc.add_assign(&gr);
            }
            loss.add(&br);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|t| t.scale(inv));
        loss.scale(inv);
        let grad_norm = grads.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        let lr = opt.update(&mut self.params, &mut grads);
        Ok(StepStats { loss, grad_norm, lr })
    }

    /// Every head evaluated at every position of the teacher-forced sequence
    /// under the variant's full-sequence mask, one row per position.
    /// `perturb` adds a vector of width `hidden` to one input embedding.
    pub fn head_outputs(&self, s: &Sample, stage: Stage, perturb: Option<(usize, &[f64])>) -> Result<Tensor> {
        let layout = self.layout_for(s, stage);
        let mut g = Graph::new(&self.params);
        let mut x = self.embed(&mut g, &Self::inputs(s), &layout, layout.len, MotionInput::Tokens)?;
        if let Some((pos, delta)) = perturb {
            if pos >= layout.len || delta.len() != self.config.hidden {
                return Err(Error::ShapeMismatch("perturbation outside the sequence or of the wrong width".into()));
            }
            let mut t = Tensor::zeros(layout.len, self.config.hidden);
            t.row_mut(pos).copy_from_slice(delta);
            let d = g.input(t);
            x = g.add(x, d);
        }
        let mask = Rc::new(attention_mask(&layout, self.config.variant, layout.len));
        let h = self.forward(&mut g, x, &mask, None);
        let rows: Vec<usize> = (0..layout.len).collect();
        let id = &self.ids;
        let mut outs: Vec<Tensor> = [id.head_code, id.head_mean, id.head_std, id.head_text, id.head_class, id.head_body, id.head_anchor]
            .into_iter()
            .map(|d| {
                let n = Self::head(&mut g, h, &rows, d);
                g.value(n).clone()
            })
            .collect();
        let p = self.pose_head(&mut g, h, &rows);
        outs.push(g.value(p).clone());
        let width: usize = outs.iter().map(|t| t.cols).sum();
        let mut out = Tensor::zeros(layout.len, width);
        for r in 0..layout.len {
            let mut c = 0;
            for t in &outs {
                out.row_mut(r)[c..c + t.cols].copy_from_slice(t.row(r));
                c += t.cols;
            }
        }
        Ok(out)
    }
}

/// Accessors used by inference.
impl Model {
    pub(crate) fn logits_at(&self, g: &mut Graph, h: NodeId, row: usize, which: Head) -> Vec<f64> {
        let d = match which {
            Head::Code => self.ids.head_code,
            Head::Mean => self.ids.head_mean,
            Head::Std => self.ids.head_std,
            Head::Text => self.ids.head_text,
            Head::Class => self.ids.head_class,
            Head::Body => self.ids.head_body,
            Head::Anchor => self.ids.head_anchor,
        };
        let n = Self::head(g, h, &[row], d);
        g.value(n).data.clone()
    }

    pub(crate) fn poses_at(&self, g: &mut Graph, h: NodeId, rows: &[usize]) -> Tensor {
        let n = self.pose_head(g, h, rows);
        g.value(n).clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Head {
    Code,
    Mean,
    Std,
    Text,
    Class,
    Body,
    Anchor,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::imu::{default_placements, synthesize_imu, SlotSet};
    use crate::kinematics::test_util::random_sequence;
    use crate::kinematics::Skeleton;
    use crate::nn::AdamWConfig;
    use crate::scene::SceneTokens;
    use crate::tokenizer::{MotionTokenSeq, RootTokens};

    pub(crate) fn vocabs() -> Vocabs {
        Vocabs { codebook: 6, bins: 3, text: 14, classes: 4, root_window: 8, codes_per_window: 2 }
    }

    pub(crate) fn config(variant: Variant, hidden: usize, layers: usize) -> ModelConfig {
        ModelConfig { hidden, layers, heads: 2, ffn_mult: 2, body_window: 4, max_len: 128, variant, dropout: 0.0, ..ModelConfig::default() }
    }

    pub(crate) fn toy_sample(rng: &mut ChaCha8Rng, v: &Vocabs, frames: usize, objects: Option<usize>) -> Sample {
        let skel = Skeleton::body22();
        let motion = random_sequence(rng, &skel, frames);
        let imu = synthesize_imu(&skel, &motion, &default_placements()).unwrap();
        let nw = frames.div_ceil(v.root_window);
        let stat = |rng: &mut ChaCha8Rng| (0..nw * ROOT_CHANNELS).map(|i| (i % ROOT_CHANNELS) * v.bins + rng.random_range(0..v.bins)).collect();
        let root = RootTokens { vq: (0..nw * v.codes_per_window).map(|_| rng.random_range(0..v.codebook)).collect(), mean: stat(rng), std: stat(rng) };
        let body = (0..frames.div_ceil(4)).map(|_| (0..4 * BODY_FRAME_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut anchor = [0.0; ANCHOR_DIM];
        anchor.iter_mut().for_each(|a| *a = rng.random_range(-1.0..1.0));
        let scene = objects.map(|k| {
            let mut classes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=v.classes)).collect();
            classes.push(0);
            SceneTokens { classes, poses: (0..k).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect() }
        });
        Sample {
            imu,
            motion: MotionTokenSeq { frames, root, body, anchor },
            text: (0..3).map(|_| rng.random_range(tk::UNK + 1..v.text)).collect(),
            text_dropped: false,
            scene,
        }
    }

    fn zero_head(m: &mut Model, d: Dense) {
        m.params.get_mut(d.w).data.fill(0.0);
        m.params.get_mut(d.b).data.fill(0.0);
    }

    #[test]
    fn uniform_heads_give_log_vocab() {
        let v = vocabs();
        for variant in [Variant::Bidirectional, Variant::Autoregressive] {
            let mut m = Model::new(config(variant, 16, 1), v).unwrap();
            for d in [m.ids.head_code, m.ids.head_mean, m.ids.head_std, m.ids.head_text, m.ids.head_class] {
                zero_head(&mut m, d);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let s = toy_sample(&mut rng, &v, 12, Some(2));
            let (br, _) = m.loss_and_grads(&s, Stage::Two).unwrap();
            assert!((br.code - (v.codebook as f64).ln()).abs() < 1e-12);
            assert!((br.mean - (v.bins as f64).ln()).abs() < 1e-12);
            assert!((br.std - (v.bins as f64).ln()).abs() < 1e-12);
            assert!((br.text - (v.text as f64).ln()).abs() < 1e-12);
            assert!((br.class - ((v.classes + 1) as f64).ln()).abs() < 1e-12);
            let sum = br.code + br.mean + br.std + br.body + br.anchor + br.text + br.class + br.pose;
            assert!((br.total - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_head_has_near_zero_loss() {
        let v = vocabs();
        let mut m = Model::new(config(Variant::Bidirectional, 16, 1), v).unwrap();
        let hc = m.ids.head_code;
        zero_head(&mut m, hc);
        m.params.get_mut(m.ids.head_code.b).data[2] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = toy_sample(&mut rng, &v, 8, None);
        s.motion.root.vq.fill(2);
        let (br, _) = m.loss_and_grads(&s, Stage::One).unwrap();
        assert!(br.code < 1e-18, "{}", br.code);
    }

    fn total_loss(m: &Model, s: &Sample) -> f64 {
        let mut g = Graph::new(&m.params);
        m.loss_graph(&mut g, s, Stage::Two, None).unwrap().1.total
    }

    #[test]
    fn gradients_match_finite_differences() {
        let v = vocabs();
        for variant in [Variant::Bidirectional, Variant::Autoregressive] {
            let mut m = Model::new(config(variant, 32, 2), v).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let s = toy_sample(&mut rng, &v, 8, Some(2));
            let (_, grads) = m.loss_and_grads(&s, Stage::Two).unwrap();
            let ids: Vec<ParamId> = m.params.ids().collect();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for _ in 0..200 {
                let id = ids[rng.random_range(0..ids.len())];
                let i = rng.random_range(0..m.params.get(id).len());
                let x = m.params.get(id).data[i];
                m.params.get_mut(id).data[i] = x + h;
                let up = total_loss(&m, &s);
                m.params.get_mut(id).data[i] = x - h;
                let down = total_loss(&m, &s);
                m.params.get_mut(id).data[i] = x;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[id.0].data[i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-5);
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "{variant:?}: relative error {worst}");
        }
    }

    fn hidden(m: &Model, s: &Sample, mask: AttentionMask) -> Tensor {
        let layout = m.layout_for(s, Stage::Two);
        let mut g = Graph::new(&m.params);
        let x = m.embed(&mut g, &Model::inputs(s), &layout, layout.len, MotionInput::Tokens).unwrap();
        let h = m.forward(&mut g, x, &Rc::new(mask), None);
        g.value(h).clone()
    }

    #[test]
    fn causal_mask_blocks_future_tokens() {
        let v = vocabs();
        let m = Model::new(config(Variant::Autoregressive, 16, 2), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = toy_sample(&mut rng, &v, 8, Some(1));
        let mut b = a.clone();
        b.motion.body[1][7] += 0.5;
        let layout = m.layout_for(&a, Stage::Two);
        let p = layout.body.start + 1;
        let mask = AttentionMask::causal(layout.len);
        let (ha, hb) = (hidden(&m, &a, mask.clone()), hidden(&m, &b, mask));
        for r in 0..layout.len {
            let same = ha.row(r) == hb.row(r);
            assert_eq!(same, r < p, "row {r}");
        }
    }

    #[test]
    fn perturbed_position_only_moves_later_head_outputs() {
        let v = vocabs();
        let m = Model::new(config(Variant::Autoregressive, 16, 2), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = toy_sample(&mut rng, &v, 8, Some(1));
        let base = m.head_outputs(&s, Stage::Two, None).unwrap();
        let delta: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j = 5;
        let moved = m.head_outputs(&s, Stage::Two, Some((j, &delta))).unwrap();
        for r in 0..base.rows {
            assert_eq!(base.row(r) == moved.row(r), r < j, "row {r}");
        }
        assert!(m.head_outputs(&s, Stage::Two, Some((j, &delta[..3]))).is_err());
    }

    #[test]
    fn bidirectional_motion_block_sees_later_motion_only() {
        let v = vocabs();
        let m = Model::new(config(Variant::Bidirectional, 16, 2), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = toy_sample(&mut rng, &v, 8, Some(1));
        let layout = m.layout_for(&a, Stage::Two);
        let mask = attention_mask(&layout, Variant::Bidirectional, layout.len);
        let mut b = a.clone();
        b.motion.body[1][0] += 0.5;
        let (ha, hb) = (hidden(&m, &a, mask.clone()), hidden(&m, &b, mask.clone()));
        assert_ne!(ha.row(0), hb.row(0));
        assert_ne!(ha.row(layout.root.start), hb.row(layout.root.start));
        let mut c = a.clone();
        c.text[1] = if a.text[1] == 10 { 11 } else { 10 };
        let hc = hidden(&m, &c, mask);
        for r in 0..layout.text.start + 1 {
            assert_eq!(ha.row(r), hc.row(r), "row {r}");
        }
        assert_ne!(ha.row(layout.eot), hc.row(layout.eot));
    }

    #[test]
    fn training_is_deterministic() {
        let v = vocabs();
        let run = || {
            let mut cfg = config(Variant::Bidirectional, 16, 1);
            cfg.dropout = 0.1;
            let mut m = Model::new(cfg, v).unwrap();
            let mut opt = AdamW::new(AdamWConfig { total_steps: 3, ..AdamWConfig::default() }, &m.params);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let batch: Vec<Sample> = (0..2).map(|_| toy_sample(&mut rng, &v, 8, Some(1))).collect();
            let stats: Vec<StepStats> = (0..3).map(|_| m.train_step(&mut opt, &batch, Stage::Two, &mut rng).unwrap()).collect();
            (m.params, stats)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let v = vocabs();
        let mut m = Model::new(config(Variant::Autoregressive, 16, 1), v).unwrap();
        let before = m.params.clone();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..AdamWConfig::default() }, &m.params);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = vec![toy_sample(&mut rng, &v, 8, None)];
        let st = m.train_step(&mut opt, &batch, Stage::One, &mut rng).unwrap();
        assert_eq!(st.lr, 0.0);
        assert!(st.grad_norm > 0.0);
        assert_eq!(m.params, before);
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let v = vocabs();
        let mut m = Model::new(config(Variant::Bidirectional, 16, 1), v).unwrap();
        let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, total_steps: 40, ..AdamWConfig::default() }, &m.params);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<Sample> = (0..2).map(|_| toy_sample(&mut rng, &v, 8, Some(1))).collect();
        let first = m.train_step(&mut opt, &batch, Stage::Two, &mut rng).unwrap().loss.total;
        let mut last = first;
        for _ in 1..40 {
            last = m.train_step(&mut opt, &batch, Stage::Two, &mut rng).unwrap().loss.total;
        }
        assert!(last < 0.7 * first, "{first} -> {last}");
    }

    #[test]
    fn zero_layer_model_runs() {
        let v = vocabs();
        let m = Model::new(config(Variant::Autoregressive, 8, 0), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = toy_sample(&mut rng, &v, 5, Some(0));
        let (br, grads) = m.loss_and_grads(&s, Stage::Two).unwrap();
        assert!(br.total.is_finite());
        assert_eq!(grads.len(), m.params.len());
    }

    #[test]
    fn text_dropout_skips_text_loss_and_masks_inputs() {
        let v = vocabs();
        let m = Model::new(config(Variant::Bidirectional, 16, 1), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = toy_sample(&mut rng, &v, 8, None);
        s.text_dropped = true;
        let (br, _) = m.loss_and_grads(&s, Stage::One).unwrap();
        assert_eq!(br.text, 0.0);
        assert!(br.code > 0.0);
    }

    #[test]
    fn masked_slots_use_the_mask_embedding() {
        let v = vocabs();
        let m = Model::new(config(Variant::Autoregressive, 16, 1), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = toy_sample(&mut rng, &v, 8, None);
        a.imu = crate::imu::mask_devices(&a.imu, &SlotSet([true, false, true, true, true])).unwrap();
        let mut b = a.clone();
        // Values in an inactive slot must be ignored.
        b.imu.frames[0][1][0] = 123.0;
        let layout = m.layout_for(&a, Stage::One);
        let mut g = Graph::new(&m.params);
        let xa = m.embed(&mut g, &Model::inputs(&a), &layout, layout.len, MotionInput::Tokens).unwrap();
        let xb = m.embed(&mut g, &Model::inputs(&b), &layout, layout.len, MotionInput::Tokens).unwrap();
        assert_eq!(g.value(xa), g.value(xb));
        let emb = m.params.get(m.ids.emb_text).row(tk::MASK).to_vec();
        let pos = m.params.get(m.ids.pos).row(2).to_vec();
        let want: Vec<f64> = emb.iter().zip(&pos).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(xa).row(2), &want[..]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = vocabs();
        let mut cfg = config(Variant::Bidirectional, 16, 1);
        cfg.max_len = 20;
        let m = Model::new(cfg, v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = toy_sample(&mut rng, &v, 8, None);
        assert!(matches!(m.loss_and_grads(&s, Stage::One), Err(Error::ShapeMismatch(_))));
        let m = Model::new(config(Variant::Bidirectional, 16, 1), v).unwrap();
        let mut bad = s.clone();
        bad.motion.root.vq[0] = v.codebook;
        assert!(matches!(m.loss_and_grads(&bad, Stage::One), Err(Error::InvalidToken { .. })));
        let other = Model::new(config(Variant::Bidirectional, 8, 1), v).unwrap();
        assert!(Model::from_params(m.config.clone(), v, other.params).is_err());
        assert!(Model::from_params(m.config.clone(), v, m.params.clone()).is_ok());
        assert!(Model::new(ModelConfig { heads: 3, ..m.config.clone() }, v).is_err());
    }
}
