//! Positions of every modality in the flat token sequence.

use std::ops::Range;

use crate::nn::AttentionMask;

use super::Variant;

/// What sits at one sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosKind {
    Imu { slot: usize, window: usize },
    /// Control token from the text vocabulary.
    Control(usize),
    RootCode { window: usize, k: usize },
    RootMean { window: usize, channel: usize },
    RootStd { window: usize, channel: usize },
    Body(usize),
    Text(usize),
    Class(usize),
    PoseSlot(usize),
}

/// Sizes that determine a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutSpec {
    pub slots: usize,
    pub imu_windows: usize,
    pub root_windows: usize,
    pub codes_per_window: usize,
    pub root_channels: usize,
    pub body_windows: usize,
    pub text_len: usize,
    /// `None` ends the sequence after the text block.
    pub objects: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub spec: LayoutSpec,
    pub imu: Range<usize>,
    pub som: usize,
    pub root: Range<usize>,
    pub body: Range<usize>,
    pub eom: usize,
    pub sot: usize,
    pub text: Range<usize>,
    pub eot: usize,
    pub scene: Option<SceneRanges>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRanges {
    pub soobj: usize,
    pub classes: Range<usize>,
    pub stopobj: usize,
    pub poses: Range<usize>,
    pub eoobj: usize,
}

impl Layout {
    pub fn new(spec: LayoutSpec) -> Self {
        let mut p = 0;
        let mut take = |n: usize| {
            let r = p..p + n;
            p += n;
            r
        };
        let imu = take(spec.slots * spec.imu_windows);
        let som = take(1).start;
        let root = take(spec.root_windows * spec.root_tokens_per_window());
        let body = take(spec.body_windows);
        let eom = take(1).start;
        let sot = take(1).start;
        let text = take(spec.text_len);
        let eot = take(1).start;
        let scene = spec.objects.map(|k| SceneRanges {
            soobj: take(1).start,
            classes: take(k),
            stopobj: take(1).start,
            poses: take(k),
            eoobj: take(1).start,
        });
        let len = p;
        Layout { spec, imu, som, root, body, eom, sot, text, eot, scene, len }
    }

    /// Last position of the motion stream (before `<EOM>`).
    pub fn motion_end(&self) -> usize {
        self.body.end
    }

    pub fn kind(&self, p: usize) -> PosKind {
        use crate::tokenizer::text as tk;
        let s = &self.spec;
        if self.imu.contains(&p) {
            let i = p - self.imu.start;
            return PosKind::Imu { slot: i / s.imu_windows, window: i % s.imu_windows };
        }
        if self.root.contains(&p) {
            let per = s.root_tokens_per_window();
            let (window, o) = ((p - self.root.start) / per, (p - self.root.start) % per);
            return if o < s.codes_per_window {
                PosKind::RootCode { window, k: o }
            } else if o < s.codes_per_window + s.root_channels {
                PosKind::RootMean { window, channel: o - s.codes_per_window }
            } else {
                PosKind::RootStd { window, channel: o - s.codes_per_window - s.root_channels }
            };
        }
        if self.body.contains(&p) {
            return PosKind::Body(p - self.body.start);
        }
        if self.text.contains(&p) {
            return PosKind::Text(p - self.text.start);
        }
        if p == self.som {
            return PosKind::Control(tk::SOM);
        }
        if p == self.eom {
            return PosKind::Control(tk::EOM);
        }
        if p == self.sot {
            return PosKind::Control(tk::SOT);
        }
        if p == self.eot {
            return PosKind::Control(tk::EOT);
        }
        let sc = self.scene.as_ref().expect("position inside the layout");
        if sc.classes.contains(&p) {
            PosKind::Class(p - sc.classes.start)
        } else if sc.poses.contains(&p) {
            PosKind::PoseSlot(p - sc.poses.start)
        } else if p == sc.soobj {
            PosKind::Control(tk::SOOBJ)
        } else if p == sc.stopobj {
            PosKind::Control(tk::STOPOBJ)
        } else {
            assert_eq!(p, sc.eoobj, "position {p} outside layout of length {}", self.len);
            PosKind::Control(tk::EOOBJ)
        }
    }
}

impl LayoutSpec {
    pub fn root_tokens_per_window(&self) -> usize {
        self.codes_per_window + 2 * self.root_channels
    }
}

/// Attention mask over the first `len` positions of `layout`.
///
/// Bidirectional: positions before `<EOM>` attend to each other freely,
/// everything from `<EOM>` on is causal. Autoregressive: causal throughout.
pub fn attention_mask(layout: &Layout, variant: Variant, len: usize) -> AttentionMask {
    let mut mask = AttentionMask::causal(len);
    if variant == Variant::Bidirectional {
        let prefix = layout.motion_end().min(len);
        for i in 0..prefix {
            for j in 0..prefix {
                mask.allowed[i * len + j] = true;
            }
        }
    }
    mask
}
