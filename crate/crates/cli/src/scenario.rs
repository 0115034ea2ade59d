//! Procedural motion primitives with paraphrased captions and an implied scene.

use std::f64::consts::{FRAC_PI_2, PI};

use imu4d_core::kinematics::{joint, MotionSequence, Skeleton, NUM_BODY_JOINTS};
use imu4d_core::rotmath::{Rot3, Vec3};
use imu4d_core::scene::{ClassTaxonomy, ObjectInstance, SceneLayout};
use imu4d_core::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    WalkLine,
    WalkCircle,
    Turn,
    SitStand,
    Wave,
    ReachAndPlace,
    JumpSide,
}

impl Primitive {
    pub const ALL: [Primitive; 7] = [
        Primitive::WalkLine,
        Primitive::WalkCircle,
        Primitive::Turn,
        Primitive::SitStand,
        Primitive::Wave,
        Primitive::ReachAndPlace,
        Primitive::JumpSide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::WalkLine => "walk-line",
            Primitive::WalkCircle => "walk-circle",
            Primitive::Turn => "turn",
            Primitive::SitStand => "sit-stand",
            Primitive::Wave => "wave",
            Primitive::ReachAndPlace => "reach-and-place",
            Primitive::JumpSide => "jump-side",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    fn templates(self) -> &'static [&'static str] {
        match self {
            Primitive::WalkLine => &["a person walks forward", "someone walks straight ahead"],
            Primitive::WalkCircle => &["a person walks in a circle to the {side}", "someone circles around the table to the {side}"],
            Primitive::Turn => &["a person turns {amount} to the {side}", "someone spins {amount} toward the {side}"],
            Primitive::SitStand => &["a person sits down on the chair and stands back up", "someone takes a seat on a chair then gets up"],
            Primitive::Wave => &["a person waves with the {side} hand", "someone raises the {side} hand and waves"],
            Primitive::ReachAndPlace => &["a person picks up the {object} and puts it down", "someone reaches for the {object} and places it nearby"],
            Primitive::JumpSide => &["a person jumps to the {side}", "someone hops sideways to the {side}"],
        }
    }
}

/// Objects a person can pick up.
const GRASPABLE: [&str; 5] = ["cup", "bowl", "bottle", "box", "pot"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    /// Walking speed in m/s.
    pub speed: f64,
    /// Circle radius or sideways jump distance in meters.
    pub radius: f64,
    /// Turn direction, waving hand, circle or jump side. Left is +X.
    pub left: bool,
    pub turn_angle: f64,
    pub target_class: Option<usize>,
    pub target_position: Option<Vec3>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams { speed: 1.0, radius: 1.5, left: true, turn_angle: FRAC_PI_2, target_class: None, target_position: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub primitive: Primitive,
    /// Seconds; the clip holds `duration * fps + 1` frames so the last frame sits at `duration`.
    pub duration: f64,
    pub fps: u32,
    pub params: ScenarioParams,
    pub template: usize,
    pub caption: String,
    pub scene: SceneLayout,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// 0 → 1 over `[a, b]`, held, then back to 0 over `[c, d]`.
fn trapezoid(u: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    smoothstep((u - a) / (b - a)) * (1.0 - smoothstep((u - c) / (d - c)))
}

fn side_word(left: bool) -> &'static str {
    if left {
        "left"
    } else {
        "right"
    }
}

fn object(tax: &ClassTaxonomy, name: &str, yaw: f64, x: f64, z: f64, lift: f64) -> Result<ObjectInstance> {
    let id = tax.id_of(name).ok_or_else(|| Error::InvalidConfig(format!("taxonomy lacks class {name}")))?;
    let h = tax.dimensions(id)?.y;
    Ok(ObjectInstance::new(id, &Rot3::ry(yaw), Vec3::new(x, lift + 0.5 * h, z)))
}

impl Scenario {
    pub fn random<R: Rng>(rng: &mut R, id: &str, primitive: Primitive, duration: f64, fps: u32, tax: &ClassTaxonomy) -> Result<Self> {
        if !(duration > 0.0) || fps == 0 {
            return Err(Error::InvalidConfig("scenario duration and fps must be positive".into()));
        }
        let mut params = ScenarioParams {
            speed: rng.random_range(0.8..1.4),
            radius: rng.random_range(1.2..2.0),
            left: rng.random_bool(0.5),
            turn_angle: if rng.random_bool(0.5) { FRAC_PI_2 } else { PI * 0.95 },
            ..ScenarioParams::default()
        };
        if primitive == Primitive::JumpSide {
            params.radius = rng.random_range(0.4..0.7);
        }
        if primitive == Primitive::ReachAndPlace {
            let name = GRASPABLE[rng.random_range(0..GRASPABLE.len())];
            params.target_class = tax.id_of(name);
            let side = if params.left { 1.0 } else { -1.0 };
            params.target_position = Some(Vec3::new(side * rng.random_range(0.15..0.3), 0.85, rng.random_range(0.4..0.55)));
        }
        let template = rng.random_range(0..primitive.templates().len());
        let yaw = rng.random_range(-0.6..0.6);
        Self::build(id, primitive, duration, fps, params, template, yaw, tax)
    }

    /// Deterministic construction from explicit parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        id: &str,
        primitive: Primitive,
        duration: f64,
        fps: u32,
        params: ScenarioParams,
        template: usize,
        object_yaw: f64,
        tax: &ClassTaxonomy,
    ) -> Result<Self> {
        let templates = primitive.templates();
        let tpl = templates.get(template).ok_or_else(|| Error::InvalidConfig(format!("template {template} out of range")))?;
        let side = if params.left { 1.0 } else { -1.0 };
        let mut object_word = String::new();
        let objects = match primitive {
            Primitive::WalkLine => vec![object(tax, "door", object_yaw * 0.2, 0.0, params.speed * duration + 1.0, 0.0)?],
            Primitive::WalkCircle => vec![object(tax, "table", object_yaw, side * params.radius, 0.0, 0.0)?],
            Primitive::Turn => vec![object(tax, "shelf", object_yaw * 0.3, side * 1.2, 0.6, 0.0)?],
            Primitive::SitStand => vec![object(tax, "chair", object_yaw * 0.2, 0.0, -0.3, 0.0)?],
            Primitive::Wave => vec![object(tax, "sofa", object_yaw, -side * 0.3, -1.3, 0.0)?, object(tax, "lamp", 0.0, side * 1.3, -1.2, 0.0)?],
            Primitive::ReachAndPlace => {
                let class = params.target_class.ok_or_else(|| Error::InvalidConfig("reach-and-place needs a target class".into()))?;
                let pos = params.target_position.ok_or_else(|| Error::InvalidConfig("reach-and-place needs a target position".into()))?;
                object_word = tax.name(class)?.to_string();
                vec![ObjectInstance::new(class, &Rot3::ry(object_yaw), pos)]
            }
            Primitive::JumpSide => vec![object(tax, "box", object_yaw, side * (params.radius + 0.6), 0.3, 0.0)?],
        };
        let amount = if params.turn_angle > 2.0 { "around" } else { "ninety degrees" };
        let caption = tpl.replace("{side}", side_word(params.left)).replace("{object}", &object_word).replace("{amount}", amount);
        Ok(Scenario { id: id.to_string(), primitive, duration, fps, params, template, caption, scene: SceneLayout::new(objects) })
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.fps as f64).round() as usize + 1
    }

    pub fn motion(&self, skel: &Skeleton) -> MotionSequence {
        let n = self.frames();
        let mut seq = MotionSequence::rest(skel, n, self.fps);
        let h = skel.rest_pelvis_height();
        for f in 0..n {
            let t = f as f64 / self.fps as f64;
            let (root_t, root_r, local) = self.pose_at(t, h);
            seq.root_translation[f] = root_t;
            seq.root_orientation[f] = root_r;
            seq.joint_rotations[f] = local;
        }
        seq
    }

    fn pose_at(&self, t: f64, h: f64) -> (Vec3, Rot3, Vec<Rot3>) {
        let p = &self.params;
        let u = t / self.duration;
        let side = if p.left { 1.0 } else { -1.0 };
        let mut pose = BodyPose::standing();
        match self.primitive {
            Primitive::WalkLine => {
                let bob = pose.gait(2.0 * PI * t * p.speed / 1.4, 1.0);
                (Vec3::new(0.0, h - bob, p.speed * t), Rot3::identity(), pose.finish())
            }
            Primitive::WalkCircle => {
                let theta = p.speed * t / p.radius;
                let bob = pose.gait(2.0 * PI * t * p.speed / 1.4, 1.0);
                let pos = Vec3::new(side * p.radius * (1.0 - theta.cos()), h - bob, p.radius * theta.sin());
                (pos, Rot3::ry(side * theta), pose.finish())
            }
            Primitive::Turn => {
                let yaw = side * p.turn_angle * smoothstep((u - 0.1) / 0.8);
                let bob = pose.gait(2.0 * PI * 1.6 * t, 0.3 * trapezoid(u, 0.0, 0.15, 0.85, 1.0));
                (Vec3::new(0.0, h - bob, 0.0), Rot3::ry(yaw), pose.finish())
            }
            Primitive::SitStand => {
                let s = trapezoid(u, 0.05, 0.4, 0.6, 0.95);
                for hip in [joint::L_HIP, joint::R_HIP] {
                    pose.set(hip, Rot3::rx(-1.45 * s));
                }
                for knee in [joint::L_KNEE, joint::R_KNEE] {
                    pose.set(knee, Rot3::rx(1.5 * s));
                }
                pose.set(joint::SPINE1, Rot3::rx(0.3 * s * (1.0 - 0.5 * s)));
                (Vec3::new(0.0, h - 0.35 * s, -0.22 * s), Rot3::identity(), pose.finish())
            }
            Primitive::Wave => {
                let e = trapezoid(u, 0.0, 0.25, 0.8, 1.0);
                let swing = 0.45 * (2.0 * PI * 1.6 * t).sin() * e;
                let (sh, el) = if p.left { (joint::L_SHOULDER, joint::L_ELBOW) } else { (joint::R_SHOULDER, joint::R_ELBOW) };
                // Arm from hanging down to raised sideways, forearm pointing up.
                pose.set(sh, Rot3::rz(side * (-1.25 + 2.05 * e)));
                pose.set(el, Rot3::rz(side * (1.2 * e + swing)));
                (Vec3::new(0.0, h, 0.0), Rot3::identity(), pose.finish())
            }
            Primitive::ReachAndPlace => {
                let reach = trapezoid(u, 0.05, 0.35, 0.75, 0.95);
                let carry = trapezoid(u, 0.45, 0.65, 0.75, 0.95);
                let (sh, el) = if p.left { (joint::L_SHOULDER, joint::L_ELBOW) } else { (joint::R_SHOULDER, joint::R_ELBOW) };
                // Hanging arm swung forward about Y, then carried out to the side.
                let forward = Rot3::rx(0.35 * reach) * Rot3::ry(-side * (FRAC_PI_2 * reach - 0.8 * carry)) * Rot3::rz(side * -1.25 * (1.0 - reach));
                pose.set(sh, forward);
                pose.set(el, Rot3::ry(-side * 0.4 * (1.0 - reach)));
                pose.set(joint::SPINE1, Rot3::rx(0.25 * reach));
                pose.set(joint::SPINE2, Rot3::ry(-side * 0.3 * carry));
                (Vec3::new(0.0, h, 0.0), Rot3::identity(), pose.finish())
            }
            Primitive::JumpSide => {
                let crouch = trapezoid(u, 0.05, 0.3, 0.3, 0.45) + trapezoid(u, 0.6, 0.7, 0.7, 0.9);
                let w = ((u - 0.3) / 0.3).clamp(0.0, 1.0);
                let air = 0.25 * 4.0 * w * (1.0 - w);
                for hip in [joint::L_HIP, joint::R_HIP] {
                    pose.set(hip, Rot3::rx(-0.7 * crouch));
                }
                for knee in [joint::L_KNEE, joint::R_KNEE] {
                    pose.set(knee, Rot3::rx(1.3 * crouch));
                }
                pose.set(joint::L_SHOULDER, Rot3::rz(-1.25 + 0.9 * air / 0.25));
                pose.set(joint::R_SHOULDER, Rot3::rz(1.25 - 0.9 * air / 0.25));
                let x = side * p.radius * smoothstep(w);
                (Vec3::new(x, h - 0.2 * crouch + air, 0.0), Rot3::identity(), pose.finish())
            }
        }
    }
}

/// Local rotations indexed by joint id (pelvis slot unused).
struct BodyPose([Rot3; NUM_BODY_JOINTS + 1]);

impl BodyPose {
    fn standing() -> Self {
        let mut p = BodyPose([Rot3::identity(); NUM_BODY_JOINTS + 1]);
        p.set(joint::L_SHOULDER, Rot3::rz(-1.25));
        p.set(joint::R_SHOULDER, Rot3::rz(1.25));
        p
    }

    fn set(&mut self, j: usize, r: Rot3) {
        self.0[j] = r;
    }

    /// Leg and arm swing at gait phase `phi`; returns the pelvis drop.
    fn gait(&mut self, phi: f64, amp: f64) -> f64 {
        let s = phi.sin();
        self.set(joint::L_HIP, Rot3::rx(-0.4 * amp * s));
        self.set(joint::R_HIP, Rot3::rx(0.4 * amp * s));
        self.set(joint::L_KNEE, Rot3::rx(0.6 * amp * (phi + 0.6).sin().max(0.0)));
        self.set(joint::R_KNEE, Rot3::rx(0.6 * amp * (-(phi + 0.6).sin()).max(0.0)));
        self.set(joint::L_SHOULDER, Rot3::rx(0.3 * amp * s) * Rot3::rz(-1.25));
        self.set(joint::R_SHOULDER, Rot3::rx(-0.3 * amp * s) * Rot3::rz(1.25));
        self.set(joint::SPINE2, Rot3::ry(0.08 * amp * s));
        0.03 * amp * (1.0 - (2.0 * phi).cos()) * 0.5
    }

    fn finish(self) -> Vec<Rot3> {
        self.0[1..].to_vec()
    }
}
