//! Scene layouts, the object class taxonomy and oriented boxes.

use crate::error::{Error, Result};
use crate::kinematics::HorizontalTransform;
use crate::rotmath::{matrix_from_rot6, rot6_from_matrix, Rot3, Rot6, Vec3};

pub const DEFAULT_NUM_CLASSES: usize = 63;
pub const MAX_OBJECTS: usize = 16;
/// Class-head index reserved for the stop token; real classes are 1..=C.
pub const STOP_CLASS: usize = 0;
/// Orientation (6) + translation (3).
pub const POSE_DIM: usize = 9;

/// Named classes with box extents (width x, height y, depth z) in meters.
const NAMED_CLASSES: [(&str, [f64; 3]); 16] = [
    ("table", [1.2, 0.75, 0.8]),
    ("chair", [0.5, 0.9, 0.5]),
    ("cup", [0.08, 0.10, 0.08]),
    ("bowl", [0.16, 0.07, 0.16]),
    ("lamp", [0.3, 0.5, 0.3]),
    ("bed", [1.6, 0.5, 2.0]),
    ("sofa", [2.0, 0.85, 0.9]),
    ("shelf", [0.8, 1.8, 0.35]),
    ("door", [0.9, 2.0, 0.05]),
    ("sink", [0.6, 0.25, 0.45]),
    ("pot", [0.25, 0.18, 0.25]),
    ("bottle", [0.08, 0.25, 0.08]),
    ("laptop", [0.34, 0.02, 0.24]),
    ("box", [0.4, 0.3, 0.3]),
    ("plant", [0.35, 0.6, 0.35]),
    ("cutting board", [0.4, 0.02, 0.28]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTaxonomy {
    names: Vec<String>,
    dims: Vec<Vec3>,
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::with_classes(DEFAULT_NUM_CLASSES).expect("default class count is valid")
    }
}

impl ClassTaxonomy {
    /// The sixteen named classes, padded with generic half-meter classes up to `count`.
    pub fn with_classes(count: usize) -> Result<Self> {
        if !(NAMED_CLASSES.len()..=DEFAULT_NUM_CLASSES).contains(&count) {
            return Err(Error::InvalidConfig(format!("class count {count} outside 16..=63")));
        }
        let mut names: Vec<String> = NAMED_CLASSES.iter().map(|c| c.0.to_string()).collect();
        let mut dims: Vec<Vec3> = NAMED_CLASSES.iter().map(|c| Vec3::from(c.1)).collect();
        for id in names.len() + 1..=count {
            names.push(format!("object_{id}"));
            dims.push(Vec3::new(0.5, 0.5, 0.5));
        }
        Ok(ClassTaxonomy { names, dims })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Result<&str> {
        self.check(id)?;
        Ok(&self.names[id - 1])
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }

    pub fn dimensions(&self, id: usize) -> Result<Vec3> {
        self.check(id)?;
        Ok(self.dims[id - 1])
    }

    fn check(&self, id: usize) -> Result<()> {
        if id == 0 || id > self.len() {
            Err(Error::UnknownClass(id))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectInstance {
    pub class_id: usize,
    pub orientation: Rot6,
    pub translation: Vec3,
}

impl ObjectInstance {
    pub fn new(class_id: usize, rotation: &Rot3, translation: Vec3) -> Self {
        ObjectInstance { class_id, orientation: rot6_from_matrix(rotation), translation }
    }

    pub fn pose_vector(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        out[..6].copy_from_slice(&self.orientation.0);
        out[6..].copy_from_slice(self.translation.as_slice());
        out
    }

    pub fn from_pose_vector(class_id: usize, v: &[f64]) -> Self {
        ObjectInstance { class_id, orientation: Rot6::from_slice(&v[..6]), translation: Vec3::new(v[6], v[7], v[8]) }
    }

    fn sort_key(&self) -> (f64, usize) {
        (self.translation.norm(), self.class_id)
    }
}

/// Objects expressed in the canonical body frame of frame 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneLayout {
    pub objects: Vec<ObjectInstance>,
}

impl SceneLayout {
    pub fn new(objects: Vec<ObjectInstance>) -> Self {
        SceneLayout { objects }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        if self.len() > MAX_OBJECTS {
            return Err(Error::BudgetExceeded { what: "object", budget: MAX_OBJECTS });
        }
        for o in &self.objects {
            taxonomy.dimensions(o.class_id)?;
            matrix_from_rot6(&o.orientation)?;
        }
        Ok(())
    }

    /// Objects sorted by distance from the origin, ties broken by class id.
    pub fn canonical_order(&self) -> SceneLayout {
        let mut objects = self.objects.clone();
        objects.sort_by(|a, b| {
            let (da, ca) = a.sort_key();
            let (db, cb) = b.sort_key();
            da.total_cmp(&db).then(ca.cmp(&cb))
        });
        SceneLayout { objects }
    }

    /// Moves every object with the same rigid transform as its motion.
    pub fn transformed(&self, tf: &HorizontalTransform) -> SceneLayout {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let r = matrix_from_rot6(&o.orientation).unwrap_or_default();
                ObjectInstance::new(o.class_id, &tf.apply_rotation(&r), tf.apply_point(&o.translation))
            })
            .collect();
        SceneLayout { objects }
    }
}

/// Class ids in canonical order followed by [`STOP_CLASS`], plus one pose per object.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTokens {
    pub classes: Vec<usize>,
    pub poses: Vec<[f64; POSE_DIM]>,
}

pub fn layout_to_token_stream(layout: &SceneLayout) -> SceneTokens {
    let ordered = layout.canonical_order();
    let mut classes: Vec<usize> = ordered.objects.iter().map(|o| o.class_id).collect();
    classes.push(STOP_CLASS);
    SceneTokens { classes, poses: ordered.objects.iter().map(|o| o.pose_vector()).collect() }
}

/// Inverse of [`layout_to_token_stream`]. A trailing stop id is optional.
pub fn token_stream_to_layout(classes: &[usize], poses: &[[f64; POSE_DIM]]) -> Result<SceneLayout> {
    let ids = match classes.last() {
        Some(&STOP_CLASS) => &classes[..classes.len() - 1],
        _ => classes,
    };
    if ids.contains(&STOP_CLASS) {
        return Err(Error::InvalidToken { id: STOP_CLASS, vocab: 0 });
    }
    if ids.len() != poses.len() {
        return Err(Error::LengthMismatch(ids.len(), poses.len()));
    }
    Ok(SceneLayout { objects: ids.iter().zip(poses).map(|(c, p)| ObjectInstance::from_pose_vector(*c, p)).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rotation: Rot3,
    pub half_extents: Vec3,
}

impl OrientedBox {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn is_axis_aligned(&self) -> bool {
        *self.rotation.matrix() == nalgebra::Matrix3::identity()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.rotation.transpose().rotate(&(p - self.center));
        local.x.abs() <= self.half_extents.x && local.y.abs() <= self.half_extents.y && local.z.abs() <= self.half_extents.z
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.center + self.rotation.rotate(local)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            *c = self.to_world(&Vec3::new(s(0) * h.x, s(1) * h.y, s(2) * h.z));
        }
        out
    }
}

pub fn canonical_box(taxonomy: &ClassTaxonomy, obj: &ObjectInstance) -> Result<OrientedBox> {
    let dims = taxonomy.dimensions(obj.class_id)?;
    Ok(OrientedBox { center: obj.translation, rotation: matrix_from_rot6(&obj.orientation)?, half_extents: dims * 0.5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub fn random_layout(rng: &mut ChaCha8Rng, n: usize) -> SceneLayout {
        SceneLayout::new(
            (0..n)
                .map(|_| {
                    ObjectInstance::new(
                        rng.random_range(1..=16),
                        &Rot3::ry(rng.random_range(-3.0..3.0)),
                        Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0), rng.random_range(-3.0..3.0)),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn taxonomy_defaults() {
        let t = ClassTaxonomy::default();
        assert_eq!(t.len(), 63);
        assert_eq!(t.id_of("cup"), Some(3));
        assert_eq!(t.name(16).unwrap(), "cutting board");
        assert!(matches!(t.dimensions(0), Err(Error::UnknownClass(0))));
        assert!(matches!(t.dimensions(64), Err(Error::UnknownClass(64))));
        assert!((1..=63).all(|i| t.dimensions(i).unwrap().iter().all(|d| *d > 0.0)));
        assert!(ClassTaxonomy::with_classes(10).is_err());
    }

    #[test]
    fn unit_cube_and_shift() {
        let t = ClassTaxonomy::default();
        let id = t.id_of("object_20").unwrap();
        let o = ObjectInstance::new(id, &Rot3::identity(), Vec3::zeros());
        let b = canonical_box(&t, &o).unwrap();
        assert_eq!(b.half_extents, Vec3::new(0.25, 0.25, 0.25));
        assert!((b.volume() - 0.125).abs() < 1e-15);
        let o2 = ObjectInstance { translation: Vec3::new(2.0, 0.0, 0.0), ..o };
        let b2 = canonical_box(&t, &o2).unwrap();
        for (c1, c2) in b.corners().iter().zip(b2.corners()) {
            assert!((c2 - c1 - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        }
        let bad = ObjectInstance { class_id: 99, ..o };
        assert!(canonical_box(&t, &bad).is_err());
    }

    #[test]
    fn yawed_cube_corners() {
        let t = ClassTaxonomy::default();
        let table = t.id_of("table").unwrap();
        let o = ObjectInstance::new(table, &Rot3::ry(FRAC_PI_2), Vec3::zeros());
        let b = canonical_box(&t, &o).unwrap();
        // Ry(90°) maps local (x, y, z) to (z, y, −x).
        let h = b.half_extents;
        let mut expect: Vec<Vec3> = Vec::new();
        for i in 0..8 {
            let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            let (x, y, z) = (s(0) * h.x, s(1) * h.y, s(2) * h.z);
            expect.push(Vec3::new(z, y, -x));
        }
        for (c, e) in b.corners().iter().zip(&expect) {
            assert!((c - e).norm() < 1e-12);
        }
    }

    #[test]
    fn token_stream_examples() {
        assert_eq!(layout_to_token_stream(&SceneLayout::default()).classes, vec![STOP_CLASS]);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let l = random_layout(&mut rng, 2);
        let toks = layout_to_token_stream(&l);
        assert_eq!(toks.classes.len(), 3);
        assert_eq!(toks.poses.len(), 2);
        assert!(matches!(token_stream_to_layout(&toks.classes, &toks.poses[..1]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn token_stream_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let n = rng.random_range(0..=MAX_OBJECTS);
            let l = random_layout(&mut rng, n).canonical_order();
            let toks = layout_to_token_stream(&l);
            let back = token_stream_to_layout(&toks.classes, &toks.poses).unwrap();
            assert_eq!(back, l);
            assert_eq!(layout_to_token_stream(&back), toks);
        }
    }

    #[test]
    fn box_volume_ignores_orientation() {
        let t = ClassTaxonomy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for o in random_layout(&mut rng, 50).objects {
            let b = canonical_box(&t, &o).unwrap();
            let d = t.dimensions(o.class_id).unwrap();
            assert!((b.volume() - d.x * d.y * d.z).abs() < 1e-12);
        }
    }
}
