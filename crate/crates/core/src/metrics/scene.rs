use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rotmath::Vec3;
use crate::scene::{canonical_box, ClassTaxonomy, OrientedBox, SceneLayout};

pub const IOU_SAMPLES: usize = 200_000;
pub const IOU_SEED: u64 = 0xC0FFEE;
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    /// Exact interval overlap when both boxes are axis aligned, sampling otherwise.
    Auto,
    MonteCarlo { samples: usize, seed: u64 },
}

fn aabb_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = (a.center[k] - a.half_extents[k]).max(b.center[k] - b.half_extents[k]);
        let hi = (a.center[k] + a.half_extents[k]).min(b.center[k] + b.half_extents[k]);
        inter *= (hi - lo).max(0.0);
    }
    (inter / (a.volume() + b.volume() - inter)).min(1.0)
}

fn box_key(b: &OrientedBox) -> [f64; 16] {
    let mut k = [0.0; 16];
    k[0] = b.volume();
    k[1..4].copy_from_slice(b.center.as_slice());
    k[4..7].copy_from_slice(b.half_extents.as_slice());
    k[7..].copy_from_slice(&b.rotation.to_row_major());
    k
}

fn sampled_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> f64 {
    // Sample inside the smaller box; ties broken on a fixed key so the result is symmetric.
    let (small, big) = if box_key(a).partial_cmp(&box_key(b)) == Some(std::cmp::Ordering::Greater) { (b, a) } else { (a, b) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = small.half_extents;
    let mut hits = 0usize;
    for _ in 0..samples {
        let local = Vec3::new(rng.random_range(-1.0..1.0) * h.x, rng.random_range(-1.0..1.0) * h.y, rng.random_range(-1.0..1.0) * h.z);
        if big.contains(&small.to_world(&local)) {
            hits += 1;
        }
    }
    let inter = hits as f64 / samples as f64 * small.volume();
    (inter / (a.volume() + b.volume() - inter)).min(1.0)
}

pub fn iou3d(a: &OrientedBox, b: &OrientedBox, mode: IouMode) -> f64 {
    match mode {
        IouMode::Auto if a.is_axis_aligned() && b.is_axis_aligned() => aabb_iou(a, b),
        IouMode::Auto => sampled_iou(a, b, IOU_SAMPLES, IOU_SEED),
        IouMode::MonteCarlo { samples, seed } => sampled_iou(a, b, samples.max(1), seed),
    }
}

/// Maximum-weight assignment of rows to columns; returns the column of each row.
/// Every row is assigned when rows ≤ cols.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = w.len();
    let m = w.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| w[i][j]).collect()).collect();
        let cols = max_weight_assignment(&t);
        let mut out = vec![None; n];
        for (j, i) in cols.iter().enumerate() {
            if let Some(i) = i {
                out[*i] = Some(j);
            }
        }
        return out;
    }
    // Shortest augmenting path with potentials on cost = -weight (1-based).
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; m + 1]);
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = -w[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Raw counts of one or more layout comparisons; reports pool them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneCounts {
    pub iou_sum: f64,
    pub matched: usize,
    pub hits: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    pub id_common: usize,
}

impl SceneCounts {
    pub fn add(&mut self, o: &SceneCounts) {
        self.iou_sum += o.iou_sum;
        self.matched += o.matched;
        self.hits += o.hits;
        self.n_pred += o.n_pred;
        self.n_gt += o.n_gt;
        self.id_common += o.id_common;
    }

    pub fn report(&self) -> SceneMetricsReport {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        SceneMetricsReport {
            mean_iou: if self.matched == 0 { 0.0 } else { 100.0 * self.iou_sum / self.matched as f64 },
            precision: ratio(self.hits, self.n_pred),
            recall: ratio(self.hits, self.n_gt),
            id_precision: ratio(self.id_common, self.n_pred),
            id_recall: ratio(self.id_common, self.n_gt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneMetricsReport {
    pub mean_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub id_precision: f64,
    pub id_recall: f64,
}

impl SceneMetricsReport {
    pub fn entries(&self) -> Vec<(&'static str, f64, &'static str)> {
        vec![
            ("scene.iou3d", self.mean_iou, ""),
            ("scene.p50", self.precision, ""),
            ("scene.r50", self.recall, ""),
            ("scene.id_p", self.id_precision, ""),
            ("scene.id_r", self.id_recall, ""),
        ]
    }
}

/// Matches same-class objects, preferring (in order) more pairs at IoU ≥ 0.5,
/// more same-class pairs, then larger total IoU.
pub fn scene_counts(pred: &SceneLayout, gt: &SceneLayout, taxonomy: &ClassTaxonomy, mode: IouMode) -> Result<SceneCounts> {
    let pb = pred.objects.iter().map(|o| canonical_box(taxonomy, o)).collect::<Result<Vec<_>>>()?;
    let gb = gt.objects.iter().map(|o| canonical_box(taxonomy, o)).collect::<Result<Vec<_>>>()?;
    let n = pred.len().max(gt.len()) as f64;
    let tier_same = n + 1.0;
    let tier_hit = tier_same * (n + 1.0);
    let mut iou = vec![vec![None; gt.len()]; pred.len()];
    let mut w = vec![vec![0.0; gt.len()]; pred.len()];
    for (i, po) in pred.objects.iter().enumerate() {
        for (j, go) in gt.objects.iter().enumerate() {
            if po.class_id == go.class_id {
                let v = iou3d(&pb[i], &gb[j], mode);
                iou[i][j] = Some(v);
                w[i][j] = tier_same + v + if v >= IOU_THRESHOLD { tier_hit } else { 0.0 };
            }
        }
    }
    let mut c = SceneCounts { n_pred: pred.len(), n_gt: gt.len(), ..SceneCounts::default() };
    for (i, j) in max_weight_assignment(&w).into_iter().enumerate() {
        if let Some(v) = j.and_then(|j| iou[i][j]) {
            c.matched += 1;
            c.iou_sum += v;
            c.hits += usize::from(v >= IOU_THRESHOLD);
        }
    }
    let mut gt_classes: Vec<usize> = gt.objects.iter().map(|o| o.class_id).collect();
    for o in &pred.objects {
        if let Some(k) = gt_classes.iter().position(|&g| g == o.class_id) {
            gt_classes.swap_remove(k);
            c.id_common += 1;
        }
    }
    Ok(c)
}

pub fn scene_metrics(pred: &SceneLayout, gt: &SceneLayout, taxonomy: &ClassTaxonomy) -> Result<SceneMetricsReport> {
    Ok(scene_counts(pred, gt, taxonomy, IouMode::Auto)?.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::Rot3;
    use crate::scene::ObjectInstance;

    fn cube(center: Vec3, rotation: Rot3) -> OrientedBox {
        OrientedBox { center, rotation, half_extents: Vec3::new(0.5, 0.5, 0.5) }
    }

    /// Regular-grid estimate of the intersection volume over the union's bounding box.
    fn voxel_iou(a: &OrientedBox, b: &OrientedBox, per_axis: usize) -> f64 {
        let pts: Vec<Vec3> = a.corners().into_iter().chain(b.corners()).collect();
        let lo = pts.iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let hi = pts.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
        let step = (hi - lo) / per_axis as f64;
        let cell = step.x * step.y * step.z;
        let mut inter = 0.0;
        for i in 0..per_axis {
            for j in 0..per_axis {
                for k in 0..per_axis {
                    let p = lo + Vec3::new((i as f64 + 0.5) * step.x, (j as f64 + 0.5) * step.y, (k as f64 + 0.5) * step.z);
                    if a.contains(&p) && b.contains(&p) {
                        inter += cell;
                    }
                }
            }
        }
        inter / (a.volume() + b.volume() - inter)
    }

    #[test]
    fn analytic_cases() {
        let a = cube(Vec3::zeros(), Rot3::identity());
        assert_eq!(iou3d(&a, &a, IouMode::Auto), 1.0);
        let b = cube(Vec3::new(0.5, 0.0, 0.0), Rot3::identity());
        assert_eq!(iou3d(&a, &b, IouMode::Auto), 1.0 / 3.0);
        let far = cube(Vec3::new(2.0, 0.0, 0.0), Rot3::identity());
        assert_eq!(iou3d(&a, &far, IouMode::Auto), 0.0);
    }

    #[test]
    fn sampled_iou_matches_voxel_oracle() {
        let a = cube(Vec3::zeros(), Rot3::identity());
        let b = cube(Vec3::zeros(), Rot3::ry(std::f64::consts::FRAC_PI_4));
        let got = iou3d(&a, &b, IouMode::Auto);
        // Two unit squares, one turned 45°, overlap in a regular octagon of area 2(√2 − 1).
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((got - inter / (2.0 - inter)).abs() < 0.01, "{got}");
        assert!((got - voxel_iou(&a, &b, 100)).abs() < 0.01);
    }

    #[test]
    fn sampled_iou_is_symmetric() {
        let a = OrientedBox { center: Vec3::new(0.1, 0.0, 0.2), rotation: Rot3::ry(0.3), half_extents: Vec3::new(0.4, 0.2, 0.3) };
        let b = OrientedBox { center: Vec3::new(0.0, 0.1, 0.0), rotation: Rot3::rx(0.2), half_extents: Vec3::new(0.3, 0.3, 0.3) };
        assert!((iou3d(&a, &b, IouMode::Auto) - iou3d(&b, &a, IouMode::Auto)).abs() < 0.005);
        let c = OrientedBox { half_extents: Vec3::new(0.3, 0.2, 0.4), ..a };
        assert_eq!(iou3d(&a, &c, IouMode::Auto), iou3d(&c, &a, IouMode::Auto));
    }

    fn brute_assignment(w: &[Vec<f64>]) -> f64 {
        fn rec(w: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = rec(w, i + 1, used);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[i][j] + rec(w, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w[0].len()])
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..6);
            let w: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let a = max_weight_assignment(&w);
            let total: f64 = a.iter().enumerate().filter_map(|(i, j)| j.map(|j| w[i][j])).sum();
            assert!((total - brute_assignment(&w)).abs() < 1e-9);
            let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
            assert_eq!(cols.len(), n.min(m));
            cols.sort();
            cols.dedup();
            assert_eq!(cols.len(), n.min(m));
        }
    }

    fn obj(class: usize, x: f64) -> ObjectInstance {
        ObjectInstance::new(class, &Rot3::identity(), Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn scene_examples() {
        let tax = ClassTaxonomy::default();
        let gt = SceneLayout::new(vec![obj(3, 0.0), obj(3, 1.0), obj(1, 3.0)]);
        let r = scene_metrics(&gt, &gt, &tax).unwrap();
        assert_eq!(r, SceneMetricsReport { mean_iou: 100.0, precision: 100.0, recall: 100.0, id_precision: 100.0, id_recall: 100.0 });
        let empty = scene_metrics(&SceneLayout::default(), &gt, &tax).unwrap();
        assert_eq!(empty, SceneMetricsReport::default());
        // two cups in GT; prediction holds one cup and a lamp
        let gt = SceneLayout::new(vec![obj(3, 0.0), obj(3, 1.0)]);
        let pred = SceneLayout::new(vec![obj(3, 0.0), obj(5, 1.0)]);
        let r = scene_metrics(&pred, &gt, &tax).unwrap();
        assert_eq!((r.id_precision, r.id_recall), (50.0, 50.0));
        assert_eq!((r.precision, r.recall, r.mean_iou), (50.0, 50.0, 100.0));
    }

    #[test]
    fn matching_prefers_more_hits_over_total_iou() {
        // Total IoU alone would pair (p0, g0) and (p1, g1) with no hit at 0.5;
        // the hit-first order pairs p0 with g1 instead.
        let w = |iou_00: f64, iou_01: f64, iou_10: f64, iou_11: f64| [[iou_00, iou_01], [iou_10, iou_11]];
        let ious = w(0.45, 0.5, 0.3, 0.45);
        let tier_same = 3.0;
        let tier_hit = 9.0;
        let weights: Vec<Vec<f64>> =
            ious.iter().map(|r| r.iter().map(|&v| tier_same + v + if v >= 0.5 { tier_hit } else { 0.0 }).collect()).collect();
        assert_eq!(max_weight_assignment(&weights), vec![Some(1), Some(0)]);
    }

    #[test]
    fn permutation_invariant() {
        let tax = ClassTaxonomy::default();
        let gt = SceneLayout::new(vec![obj(3, 0.0), obj(3, 0.05), obj(2, 1.0)]);
        let pred = SceneLayout::new(vec![obj(3, 0.02), obj(2, 1.1), obj(3, 0.3)]);
        let a = scene_metrics(&pred, &gt, &tax).unwrap();
        let mut rev = pred.clone();
        rev.objects.reverse();
        let mut gr = gt.clone();
        gr.objects.rotate_left(1);
        assert_eq!(a, scene_metrics(&rev, &gr, &tax).unwrap());
    }
}
