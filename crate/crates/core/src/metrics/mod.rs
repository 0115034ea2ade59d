//! Motion, caption and scene-layout evaluation.

mod motion;
mod scene;
mod text;

pub use motion::{mean_point_error, mpjpe, mpjpe_with, mpjre, mpjve, mte, pa_mpjpe, pa_point_error, JointAlign, MotionMetricsReport};
pub use scene::{
    iou3d, max_weight_assignment, scene_counts, scene_metrics, IouMode, SceneCounts, SceneMetricsReport, IOU_SAMPLES, IOU_SEED, IOU_THRESHOLD,
};
pub use text::{bleu, cider, rouge_l, CaptionPair, TextMetricsReport, CIDER_SIGMA, ROUGE_BETA};

/// One `name = value unit` line per metric.
pub fn format_entries(entries: &[(&str, f64, &str)]) -> String {
    let mut out = String::new();
    for (name, value, unit) in entries {
        if unit.is_empty() {
            out.push_str(&format!("{name} = {value:.4}\n"));
        } else {
            out.push_str(&format!("{name} = {value:.4} {unit}\n"));
        }
    }
    out
}
