//! JSON documents printed or written by the CLI. Every document carries a
//! versioned `schema` field; fields are only ever added within a version.

use barcode_seg::metrics::{EvalResult, MatchMode, ThresholdMetrics};
use barcode_seg::postprocess::DetectedObject;
use serde::Serialize;

pub const DETECTIONS_SCHEMA: &str = "bseg-detections/1";
pub const EVAL_SCHEMA: &str = "bseg-eval/1";
pub const BENCH_SCHEMA: &str = "bseg-bench/1";
pub const GENERATE_SCHEMA: &str = "bseg-generate/1";

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub checkpoint: String,
    pub channels: usize,
    pub n_classes: usize,
    pub parameters: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Detection {
    /// Clockwise from the topmost-then-leftmost corner, image pixels.
    pub vertices: [[f64; 2]; 4],
    pub center: [f64; 2],
    pub width: f64,
    pub height: f64,
    pub angle: f64,
    pub class_id: Option<usize>,
    pub class_name: Option<String>,
    pub class_probs: Vec<f64>,
    /// In 4x4 output cells.
    pub component_area: usize,
}

impl Detection {
    pub fn new(det: &DetectedObject, classes: &[String]) -> Self {
        let r = &det.rect;
        Detection {
            vertices: r.vertices().map(|p| [p.x, p.y]),
            center: [r.center.x, r.center.y],
            width: r.width,
            height: r.height,
            angle: r.angle,
            class_id: det.class_id,
            class_name: det.class_id.map(|c| class_name(classes, c)),
            class_probs: det.class_probs.clone(),
            component_area: det.component_area,
        }
    }
}

pub fn class_name(classes: &[String], id: usize) -> String {
    classes.get(id).cloned().unwrap_or_else(|| format!("class{id}"))
}

#[derive(Debug, Serialize)]
pub struct ImageDetections {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<Detection>,
    pub overlay: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct DetectionReport {
    pub schema: &'static str,
    pub model: ModelInfo,
    pub threshold: f64,
    pub t_area: usize,
    pub images: Vec<ImageDetections>,
    pub failed: Vec<Failure>,
    pub total_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub schema: &'static str,
    pub model: ModelInfo,
    pub manifest: String,
    pub threshold: f64,
    pub t_area: usize,
    pub match_mode: MatchMode,
    pub images: usize,
    pub gt_objects: usize,
    pub detections: usize,
    pub mean_jaccard: f64,
    /// One point per requested Jaccard threshold, in request order.
    pub curve: Vec<ThresholdMetrics>,
    pub per_image_jaccard: Vec<f64>,
    pub seconds: f64,
}

impl EvalReport {
    pub fn new(
        model: ModelInfo,
        manifest: String,
        threshold: f64,
        t_area: usize,
        result: EvalResult,
        seconds: f64,
    ) -> Self {
        EvalReport {
            schema: EVAL_SCHEMA,
            model,
            manifest,
            threshold,
            t_area,
            match_mode: result.match_mode,
            images: result.images,
            gt_objects: result.gt_objects,
            detections: result.detections,
            mean_jaccard: result.mean_jaccard,
            curve: result.thresholds,
            per_image_jaccard: result.per_image_jaccard,
            seconds,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema: &'static str,
    pub resolution: String,
    pub size: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub threads: usize,
    pub parameters: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct GenerateReport {
    pub schema: &'static str,
    pub manifest: String,
    pub count: usize,
    pub objects: usize,
    pub per_class: Vec<(String, usize)>,
}

/// Mean, median and nearest-rank 95th percentile of `samples` (milliseconds).
pub fn latency_stats(samples: &[f64]) -> (f64, f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (mean, median, s[rank - 1])
}
