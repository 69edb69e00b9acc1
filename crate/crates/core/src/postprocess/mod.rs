//! Segmentation map to detections: threshold, 8-connected components,
//! area filter, minimum-area rectangles, per-object type vote, and scaling
//! back to input pixels.

mod components;
mod geometry;

pub use components::{connected_components, Component, Labeling};
pub use geometry::{convex_hull, min_area_rect, Point, RotatedRect};

use serde::{Deserialize, Serialize};

use crate::network::{SegmentationMap, SCALE};
use crate::raster::{BinaryMap, Plane};
use crate::tensor::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Smallest component kept, in output cells.
pub const DEFAULT_MIN_AREA: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub threshold: f64,
    pub min_area: usize,
    /// Input pixels per output cell.
    pub scale: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            threshold: DEFAULT_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            scale: SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    /// In input-image pixel coordinates.
    pub rect: RotatedRect,
    pub class_id: Option<usize>,
    /// Mean type distribution over the component; empty without type channels.
    pub class_probs: Vec<f64>,
    /// Component size in output cells.
    pub component_area: usize,
}

/// `p >= threshold`.
pub fn binarize<T: Scalar>(probs: &Plane<T>, threshold: f64) -> BinaryMap {
    probs.map(|p| p.as_f64() >= threshold)
}

/// Cell-corner points of a component, in cell units.
fn component_corners(c: &Component) -> Vec<Point> {
    let mut pts = Vec::with_capacity(c.pixels.len() * 4);
    for &(x, y) in &c.pixels {
        let (x, y) = (x as f64, y as f64);
        pts.extend([
            Point::new(x, y),
            Point::new(x + 1.0, y),
            Point::new(x, y + 1.0),
            Point::new(x + 1.0, y + 1.0),
        ]);
    }
    pts
}

/// Detections for every batch item of `seg`.
pub fn detect_objects<T: Scalar>(seg: &SegmentationMap<T>, params: &DetectParams) -> Vec<Vec<DetectedObject>> {
    let s = seg.detect_prob.shape();
    (0..s.batch)
        .map(|b| {
            let prob = Plane::from_vec(s.width, s.height, seg.detect_prob.plane(b, 0).to_vec())
                .expect("plane matches tensor");
            let class_planes: Vec<&[T]> = match &seg.class_prob {
                Some(t) => (0..t.shape().channels).map(|c| t.plane(b, c)).collect(),
                None => Vec::new(),
            };
            detect_in_map(&prob, &class_planes, params)
        })
        .collect()
}

/// Detections for a single probability plane with optional type planes.
pub fn detect_in_map<T: Scalar>(
    prob: &Plane<T>,
    class_planes: &[&[T]],
    params: &DetectParams,
) -> Vec<DetectedObject> {
    let binary = binarize(prob, params.threshold);
    let labeling = connected_components(&binary);
    let width = prob.width();
    labeling
        .components
        .iter()
        .filter(|c| c.area() >= params.min_area)
        .map(|c| {
            let rect = min_area_rect(&component_corners(c))
                .expect("component is non-empty")
                .scaled(params.scale as f64);
            let mut class_probs = vec![0.0; class_planes.len()];
            for &(x, y) in &c.pixels {
                for (acc, plane) in class_probs.iter_mut().zip(class_planes) {
                    *acc += plane[y * width + x].as_f64();
                }
            }
            class_probs.iter_mut().for_each(|v| *v /= c.area() as f64);
            let class_id = class_probs
                .iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (i, &p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((i, p)),
                })
                .map(|(i, _)| i);
            DetectedObject {
                rect,
                class_id,
                class_probs,
                component_area: c.area(),
            }
        })
        .collect()
}
