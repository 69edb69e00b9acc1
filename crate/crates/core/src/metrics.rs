//! Detection quality measures.
//!
//! - Jaccard index between a ground-truth mask and the union of detections.
//! - Detection rate `D_T`: fraction of images whose Jaccard reaches `T`.
//! - Object recall `R_T` / precision `P_T`: each ground-truth object (an
//!   8-connected component of the mask) is paired with the detection that
//!   overlaps it best; it counts as found when that Jaccard reaches `T`.
//!   Recall divides by the number of objects, precision by the number of
//!   detections.
//! - Type accuracy: correctly typed / correctly detected objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{connected_components, DetectedObject, Point, RotatedRect};
use crate::raster::{BinaryMap, LabelMask, Plane};

/// `|G ∩ F| / |G ∪ F|`; 1 when both are empty.
pub fn jaccard(g: &BinaryMap, f: &BinaryMap) -> Result<f64> {
    if g.dims() != f.dims() {
        return Err(Error::shape(
            "jaccard",
            format!("{:?}", g.dims()),
            format!("{:?}", f.dims()),
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in g.data().iter().zip(f.data()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Marks pixels whose centre lies inside `rect`.
pub fn rasterize_rect(rect: &RotatedRect, width: usize, height: usize) -> BinaryMap {
    let mut out = Plane::new(width, height, false);
    fill_rect(&mut out, rect);
    out
}

fn fill_rect(out: &mut BinaryMap, rect: &RotatedRect) {
    let (w, h) = out.dims();
    let verts = rect.vertices();
    let min_x = verts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = verts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = verts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = verts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_x - 0.5).floor().max(0.0) as usize;
    let y0 = (min_y - 0.5).floor().max(0.0) as usize;
    let x1 = ((max_x - 0.5).ceil().max(-1.0) + 1.0).min(w as f64) as usize;
    let y1 = ((max_y - 0.5).ceil().max(-1.0) + 1.0).min(h as f64) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if rect.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5), 0.0) {
                out.set(x, y, true);
            }
        }
    }
}

/// Union of all detection rectangles.
pub fn rasterize_detections(dets: &[DetectedObject], width: usize, height: usize) -> BinaryMap {
    let mut out = Plane::new(width, height, false);
    for d in dets {
        fill_rect(&mut out, &d.rect);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub mask: BinaryMap,
    /// Most frequent label inside the component, minus one.
    pub class_id: usize,
    pub area: usize,
}

/// Splits a label mask into 8-connected objects.
pub fn gt_objects_from_mask(mask: &LabelMask) -> Vec<GtObject> {
    let (w, h) = mask.dims();
    let binary = mask.map(|v| v != 0);
    connected_components(&binary)
        .components
        .into_iter()
        .map(|c| {
            let mut obj = Plane::new(w, h, false);
            let mut votes = [0usize; 256];
            for &(x, y) in &c.pixels {
                obj.set(x, y, true);
                votes[mask.get(x, y) as usize] += 1;
            }
            let label = (1..256).max_by_key(|&l| (votes[l], std::cmp::Reverse(l))).unwrap();
            GtObject {
                mask: obj,
                class_id: label - 1,
                area: c.area(),
            }
        })
        .collect()
}

/// `#{J >= T} / |S|`.
pub fn detection_rate(jaccards: &[f64], threshold: f64) -> Result<f64> {
    if jaccards.is_empty() {
        return Err(Error::InvalidArgument(
            "detection rate over an empty dataset".into(),
        ));
    }
    Ok(jaccards.iter().filter(|&&j| j >= threshold).count() as f64 / jaccards.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Each object takes its best detection, even if another object already did.
    #[default]
    Literal,
    /// Greedy one-to-one assignment by descending Jaccard (diagnostic).
    OneToOne,
}

/// Everything needed to score one image at any threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    /// Jaccard of the full ground-truth mask against the union of detections.
    pub jaccard: f64,
    /// `pair_jaccard[g][d]` between object `g` and detection `d`.
    pub pair_jaccard: Vec<Vec<f64>>,
    pub gt_classes: Vec<usize>,
    pub det_classes: Vec<Option<usize>>,
}

impl ImageEval {
    pub fn gt_count(&self) -> usize {
        self.gt_classes.len()
    }

    pub fn det_count(&self) -> usize {
        self.det_classes.len()
    }

    /// `(object, detection, J)` pairs that count as found at `threshold`.
    pub fn matches(&self, threshold: f64, mode: MatchMode) -> Vec<(usize, usize, f64)> {
        match mode {
            MatchMode::Literal => self
                .pair_jaccard
                .iter()
                .enumerate()
                .filter_map(|(g, row)| {
                    // first detection with the highest Jaccard
                    let (d, &j) = row
                        .iter()
                        .enumerate()
                        .fold(None, |best: Option<(usize, &f64)>, (d, j)| match best {
                            Some((_, bj)) if bj >= j => best,
                            _ => Some((d, j)),
                        })?;
                    (j >= threshold).then_some((g, d, j))
                })
                .collect(),
            MatchMode::OneToOne => {
                let mut pairs: Vec<(usize, usize, f64)> = self
                    .pair_jaccard
                    .iter()
                    .enumerate()
                    .flat_map(|(g, row)| row.iter().enumerate().map(move |(d, &j)| (g, d, j)))
                    .filter(|&(_, _, j)| j >= threshold)
                    .collect();
                pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
                let mut used_g = vec![false; self.gt_count()];
                let mut used_d = vec![false; self.det_count()];
                let mut out = Vec::new();
                for (g, d, j) in pairs {
                    if !used_g[g] && !used_d[d] {
                        used_g[g] = true;
                        used_d[d] = true;
                        out.push((g, d, j));
                    }
                }
                out.sort_by_key(|m| m.0);
                out
            }
        }
    }
}

/// Scores one image's detections against its label mask.
pub fn evaluate_image(mask: &LabelMask, detections: &[DetectedObject]) -> ImageEval {
    let (w, h) = mask.dims();
    let gt = gt_objects_from_mask(mask);
    let det_masks: Vec<BinaryMap> = detections
        .iter()
        .map(|d| rasterize_rect(&d.rect, w, h))
        .collect();
    let g_all = mask.map(|v| v != 0);
    let f_all = rasterize_detections(detections, w, h);
    let pair_jaccard = gt
        .iter()
        .map(|g| {
            det_masks
                .iter()
                .map(|f| jaccard(&g.mask, f).expect("same dims"))
                .collect()
        })
        .collect();
    ImageEval {
        jaccard: jaccard(&g_all, &f_all).expect("same dims"),
        pair_jaccard,
        gt_classes: gt.iter().map(|g| g.class_id).collect(),
        det_classes: detections.iter().map(|d| d.class_id).collect(),
    }
}

/// `(P_T, R_T)` with `R = 1` when there are no objects and `P = 1` when
/// there are no detections.
pub fn object_precision_recall(images: &[ImageEval], threshold: f64, mode: MatchMode) -> (f64, f64) {
    let mut found = 0usize;
    let mut objects = 0usize;
    let mut detections = 0usize;
    for im in images {
        found += im.matches(threshold, mode).len();
        objects += im.gt_count();
        detections += im.det_count();
    }
    let precision = if detections == 0 {
        1.0
    } else {
        found as f64 / detections as f64
    };
    let recall = if objects == 0 {
        1.0
    } else {
        found as f64 / objects as f64
    };
    (precision, recall)
}

/// Correct-type fraction over `(true class, predicted class)` pairs of
/// correctly detected objects; `None` when there are none.
pub fn classification_accuracy(pairs: &[(usize, Option<usize>)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let correct = pairs.iter().filter(|(t, p)| Some(*t) == *p).count();
    Some(correct as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub detection_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub classification_accuracy: Option<f64>,
    pub matched: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub images: usize,
    pub gt_objects: usize,
    pub detections: usize,
    pub mean_jaccard: f64,
    pub per_image_jaccard: Vec<f64>,
    pub thresholds: Vec<ThresholdMetrics>,
    pub match_mode: MatchMode,
}

impl EvalResult {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdMetrics> {
        self.thresholds
            .iter()
            .find(|m| (m.threshold - threshold).abs() < 1e-12)
    }
}

pub fn summarize(images: &[ImageEval], thresholds: &[f64], mode: MatchMode) -> Result<EvalResult> {
    let per_image_jaccard: Vec<f64> = images.iter().map(|i| i.jaccard).collect();
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("threshold {t} outside [0, 1]")));
        }
        let detection_rate = detection_rate(&per_image_jaccard, t)?;
        let (precision, recall) = object_precision_recall(images, t, mode);
        let pairs: Vec<(usize, Option<usize>)> = images
            .iter()
            .flat_map(|im| {
                im.matches(t, mode)
                    .into_iter()
                    .map(|(g, d, _)| (im.gt_classes[g], im.det_classes[d]))
            })
            .collect();
        out.push(ThresholdMetrics {
            threshold: t,
            detection_rate,
            recall,
            precision,
            classification_accuracy: classification_accuracy(&pairs),
            matched: pairs.len(),
        });
    }
    Ok(EvalResult {
        images: images.len(),
        gt_objects: images.iter().map(ImageEval::gt_count).sum(),
        detections: images.iter().map(ImageEval::det_count).sum(),
        mean_jaccard: per_image_jaccard.iter().sum::<f64>() / per_image_jaccard.len() as f64,
        per_image_jaccard,
        thresholds: out,
        match_mode: mode,
    })
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_threshold_sweep() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMap {
        Plane::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn jaccard_cases() {
        let a = rect_mask(20, 20, 0, 0, 10, 10);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let b = rect_mask(20, 20, 10, 10, 20, 20);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        // 100 vs 100 with 50 overlap
        let c = rect_mask(20, 20, 5, 0, 15, 10);
        assert!((jaccard(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &c).unwrap(), jaccard(&c, &a).unwrap());
        let empty = Plane::new(20, 20, false);
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
        assert_eq!(jaccard(&empty, &a).unwrap(), 0.0);
        assert!(jaccard(&a, &Plane::new(10, 20, false)).is_err());
    }

    #[test]
    fn gt_object_counts() {
        let mut m = LabelMask::new(16, 16, 0);
        assert!(gt_objects_from_mask(&m).is_empty());
        for y in 1..4 {
            for x in 1..4 {
                m.set(x, y, 1);
                m.set(x + 8, y + 8, 3);
            }
        }
        let objs = gt_objects_from_mask(&m);
        assert_eq!(objs.len(), 2);
        assert_eq!(objs[0].class_id, 0);
        assert_eq!(objs[1].class_id, 2);
        assert_eq!(gt_objects_from_mask(&LabelMask::new(4, 4, 1)).len(), 1);
    }

    #[test]
    fn detection_rate_cases() {
        assert_eq!(detection_rate(&[0.6, 0.4], 0.5).unwrap(), 0.5);
        assert_eq!(detection_rate(&[0.0, 0.4], 0.0).unwrap(), 1.0);
        assert_eq!(detection_rate(&[0.1, 0.2], 0.5).unwrap(), 0.0);
        assert!(detection_rate(&[], 0.5).is_err());
    }

    fn fixed_eval(pairs: Vec<Vec<f64>>, gt: Vec<usize>, det: Vec<Option<usize>>) -> ImageEval {
        ImageEval {
            jaccard: 0.0,
            pair_jaccard: pairs,
            gt_classes: gt,
            det_classes: det,
        }
    }

    #[test]
    fn precision_recall_cases() {
        let perfect = fixed_eval(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![Some(0), Some(1)]);
        assert_eq!(object_precision_recall(&[perfect], 0.5, MatchMode::Literal), (1.0, 1.0));

        let extra = fixed_eval(
            vec![vec![0.7, 0.0, 0.1], vec![0.0, 0.6, 0.2]],
            vec![0, 0],
            vec![None, None, None],
        );
        let (p, r) = object_precision_recall(&[extra], 0.5, MatchMode::Literal);
        assert_eq!(r, 1.0);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);

        let none = fixed_eval(vec![vec![]], vec![0], vec![]);
        assert_eq!(object_precision_recall(&[none], 0.5, MatchMode::Literal), (1.0, 0.0));
    }

    #[test]
    fn literal_can_double_count_but_one_to_one_cannot() {
        let im = fixed_eval(vec![vec![0.8], vec![0.6]], vec![0, 0], vec![Some(0)]);
        assert_eq!(object_precision_recall(&[im.clone()], 0.5, MatchMode::Literal), (2.0, 1.0));
        assert_eq!(object_precision_recall(&[im], 0.5, MatchMode::OneToOne), (1.0, 0.5));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(classification_accuracy(&[(0, Some(0)), (2, Some(2))]), Some(1.0));
        let acc = classification_accuracy(&[(0, Some(0)), (1, Some(1)), (2, Some(1))]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(classification_accuracy(&[]), None);
    }

    #[test]
    fn wrong_type_only_hurts_accuracy() {
        // A stacked code detected as a matrix code.
        let right = fixed_eval(vec![vec![0.9]], vec![3], vec![Some(3)]);
        let wrong = fixed_eval(vec![vec![0.9]], vec![3], vec![Some(2)]);
        let a = summarize(&[right], &[0.5], MatchMode::Literal).unwrap();
        let b = summarize(&[wrong], &[0.5], MatchMode::Literal).unwrap();
        assert_eq!(a.thresholds[0].precision, b.thresholds[0].precision);
        assert_eq!(a.thresholds[0].recall, b.thresholds[0].recall);
        assert_eq!(a.thresholds[0].classification_accuracy, Some(1.0));
        assert_eq!(b.thresholds[0].classification_accuracy, Some(0.0));
    }

    #[test]
    fn rasterize_axis_aligned() {
        let r = RotatedRect {
            center: Point::new(5.0, 4.0),
            width: 4.0,
            height: 2.0,
            angle: -90.0,
        };
        let m = rasterize_rect(&r, 10, 10);
        // at -90 degrees the width runs along y
        let count = m.data().iter().filter(|&&b| b).count();
        assert_eq!(count, 8);
        assert!(m.get(4, 2) && m.get(5, 5) && !m.get(6, 4) && !m.get(4, 6));
    }
}
