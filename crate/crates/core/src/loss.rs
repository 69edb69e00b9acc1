//! Training objective.
//!
//! Detection is scored by binary cross-entropy split three ways: the mean
//! over positive superpixels, the mean over all negatives, and the mean over
//! the `k` negatives the network is most confident about (hard negatives,
//! `k` = number of positives in the image). Type classification adds a
//! categorical cross-entropy restricted to ground-truth object cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SegmentationMap;
use crate::raster::Plane;
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub positive: f64,
    pub negative: f64,
    pub hard: f64,
    /// Weight of the classification term.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            positive: 15.0,
            negative: 1.0,
            hard: 5.0,
            alpha: 1.0,
        }
    }
}

/// Per-superpixel labels for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelTargets {
    pub detect: Plane<bool>,
    /// Type index; meaningful only where `detect` is set.
    pub class_id: Plane<u8>,
}

impl SuperpixelTargets {
    pub fn positives(&self) -> usize {
        self.detect.data().iter().filter(|&&d| d).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub positive: f64,
    pub negative: f64,
    pub hard: f64,
    pub detection: f64,
    pub classification: f64,
    pub total: f64,
    /// Number of positive cells (and hard negatives mined).
    pub k: usize,
}

impl LossBreakdown {
    /// Component-wise mean; `k` is summed.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            positive: avg(|l| l.positive),
            negative: avg(|l| l.negative),
            hard: avg(|l| l.hard),
            detection: avg(|l| l.detection),
            classification: avg(|l| l.classification),
            total: avg(|l| l.total),
            k: items.iter().map(|l| l.k).sum(),
        }
    }
}

#[inline]
fn bce(p: f64, positive: bool) -> f64 {
    let p = p.clamp(EPSILON, 1.0 - EPSILON);
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d(bce)/dp, zero where the clamp is active.
#[inline]
fn bce_grad(p: f64, positive: bool) -> f64 {
    if !(EPSILON..=1.0 - EPSILON).contains(&p) {
        return 0.0;
    }
    if positive {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Indices of the `k` negatives with the highest probability; ties go to the
/// lower flat index. All negatives when `k` exceeds their count.
pub fn hard_negatives<T: Scalar>(pred: &[T], targets: &[bool], k: usize) -> Vec<usize> {
    let mut negatives: Vec<usize> = (0..pred.len()).filter(|&i| !targets[i]).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < negatives.len() {
        let cmp = |a: &usize, b: &usize| {
            pred[*b]
                .partial_cmp(&pred[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        };
        negatives.select_nth_unstable_by(k - 1, cmp);
        negatives.truncate(k);
    }
    negatives.sort_unstable();
    negatives
}

fn check_same(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

/// Detection terms for one image; `pred` and `targets` are flattened maps.
pub fn detection_loss<T: Scalar>(
    pred: &[T],
    targets: &[bool],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    detection_terms(pred, targets, weights, None)
}

/// Detection terms plus `dL_det / dpred`.
pub fn detection_loss_grad<T: Scalar>(
    pred: &[T],
    targets: &[bool],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<T>)> {
    let mut grad = vec![T::zero(); pred.len()];
    let l = detection_terms(pred, targets, weights, Some(&mut grad))?;
    Ok((l, grad))
}

fn detection_terms<T: Scalar>(
    pred: &[T],
    targets: &[bool],
    weights: &LossWeights,
    mut grad: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    check_same("detection_loss", pred.len(), targets.len())?;
    let k = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - k;
    let hard = hard_negatives(pred, targets, k);

    let mut sum_p = 0.0;
    let mut sum_n = 0.0;
    for (i, (&p, &t)) in pred.iter().zip(targets).enumerate() {
        let p = p.as_f64();
        if t {
            sum_p += bce(p, true);
        } else {
            sum_n += bce(p, false);
        }
        if let Some(g) = grad.as_deref_mut() {
            let coef = if t {
                weights.positive / k as f64
            } else {
                weights.negative / n_neg as f64
            };
            g[i] = T::from_f64(coef * bce_grad(p, t));
        }
    }
    let mut sum_h = 0.0;
    for &i in &hard {
        let p = pred[i].as_f64();
        sum_h += bce(p, false);
        if let Some(g) = grad.as_deref_mut() {
            g[i] += T::from_f64(weights.hard / hard.len() as f64 * bce_grad(p, false));
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let positive = mean(sum_p, k);
    let negative = mean(sum_n, n_neg);
    let hard_mean = mean(sum_h, hard.len());
    let detection = weights.positive * positive + weights.negative * negative + weights.hard * hard_mean;
    Ok(LossBreakdown {
        positive,
        negative,
        hard: hard_mean,
        detection,
        classification: 0.0,
        total: detection,
        k,
    })
}

/// Mean `-ln q[true class]` over positive cells. `class_prob` holds
/// `n_classes` consecutive planes of `targets.len()` cells.
pub fn classification_loss<T: Scalar>(
    class_prob: &[T],
    n_classes: usize,
    detect: &[bool],
    class_id: &[u8],
) -> Result<f64> {
    classification_terms(class_prob, n_classes, detect, class_id, None)
}

pub fn classification_loss_grad<T: Scalar>(
    class_prob: &[T],
    n_classes: usize,
    detect: &[bool],
    class_id: &[u8],
) -> Result<(f64, Vec<T>)> {
    let mut grad = vec![T::zero(); class_prob.len()];
    let l = classification_terms(class_prob, n_classes, detect, class_id, Some(&mut grad))?;
    Ok((l, grad))
}

fn classification_terms<T: Scalar>(
    class_prob: &[T],
    n_classes: usize,
    detect: &[bool],
    class_id: &[u8],
    mut grad: Option<&mut [T]>,
) -> Result<f64> {
    let cells = detect.len();
    check_same("classification_loss targets", cells, class_id.len())?;
    check_same("classification_loss probabilities", cells * n_classes, class_prob.len())?;
    let positives = detect.iter().filter(|&&d| d).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in (0..cells).filter(|&i| detect[i]) {
        let c = class_id[i] as usize;
        if c >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "class id {c} at cell {i} out of range for {n_classes} classes"
            )));
        }
        let idx = c * cells + i;
        let q = class_prob[idx].as_f64();
        sum += bce(q, true);
        if let Some(g) = grad.as_deref_mut() {
            g[idx] = T::from_f64(bce_grad(q, true) / positives as f64);
        }
    }
    Ok(sum / positives as f64)
}

/// Combined loss, per-image then averaged over the batch with equal weight.
pub fn total_loss<T: Scalar>(
    map: &SegmentationMap<T>,
    targets: &[SuperpixelTargets],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss_grad(map, targets, weights)?.0)
}

/// Gradients of [`total_loss`] with respect to the detection and class probabilities.
#[allow(clippy::type_complexity)]
pub fn total_loss_grad<T: Scalar>(
    map: &SegmentationMap<T>,
    targets: &[SuperpixelTargets],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Tensor<T>, Option<Tensor<T>>)> {
    let s = map.detect_prob.shape();
    if targets.len() != s.batch {
        return Err(Error::shape("total_loss batch", s.batch, targets.len()));
    }
    let n = map.n_classes();
    let inv_batch = 1.0 / s.batch as f64;
    let mut grad_detect = Tensor::zeros(s);
    let mut grad_class = map
        .class_prob
        .as_ref()
        .map(|t| Tensor::zeros(t.shape()));
    let mut parts = Vec::with_capacity(s.batch);
    for (b, t) in targets.iter().enumerate() {
        if t.detect.dims() != (s.width, s.height) || t.class_id.dims() != (s.width, s.height) {
            return Err(Error::shape(
                "total_loss targets",
                format!("{}x{}", s.width, s.height),
                format!("{}x{}", t.detect.width(), t.detect.height()),
            ));
        }
        let (mut l, gd) = detection_loss_grad(map.detect_prob.plane(b, 0), t.detect.data(), weights)?;
        for (dst, g) in grad_detect.plane_mut(b, 0).iter_mut().zip(gd) {
            *dst = g * T::from_f64(inv_batch);
        }
        if let (Some(cp), Some(gc)) = (&map.class_prob, grad_class.as_mut()) {
            let (lc, g) =
                classification_loss_grad(cp.item(b), n, t.detect.data(), t.class_id.data())?;
            let scale = T::from_f64(weights.alpha * inv_batch);
            for (dst, g) in gc.item_mut(b).iter_mut().zip(g) {
                *dst = g * scale;
            }
            l.classification = lc;
        }
        l.total = l.detection + weights.alpha * l.classification;
        parts.push(l);
    }
    let mut out = LossBreakdown::mean(&parts);
    out.k = parts.iter().map(|l| l.k).sum();
    Ok((out, grad_detect, grad_class))
}
