use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{ObjectAnnotation, Sample};

/// Target size for training: scale down so the longer side fits `max_side`,
/// then round each side to the nearest positive multiple of `multiple`
/// (rounding down instead when rounding up would exceed `max_side`).
pub fn training_size(width: usize, height: usize, max_side: usize, multiple: usize) -> (usize, usize) {
    let longest = width.max(height).max(1);
    let scale = (max_side as f64 / longest as f64).min(1.0);
    let snap = |v: usize| {
        let scaled = v as f64 * scale;
        let mut n = (scaled / multiple as f64).round().max(1.0) as usize * multiple;
        if n > max_side {
            n = (max_side / multiple).max(1) * multiple;
        }
        n
    };
    (snap(width), snap(height))
}

/// Resizes image (bilinear), mask (nearest) and polygons to [`training_size`].
pub fn resize_for_training(sample: &Sample, max_side: usize, multiple: usize) -> Sample {
    let (w, h) = (sample.width(), sample.height());
    let (nw, nh) = training_size(w, h, max_side, multiple);
    if (nw, nh) == (w, h) {
        return sample.clone();
    }
    let (sx, sy) = (nw as f64 / w as f64, nh as f64 / h as f64);
    Sample {
        image: sample.image.resize_bilinear(nw, nh),
        mask: sample.mask.resize_nearest(nw, nh),
        objects: sample
            .objects
            .iter()
            .map(|o| ObjectAnnotation {
                class_id: o.class_id,
                polygon: o.polygon.iter().map(|&[x, y]| [x * sx, y * sy]).collect(),
            })
            .collect(),
    }
}

/// Groups indices by exact `(width, height)`, cuts each group into batches of
/// at most `batch_size` (the last one may be short), and shuffles the batch
/// order.
pub fn make_batches<R: Rng + ?Sized>(
    sizes: &[(usize, usize)],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &s) in sizes.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = groups
        .into_values()
        .flat_map(|idx| idx.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    batches.shuffle(rng);
    batches
}
