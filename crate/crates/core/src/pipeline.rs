//! Image in, detections out: padding, forward pass, postprocessing, and
//! dataset-level evaluation.

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{evaluate_image, summarize, EvalResult, ImageEval, MatchMode};
use crate::network::{Network, SegmentationMap, SCALE};
use crate::postprocess::{detect_objects, DetectParams, DetectedObject};
use crate::raster::{images_to_tensor, GrayImage};

/// Extends the right and bottom edges with `fill` up to the next multiple.
pub fn pad_to_multiple(image: &GrayImage, multiple: usize, fill: u8) -> GrayImage {
    let round = |v: usize| v.div_ceil(multiple) * multiple;
    let (w, h) = image.dims();
    if round(w) == w && round(h) == h {
        return image.clone();
    }
    image.pad_to(round(w), round(h), fill)
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub net: Network<f32>,
    pub params: DetectParams,
}

impl Detector {
    pub fn new(net: Network<f32>, params: DetectParams) -> Self {
        Detector { net, params }
    }

    /// Segmentation of `image` padded to a multiple of the output stride
    /// with its mean intensity.
    pub fn segment(&self, image: &GrayImage) -> Result<SegmentationMap<f32>> {
        let fill = image.mean().round() as u8;
        let padded = pad_to_multiple(image, SCALE, fill);
        let input = images_to_tensor(&[&padded])?;
        self.net.forward(&input)
    }

    /// Detections in the coordinates of the unpadded image.
    pub fn detect(&self, image: &GrayImage) -> Result<Vec<DetectedObject>> {
        let seg = self.segment(image)?;
        Ok(detect_objects(&seg, &self.params).swap_remove(0))
    }

    /// Runs images in parallel; results keep the input order.
    pub fn detect_all(&self, images: &[&GrayImage]) -> Result<Vec<Vec<DetectedObject>>> {
        images.par_iter().map(|img| self.detect(img)).collect()
    }

    pub fn evaluate_samples(&self, samples: &[Sample]) -> Result<Vec<ImageEval>> {
        samples
            .par_iter()
            .map(|s| Ok(evaluate_image(&s.mask, &self.detect(&s.image)?)))
            .collect()
    }

    /// Metrics over a dataset at each Jaccard threshold.
    pub fn evaluate(&self, samples: &[Sample], thresholds: &[f64], mode: MatchMode) -> Result<EvalResult> {
        summarize(&self.evaluate_samples(samples)?, thresholds, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::raster::Plane;

    #[test]
    fn padding() {
        let img = Plane::new(10, 7, 3u8);
        let p = pad_to_multiple(&img, 4, 9);
        assert_eq!(p.dims(), (12, 8));
        assert_eq!(p.get(9, 6), 3);
        assert_eq!(p.get(11, 7), 9);
        assert_eq!(pad_to_multiple(&Plane::new(8, 4, 0u8), 4, 1).dims(), (8, 4));
    }

    #[test]
    fn odd_sized_image_runs() {
        let net = Network::init(NetworkConfig::with_classes(2), 1).unwrap();
        let det = Detector::new(net, DetectParams::default());
        let seg = det.segment(&Plane::new(30, 21, 128)).unwrap();
        assert_eq!((seg.width(), seg.height()), (8, 6));
        // a zero network outputs p = 0.5 everywhere; raising the threshold clears it
        let zero = Detector::new(
            Network::zeros(NetworkConfig::default()).unwrap(),
            DetectParams {
                threshold: 0.6,
                ..Default::default()
            },
        );
        assert!(zero.detect(&Plane::new(64, 64, 0)).unwrap().is_empty());
    }
}
