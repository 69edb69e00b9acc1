//! Stochastic augmentation applied identically to image, mask and object
//! polygons: free rotation, quarter turns, object-preserving crops and
//! photometric jitter.
//!
//! Positive angles turn the picture clockwise on screen (y points down), so
//! a quarter turn sends pixel `(row r, col c)` of an `H x W` image to
//! `(row c, col H - 1 - r)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ObjectAnnotation, Sample};
use crate::error::{Error, Result};
use crate::postprocess::Point;
use crate::raster::{to_u8, Plane};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    /// Chance of each individual operation once the step runs.
    pub p_each: f64,
    pub max_noise_sigma: f64,
    pub max_brightness_shift: f64,
    pub contrast_range: (f64, f64),
    pub max_blur_sigma: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig {
            p_each: 0.5,
            max_noise_sigma: 10.0,
            max_brightness_shift: 25.0,
            contrast_range: (0.75, 1.25),
            max_blur_sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_identity: f64,
    pub p_rot_free: f64,
    pub p_rot_90: f64,
    pub p_crop: f64,
    pub p_photometric: f64,
    /// Free rotation is drawn from `[-max_rotation, max_rotation]` degrees.
    pub max_rotation: f64,
    /// Bound on (crop aspect ratio) / (image aspect ratio) and its inverse.
    pub max_aspect_change: f64,
    pub photometric: PhotometricConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_identity: 0.1,
            p_rot_free: 0.5,
            p_rot_90: 0.5,
            p_crop: 0.5,
            p_photometric: 0.7,
            max_rotation: 45.0,
            max_aspect_change: 1.7,
            photometric: PhotometricConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_identity", self.p_identity),
            ("p_rot_free", self.p_rot_free),
            ("p_rot_90", self.p_rot_90),
            ("p_crop", self.p_crop),
            ("p_photometric", self.p_photometric),
            ("photometric.p_each", self.photometric.p_each),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.max_aspect_change >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_aspect_change must be at least 1, got {}",
                self.max_aspect_change
            )));
        }
        let (lo, hi) = self.photometric.contrast_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad contrast range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Which branches one call to [`augment_traced`] took.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentTrace {
    pub identity: bool,
    pub rotation: Option<f64>,
    pub quarter_turns: Option<u8>,
    /// `(x, y, width, height)` of an applied crop.
    pub crop: Option<(usize, usize, usize, usize)>,
    pub photometric: bool,
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Sample {
    augment_traced(sample, config, rng).0
}

pub fn augment_traced<R: Rng + ?Sized>(
    sample: &Sample,
    config: &AugmentConfig,
    rng: &mut R,
) -> (Sample, AugmentTrace) {
    let mut trace = AugmentTrace::default();
    if rng.random_bool(config.p_identity) {
        trace.identity = true;
        return (sample.clone(), trace);
    }
    let mut out = sample.clone();
    if rng.random_bool(config.p_rot_free) {
        let angle = rng.random_range(-config.max_rotation..=config.max_rotation);
        out = rotate_sample(&out, angle);
        trace.rotation = Some(angle);
    }
    if rng.random_bool(config.p_rot_90) {
        let turns = rng.random_range(1..=3u8);
        out = rotate_sample(&out, 90.0 * turns as f64);
        trace.quarter_turns = Some(turns);
    }
    if rng.random_bool(config.p_crop) {
        let (cropped, rect) = crop_traced(&out, rng, config.max_aspect_change);
        out = cropped;
        trace.crop = rect;
    }
    if rng.random_bool(config.p_photometric) {
        out = photometric(&out, &config.photometric, rng);
        trace.photometric = true;
    }
    (out, trace)
}

fn map_polygons(objects: &[ObjectAnnotation], f: impl Fn(Point) -> Point) -> Vec<ObjectAnnotation> {
    objects
        .iter()
        .map(|o| ObjectAnnotation {
            class_id: o.class_id,
            polygon: o
                .polygon
                .iter()
                .map(|&[x, y]| {
                    let p = f(Point::new(x, y));
                    [p.x, p.y]
                })
                .collect(),
        })
        .collect()
}

fn quarter_turn<T: Copy>(p: &Plane<T>) -> Plane<T> {
    let (w, h) = p.dims();
    Plane::from_fn(h, w, |x, y| p.get(y, h - 1 - x))
}

/// Rotates clockwise by `angle` degrees onto a canvas just large enough to
/// hold the result. Uncovered pixels get the mean intensity and background
/// label. Multiples of 90 degrees are exact pixel permutations.
pub fn rotate_sample(sample: &Sample, angle: f64) -> Sample {
    let (w, h) = (sample.width() as f64, sample.height() as f64);
    let turns = angle / 90.0;
    if (turns - turns.round()).abs() < 1e-9 {
        let k = (turns.round() as i64).rem_euclid(4);
        let mut image = sample.image.clone();
        let mut mask = sample.mask.clone();
        let mut objects = sample.objects.clone();
        for _ in 0..k {
            let height = image.height() as f64;
            image = quarter_turn(&image);
            mask = quarter_turn(&mask);
            objects = map_polygons(&objects, |p| Point::new(height - p.y, p.x));
        }
        return Sample {
            image,
            mask,
            objects,
        };
    }

    let (s, c) = angle.to_radians().sin_cos();
    let snap = |v: f64| (v - 1e-9).ceil().max(1.0) as usize;
    let nw = snap(w * c.abs() + h * s.abs());
    let nh = snap(w * s.abs() + h * c.abs());
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (ncx, ncy) = (nw as f64 / 2.0, nh as f64 / 2.0);
    let fill = sample.image.mean();
    let source = |x: usize, y: usize| {
        let dx = x as f64 + 0.5 - ncx;
        let dy = y as f64 + 0.5 - ncy;
        (c * dx + s * dy + cx, -s * dx + c * dy + cy)
    };
    let image = Plane::from_fn(nw, nh, |x, y| {
        let (sx, sy) = source(x, y);
        to_u8(sample.image.sample_bilinear(sx, sy, fill))
    });
    let mask = Plane::from_fn(nw, nh, |x, y| {
        let (sx, sy) = source(x, y);
        if sx < 0.0 || sy < 0.0 || sx >= w || sy >= h {
            0
        } else {
            sample.mask.get(sx as usize, sy as usize)
        }
    });
    let objects = map_polygons(&sample.objects, |p| {
        let (dx, dy) = (p.x - cx, p.y - cy);
        Point::new(c * dx - s * dy + ncx, s * dx + c * dy + ncy)
    });
    Sample {
        image,
        mask,
        objects,
    }
}

const CROP_ATTEMPTS: usize = 10;

/// Crop that keeps every object pixel and keeps the aspect-ratio change
/// within `max_ar_change`. Returns the input unchanged when the sample has no
/// objects or no valid crop turns up in ten attempts.
pub fn random_crop<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, max_ar_change: f64) -> Sample {
    crop_traced(sample, rng, max_ar_change).0
}

fn crop_traced<R: Rng + ?Sized>(
    sample: &Sample,
    rng: &mut R,
    max_ar_change: f64,
) -> (Sample, Option<(usize, usize, usize, usize)>) {
    let Some((bx0, by0, bx1, by1)) = sample.object_bounds() else {
        return (sample.clone(), None);
    };
    let (w, h) = (sample.width(), sample.height());
    let (bw, bh) = (bx1 - bx0, by1 - by0);
    let aspect = w as f64 / h as f64;
    for _ in 0..CROP_ATTEMPTS {
        let cw = rng.random_range(bw..=w);
        // (cw / ch) / aspect within [1 / max_ar_change, max_ar_change]
        let lo = ((cw as f64 / (aspect * max_ar_change)) - 1e-9).ceil().max(bh as f64) as usize;
        let hi = ((cw as f64 * max_ar_change / aspect) + 1e-9).floor().min(h as f64) as usize;
        if lo > hi {
            continue;
        }
        let ch = rng.random_range(lo..=hi);
        let x0 = rng.random_range(bx1.saturating_sub(cw)..=bx0.min(w - cw));
        let y0 = rng.random_range(by1.saturating_sub(ch)..=by0.min(h - ch));
        let objects = map_polygons(&sample.objects, |p| Point::new(p.x - x0 as f64, p.y - y0 as f64));
        let out = Sample {
            image: sample.image.crop(x0, y0, cw, ch),
            mask: sample.mask.crop(x0, y0, cw, ch),
            objects,
        };
        return (out, Some((x0, y0, cw, ch)));
    }
    (sample.clone(), None)
}

/// Contrast, brightness, blur and noise, each applied with `p_each`. The
/// mask is untouched.
pub fn photometric<R: Rng + ?Sized>(sample: &Sample, config: &PhotometricConfig, rng: &mut R) -> Sample {
    let mut image = sample.image.clone();
    let mean = image.mean();
    let contrast = if rng.random_bool(config.p_each) {
        rng.random_range(config.contrast_range.0..=config.contrast_range.1)
    } else {
        1.0
    };
    let shift = if rng.random_bool(config.p_each) {
        rng.random_range(-config.max_brightness_shift..=config.max_brightness_shift)
    } else {
        0.0
    };
    if contrast != 1.0 || shift != 0.0 {
        image = image.map(|v| to_u8((v as f64 - mean) * contrast + mean + shift));
    }
    if rng.random_bool(config.p_each) {
        let sigma = rng.random_range(0.0..=config.max_blur_sigma);
        image = image.gaussian_blur(sigma);
    }
    if rng.random_bool(config.p_each) {
        let sigma = rng.random_range(0.0..=config.max_noise_sigma);
        if let Ok(noise) = Normal::new(0.0, sigma) {
            for v in image.data_mut() {
                *v = to_u8(*v as f64 + noise.sample(rng));
            }
        }
    }
    Sample {
        image,
        mask: sample.mask.clone(),
        objects: sample.objects.clone(),
    }
}
