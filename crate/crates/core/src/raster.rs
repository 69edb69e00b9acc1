//! Row-major 2-D planes: grayscale images, label masks and binary maps,
//! plus the resampling helpers shared by augmentation and data generation.
//!
//! Continuous coordinates put pixel `(x, y)` on the square
//! `[x, x + 1) x [y, y + 1)`; its centre is `(x + 0.5, y + 0.5)`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// 8-bit grayscale image.
pub type GrayImage = Plane<u8>;
/// 0 = background, `c + 1` = object of class `c`.
pub type LabelMask = Plane<u8>;
pub type BinaryMap = Plane<bool>;

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Plane {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "Plane::from_vec",
                format!("{} values for {width}x{height}", width * height),
                data.len(),
            ));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sub-rectangle starting at `(x0, y0)`; must lie inside the plane.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..][..width]);
        }
        Plane {
            width,
            height,
            data,
        }
    }

    /// Extends right/bottom to `width x height` with `fill`.
    pub fn pad_to(&self, width: usize, height: usize, fill: T) -> Self {
        let mut out = Plane::new(width.max(self.width), height.max(self.height), fill);
        for y in 0..self.height {
            out.data[y * out.width..][..self.width]
                .copy_from_slice(&self.data[y * self.width..][..self.width]);
        }
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Plane::from_fn(width, height, |x, y| {
            let src_x = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
            let src_y = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            self.get(src_x, src_y)
        })
    }
}

impl GrayImage {
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at continuous coordinates; outside the image returns `fill`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let w = self.width as i64;
        let h = self.height as i64;
        if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
            return fill;
        }
        let px = |xx: i64, yy: i64| -> f64 {
            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                fill
            } else {
                self.data[(yy * w + xx) as usize] as f64
            }
        };
        let top = px(x0, y0) * (1.0 - ax) + px(x0 + 1, y0) * ax;
        let bottom = px(x0, y0 + 1) * (1.0 - ax) + px(x0 + 1, y0 + 1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mean = self.mean();
        Plane::from_fn(width, height, |x, y| {
            let src_x = ((x as f64 + 0.5) * sx).clamp(0.5, self.width as f64 - 0.5);
            let src_y = ((y as f64 + 0.5) * sy).clamp(0.5, self.height as f64 - 0.5);
            to_u8(self.sample_bilinear(src_x, src_y, mean))
        })
    }

    /// Separable Gaussian blur with clamped borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.width as i64, self.height as i64);
        let mut tmp = vec![0.0f64; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let xx = (x + i as i64 - radius).clamp(0, w - 1);
                    acc += k * self.data[(y * w + xx) as usize] as f64;
                }
                tmp[(y * w + x) as usize] = acc / norm;
            }
        }
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let yy = (y + i as i64 - radius).clamp(0, h - 1);
                    acc += k * tmp[(yy * w + x) as usize];
                }
                out.data[(y * w + x) as usize] = to_u8(acc / norm);
            }
        }
        out
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Scales 8-bit images to `[0, 1]` and stacks them as a `(batch, 1, H, W)` tensor.
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.dims() != (w, h) {
            return Err(Error::shape(
                "images_to_tensor",
                format!("{w}x{h}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        data.extend(img.data().iter().map(|&v| v as f32 / 255.0));
    }
    Tensor::from_vec(Shape::new(images.len(), 1, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_pad() {
        let p = Plane::from_fn(4, 3, |x, y| (y * 4 + x) as u8);
        let c = p.crop(1, 1, 2, 2);
        assert_eq!(c.data(), &[5, 6, 9, 10]);
        let padded = c.pad_to(4, 4, 0);
        assert_eq!(padded.dims(), (4, 4));
        assert_eq!(padded.get(1, 1), 10);
        assert_eq!(padded.get(3, 3), 0);
    }

    #[test]
    fn bilinear_at_pixel_centres_is_exact() {
        let p = Plane::from_fn(3, 3, |x, y| (x * 10 + y) as u8);
        for y in 0..3 {
            for x in 0..3 {
                let v = p.sample_bilinear(x as f64 + 0.5, y as f64 + 0.5, 0.0);
                assert_eq!(v, p.get(x, y) as f64);
            }
        }
        assert_eq!(p.sample_bilinear(1.0, 0.5, 0.0), 5.0);
    }

    #[test]
    fn blur_keeps_constant_image() {
        let p = GrayImage::new(9, 7, 77);
        assert_eq!(p.gaussian_blur(1.0), p);
    }

    #[test]
    fn nearest_resize_identity() {
        let p = Plane::from_fn(5, 4, |x, y| (x + 7 * y) as u8);
        assert_eq!(p.resize_nearest(5, 4), p);
        assert_eq!(p.resize_bilinear(5, 4), p);
    }
}
