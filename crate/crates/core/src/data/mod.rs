//! Synthetic barcode scenes and dataset I/O.
//!
//! Masks use `0` for background and `c + 1` for an object of class `c`.
//! Manifests are JSON lines, one record per sample, optionally preceded by a
//! header line declaring the class names.

mod ean13;
mod io;
mod scene;
mod symbology;
mod targets;

pub use ean13::{ean13_check_digit, encode_ean13, EAN13_MODULES};
pub use io::{
    load_benchmark_pair, load_dataset, load_gray, read_manifest, save_gray, write_dataset,
    write_manifest, write_sample, Manifest, ManifestRecord, MANIFEST_FILE, MANIFEST_SCHEMA,
};
pub use scene::{
    compose_scene, generate_scenes, random_scene_spec, Background, PlacedSymbol, SceneSpec,
    PLACEMENT_RETRIES,
};
pub use symbology::{render_ean13, render_symbol, RenderedSymbol};
pub use targets::{mask_to_superpixel_targets, DEFAULT_COVERAGE};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::gt_objects_from_mask;
use crate::postprocess::{min_area_rect, Point};
use crate::raster::{GrayImage, LabelMask};

/// Barcode families the generator can draw, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbologyKind {
    Ean13,
    Bars1D,
    Matrix2D,
    Stacked2D,
}

impl SymbologyKind {
    pub const ALL: [SymbologyKind; 4] = [
        SymbologyKind::Ean13,
        SymbologyKind::Bars1D,
        SymbologyKind::Matrix2D,
        SymbologyKind::Stacked2D,
    ];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SymbologyKind::Ean13 => "EAN13",
            SymbologyKind::Bars1D => "Bars1D",
            SymbologyKind::Matrix2D => "Matrix2D",
            SymbologyKind::Stacked2D => "Stacked2D",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|k| k.name().to_string()).collect()
    }
}

impl fmt::Display for SymbologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SymbologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown symbology {s:?}")))
    }
}

/// One annotated object: its class and an enclosing polygon in pixel
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    #[serde(rename = "class")]
    pub class_id: usize,
    pub polygon: Vec<[f64; 2]>,
}

impl ObjectAnnotation {
    pub fn from_points(class_id: usize, points: &[Point]) -> Self {
        ObjectAnnotation {
            class_id,
            polygon: points.iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub mask: LabelMask,
    pub objects: Vec<ObjectAnnotation>,
}

impl Sample {
    pub fn new(image: GrayImage, mask: LabelMask, objects: Vec<ObjectAnnotation>) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::shape(
                "Sample::new",
                format!("mask {}x{}", image.width(), image.height()),
                format!("{}x{}", mask.width(), mask.height()),
            ));
        }
        Ok(Sample {
            image,
            mask,
            objects,
        })
    }

    /// Objects recovered from the mask's 8-connected components, each with
    /// the minimum-area rectangle around its pixels.
    pub fn from_mask(image: GrayImage, mask: LabelMask) -> Result<Self> {
        let objects = objects_from_mask(&mask);
        Sample::new(image, mask, objects)
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Bounding box `(x0, y0, x1, y1)` (exclusive end) of all object pixels.
    pub fn object_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let (w, h) = self.mask.dims();
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..h {
            for x in 0..w {
                if self.mask.get(x, y) != 0 {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }
}

pub fn objects_from_mask(mask: &LabelMask) -> Vec<ObjectAnnotation> {
    gt_objects_from_mask(mask)
        .into_iter()
        .map(|obj| {
            let (w, h) = obj.mask.dims();
            let mut corners = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if obj.mask.get(x, y) {
                        let (xf, yf) = (x as f64, y as f64);
                        corners.extend([
                            Point::new(xf, yf),
                            Point::new(xf + 1.0, yf),
                            Point::new(xf, yf + 1.0),
                            Point::new(xf + 1.0, yf + 1.0),
                        ]);
                    }
                }
            }
            let rect = min_area_rect(&corners).expect("component has pixels");
            ObjectAnnotation::from_points(obj.class_id, &rect.vertices())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Plane;

    #[test]
    fn kind_order_and_names() {
        for (i, k) in SymbologyKind::ALL.iter().enumerate() {
            assert_eq!(k.class_id(), i);
            assert_eq!(SymbologyKind::from_class_id(i), Some(*k));
            assert_eq!(k.name().parse::<SymbologyKind>().unwrap(), *k);
        }
        assert!("qr".parse::<SymbologyKind>().is_err());
        assert_eq!(SymbologyKind::from_class_id(4), None);
    }

    #[test]
    fn sample_dims_must_match() {
        assert!(Sample::new(Plane::new(4, 4, 0), Plane::new(4, 5, 0), vec![]).is_err());
    }

    #[test]
    fn objects_from_two_blobs() {
        let mut mask = Plane::new(20, 10, 0u8);
        for y in 1..4 {
            for x in 1..5 {
                mask.set(x, y, 1);
            }
        }
        for y in 5..9 {
            for x in 10..18 {
                mask.set(x, y, 3);
            }
        }
        let s = Sample::from_mask(Plane::new(20, 10, 0), mask).unwrap();
        assert_eq!(s.objects.len(), 2);
        assert_eq!(s.objects[0].class_id, 0);
        assert_eq!(s.objects[1].class_id, 2);
        assert_eq!(s.objects[0].polygon.len(), 4);
        assert_eq!(s.object_bounds(), Some((1, 1, 18, 9)));
    }
}
