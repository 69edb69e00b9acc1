use crate::error::{Error, Result};
use crate::loss::SuperpixelTargets;
use crate::raster::{LabelMask, Plane};

/// Fraction of a block that must be object for the superpixel to be positive.
pub const DEFAULT_COVERAGE: f64 = 0.5;

/// Reduces a pixel mask to one label per `scale x scale` block. A block is
/// positive when at least `coverage` of it is object; its class is the most
/// frequent object class in the block (lowest class on ties).
pub fn mask_to_superpixel_targets(mask: &LabelMask, scale: usize, coverage: f64) -> Result<SuperpixelTargets> {
    let (w, h) = mask.dims();
    if scale == 0 || w % scale != 0 || h % scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "mask {w}x{h} is not divisible into {scale}x{scale} blocks"
        )));
    }
    let (ow, oh) = (w / scale, h / scale);
    let block = (scale * scale) as f64;
    let mut detect = Plane::new(ow, oh, false);
    let mut class_id = Plane::new(ow, oh, 0u8);
    let mut counts = [0usize; 256];
    for by in 0..oh {
        for bx in 0..ow {
            counts.fill(0);
            for y in by * scale..(by + 1) * scale {
                for x in bx * scale..(bx + 1) * scale {
                    counts[mask.get(x, y) as usize] += 1;
                }
            }
            let object: usize = counts[1..].iter().sum();
            if object > 0 && object as f64 >= coverage * block {
                detect.set(bx, by, true);
                let (best, _) = counts[1..]
                    .iter()
                    .enumerate()
                    .fold((0, 0), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
                class_id.set(bx, by, best as u8);
            }
        }
    }
    Ok(SuperpixelTargets { detect, class_id })
}
