use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::symbology::{render_symbol, PAPER};
use super::{ObjectAnnotation, Sample, SymbologyKind};
use crate::error::{Error, Result};
use crate::postprocess::{Point, RotatedRect};
use crate::raster::{to_u8, Plane};

/// Attempts at finding a free spot before a symbol is dropped.
pub const PLACEMENT_RETRIES: usize = 50;
/// Minimum gap between symbol footprints (quiet zones included), in pixels.
const PLACEMENT_GAP: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat { level: u8 },
    /// Linear ramp from `from` to `to` along direction `angle` (degrees).
    Gradient { from: u8, to: u8, angle: f64 },
    /// Bilinearly interpolated random lattice with spacing `cell`.
    Noise { mean: u8, amplitude: f64, cell: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedSymbol {
    pub kind: SymbologyKind,
    /// Pixels per module; may be fractional.
    pub module_px: f64,
    /// Direction of the symbol's horizontal axis, degrees, y pointing down.
    pub angle: f64,
    pub center: (f64, f64),
    pub ink: u8,
    pub paper: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub symbols: Vec<PlacedSymbol>,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

fn background_plane<R: Rng + ?Sized>(bg: &Background, w: usize, h: usize, rng: &mut R) -> Plane<f64> {
    match *bg {
        Background::Flat { level } => Plane::new(w, h, level as f64),
        Background::Gradient { from, to, angle } => {
            let (s, c) = angle.to_radians().sin_cos();
            let extent = (w as f64 * c.abs() + h as f64 * s.abs()).max(1.0);
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            Plane::from_fn(w, h, |x, y| {
                let t = ((x as f64 + 0.5 - cx) * c + (y as f64 + 0.5 - cy) * s) / extent + 0.5;
                from as f64 + (to as f64 - from as f64) * t.clamp(0.0, 1.0)
            })
        }
        Background::Noise {
            mean,
            amplitude,
            cell,
        } => {
            let cell = cell.max(1);
            let (gw, gh) = (w / cell + 2, h / cell + 2);
            let lattice: Vec<f64> = (0..gw * gh)
                .map(|_| rng.random_range(-1.0..=1.0) * amplitude)
                .collect();
            Plane::from_fn(w, h, |x, y| {
                let fx = x as f64 / cell as f64;
                let fy = y as f64 / cell as f64;
                let (ix, iy) = (fx as usize, fy as usize);
                let (ax, ay) = (fx - ix as f64, fy - iy as f64);
                let g = |i: usize, j: usize| lattice[j * gw + i];
                let top = g(ix, iy) * (1.0 - ax) + g(ix + 1, iy) * ax;
                let bottom = g(ix, iy + 1) * (1.0 - ax) + g(ix + 1, iy + 1) * ax;
                mean as f64 + top * (1.0 - ay) + bottom * ay
            })
        }
    }
}

fn projection(r: &RotatedRect, axis: Point) -> (f64, f64) {
    r.vertices()
        .iter()
        .map(|p| p.dot(axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Separating-axis test; rectangles closer than `gap` count as overlapping.
fn overlaps(a: &RotatedRect, b: &RotatedRect, gap: f64) -> bool {
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    [au, av, bu, bv].into_iter().all(|axis| {
        let (a0, a1) = projection(a, axis);
        let (b0, b1) = projection(b, axis);
        a0 < b1 + gap && b0 < a1 + gap
    })
}

/// Half extents of the axis-aligned box around a rotated `w x h` rectangle.
fn half_extents(w: f64, h: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.to_radians().sin_cos();
    (
        (w * c.abs() + h * s.abs()) / 2.0,
        (w * s.abs() + h * c.abs()) / 2.0,
    )
}

/// Renders a scene. Symbols that do not fit where requested are moved to a
/// random free spot; after [`PLACEMENT_RETRIES`] failures they are dropped.
pub fn compose_scene(spec: &SceneSpec) -> Result<Sample> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("empty scene {w}x{h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canvas = background_plane(&spec.background, w, h, &mut rng);
    let mut mask = Plane::new(w, h, 0u8);
    let mut objects = Vec::new();
    let mut placed: Vec<RotatedRect> = Vec::new();

    for sym in &spec.symbols {
        if !(sym.module_px > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "module size must be positive, got {}",
                sym.module_px
            )));
        }
        let rendered = render_symbol(sym.kind, 1, &mut rng);
        let (sw, sh) = rendered.image.dims();
        let (sw, sh) = (sw as f64, sh as f64);
        let (fw, fh) = (sw * sym.module_px, sh * sym.module_px);
        let (ex, ey) = half_extents(fw, fh, sym.angle);
        if 2.0 * ex > w as f64 || 2.0 * ey > h as f64 {
            log::debug!("{} at {:.2} px/module does not fit {w}x{h}", sym.kind, sym.module_px);
            continue;
        }
        let mut center = sym.center;
        let mut footprint = None;
        for _ in 0..=PLACEMENT_RETRIES {
            let candidate = RotatedRect {
                center: Point::new(center.0, center.1),
                width: fw,
                height: fh,
                angle: sym.angle,
            };
            let inside = center.0 - ex >= 0.0
                && center.0 + ex <= w as f64
                && center.1 - ey >= 0.0
                && center.1 + ey <= h as f64;
            if inside && !placed.iter().any(|p| overlaps(p, &candidate, PLACEMENT_GAP)) {
                footprint = Some(candidate);
                break;
            }
            center = (
                rng.random_range(ex..=w as f64 - ex),
                rng.random_range(ey..=h as f64 - ey),
            );
        }
        let Some(footprint) = footprint else {
            log::debug!("dropping {} after {PLACEMENT_RETRIES} placement retries", sym.kind);
            continue;
        };
        placed.push(footprint);

        let (u, v) = footprint.axes();
        let c = footprint.center;
        let (rx, ry, rw, rh) = rendered.region;
        let (rx, ry, rw, rh) = (rx as f64, ry as f64, rw as f64, rh as f64);
        let label = sym.kind.class_id() as u8 + 1;
        let (ink, paper) = (sym.ink as f64, sym.paper as f64);
        let x0 = (c.x - ex).floor().max(0.0) as usize;
        let y0 = (c.y - ey).floor().max(0.0) as usize;
        let x1 = ((c.x + ex).ceil() as usize).min(w);
        let y1 = ((c.y + ey).ceil() as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = Point::new(x as f64 + 0.5, y as f64 + 0.5).sub(c);
                let a = d.dot(u) / sym.module_px + sw / 2.0;
                let b = d.dot(v) / sym.module_px + sh / 2.0;
                if a < 0.0 || b < 0.0 || a >= sw || b >= sh {
                    continue;
                }
                let s = rendered.image.sample_bilinear(a, b, PAPER as f64) / PAPER as f64;
                canvas.set(x, y, ink + (paper - ink) * s);
                if a >= rx && a < rx + rw && b >= ry && b < ry + rh {
                    mask.set(x, y, label);
                }
            }
        }
        let local = Point::new(
            (rx + rw / 2.0 - sw / 2.0) * sym.module_px,
            (ry + rh / 2.0 - sh / 2.0) * sym.module_px,
        );
        let region = RotatedRect {
            center: Point::new(
                c.x + local.x * u.x + local.y * v.x,
                c.y + local.x * u.y + local.y * v.y,
            ),
            width: rw * sym.module_px,
            height: rh * sym.module_px,
            angle: sym.angle,
        };
        objects.push(ObjectAnnotation::from_points(sym.kind.class_id(), &region.vertices()));
    }

    let mut image = canvas.map(to_u8);
    if spec.blur_sigma > 0.0 {
        image = image.gaussian_blur(spec.blur_sigma);
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
        for p in image.data_mut() {
            *p = to_u8(*p as f64 + noise.sample(&mut rng));
        }
    }
    Sample::new(image, mask, objects)
}

/// Nominal footprint diagonal of each kind, in modules.
fn nominal_diagonal(kind: SymbologyKind) -> f64 {
    match kind {
        SymbologyKind::Ean13 => 127.0,
        SymbologyKind::Bars1D => 95.0,
        SymbologyKind::Matrix2D => 50.0,
        SymbologyKind::Stacked2D => 80.0,
    }
}

/// Random scene with one to three symbols drawn from `kinds`.
pub fn random_scene_spec<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    kinds: &[SymbologyKind],
    rng: &mut R,
) -> SceneSpec {
    let background = match rng.random_range(0..3) {
        0 => Background::Flat {
            level: rng.random_range(30..=230),
        },
        1 => Background::Gradient {
            from: rng.random_range(20..=235),
            to: rng.random_range(20..=235),
            angle: rng.random_range(0.0..360.0),
        },
        _ => Background::Noise {
            mean: rng.random_range(60..=200),
            amplitude: rng.random_range(10.0..=45.0),
            cell: rng.random_range(6..=32),
        },
    };
    let count = if kinds.is_empty() { 0 } else { rng.random_range(1..=3) };
    let side = width.min(height) as f64;
    let symbols = (0..count)
        .map(|_| {
            let kind = kinds[rng.random_range(0..kinds.len())];
            let floor: f64 = if kind == SymbologyKind::Matrix2D { 1.5 } else { 1.0 };
            let hi = (0.75 * side / nominal_diagonal(kind)).min(4.0);
            let lo = floor.min(hi);
            let ink = rng.random_range(0..=80u8);
            let paper = rng.random_range(ink.saturating_add(100).max(170)..=255);
            PlacedSymbol {
                kind,
                module_px: if hi > lo { rng.random_range(lo..=hi) } else { lo },
                angle: rng.random_range(-90.0..90.0),
                center: (
                    rng.random_range(0.0..width as f64),
                    rng.random_range(0.0..height as f64),
                ),
                ink,
                paper,
            }
        })
        .collect();
    SceneSpec {
        width,
        height,
        background,
        symbols,
        noise_sigma: rng.random_range(0.0..6.0),
        blur_sigma: if rng.random_bool(0.5) {
            rng.random_range(0.0..1.0)
        } else {
            0.0
        },
        seed: rng.random(),
    }
}

/// `count` random scenes from one seed. Specs are drawn sequentially, so
/// the result does not depend on how composition is scheduled.
pub fn generate_scenes(
    count: usize,
    width: usize,
    height: usize,
    kinds: &[SymbologyKind],
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<SceneSpec> = (0..count)
        .map(|_| random_scene_spec(width, height, kinds, &mut rng))
        .collect();
    specs.par_iter().map(compose_scene).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::gt_objects_from_mask;
    use crate::postprocess::min_area_rect;

    fn spec(symbols: Vec<PlacedSymbol>) -> SceneSpec {
        SceneSpec {
            width: 256,
            height: 256,
            background: Background::Flat { level: 128 },
            symbols,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            seed: 11,
        }
    }

    fn sym(kind: SymbologyKind, angle: f64, center: (f64, f64), module_px: f64) -> PlacedSymbol {
        PlacedSymbol {
            kind,
            module_px,
            angle,
            center,
            ink: 20,
            paper: 240,
        }
    }

    /// Angle difference modulo 90 degrees.
    fn angle_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(90.0);
        d.min(90.0 - d)
    }

    #[test]
    fn two_symbols_two_components() {
        let s = compose_scene(&spec(vec![
            sym(SymbologyKind::Ean13, 0.0, (120.0, 50.0), 1.5),
            sym(SymbologyKind::Matrix2D, 10.0, (128.0, 180.0), 2.0),
        ]))
        .unwrap();
        let gt = gt_objects_from_mask(&s.mask);
        assert_eq!(gt.len(), 2);
        let mut classes: Vec<_> = gt.iter().map(|g| g.class_id).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 2]);
        assert_eq!(s.objects.len(), 2);
    }

    #[test]
    fn rotated_symbol_angle_and_area() {
        let s = compose_scene(&spec(vec![sym(SymbologyKind::Bars1D, 30.0, (128.0, 128.0), 1.5)])).unwrap();
        let gt = gt_objects_from_mask(&s.mask);
        assert_eq!(gt.len(), 1);
        let mut pts = Vec::new();
        for y in 0..256 {
            for x in 0..256 {
                if gt[0].mask.get(x, y) {
                    pts.push(Point::new(x as f64 + 0.5, y as f64 + 0.5));
                }
            }
        }
        let rect = min_area_rect(&pts).unwrap();
        assert!(angle_gap(rect.angle, 30.0) < 3.0, "angle {}", rect.angle);
        let poly = &s.objects[0].polygon;
        let expected = {
            let d = |i: usize, j: usize| {
                ((poly[i][0] - poly[j][0]).powi(2) + (poly[i][1] - poly[j][1]).powi(2)).sqrt()
            };
            d(0, 1) * d(1, 2)
        };
        let area = gt[0].area as f64;
        assert!((area - expected).abs() / expected < 0.1, "{area} vs {expected}");
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sp = random_scene_spec(256, 256, &SymbologyKind::ALL, &mut rng);
        assert_eq!(compose_scene(&sp).unwrap(), compose_scene(&sp).unwrap());
        let mut rng2 = ChaCha8Rng::seed_from_u64(77);
        assert_eq!(sp, random_scene_spec(256, 256, &SymbologyKind::ALL, &mut rng2));
    }

    #[test]
    fn oversized_symbol_dropped() {
        let s = compose_scene(&spec(vec![sym(SymbologyKind::Ean13, 0.0, (128.0, 128.0), 5.0)])).unwrap();
        assert!(s.objects.is_empty());
        assert!(s.mask.data().iter().all(|&m| m == 0));
    }

    #[test]
    fn colliding_symbol_moved_or_dropped() {
        let s = compose_scene(&spec(vec![
            sym(SymbologyKind::Matrix2D, 0.0, (128.0, 128.0), 2.0),
            sym(SymbologyKind::Matrix2D, 0.0, (128.0, 128.0), 2.0),
        ]))
        .unwrap();
        let gt = gt_objects_from_mask(&s.mask);
        assert_eq!(gt.len(), s.objects.len());
        assert!(!s.objects.is_empty());
    }

    #[test]
    fn separating_axis() {
        let r = |x: f64, angle: f64| RotatedRect {
            center: Point::new(x, 0.0),
            width: 10.0,
            height: 2.0,
            angle,
        };
        assert!(overlaps(&r(0.0, 0.0), &r(9.0, 0.0), 0.0));
        assert!(!overlaps(&r(0.0, 0.0), &r(11.0, 0.0), 0.0));
        assert!(overlaps(&r(0.0, 0.0), &r(11.0, 0.0), 2.0));
        assert!(overlaps(&r(0.0, 0.0), &r(4.0, -90.0), 0.0));
    }
}
