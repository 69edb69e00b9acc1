//! Baked detection overlays: the input in gray, each rectangle outlined in a
//! per-class colour, and a label with class name and confidence.

use barcode_seg::postprocess::{DetectedObject, Point};
use barcode_seg::raster::GrayImage;
use image::{Rgb, RgbImage};

use crate::font::{glyph, text_size, GLYPH_WIDTH};

const PALETTE: [[u8; 3]; 6] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];
const UNTYPED: [u8; 3] = [255, 225, 25];
const LABEL_BACKGROUND: [u8; 3] = [0, 0, 0];

pub fn class_colour(class_id: Option<usize>) -> [u8; 3] {
    class_id.map_or(UNTYPED, |c| PALETTE[c % PALETTE.len()])
}

fn put(img: &mut RgbImage, x: i64, y: i64, colour: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(colour));
    }
}

/// Line from `a` to `b` with a square pen of side `thickness`.
pub fn draw_line(img: &mut RgbImage, a: Point, b: Point, thickness: usize, colour: [u8; 3]) {
    let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
    let lo = -((thickness as i64 - 1) / 2);
    let hi = lo + thickness as i64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.x + t * (b.x - a.x)).round() as i64;
        let y = (a.y + t * (b.y - a.y)).round() as i64;
        for dy in lo..hi {
            for dx in lo..hi {
                put(img, x + dx, y + dy, colour);
            }
        }
    }
}

pub fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: usize, h: usize, colour: [u8; 3]) {
    for yy in y..y + h as i64 {
        for xx in x..x + w as i64 {
            put(img, xx, yy, colour);
        }
    }
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: usize, colour: [u8; 3]) {
    let advance = ((GLYPH_WIDTH + 1) * scale) as i64;
    for (i, c) in text.chars().enumerate() {
        let ox = x + i as i64 * advance;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_WIDTH {
                if bits & (1 << (GLYPH_WIDTH - 1 - col)) != 0 {
                    let px = ox + (col * scale) as i64;
                    let py = y + (row * scale) as i64;
                    fill_rect(img, px, py, scale, scale, colour);
                }
            }
        }
    }
}

pub fn label_text(det: &DetectedObject, classes: &[String]) -> String {
    match det.class_id {
        Some(c) => {
            let name = classes.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
            format!("{name} {:.2}", det.class_probs.get(c).copied().unwrap_or(0.0))
        }
        None => "barcode".to_string(),
    }
}

pub fn render_overlay(image: &GrayImage, detections: &[DetectedObject], classes: &[String]) -> RgbImage {
    let (w, h) = image.dims();
    let mut out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = image.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let scale = (w.min(h) / 300).clamp(1, 4);
    let thickness = scale + 1;
    for det in detections {
        let colour = class_colour(det.class_id);
        let v = det.rect.vertices();
        for i in 0..4 {
            draw_line(&mut out, v[i], v[(i + 1) % 4], thickness, colour);
        }
        let text = label_text(det, classes);
        let (tw, th) = text_size(&text, scale);
        let pad = scale as i64;
        // Above the top vertex, or below it when that would leave the image.
        let x = (v[0].x.round() as i64).clamp(0, (w as i64 - tw as i64 - 2 * pad).max(0));
        let mut y = v[0].y.round() as i64 - th as i64 - 2 * pad - thickness as i64;
        if y < 0 {
            y = v[0].y.round() as i64 + thickness as i64;
        }
        fill_rect(&mut out, x, y, tw + 2 * pad as usize, th + 2 * pad as usize, LABEL_BACKGROUND);
        draw_text(&mut out, x + pad, y + pad, &text, scale, colour);
    }
    out
}
