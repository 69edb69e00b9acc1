use rand::Rng;

use super::ean13::{ean13_check_digit, encode_ean13, EAN13_MODULES};
use super::SymbologyKind;
use crate::error::Result;
use crate::raster::{BinaryMap, GrayImage, Plane};

pub const INK: u8 = 0;
pub const PAPER: u8 = 255;

const EAN13_QUIET_LEFT: usize = 11;
const EAN13_QUIET_RIGHT: usize = 7;
const EAN13_GUARD_EXTENSION: usize = 5;
const VERTICAL_QUIET: usize = 2;
const MATRIX_FINDER: usize = 7;
const MATRIX_QUIET: usize = 4;
const MATRIX_SIZES: [usize; 4] = [21, 25, 29, 33];
const STACKED_ROW_MODULES: usize = 3;
const STACKED_START: [usize; 8] = [8, 1, 1, 1, 1, 1, 1, 3];
const STACKED_STOP: [usize; 9] = [7, 1, 1, 3, 1, 1, 1, 2, 1];
const CODEWORD_MODULES: usize = 17;

/// A drawn symbol: ink on white paper with its quiet zones, and the region
/// covered by bars or modules (quiet zones excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSymbol {
    pub kind: SymbologyKind,
    pub image: GrayImage,
    /// `(x, y, width, height)` in pixels.
    pub region: (usize, usize, usize, usize),
}

impl RenderedSymbol {
    pub fn mask(&self) -> BinaryMap {
        let (rx, ry, rw, rh) = self.region;
        Plane::from_fn(self.image.width(), self.image.height(), |x, y| {
            x >= rx && x < rx + rw && y >= ry && y < ry + rh
        })
    }

    pub fn quiet_zones(&self) -> (usize, usize, usize, usize) {
        let (rx, ry, rw, rh) = self.region;
        (
            rx,
            ry,
            self.image.width() - rx - rw,
            self.image.height() - ry - rh,
        )
    }
}

fn fill_rect(img: &mut GrayImage, x: usize, y: usize, w: usize, h: usize) {
    for yy in y..y + h {
        for xx in x..x + w {
            img.set(xx, yy, INK);
        }
    }
}

/// Module grid (`true` = ink) scaled up and surrounded by quiet zones given in modules.
fn from_modules(
    kind: SymbologyKind,
    modules: &Plane<bool>,
    quiet_x: usize,
    quiet_y: usize,
    module_px: usize,
) -> RenderedSymbol {
    let (mw, mh) = modules.dims();
    let width = (mw + 2 * quiet_x) * module_px;
    let height = (mh + 2 * quiet_y) * module_px;
    let mut image = Plane::new(width, height, PAPER);
    for my in 0..mh {
        for mx in 0..mw {
            if modules.get(mx, my) {
                fill_rect(
                    &mut image,
                    (quiet_x + mx) * module_px,
                    (quiet_y + my) * module_px,
                    module_px,
                    module_px,
                );
            }
        }
    }
    RenderedSymbol {
        kind,
        image,
        region: (quiet_x * module_px, quiet_y * module_px, mw * module_px, mh * module_px),
    }
}

/// EAN-13 with guard bars extended below the digit bars.
pub fn render_ean13(code: &str, module_px: usize, bar_height_px: usize) -> Result<RenderedSymbol> {
    let modules = encode_ean13(code)?;
    let m = module_px.max(1);
    let ext = EAN13_GUARD_EXTENSION * m;
    let width = (EAN13_QUIET_LEFT + EAN13_MODULES + EAN13_QUIET_RIGHT) * m;
    let height = 2 * VERTICAL_QUIET * m + bar_height_px + ext;
    let mut image = Plane::new(width, height, PAPER);
    let top = VERTICAL_QUIET * m;
    for (i, &bar) in modules.iter().enumerate() {
        if !bar {
            continue;
        }
        let guard = i < 3 || (45..50).contains(&i) || i >= EAN13_MODULES - 3;
        let h = bar_height_px + if guard { ext } else { 0 };
        fill_rect(&mut image, (EAN13_QUIET_LEFT + i) * m, top, m, h);
    }
    Ok(RenderedSymbol {
        kind: SymbologyKind::Ean13,
        image,
        region: (EAN13_QUIET_LEFT * m, top, EAN13_MODULES * m, bar_height_px + ext),
    })
}

fn random_ean13_code<R: Rng + ?Sized>(rng: &mut R) -> String {
    let mut s: String = (0..12).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
    let check = ean13_check_digit(&s).expect("twelve digits");
    s.push(char::from(b'0' + check));
    s
}

/// Alternating bar/space runs, starting with a bar.
fn runs_to_row(runs: &[usize], row: &mut Vec<bool>) {
    for (i, &w) in runs.iter().enumerate() {
        row.extend(std::iter::repeat_n(i % 2 == 0, w));
    }
}

fn bars_1d<R: Rng + ?Sized>(rng: &mut R) -> Plane<bool> {
    let bars = rng.random_range(10..=24);
    let runs: Vec<usize> = (0..2 * bars - 1).map(|_| rng.random_range(1..=3)).collect();
    let mut row = Vec::new();
    runs_to_row(&runs, &mut row);
    let height = rng.random_range(15..=50);
    let width = row.len();
    Plane::from_fn(width, height, |x, _| row[x])
}

fn matrix_2d<R: Rng + ?Sized>(rng: &mut R) -> Plane<bool> {
    let n = MATRIX_SIZES[rng.random_range(0..MATRIX_SIZES.len())];
    let mut grid = Plane::new(n, n, false);
    for y in 0..n {
        for x in 0..n {
            grid.set(x, y, rng.random_bool(0.5));
        }
    }
    for (ox, oy) in [(0, 0), (n - MATRIX_FINDER, 0), (0, n - MATRIX_FINDER)] {
        // finder plus its one-module light separator
        for dy in 0..=MATRIX_FINDER {
            for dx in 0..=MATRIX_FINDER {
                let x = if ox == 0 { dx } else { ox + dx - 1 };
                let y = if oy == 0 { dy } else { oy + dy - 1 };
                grid.set(x, y, false);
            }
        }
        for dy in 0..MATRIX_FINDER {
            for dx in 0..MATRIX_FINDER {
                let ring = dx == 0 || dy == 0 || dx == MATRIX_FINDER - 1 || dy == MATRIX_FINDER - 1;
                let core = (2..=4).contains(&dx) && (2..=4).contains(&dy);
                grid.set(ox + dx, oy + dy, ring || core);
            }
        }
    }
    grid
}

/// Four bars and four spaces, 1..=6 modules each, summing to 17.
fn codeword<R: Rng + ?Sized>(rng: &mut R) -> [usize; 8] {
    let mut w = [1usize; 8];
    let mut extra = CODEWORD_MODULES - 8;
    while extra > 0 {
        let i = rng.random_range(0..8);
        if w[i] < 6 {
            w[i] += 1;
            extra -= 1;
        }
    }
    w
}

fn stacked_2d<R: Rng + ?Sized>(rng: &mut R) -> Plane<bool> {
    let rows = rng.random_range(4..=10);
    let columns = rng.random_range(1..=3);
    let mut lines = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::new();
        runs_to_row(&STACKED_START, &mut row);
        for _ in 0..columns + 2 {
            runs_to_row(&codeword(rng), &mut row);
        }
        runs_to_row(&STACKED_STOP, &mut row);
        lines.push(row);
    }
    let width = lines[0].len();
    Plane::from_fn(width, rows * STACKED_ROW_MODULES, |x, y| lines[y / STACKED_ROW_MODULES][x])
}

/// Random symbol of `kind` at `module_px` pixels per module.
pub fn render_symbol<R: Rng + ?Sized>(kind: SymbologyKind, module_px: usize, rng: &mut R) -> RenderedSymbol {
    let m = module_px.max(1);
    match kind {
        SymbologyKind::Ean13 => {
            let code = random_ean13_code(rng);
            let height = rng.random_range(30..=60) * m;
            render_ean13(&code, m, height).expect("generated code is valid")
        }
        SymbologyKind::Bars1D => from_modules(kind, &bars_1d(rng), 10, VERTICAL_QUIET, m),
        SymbologyKind::Matrix2D => from_modules(kind, &matrix_2d(rng), MATRIX_QUIET, MATRIX_QUIET, m),
        SymbologyKind::Stacked2D => from_modules(kind, &stacked_2d(rng), 2, VERTICAL_QUIET, m),
    }
}
