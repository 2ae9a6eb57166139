//! Deterministic synthetic images and pixel sets with known ground truth.
//! Used by the test suites and for calibrating the reference backend.

use image::{Rgb, RgbImage};

use crate::color::RgbColor;
use crate::properties::{BoundingBox, PixelRect};

/// SplitMix64; small, seedable and stable across platforms.
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as i64
    }
}

/// Saturated colors that are far from white, black and each other.
pub const SWATCH_PALETTE: [RgbColor; 12] = [
    RgbColor::new(200, 30, 40),
    RgbColor::new(30, 140, 60),
    RgbColor::new(40, 60, 190),
    RgbColor::new(220, 160, 20),
    RgbColor::new(130, 40, 150),
    RgbColor::new(20, 150, 160),
    RgbColor::new(150, 80, 30),
    RgbColor::new(230, 90, 150),
    RgbColor::new(60, 60, 60),
    RgbColor::new(110, 160, 30),
    RgbColor::new(90, 20, 40),
    RgbColor::new(20, 40, 90),
];

fn px(c: RgbColor) -> Rgb<u8> {
    Rgb(c.channels())
}

pub fn solid(width: u32, height: u32, color: RgbColor) -> RgbImage {
    RgbImage::from_pixel(width, height, px(color))
}

pub fn fill_rect(img: &mut RgbImage, rect: PixelRect, color: RgbColor) {
    for y in rect.y0..rect.y1.min(img.height()) {
        for x in rect.x0..rect.x1.min(img.width()) {
            img.put_pixel(x, y, px(color));
        }
    }
}

/// One swatch covering the central half of each dimension.
pub fn centered_swatch(width: u32, height: u32, color: RgbColor, background: RgbColor) -> RgbImage {
    let mut img = solid(width, height, background);
    let rect = PixelRect { x0: width / 4, y0: height / 4, x1: width - width / 4, y1: height - height / 4 };
    fill_rect(&mut img, rect, color);
    img
}

/// Pixel rectangles of a `cols × rows` grid of swatches with gutters.
pub fn grid_rects(width: u32, height: u32, cols: u32, rows: u32) -> Vec<PixelRect> {
    let cell_w = width / cols;
    let cell_h = height / rows;
    let mx = (cell_w / 6).max(1);
    let my = (cell_h / 6).max(1);
    let mut out = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            out.push(PixelRect {
                x0: c * cell_w + mx,
                y0: r * cell_h + my,
                x1: (c + 1) * cell_w - mx,
                y1: (r + 1) * cell_h - my,
            });
        }
    }
    out
}

/// Grid of palette-colored swatches on `background`, with the planted boxes.
pub fn swatch_grid(width: u32, height: u32, cols: u32, rows: u32, background: RgbColor) -> (RgbImage, Vec<BoundingBox>) {
    let mut img = solid(width, height, background);
    let rects = grid_rects(width, height, cols, rows);
    let mut boxes = Vec::with_capacity(rects.len());
    for (i, rect) in rects.iter().enumerate() {
        fill_rect(&mut img, *rect, SWATCH_PALETTE[i % SWATCH_PALETTE.len()]);
        boxes.push(BoundingBox::from_pixels(*rect, width, height, 1.0));
    }
    (img, boxes)
}

/// `base` with a `fraction` of pixels replaced by `speckle`.
pub fn speckled(width: u32, height: u32, base: RgbColor, speckle: RgbColor, fraction: f64, seed: u64) -> RgbImage {
    let mut rng = SplitMix::new(seed);
    RgbImage::from_fn(width, height, |_, _| if rng.unit() < fraction { px(speckle) } else { px(base) })
}

/// `color` with a `fraction` of pixels set to white.
pub fn salt_noise(width: u32, height: u32, color: RgbColor, fraction: f64, seed: u64) -> RgbImage {
    speckled(width, height, color, RgbColor::WHITE, fraction, seed)
}

fn jitter(c: RgbColor, amplitude: i64, rng: &mut SplitMix) -> RgbColor {
    let j = |v: u8, rng: &mut SplitMix| (i64::from(v) + rng.range(-amplitude, amplitude)).clamp(0, 255) as u8;
    RgbColor::new(j(c.r, rng), j(c.g, rng), j(c.b, rng))
}

/// `n` pixels drawn from `palette` in the given proportions (exact counts,
/// rounded down with the remainder to the first color), each channel
/// jittered by up to `noise`. Pixel order is shuffled.
pub fn planted_pixels(palette: &[(RgbColor, f64)], n: usize, noise: i64, seed: u64) -> Vec<RgbColor> {
    let mut rng = SplitMix::new(seed);
    let mut counts: Vec<usize> = palette.iter().map(|(_, f)| (f * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    counts[0] += n - assigned;
    let mut out = Vec::with_capacity(n);
    for ((c, _), k) in palette.iter().zip(counts) {
        for _ in 0..k {
            out.push(jitter(*c, noise, &mut rng));
        }
    }
    for i in (1..out.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        out.swap(i, j);
    }
    out
}
