//! Color representations and the conversions every other module relies on.
//!
//! All perceptual comparisons happen in CIELAB (D65 white, 2° observer) using
//! the CIE76 difference, i.e. plain Euclidean distance between Lab points.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColorError {
    #[error("invalid hex color {0:?}: expected \"#RRGGBB\"")]
    InvalidHex(String),
    #[error("pixel sequence is empty")]
    EmptyInput,
    #[error("cluster count {0} outside [1, 8]")]
    InvalidClusterCount(usize),
}

/// An 8-bit sRGB-encoded color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RgbColor {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl RgbColor {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub const WHITE: RgbColor = RgbColor::new(255, 255, 255);
    pub const BLACK: RgbColor = RgbColor::new(0, 0, 0);

    /// Renders as uppercase `#RRGGBB`.
    pub fn to_hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.r, self.g, self.b)
    }

    /// Parses `#RRGGBB`. Hex digits may be either case; length must be exactly 7.
    pub fn from_hex(s: &str) -> Result<Self, ColorError> {
        let bad = || ColorError::InvalidHex(s.to_string());
        let digits = s.strip_prefix('#').ok_or_else(bad)?;
        if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad());
        }
        let channel = |i: usize| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| bad());
        Ok(Self::new(channel(0)?, channel(2)?, channel(4)?))
    }

    pub fn to_normalized(self) -> NormalizedRgb {
        NormalizedRgb {
            r: f64::from(self.r) / 255.0,
            g: f64::from(self.g) / 255.0,
            b: f64::from(self.b) / 255.0,
        }
    }

    pub fn to_lab(self) -> LabColor {
        srgb_to_lab(self)
    }

    pub fn channels(self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }

    /// Rec. 709 luma on the encoded channels, 0..=255.
    pub fn luma(self) -> f64 {
        0.2126 * f64::from(self.r) + 0.7152 * f64::from(self.g) + 0.0722 * f64::from(self.b)
    }
}

impl From<[u8; 3]> for RgbColor {
    fn from(c: [u8; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }
}

impl fmt::Display for RgbColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for RgbColor {
    type Err = ColorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for RgbColor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RgbColor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RgbColor::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Regressor output space: each channel in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl NormalizedRgb {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub fn is_valid(&self) -> bool {
        [self.r, self.g, self.b]
            .iter()
            .all(|c| c.is_finite() && (0.0..=1.0).contains(c))
    }

    /// Channels are clamped to `[0, 1]`, scaled to 255 and rounded half away from zero.
    pub fn to_rgb(self) -> RgbColor {
        let q = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbColor::new(q(self.r), q(self.g), q(self.b))
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

/// A palette entry: a color and the fraction of clustered pixels it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedColor {
    pub color: RgbColor,
    pub weight: f64,
}

// sRGB primaries to XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_xyz(lin: [f64; 3]) -> [f64; 3] {
    let row = |m: &[f64; 3]| m[0] * lin[0] + m[1] * lin[1] + m[2] * lin[2];
    [row(&RGB_TO_XYZ[0]), row(&RGB_TO_XYZ[1]), row(&RGB_TO_XYZ[2])]
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (IEC 61966-2-1 companding) → linear → XYZ (D65) → CIELAB.
pub fn srgb_to_lab(c: RgbColor) -> LabColor {
    let n = c.to_normalized();
    let xyz = linear_to_xyz([srgb_decode(n.r), srgb_decode(n.g), srgb_decode(n.b)]);
    // Reference white is the image of RGB (1,1,1) so white lands on a=b=0.
    let white = linear_to_xyz([1.0, 1.0, 1.0]);
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    LabColor {
        l: (116.0 * fy - 16.0).max(0.0),
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// CIE76 color difference.
pub fn delta_e(x: LabColor, y: LabColor) -> f64 {
    let dl = x.l - y.l;
    let da = x.a - y.a;
    let db = x.b - y.b;
    (dl * dl + da * da + db * db).sqrt()
}

/// Convenience: delta E between two sRGB colors.
pub fn delta_e_rgb(x: RgbColor, y: RgbColor) -> f64 {
    delta_e(srgb_to_lab(x), srgb_to_lab(y))
}

pub const REFLECTIVE_SCALE: f64 = 0.4;
pub const REFLECTIVE_OFFSET: f64 = 0.6;

/// Maps a raw reflective-color prediction into the bright band: `0.4 * c + 0.6` per channel.
pub fn scale_reflective(c: NormalizedRgb) -> NormalizedRgb {
    c.map(|v| REFLECTIVE_SCALE * v + REFLECTIVE_OFFSET)
}

/// Hue, saturation, lightness; hue in degrees `[0, 360)`, the rest in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsl {
    pub h: f64,
    pub s: f64,
    pub l: f64,
}

pub fn rgb_to_hsl(c: RgbColor) -> Hsl {
    let n = c.to_normalized();
    let max = n.r.max(n.g).max(n.b);
    let min = n.r.min(n.g).min(n.b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return Hsl { h: 0.0, s: 0.0, l };
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == n.r {
        60.0 * ((n.g - n.b) / d).rem_euclid(6.0)
    } else if max == n.g {
        60.0 * ((n.b - n.r) / d + 2.0)
    } else {
        60.0 * ((n.r - n.g) / d + 4.0)
    };
    Hsl { h: h.rem_euclid(360.0), s, l }
}

pub fn hsl_to_rgb(hsl: Hsl) -> RgbColor {
    let c = (1.0 - (2.0 * hsl.l - 1.0).abs()) * hsl.s;
    let hp = hsl.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = hsl.l - c / 2.0;
    NormalizedRgb::new(r + m, g + m, b + m).to_rgb()
}

/// Rotates hue by 180° in HSL, keeping saturation and lightness.
pub fn complementary(c: RgbColor) -> RgbColor {
    let hsl = rgb_to_hsl(c);
    hsl_to_rgb(Hsl { h: hsl.h + 180.0, ..hsl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex(s: &str) -> RgbColor {
        RgbColor::from_hex(s).unwrap()
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab(RgbColor::WHITE);
        assert!((w.l - 100.0).abs() < 1e-9);
        assert!(w.a.abs() <= 0.01 && w.b.abs() <= 0.01);
        let k = srgb_to_lab(RgbColor::BLACK);
        assert_eq!((k.l, k.a, k.b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pure_red() {
        let lab = srgb_to_lab(hex("#FF0000"));
        assert!((lab.l - 53.24).abs() <= 0.05);
        assert!((lab.a - 80.09).abs() <= 0.05);
        assert!((lab.b - 67.20).abs() <= 0.05);
    }

    #[test]
    fn delta_e_examples() {
        let p = LabColor::new(50.0, 10.0, -10.0);
        assert_eq!(delta_e(p, p), 0.0);
        assert_eq!(delta_e(LabColor::new(100.0, 0.0, 0.0), LabColor::new(0.0, 0.0, 0.0)), 100.0);
        // CIE76 red vs green from an independent sRGB/D65 implementation.
        assert!((delta_e_rgb(hex("#FF0000"), hex("#00FF00")) - 170.5656).abs() < 0.1);
    }

    #[test]
    fn reflective_examples() {
        let close = |a: NormalizedRgb, b: NormalizedRgb| {
            (a.r - b.r).abs() < 1e-12 && (a.g - b.g).abs() < 1e-12 && (a.b - b.b).abs() < 1e-12
        };
        let s = scale_reflective(NormalizedRgb::new(0.0, 0.0, 0.0));
        assert!(close(s, NormalizedRgb::new(0.6, 0.6, 0.6)));
        let s = scale_reflective(NormalizedRgb::new(1.0, 1.0, 1.0));
        assert!(close(s, NormalizedRgb::new(1.0, 1.0, 1.0)));
        let s = scale_reflective(NormalizedRgb::new(0.5, 0.25, 1.0));
        assert!(close(s, NormalizedRgb::new(0.8, 0.7, 1.0)));
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(hex("#3366cc").to_hex(), "#3366CC");
        for bad in ["336699", "#33669", "#3366999", "#GG0000", ""] {
            assert!(RgbColor::from_hex(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn normalized_rounding() {
        assert_eq!(NormalizedRgb::new(0.2, 0.4, 0.6).to_rgb().to_hex(), "#336699");
        // 0.5 * 255 = 127.5 rounds away from zero.
        assert_eq!(NormalizedRgb::new(0.5, 0.0, 1.0).to_rgb(), RgbColor::new(128, 0, 255));
    }

    #[test]
    fn complement_of_red_is_cyan() {
        assert_eq!(complementary(hex("#FF0000")), hex("#00FFFF"));
        assert_eq!(complementary(hex("#808080")), hex("#808080"));
    }

    proptest! {
        #[test]
        fn hex_round_trip(r: u8, g: u8, b: u8) {
            let c = RgbColor::new(r, g, b);
            prop_assert_eq!(RgbColor::from_hex(&c.to_hex()).unwrap(), c);
        }

        #[test]
        fn lab_lightness_in_range(r: u8, g: u8, b: u8) {
            let lab = srgb_to_lab(RgbColor::new(r, g, b));
            prop_assert!((0.0..=100.0 + 1e-9).contains(&lab.l));
        }

        #[test]
        fn hsl_round_trip(r: u8, g: u8, b: u8) {
            let c = RgbColor::new(r, g, b);
            prop_assert_eq!(hsl_to_rgb(rgb_to_hsl(c)), c);
        }

        #[test]
        fn scale_reflective_band_and_monotone(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let sx = scale_reflective(NormalizedRgb::new(x, x, x));
            let sy = scale_reflective(NormalizedRgb::new(y, y, y));
            prop_assert!((0.6..=1.0).contains(&sx.r));
            prop_assert_eq!(x <= y, sx.r <= sy.r);
        }

        #[test]
        fn delta_e_metric(a in prop::array::uniform3(-100.0f64..100.0),
                          b in prop::array::uniform3(-100.0f64..100.0),
                          c in prop::array::uniform3(-100.0f64..100.0)) {
            let (x, y, z) = (LabColor::new(a[0], a[1], a[2]), LabColor::new(b[0], b[1], b[2]), LabColor::new(c[0], c[1], c[2]));
            prop_assert_eq!(delta_e(x, y), delta_e(y, x));
            prop_assert_eq!(delta_e(x, x), 0.0);
            prop_assert!(delta_e(x, z) <= delta_e(x, y) + delta_e(y, z) + 1e-9);
        }

        #[test]
        fn lab_injective_on_coarse_grid(r in 0u8..32, g in 0u8..32, b in 0u8..32, ch in 0usize..3) {
            let c = RgbColor::new(r * 8, g * 8, b * 8);
            let mut d = c.channels();
            d[ch] = d[ch].wrapping_add(8);
            let other = RgbColor::from(d);
            prop_assume!(other != c);
            prop_assert!(delta_e(srgb_to_lab(c), srgb_to_lab(other)) > 1e-6);
        }
    }
}
