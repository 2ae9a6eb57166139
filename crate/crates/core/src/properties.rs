//! Material property taxonomy shared by the pipeline, the catalog and the matcher.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{NormalizedRgb, RgbColor, REFLECTIVE_OFFSET};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropertyError {
    #[error("unknown {kind} label {value:?}")]
    UnknownLabel { kind: &'static str, value: String },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("material properties have no shades")]
    NoShades,
    #[error("shade {index}: {reason}")]
    InvalidShade { index: usize, reason: String },
    #[error("best image position {position} out of range for {images} images")]
    BadImagePosition { position: usize, images: usize },
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, [$($variant:ident => $text:literal),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = PropertyError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| PropertyError::UnknownLabel { kind: $kind, value: s.to_string() })
            }
        }
    };
}

label_enum!(
    /// Physical form of a product.
    Format, "format", [Powder => "Powder", Cream => "Cream", Stick => "Stick", Liquid => "Liquid"]
);

label_enum!(
    /// Surface appearance of a shade.
    FinishType, "finish", [Matte => "Matte", Shimmer => "Shimmer", Metallic => "Metallic", Glitter => "Glitter"]
);

label_enum!(
    Category, "category", [
        Eyeshadow => "Eyeshadow",
        Lipstick => "Lipstick",
        Foundation => "Foundation",
        Clothing => "Clothing",
        Other => "Other",
    ]
);

label_enum!(
    /// Output of the single/multi-shade gate classifier.
    ShadeCount, "shade count", [Single => "Single", Multi => "Multi"]
);

/// Where a set of material properties came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Pipeline,
    Override,
    GroundTruth,
}

/// Normalized `(cx, cy, w, h)` region with a detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

const BOX_EPS: f64 = 1e-9;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self { cx, cy, w, h, confidence }
    }

    /// Builds a box from corner coordinates in normalized units.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64, confidence: f64) -> Self {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0, confidence)
    }

    pub fn from_pixels(rect: PixelRect, width: u32, height: u32, confidence: f64) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        Self::from_corners(
            f64::from(rect.x0) / w,
            f64::from(rect.y0) / h,
            f64::from(rect.x1) / w,
            f64::from(rect.y1) / h,
            confidence,
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<(), PropertyError> {
        let bad = |why: &str| Err(PropertyError::InvalidBox(format!("{why}: {self:?}")));
        let all = [self.cx, self.cy, self.w, self.h, self.confidence];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite coordinate");
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return bad("zero area");
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad("confidence outside [0, 1]");
        }
        let [x0, y0, x1, y1] = self.corners();
        if x0 < -BOX_EPS || y0 < -BOX_EPS || x1 > 1.0 + BOX_EPS || y1 > 1.0 + BOX_EPS {
            return bad("outside the unit square");
        }
        Ok(())
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        iw * ih
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Shrinks each side inward by `fraction` of the box extent.
    pub fn shrink(&self, fraction: f64) -> BoundingBox {
        let keep = (1.0 - 2.0 * fraction).max(0.0);
        BoundingBox { w: self.w * keep, h: self.h * keep, ..*self }
    }

    /// Pixel rectangle covered by this box, clamped to the image and never empty
    /// for a non-degenerate image.
    pub fn to_pixels(&self, width: u32, height: u32) -> PixelRect {
        let [x0, y0, x1, y1] = self.corners();
        let (w, h) = (f64::from(width), f64::from(height));
        let lo = |v: f64, max: f64| (v * max).round().clamp(0.0, max) as u32;
        let mut r = PixelRect { x0: lo(x0, w), y0: lo(y0, h), x1: lo(x1, w), y1: lo(y1, h) };
        if r.x1 <= r.x0 {
            r.x1 = (r.x0 + 1).min(width);
            r.x0 = r.x1.saturating_sub(1);
        }
        if r.y1 <= r.y0 {
            r.y1 = (r.y0 + 1).min(height);
            r.y0 = r.y1.saturating_sub(1);
        }
        r
    }
}

/// Properties of one shade (pan) within a product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadeProperties {
    pub region: BoundingBox,
    pub base_color: RgbColor,
    pub finish: FinishType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflective_color: Option<RgbColor>,
}

/// Smallest 8-bit channel a scaled reflective color can take.
pub fn min_reflective_channel() -> u8 {
    NormalizedRgb::new(REFLECTIVE_OFFSET, REFLECTIVE_OFFSET, REFLECTIVE_OFFSET)
        .to_rgb()
        .r
}

impl ShadeProperties {
    pub fn validate(&self, index: usize) -> Result<(), PropertyError> {
        let bad = |reason: String| Err(PropertyError::InvalidShade { index, reason });
        if let Err(e) = self.region.validate() {
            return bad(e.to_string());
        }
        match (self.finish, self.reflective_color) {
            (FinishType::Glitter, None) => bad("glitter finish requires a reflective color".into()),
            (f, Some(_)) if f != FinishType::Glitter => {
                bad(format!("reflective color present on {f} finish"))
            }
            (_, Some(c)) if c.channels().iter().any(|&v| v < min_reflective_channel()) => {
                bad(format!("reflective color {c} below the scaled band"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    pub format: Format,
    pub shades: Vec<ShadeProperties>,
    pub best_image_position: usize,
    pub provenance: Provenance,
}

impl MaterialProperties {
    /// Checks the structural invariants; `image_count` bounds `best_image_position`.
    pub fn validate(&self, image_count: usize) -> Result<(), PropertyError> {
        if self.shades.is_empty() {
            return Err(PropertyError::NoShades);
        }
        if self.best_image_position >= image_count {
            return Err(PropertyError::BadImagePosition {
                position: self.best_image_position,
                images: image_count,
            });
        }
        self.shades
            .iter()
            .enumerate()
            .try_for_each(|(i, s)| s.validate(i))
    }

    pub fn has_finish(&self, finish: FinishType) -> bool {
        self.shades.iter().any(|s| s.finish == finish)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shade(finish: FinishType, reflective: Option<RgbColor>) -> ShadeProperties {
        ShadeProperties {
            region: BoundingBox::new(0.5, 0.5, 0.2, 0.2, 0.9),
            base_color: RgbColor::new(10, 20, 30),
            finish,
            reflective_color: reflective,
        }
    }

    #[test]
    fn labels_parse_case_insensitively() {
        assert_eq!("stick".parse::<Format>().unwrap(), Format::Stick);
        assert_eq!("GLITTER".parse::<FinishType>().unwrap(), FinishType::Glitter);
        assert!("satin".parse::<FinishType>().is_err());
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(0.5, 0.5, 1.0, 1.0, 1.0).validate().is_ok());
        assert!(BoundingBox::new(0.5, 0.5, 0.0, 0.3, 1.0).validate().is_err());
        assert!(BoundingBox::new(0.9, 0.5, 0.4, 0.3, 1.0).validate().is_err());
        assert!(BoundingBox::new(0.5, 0.5, 0.4, 0.3, 1.2).validate().is_err());
    }

    #[test]
    fn iou_of_nested_boxes() {
        let gt = BoundingBox::from_corners(0.0, 0.0, 0.5, 0.5, 1.0);
        let p = BoundingBox::from_corners(0.0, 0.0, 0.3, 0.5, 1.0);
        assert!((gt.iou(&p) - 0.6).abs() < 1e-12);
        assert_eq!(gt.iou(&gt), 1.0);
    }

    #[test]
    fn reflective_band_floor() {
        assert_eq!(min_reflective_channel(), 153);
    }

    #[test]
    fn glitter_iff_reflective() {
        assert!(shade(FinishType::Matte, None).validate(0).is_ok());
        assert!(shade(FinishType::Glitter, None).validate(0).is_err());
        assert!(shade(FinishType::Shimmer, Some(RgbColor::WHITE)).validate(0).is_err());
        assert!(shade(FinishType::Glitter, Some(RgbColor::WHITE)).validate(0).is_ok());
        assert!(shade(FinishType::Glitter, Some(RgbColor::new(200, 100, 200))).validate(0).is_err());
    }

    #[test]
    fn pixel_rect_never_empty() {
        let b = BoundingBox::new(0.5, 0.5, 1e-6, 1e-6, 1.0);
        let r = b.to_pixels(10, 10);
        assert!(!r.is_empty());
        let full = BoundingBox::new(0.5, 0.5, 1.0, 1.0, 1.0).to_pixels(40, 20);
        assert_eq!(full, PixelRect { x0: 0, y0: 0, x1: 40, y1: 20 });
    }
}
