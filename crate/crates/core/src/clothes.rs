//! Garment color extraction from four-channel clothing segmentations.
//!
//! Masks are produced elsewhere (an adapter backend or fixture files). Plane
//! order is always upper body, lower body, full body, background.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{ColorError, RgbColor, WeightedColor};
use crate::kmeans::dominant_colors;
use crate::predict::{ImageData, PredictError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_K: usize = 4;
const SUM_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Error)]
pub enum ClothesError {
    #[error("no pixel belongs to the {0:?} region")]
    EmptyRegion(GarmentRegion),
    #[error("image is {image:?} but mask is {mask:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("cluster count {0} outside [3, 5]")]
    InvalidK(usize),
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("mask file: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Color(#[from] ColorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GarmentRegion {
    UpperBody,
    LowerBody,
    FullBody,
}

impl GarmentRegion {
    pub const ALL: [GarmentRegion; 3] = [GarmentRegion::UpperBody, GarmentRegion::LowerBody, GarmentRegion::FullBody];

    fn plane(self) -> usize {
        match self {
            GarmentRegion::UpperBody => 0,
            GarmentRegion::LowerBody => 1,
            GarmentRegion::FullBody => 2,
        }
    }
}

impl std::str::FromStr for GarmentRegion {
    type Err = ClothesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        match norm.as_str() {
            "upper" | "upperbody" => Ok(GarmentRegion::UpperBody),
            "lower" | "lowerbody" => Ok(GarmentRegion::LowerBody),
            "full" | "fullbody" => Ok(GarmentRegion::FullBody),
            _ => Err(ClothesError::InvalidMask(format!("unknown garment region {s:?}"))),
        }
    }
}

const BACKGROUND: usize = 3;

/// Per-pixel soft assignment over {upper, lower, full, background}.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    width: u32,
    height: u32,
    planes: [Vec<f32>; 4],
}

impl SegmentationMask {
    /// Validates non-negativity and per-pixel sums in `(0, 1 + 1e-3]`.
    pub fn new(width: u32, height: u32, planes: [Vec<f32>; 4]) -> Result<Self, ClothesError> {
        let n = (width as usize) * (height as usize);
        if n == 0 {
            return Err(ClothesError::InvalidMask("empty mask".into()));
        }
        if planes.iter().any(|p| p.len() != n) {
            return Err(ClothesError::InvalidMask(format!("plane length differs from {width}x{height}")));
        }
        for i in 0..n {
            let vals = planes.each_ref().map(|p| p[i]);
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ClothesError::InvalidMask(format!("negative value at pixel {i}")));
            }
            let sum: f32 = vals.iter().sum();
            if sum <= 0.0 || sum > 1.0 + SUM_TOLERANCE {
                return Err(ClothesError::InvalidMask(format!("pixel {i} sums to {sum}")));
            }
        }
        Ok(Self { width, height, planes })
    }

    /// Builds a hard mask from a per-pixel plane index (0..=3).
    pub fn from_labels(width: u32, height: u32, labels: &[u8]) -> Result<Self, ClothesError> {
        let n = (width as usize) * (height as usize);
        if labels.len() != n || labels.iter().any(|l| *l > 3) {
            return Err(ClothesError::InvalidMask("label map size or value out of range".into()));
        }
        let mut planes: [Vec<f32>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for (i, l) in labels.iter().enumerate() {
            planes[*l as usize][i] = 1.0;
        }
        Self::new(width, height, planes)
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn value(&self, plane: usize, index: usize) -> f32 {
        self.planes[plane][index]
    }

    /// 8-bit planes are scaled to `[0, 1]` and renormalized per pixel where
    /// quantization pushed the sum above one.
    fn from_u8_planes(width: u32, height: u32, planes: [Vec<u8>; 4]) -> Result<Self, ClothesError> {
        let n = (width as usize) * (height as usize);
        let mut out: [Vec<f32>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let sum: f32 = planes.iter().map(|p| f32::from(p[i])).sum();
            let scale = if sum > 255.0 { sum } else { 255.0 };
            for k in 0..4 {
                out[k][i] = f32::from(planes[k][i]) / scale;
            }
        }
        Self::new(width, height, out)
    }

    /// Loads a 4-channel image (R,G,B,A = upper, lower, full, background) or a
    /// grayscale stack of four equal planes on top of each other.
    pub fn load(path: &Path) -> Result<Self, ClothesError> {
        Self::from_image(image::open(path)?)
    }

    pub fn from_image(img: DynamicImage) -> Result<Self, ClothesError> {
        match img {
            DynamicImage::ImageRgba8(rgba) => Self::from_rgba(&rgba),
            DynamicImage::ImageLuma8(gray) => Self::from_stack(&gray),
            DynamicImage::ImageLumaA8(_) => Err(ClothesError::InvalidMask("expected 4 planes, found 2".into())),
            DynamicImage::ImageRgb8(_) => Err(ClothesError::InvalidMask("expected 4 planes, found 3".into())),
            other => Err(ClothesError::InvalidMask(format!("unsupported mask pixel type {:?}", other.color()))),
        }
    }

    fn from_rgba(rgba: &RgbaImage) -> Result<Self, ClothesError> {
        let (w, h) = rgba.dimensions();
        let mut planes: [Vec<u8>; 4] = Default::default();
        for p in rgba.pixels() {
            for (plane, v) in planes.iter_mut().zip(p.0) {
                plane.push(v);
            }
        }
        Self::from_u8_planes(w, h, planes)
    }

    fn from_stack(gray: &GrayImage) -> Result<Self, ClothesError> {
        let (w, total_h) = gray.dimensions();
        if total_h % 4 != 0 {
            return Err(ClothesError::InvalidMask(format!("stack height {total_h} is not 4 planes")));
        }
        let h = total_h / 4;
        let plane_len = (w * h) as usize;
        let raw = gray.as_raw();
        let planes = std::array::from_fn(|k| raw[k * plane_len..(k + 1) * plane_len].to_vec());
        Self::from_u8_planes(w, h, planes)
    }

    pub fn to_rgba(&self) -> RgbaImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbaImage::from_fn(self.width, self.height, |x, y| {
            let i = (y * self.width + x) as usize;
            image::Rgba([q(self.planes[0][i]), q(self.planes[1][i]), q(self.planes[2][i]), q(self.planes[3][i])])
        })
    }

    pub fn save_rgba(&self, path: &Path) -> Result<(), ClothesError> {
        Ok(self.to_rgba().save(path)?)
    }
}

/// Produces garment segmentations for an image.
pub trait GarmentSegmenter: Send + Sync {
    fn segment(&self, image: &ImageData) -> Result<SegmentationMask, PredictError>;
}

/// Pixel indices (row-major) selected for a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPixels {
    pub width: u32,
    pub height: u32,
    pub indices: Vec<usize>,
}

/// A pixel is in the region when the region plane is the per-pixel maximum
/// (strictly above background) and at least `threshold`.
pub fn region_mask(mask: &SegmentationMask, region: GarmentRegion, threshold: f64) -> Result<RegionPixels, ClothesError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ClothesError::InvalidThreshold(threshold));
    }
    let plane = region.plane();
    let n = (mask.width as usize) * (mask.height as usize);
    let indices: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = mask.planes[plane][i];
            let is_max = (0..4).all(|k| k == plane || v >= mask.planes[k][i]);
            is_max && v > mask.planes[BACKGROUND][i] && f64::from(v) >= threshold
        })
        .collect();
    if indices.is_empty() {
        return Err(ClothesError::EmptyRegion(region));
    }
    Ok(RegionPixels { width: mask.width, height: mask.height, indices })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutfitColorProfile {
    pub region: GarmentRegion,
    pub colors: Vec<WeightedColor>,
    pub pixel_count: usize,
}

pub fn outfit_colors(
    image: &ImageData,
    mask: &SegmentationMask,
    region: GarmentRegion,
    k: usize,
) -> Result<OutfitColorProfile, ClothesError> {
    outfit_colors_with_threshold(image, mask, region, k, DEFAULT_THRESHOLD)
}

pub fn outfit_colors_with_threshold(
    image: &ImageData,
    mask: &SegmentationMask,
    region: GarmentRegion,
    k: usize,
    threshold: f64,
) -> Result<OutfitColorProfile, ClothesError> {
    if !(3..=5).contains(&k) {
        return Err(ClothesError::InvalidK(k));
    }
    let dims = (image.width(), image.height());
    if dims != mask.dimensions() {
        return Err(ClothesError::DimensionMismatch { image: dims, mask: mask.dimensions() });
    }
    let selected = region_mask(mask, region, threshold)?;
    let raw = image.pixels.as_raw();
    let pixels = selected
        .indices
        .iter()
        .map(|&i| RgbColor::new(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]));
    let colors = dominant_colors(pixels, k)?;
    Ok(OutfitColorProfile { region, colors, pixel_count: selected.indices.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn top_half_mask(w: u32, h: u32) -> SegmentationMask {
        let labels: Vec<u8> = (0..w * h).map(|i| if i / w < h / 2 { 0 } else { 3 }).collect();
        SegmentationMask::from_labels(w, h, &labels).unwrap()
    }

    #[test]
    fn hard_mask_selects_top_half() {
        let r = region_mask(&top_half_mask(4, 4), GarmentRegion::UpperBody, 0.5).unwrap();
        assert_eq!(r.indices, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn all_background_is_empty() {
        let m = SegmentationMask::from_labels(3, 3, &[3; 9]).unwrap();
        assert!(matches!(region_mask(&m, GarmentRegion::FullBody, 0.5), Err(ClothesError::EmptyRegion(_))));
    }

    #[test]
    fn soft_threshold() {
        let m = SegmentationMask::new(1, 1, [vec![0.55], vec![0.15], vec![0.15], vec![0.15]]).unwrap();
        assert_eq!(region_mask(&m, GarmentRegion::UpperBody, 0.5).unwrap().indices, vec![0]);
        assert!(region_mask(&m, GarmentRegion::UpperBody, 0.6).is_err());
        assert!(region_mask(&m, GarmentRegion::UpperBody, 1.0).is_err());
    }

    #[test]
    fn mask_invariants() {
        assert!(SegmentationMask::new(1, 1, [vec![0.7], vec![0.7], vec![0.0], vec![0.0]]).is_err());
        assert!(SegmentationMask::new(1, 1, [vec![0.0], vec![0.0], vec![0.0], vec![0.0]]).is_err());
        assert!(SegmentationMask::new(1, 1, [vec![-0.1], vec![0.5], vec![0.0], vec![0.6]]).is_err());
    }

    #[test]
    fn solid_upper_region() {
        let (w, h) = (20, 20);
        let navy = RgbColor::from_hex("#112244").unwrap();
        let img = RgbImage::from_fn(w, h, |_, y| if y < h / 2 { image::Rgb(navy.channels()) } else { image::Rgb([250, 250, 250]) });
        let p = outfit_colors(&ImageData::new("dress", img), &top_half_mask(w, h), GarmentRegion::UpperBody, 4).unwrap();
        assert_eq!(p.colors, vec![WeightedColor { color: navy, weight: 1.0 }]);
        assert_eq!(p.pixel_count, 200);
    }

    #[test]
    fn k_and_dimension_checks() {
        let img = ImageData::new("x", RgbImage::new(4, 4));
        let m = top_half_mask(4, 4);
        assert!(matches!(outfit_colors(&img, &m, GarmentRegion::UpperBody, 2), Err(ClothesError::InvalidK(2))));
        assert!(matches!(outfit_colors(&img, &top_half_mask(4, 6), GarmentRegion::UpperBody, 3), Err(ClothesError::DimensionMismatch { .. })));
    }

    #[test]
    fn mask_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = top_half_mask(6, 4);
        let p = dir.path().join("m.png");
        m.save_rgba(&p).unwrap();
        assert_eq!(SegmentationMask::load(&p).unwrap(), m);

        // grayscale stack: four 6x4 planes
        let mut stack = GrayImage::new(6, 16);
        for y in 0..4 {
            for x in 0..6 {
                let upper = y < 2;
                stack.put_pixel(x, y, image::Luma([if upper { 255 } else { 0 }]));
                stack.put_pixel(x, 12 + y, image::Luma([if upper { 0 } else { 255 }]));
            }
        }
        let sp = dir.path().join("stack.png");
        stack.save(&sp).unwrap();
        assert_eq!(SegmentationMask::load(&sp).unwrap(), m);

        let rgb = dir.path().join("rgb.png");
        RgbImage::new(2, 2).save(&rgb).unwrap();
        assert!(matches!(SegmentationMask::load(&rgb), Err(ClothesError::InvalidMask(_))));
    }

    #[test]
    fn region_names() {
        assert_eq!("upper-body".parse::<GarmentRegion>().unwrap(), GarmentRegion::UpperBody);
        assert_eq!("FullBody".parse::<GarmentRegion>().unwrap(), GarmentRegion::FullBody);
    }
}
