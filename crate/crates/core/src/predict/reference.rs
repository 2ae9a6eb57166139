//! Classical-heuristic backend. Runs the full pipeline without model weights.
//!
//! Shade detection suppresses the background by flooding from the image border
//! over pixels close to the border color, then takes 4-connected foreground
//! components covering at least `min_blob_fraction` of the image. Finish is
//! decided from luma spread and the fraction of bright outliers. Base color is
//! the heaviest k-means cluster, reflective color the mean of the brightest
//! decile.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{
    Backend, BaseColorRegressor, ClassDistribution, FinishClassifier, FormatClassifier, ImageData,
    ImagePreference, PredictError, Preference, ReflectiveColorRegressor, ShadeCountClassifier,
    ShadeDetector,
};
use crate::color::{NormalizedRgb, RgbColor};
use crate::kmeans::dominant_colors;
use crate::properties::{BoundingBox, FinishType, Format, PixelRect, ShadeCount};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    /// RGB distance from the border color still treated as background.
    pub background_tolerance: f64,
    /// Minimum blob area as a fraction of the image.
    pub min_blob_fraction: f64,
    /// Luma standard deviation below which a crop is matte.
    pub matte_max_std: f64,
    /// Luma excess over the crop mean that makes a pixel "bright".
    pub bright_delta: f64,
    pub glitter_min_bright_fraction: f64,
    pub glitter_min_std: f64,
    pub metallic_min_std: f64,
    /// Probability assigned to the chosen label by the heuristic classifiers.
    pub decision_confidence: f64,
    pub base_color_clusters: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            background_tolerance: 30.0,
            min_blob_fraction: 0.002,
            matte_max_std: 6.0,
            bright_delta: 40.0,
            glitter_min_bright_fraction: 0.02,
            glitter_min_std: 25.0,
            metallic_min_std: 15.0,
            decision_confidence: 0.7,
            base_color_clusters: 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceBackend {
    config: ReferenceConfig,
}

/// A foreground connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub rect: PixelRect,
    pub area: u64,
}

impl Blob {
    /// Fraction of the bounding rectangle covered by the component.
    pub fn fill_ratio(&self) -> f64 {
        let r = &self.rect;
        let rect_area = u64::from(r.width()) * u64::from(r.height());
        if rect_area == 0 {
            0.0
        } else {
            (self.area as f64 / rect_area as f64).clamp(0.0, 1.0)
        }
    }
}

fn rgb_distance(a: RgbColor, b: RgbColor) -> f64 {
    let d = |x: u8, y: u8| f64::from(x) - f64::from(y);
    (d(a.r, b.r).powi(2) + d(a.g, b.g).powi(2) + d(a.b, b.b).powi(2)).sqrt()
}

fn median(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    values[values.len() / 2]
}

fn border_color(img: &ImageData) -> RgbColor {
    let (w, h) = (img.width(), img.height());
    let mut channels: [Vec<u8>; 3] = Default::default();
    let mut push = |c: RgbColor| {
        channels[0].push(c.r);
        channels[1].push(c.g);
        channels[2].push(c.b);
    };
    for x in 0..w {
        push(img.pixel(x, 0));
        push(img.pixel(x, h - 1));
    }
    for y in 0..h {
        push(img.pixel(0, y));
        push(img.pixel(w - 1, y));
    }
    let [r, g, b] = &mut channels;
    RgbColor::new(median(r), median(g), median(b))
}

impl ReferenceBackend {
    pub fn new(config: ReferenceConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    /// Foreground blobs after border-flood background suppression, largest first.
    pub fn blobs(&self, img: &ImageData) -> Vec<Blob> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Vec::new();
        }
        let bg = border_color(img);
        let tol = self.config.background_tolerance;
        let is_bg_like = |i: usize| rgb_distance(img.pixel((i % w) as u32, (i / w) as u32), bg) <= tol;

        // 0 = unvisited foreground candidate, 1 = background, 2 = assigned to a blob
        let mut label = vec![0u8; w * h];
        let mut queue = VecDeque::new();
        let seed = |i: usize, label: &mut Vec<u8>, queue: &mut VecDeque<usize>| {
            if label[i] == 0 && is_bg_like(i) {
                label[i] = 1;
                queue.push_back(i);
            }
        };
        for x in 0..w {
            seed(x, &mut label, &mut queue);
            seed((h - 1) * w + x, &mut label, &mut queue);
        }
        for y in 0..h {
            seed(y * w, &mut label, &mut queue);
            seed(y * w + w - 1, &mut label, &mut queue);
        }
        while let Some(i) = queue.pop_front() {
            for n in neighbors(i, w, h) {
                seed(n, &mut label, &mut queue);
            }
        }

        let min_area = (self.config.min_blob_fraction * (w * h) as f64).max(1.0);
        let mut blobs = Vec::new();
        for start in 0..w * h {
            if label[start] != 0 {
                continue;
            }
            label[start] = 2;
            queue.push_back(start);
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
            let mut area = 0u64;
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                area += 1;
                for n in neighbors(i, w, h) {
                    if label[n] == 0 {
                        label[n] = 2;
                        queue.push_back(n);
                    }
                }
            }
            if area as f64 >= min_area {
                let rect = PixelRect { x0: x0 as u32, y0: y0 as u32, x1: x1 as u32 + 1, y1: y1 as u32 + 1 };
                blobs.push(Blob { rect, area });
            }
        }
        blobs.sort_by(|a, b| b.area.cmp(&a.area).then((a.rect.y0, a.rect.x0).cmp(&(b.rect.y0, b.rect.x0))));
        blobs
    }

    fn luma_stats(crop: &ImageData) -> (f64, f64, Vec<f64>) {
        let lumas: Vec<f64> = crop.colors().map(RgbColor::luma).collect();
        let n = lumas.len().max(1) as f64;
        let mean = lumas.iter().sum::<f64>() / n;
        let var = lumas.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt(), lumas)
    }

    /// Finish decision with the measured statistics, for calibration and traces.
    pub fn finish_decision(&self, crop: &ImageData) -> (FinishType, f64, f64) {
        let (mean, std, lumas) = Self::luma_stats(crop);
        let bright = lumas.iter().filter(|l| **l >= mean + self.config.bright_delta).count() as f64
            / lumas.len().max(1) as f64;
        let c = &self.config;
        let finish = if std < c.matte_max_std {
            FinishType::Matte
        } else if bright >= c.glitter_min_bright_fraction && std >= c.glitter_min_std {
            FinishType::Glitter
        } else if std >= c.metallic_min_std {
            FinishType::Metallic
        } else {
            FinishType::Shimmer
        };
        (finish, std, bright)
    }
}

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let left = (x > 0).then(|| i - 1);
    let right = (x + 1 < w).then(|| i + 1);
    let up = (y > 0).then(|| i - w);
    let down = (y + 1 < h).then(|| i + w);
    [left, right, up, down].into_iter().flatten()
}

fn ensure_nonempty(img: &ImageData) -> Result<(), PredictError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(PredictError::Decode { uri: img.id.clone(), reason: "empty image".into() });
    }
    Ok(())
}

impl ImagePreference for ReferenceBackend {
    fn prefer_image(&self, candidate: &ImageData, reference: &ImageData) -> Result<Preference, PredictError> {
        ensure_nonempty(candidate)?;
        ensure_nonempty(reference)?;
        let c = self.blobs(candidate).len() as f64;
        let r = self.blobs(reference).len() as f64;
        if c > r {
            Ok(Preference { preferred: true, confidence: 1.0 - r / c })
        } else {
            Ok(Preference { preferred: false, confidence: 0.0 })
        }
    }
}

const FORMAT_CUES: &[(Format, &[&str])] = &[
    (Format::Liquid, &["liquid", "fluid"]),
    (Format::Cream, &["cream", "creme", "crème", "mousse"]),
    (Format::Stick, &["stick", "crayon", "pencil", "chubby"]),
    (Format::Powder, &["powder", "pressed", "loose", "baked"]),
];

/// Format named in a title, if any (first cue in title order wins).
pub fn title_format_cue(title: &str) -> Option<Format> {
    let lower = title.to_lowercase();
    let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    tokens.iter().find_map(|tok| {
        FORMAT_CUES
            .iter()
            .find(|(_, cues)| cues.iter().any(|cue| tok.starts_with(cue)))
            .map(|(f, _)| *f)
    })
}

impl FormatClassifier for ReferenceBackend {
    fn classify_format(&self, image: &ImageData, title: &str) -> Result<ClassDistribution<Format>, PredictError> {
        ensure_nonempty(image)?;
        Ok(match title_format_cue(title) {
            Some(f) => ClassDistribution::peaked(f, 0.85),
            // catalog prior: powder is the most common format
            None => ClassDistribution::peaked(Format::Powder, 0.55),
        })
    }
}

impl ShadeDetector for ReferenceBackend {
    fn detect_shades(&self, image: &ImageData) -> Result<Vec<BoundingBox>, PredictError> {
        ensure_nonempty(image)?;
        let (w, h) = (image.width(), image.height());
        let mut boxes: Vec<BoundingBox> = self
            .blobs(image)
            .into_iter()
            .map(|b| BoundingBox::from_pixels(b.rect, w, h, b.fill_ratio()))
            .collect();
        boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(boxes)
    }
}

impl ShadeCountClassifier for ReferenceBackend {
    fn classify_shade_count(&self, image: &ImageData) -> Result<ClassDistribution<ShadeCount>, PredictError> {
        ensure_nonempty(image)?;
        let n = self.blobs(image).len();
        Ok(match n {
            0 => ClassDistribution::peaked(ShadeCount::Single, 0.5),
            1 => ClassDistribution::peaked(ShadeCount::Single, 0.9),
            n => ClassDistribution::peaked(ShadeCount::Multi, n as f64 / (n as f64 + 1.0)),
        })
    }
}

impl FinishClassifier for ReferenceBackend {
    fn classify_finish(&self, crop: &ImageData) -> Result<ClassDistribution<FinishType>, PredictError> {
        ensure_nonempty(crop)?;
        let (finish, _, _) = self.finish_decision(crop);
        Ok(ClassDistribution::peaked(finish, self.config.decision_confidence))
    }
}

impl BaseColorRegressor for ReferenceBackend {
    fn regress_base_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        ensure_nonempty(crop)?;
        let palette = dominant_colors(crop.colors(), self.config.base_color_clusters)
            .map_err(|e| PredictError::Backend(e.to_string()))?;
        Ok(palette[0].color.to_normalized())
    }
}

impl ReflectiveColorRegressor for ReferenceBackend {
    fn regress_reflective_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        ensure_nonempty(crop)?;
        let mut colors: Vec<RgbColor> = crop.colors().collect();
        colors.sort_by(|a, b| b.luma().total_cmp(&a.luma()).then(a.cmp(b)));
        let top = colors.len().div_ceil(10).max(1);
        let mut sum = [0.0f64; 3];
        for c in &colors[..top] {
            sum[0] += f64::from(c.r);
            sum[1] += f64::from(c.g);
            sum[2] += f64::from(c.b);
        }
        let n = top as f64 * 255.0;
        Ok(NormalizedRgb::new(sum[0] / n, sum[1] / n, sum[2] / n))
    }
}

impl Backend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }
}
