use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;

use super::PredictError;
use crate::catalog::ImageRef;
use crate::color::RgbColor;
use crate::properties::PixelRect;

/// A decoded image handed to predictors.
///
/// `id` names the image for scripted backends and traces: the catalog uri for
/// source images, `"{uri}#shade{i}"` for pipeline crops.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub id: String,
    pub pixels: Arc<RgbImage>,
    /// File the pixels were decoded from, when there is one.
    pub source: Option<PathBuf>,
    /// Region of `source` these pixels cover.
    pub crop: Option<PixelRect>,
}

impl ImageData {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Self {
        Self { id: id.into(), pixels: Arc::new(pixels), source: None, crop: None }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn pixel(&self, x: u32, y: u32) -> RgbColor {
        RgbColor::from(self.pixels.get_pixel(x, y).0)
    }

    pub fn colors(&self) -> impl Iterator<Item = RgbColor> + '_ {
        self.pixels.pixels().map(|p| RgbColor::from(p.0))
    }

    /// Copies a sub-rectangle; `rect` is clamped to the image.
    pub fn crop(&self, rect: PixelRect, id: impl Into<String>) -> ImageData {
        let x0 = rect.x0.min(self.width());
        let y0 = rect.y0.min(self.height());
        let w = rect.width().min(self.width() - x0);
        let h = rect.height().min(self.height() - y0);
        let pixels = image::imageops::crop_imm(&*self.pixels, x0, y0, w, h).to_image();
        let base = self.crop.map_or((0, 0), |c| (c.x0, c.y0));
        ImageData {
            id: id.into(),
            pixels: Arc::new(pixels),
            source: self.source.clone(),
            crop: Some(PixelRect { x0: base.0 + x0, y0: base.1 + y0, x1: base.0 + x0 + w, y1: base.1 + y0 + h }),
        }
    }

    /// Decodes a file from disk.
    pub fn open(path: &Path, id: impl Into<String>) -> Result<Self, PredictError> {
        let img = image::open(path).map_err(|e| PredictError::Decode {
            uri: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(ImageData {
            id: id.into(),
            pixels: Arc::new(img.to_rgb8()),
            source: Some(path.to_path_buf()),
            crop: None,
        })
    }
}

/// Resolves catalog image references to pixels.
pub trait ImageSource: Send + Sync {
    fn load(&self, image: &ImageRef) -> Result<ImageData, PredictError>;
}

/// Reads images relative to a catalog root. Remote URLs are not fetched.
#[derive(Debug, Clone)]
pub struct FsImageSource {
    root: PathBuf,
}

impl FsImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for FsImageSource {
    fn load(&self, image: &ImageRef) -> Result<ImageData, PredictError> {
        if image.uri.contains("://") {
            return Err(PredictError::Decode {
                uri: image.uri.clone(),
                reason: "remote images must be downloaded before extraction".into(),
            });
        }
        let path = Path::new(&image.uri);
        let path = if path.is_absolute() { path.to_path_buf() } else { self.root.join(path) };
        ImageData::open(&path, image.uri.clone())
    }
}

/// In-memory images keyed by uri; unknown uris fail to decode.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    images: HashMap<String, Arc<RgbImage>>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, uri: impl Into<String>, pixels: RgbImage) {
        self.images.insert(uri.into(), Arc::new(pixels));
    }

    pub fn with(mut self, uri: impl Into<String>, pixels: RgbImage) -> Self {
        self.insert(uri, pixels);
        self
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, image: &ImageRef) -> Result<ImageData, PredictError> {
        self.images
            .get(&image.uri)
            .map(|p| ImageData { id: image.uri.clone(), pixels: p.clone(), source: None, crop: None })
            .ok_or_else(|| PredictError::Decode { uri: image.uri.clone(), reason: "no such image".into() })
    }
}
