//! Line-delimited JSON bridge to out-of-process predictors.
//!
//! The client opens with `{"handshake":"MPEPRED1"}` and the server answers with
//! the same string plus its backend name. Each request is one line:
//!
//! ```text
//! {"id":7,"op":"detect_shades","image":{"path":"/data/p1/0.jpg"}}
//! {"id":8,"op":"classify_finish","image":{"path":"/data/p1/0.jpg","crop":{"x0":4,"y0":4,"x1":40,"y1":40}}}
//! ```
//!
//! and each response one line: `{"id":7,"ok":<result>}` or `{"id":7,"error":"..."}`.
//! Images travel by file path; in-memory crops are written to a private
//! temporary directory first.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    Backend, BaseColorRegressor, ClassDistribution, FinishClassifier, FormatClassifier, ImageData,
    ImagePreference, PredictError, Preference, ReflectiveColorRegressor, ShadeCountClassifier,
    ShadeDetector,
};
use crate::clothes::{GarmentSegmenter, SegmentationMask};
use crate::color::NormalizedRgb;
use crate::properties::{BoundingBox, FinishType, Format, PixelRect, ShadeCount};

pub const HANDSHAKE: &str = "MPEPRED1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<PixelRect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    PreferImage { candidate: WireImage, reference: WireImage },
    ClassifyFormat { image: WireImage, title: String },
    DetectShades { image: WireImage },
    ClassifyShadeCount { image: WireImage },
    ClassifyFinish { image: WireImage },
    RegressBaseColor { image: WireImage },
    RegressReflectiveColor { image: WireImage },
    /// Result: `{"mask": "<path to mask file>"}`.
    SegmentGarments { image: WireImage },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RequestEnvelope {
    id: u64,
    #[serde(flatten)]
    request: Request,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResponseEnvelope {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ok: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Handshake {
    handshake: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backend: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaskResult {
    mask: PathBuf,
}

fn protocol(msg: impl std::fmt::Display) -> PredictError {
    PredictError::Backend(format!("adapter protocol: {msg}"))
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
}

impl Channel {
    fn send_line<T: Serialize>(&mut self, msg: &T) -> Result<(), PredictError> {
        let mut line = serde_json::to_string(msg).map_err(protocol)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(protocol)?;
        self.writer.flush().map_err(protocol)
    }

    fn read_line<T: DeserializeOwned>(&mut self) -> Result<T, PredictError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line).map_err(protocol)? == 0 {
            return Err(protocol("connection closed"));
        }
        serde_json::from_str(&line).map_err(protocol)
    }
}

/// Client side: a backend whose every call is forwarded to a remote predictor.
/// Calls are serialized over the single channel.
pub struct AdapterBackend {
    name: String,
    channel: Mutex<Channel>,
    scratch: tempfile::TempDir,
    scratch_counter: AtomicU64,
    child: Option<Mutex<Child>>,
}

impl AdapterBackend {
    /// Connects over an existing duplex stream and performs the handshake.
    pub fn connect<R, W>(reader: R, writer: W) -> Result<Self, PredictError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut channel = Channel {
            reader: Box::new(BufReader::new(reader)),
            writer: Box::new(BufWriter::new(writer)),
            next_id: 1,
        };
        channel.send_line(&Handshake { handshake: HANDSHAKE.into(), backend: None })?;
        let reply: Handshake = channel.read_line()?;
        if reply.handshake != HANDSHAKE {
            return Err(protocol(format!("unexpected handshake {:?}", reply.handshake)));
        }
        let name = format!("adapter:{}", reply.backend.unwrap_or_else(|| "remote".into()));
        Ok(Self {
            name,
            channel: Mutex::new(channel),
            scratch: tempfile::tempdir().map_err(protocol)?,
            scratch_counter: AtomicU64::new(0),
            child: None,
        })
    }

    /// Spawns `program args..` and talks to it over stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, PredictError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictError::Backend(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| protocol("no stdin"))?;
        let stdout = child.stdout.take().ok_or_else(|| protocol("no stdout"))?;
        let mut backend = Self::connect(stdout, stdin)?;
        backend.child = Some(Mutex::new(child));
        Ok(backend)
    }

    /// Connects to a predictor listening on a Unix domain socket.
    #[cfg(unix)]
    pub fn connect_unix(path: &Path) -> Result<Self, PredictError> {
        let stream = std::os::unix::net::UnixStream::connect(path).map_err(protocol)?;
        let reader = stream.try_clone().map_err(protocol)?;
        Self::connect(reader, stream)
    }

    fn wire(&self, img: &ImageData) -> Result<WireImage, PredictError> {
        if let Some(path) = &img.source {
            return Ok(WireImage { path: path.clone(), crop: img.crop });
        }
        let n = self.scratch_counter.fetch_add(1, Ordering::Relaxed);
        let path = self.scratch.path().join(format!("img{n}.png"));
        img.pixels.save(&path).map_err(|e| PredictError::Backend(format!("writing {}: {e}", path.display())))?;
        Ok(WireImage { path, crop: None })
    }

    fn call<T: DeserializeOwned>(&self, request: Request) -> Result<T, PredictError> {
        let mut ch = self.channel.lock();
        let id = ch.next_id;
        ch.next_id += 1;
        ch.send_line(&RequestEnvelope { id, request })?;
        let reply: ResponseEnvelope = ch.read_line()?;
        if reply.id != id {
            return Err(protocol(format!("response id {} for request {id}", reply.id)));
        }
        match (reply.ok, reply.error) {
            (_, Some(err)) => Err(PredictError::Backend(err)),
            (Some(v), None) => serde_json::from_value(v).map_err(protocol),
            (None, None) => Err(protocol("response has neither ok nor error")),
        }
    }
}

impl Drop for AdapterBackend {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl ImagePreference for AdapterBackend {
    fn prefer_image(&self, candidate: &ImageData, reference: &ImageData) -> Result<Preference, PredictError> {
        let (candidate, reference) = (self.wire(candidate)?, self.wire(reference)?);
        self.call(Request::PreferImage { candidate, reference })
    }
}

impl FormatClassifier for AdapterBackend {
    fn classify_format(&self, image: &ImageData, title: &str) -> Result<ClassDistribution<Format>, PredictError> {
        self.call(Request::ClassifyFormat { image: self.wire(image)?, title: title.to_string() })
    }
}

impl ShadeDetector for AdapterBackend {
    fn detect_shades(&self, image: &ImageData) -> Result<Vec<BoundingBox>, PredictError> {
        self.call(Request::DetectShades { image: self.wire(image)? })
    }
}

impl ShadeCountClassifier for AdapterBackend {
    fn classify_shade_count(&self, image: &ImageData) -> Result<ClassDistribution<ShadeCount>, PredictError> {
        self.call(Request::ClassifyShadeCount { image: self.wire(image)? })
    }
}

impl FinishClassifier for AdapterBackend {
    fn classify_finish(&self, crop: &ImageData) -> Result<ClassDistribution<FinishType>, PredictError> {
        self.call(Request::ClassifyFinish { image: self.wire(crop)? })
    }
}

impl BaseColorRegressor for AdapterBackend {
    fn regress_base_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        self.call(Request::RegressBaseColor { image: self.wire(crop)? })
    }
}

impl ReflectiveColorRegressor for AdapterBackend {
    fn regress_reflective_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        self.call(Request::RegressReflectiveColor { image: self.wire(crop)? })
    }
}

impl GarmentSegmenter for AdapterBackend {
    fn segment(&self, image: &ImageData) -> Result<SegmentationMask, PredictError> {
        let result: MaskResult = self.call(Request::SegmentGarments { image: self.wire(image)? })?;
        SegmentationMask::load(&result.mask).map_err(|e| PredictError::Backend(e.to_string()))
    }
}

impl Backend for AdapterBackend {
    fn name(&self) -> &str {
        &self.name
    }
}

fn load_wire(img: &WireImage) -> Result<ImageData, PredictError> {
    let id = img.path.display().to_string();
    let full = ImageData::open(&img.path, id.clone())?;
    Ok(match img.crop {
        Some(rect) => full.crop(rect, format!("{id}@{},{},{},{}", rect.x0, rect.y0, rect.x1, rect.y1)),
        None => full,
    })
}

fn dispatch(
    backend: &dyn Backend,
    segmenter: Option<&dyn GarmentSegmenter>,
    request: Request,
    scratch: &Path,
    id: u64,
) -> Result<Value, PredictError> {
    let to_value = |v: Result<Value, serde_json::Error>| v.map_err(protocol);
    match request {
        Request::PreferImage { candidate, reference } => {
            to_value(serde_json::to_value(backend.prefer_image(&load_wire(&candidate)?, &load_wire(&reference)?)?))
        }
        Request::ClassifyFormat { image, title } => {
            to_value(serde_json::to_value(backend.classify_format(&load_wire(&image)?, &title)?))
        }
        Request::DetectShades { image } => to_value(serde_json::to_value(backend.detect_shades(&load_wire(&image)?)?)),
        Request::ClassifyShadeCount { image } => {
            to_value(serde_json::to_value(backend.classify_shade_count(&load_wire(&image)?)?))
        }
        Request::ClassifyFinish { image } => to_value(serde_json::to_value(backend.classify_finish(&load_wire(&image)?)?)),
        Request::RegressBaseColor { image } => {
            to_value(serde_json::to_value(backend.regress_base_color(&load_wire(&image)?)?))
        }
        Request::RegressReflectiveColor { image } => {
            to_value(serde_json::to_value(backend.regress_reflective_color(&load_wire(&image)?)?))
        }
        Request::SegmentGarments { image } => {
            let seg = segmenter.ok_or_else(|| PredictError::Backend("segmentation not supported".into()))?;
            let mask = seg.segment(&load_wire(&image)?)?;
            let path = scratch.join(format!("mask{id}.png"));
            mask.save_rgba(&path).map_err(|e| PredictError::Backend(e.to_string()))?;
            to_value(serde_json::to_value(MaskResult { mask: path }))
        }
    }
}

/// Server side: answers adapter requests with `backend` until the stream closes.
pub fn serve<R: Read, W: Write>(
    backend: &dyn Backend,
    segmenter: Option<&dyn GarmentSegmenter>,
    reader: R,
    writer: W,
) -> Result<(), PredictError> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let scratch = tempfile::tempdir().map_err(protocol)?;
    let mut line = String::new();
    if reader.read_line(&mut line).map_err(protocol)? == 0 {
        return Ok(());
    }
    let hello: Handshake = serde_json::from_str(&line).map_err(protocol)?;
    if hello.handshake != HANDSHAKE {
        return Err(protocol(format!("unexpected handshake {:?}", hello.handshake)));
    }
    let reply = Handshake { handshake: HANDSHAKE.into(), backend: Some(backend.name().to_string()) };
    writeln!(writer, "{}", serde_json::to_string(&reply).map_err(protocol)?).map_err(protocol)?;
    writer.flush().map_err(protocol)?;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(protocol)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<RequestEnvelope>(&line) {
            Ok(env) => match dispatch(backend, segmenter, env.request, scratch.path(), env.id) {
                Ok(v) => ResponseEnvelope { id: env.id, ok: Some(v), error: None },
                Err(e) => ResponseEnvelope { id: env.id, ok: None, error: Some(e.to_string()) },
            },
            Err(e) => ResponseEnvelope { id: 0, ok: None, error: Some(format!("bad request: {e}")) },
        };
        writeln!(writer, "{}", serde_json::to_string(&response).map_err(protocol)?).map_err(protocol)?;
        writer.flush().map_err(protocol)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let env = RequestEnvelope {
            id: 7,
            request: Request::DetectShades { image: WireImage { path: "/data/p1/0.jpg".into(), crop: None } },
        };
        assert_eq!(
            serde_json::to_string(&env).unwrap(),
            r#"{"id":7,"op":"detect_shades","image":{"path":"/data/p1/0.jpg"}}"#
        );
        let parsed: RequestEnvelope = serde_json::from_str(
            r#"{"id":8,"op":"classify_format","image":{"path":"a.png","crop":{"x0":1,"y0":2,"x1":3,"y1":4}},"title":"x"}"#,
        )
        .unwrap();
        assert!(matches!(parsed.request, Request::ClassifyFormat { .. }));
    }

    #[test]
    fn handshake_literal() {
        let h = Handshake { handshake: HANDSHAKE.into(), backend: None };
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"handshake":"MPEPRED1"}"#);
    }
}
