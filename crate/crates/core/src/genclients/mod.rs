//! Contracts for the music, image and embedding services. The pipeline only
//! sees these traits; [`mock`] provides deterministic offline stand-ins and
//! [`http`] talks to remote services.

pub mod http;
pub mod mock;

use std::fmt;

use image::ImageEncoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembler::AudioClip;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 512;

/// Packed 8-bit RGB, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbRaster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for RgbRaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RgbRaster({}x{})", self.width, self.height)
    }
}

impl RgbRaster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster dimensions must be positive"));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} bytes"),
                actual: format!("{} bytes", data.len()),
            });
        }
        Ok(RgbRaster {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        RgbRaster::new(width, height, rgb.repeat(width as usize * height as usize))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(&self.data, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::parse("png", e))?;
        Ok(buf)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::parse("png", e))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        RgbRaster::new(w, h, img.into_raw())
    }

    pub fn read_png(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        RgbRaster::decode_png(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MediaPayload {
    Audio(AudioClip),
    Image(RgbRaster),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Audio,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaAsset {
    pub payload: MediaPayload,
    pub provenance: Provenance,
    /// Idempotency key of the request that produced this asset.
    pub request_key: String,
}

impl MediaAsset {
    pub fn kind(&self) -> MediaKind {
        match self.payload {
            MediaPayload::Audio(_) => MediaKind::Audio,
            MediaPayload::Image(_) => MediaKind::Image,
        }
    }

    pub fn audio(&self) -> Option<&AudioClip> {
        match &self.payload {
            MediaPayload::Audio(a) => Some(a),
            MediaPayload::Image(_) => None,
        }
    }

    pub fn image(&self) -> Option<&RgbRaster> {
        match &self.payload {
            MediaPayload::Image(i) => Some(i),
            MediaPayload::Audio(_) => None,
        }
    }
}

fn hash_audio(h: &mut Sha256, clip: &AudioClip) {
    h.update(clip.sample_rate_hz().to_le_bytes());
    for v in clip.samples() {
        h.update(v.to_le_bytes());
    }
}

fn hash_raster(h: &mut Sha256, r: &RgbRaster) {
    h.update(r.width.to_le_bytes());
    h.update(r.height.to_le_bytes());
    h.update(&r.data);
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    digest.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicRequest {
    pub prompt: String,
    pub melody: AudioClip,
    pub duration_s: f64,
}

impl MusicRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("music request duration_s must be positive"));
        }
        if self.melody.is_empty() {
            return Err(Error::invalid("music request melody is empty"));
        }
        Ok(())
    }

    /// Content digest; identical requests share a key across retries and
    /// runs.
    pub fn request_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"music/v1\0");
        h.update(self.prompt.as_bytes());
        h.update([0]);
        h.update(self.duration_s.to_le_bytes());
        hash_audio(&mut h, &self.melody);
        hex(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRequest {
    pub prompt: String,
    pub sketch: RgbRaster,
    pub strength: f64,
    pub frame_count: usize,
    pub seed: u64,
}

impl ImageRequest {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::invalid("image request strength must lie in [0, 1]"));
        }
        if self.frame_count == 0 {
            return Err(Error::invalid("image request frame_count must be at least 1"));
        }
        Ok(())
    }

    pub fn request_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"image/v1\0");
        h.update(self.prompt.as_bytes());
        h.update([0]);
        h.update(self.strength.to_le_bytes());
        h.update((self.frame_count as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        hash_raster(&mut h, &self.sketch);
        hex(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingSpace {
    #[serde(rename = "text-image")]
    TextImage,
    #[serde(rename = "text-audio")]
    TextAudio,
}

impl EmbeddingSpace {
    pub fn tag(self) -> &'static str {
        match self {
            EmbeddingSpace::TextImage => "text-image",
            EmbeddingSpace::TextAudio => "text-audio",
        }
    }

    pub fn admits(self, item: &EmbedItem<'_>) -> bool {
        matches!(
            (self, item),
            (_, EmbedItem::Text(_))
                | (EmbeddingSpace::TextImage, EmbedItem::Image(_))
                | (EmbeddingSpace::TextAudio, EmbedItem::Audio(_))
        )
    }
}

impl fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedItem<'a> {
    Text(&'a str),
    Image(&'a RgbRaster),
    Audio(&'a AudioClip),
}

impl EmbedItem<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            EmbedItem::Text(_) => "text",
            EmbedItem::Image(_) => "image",
            EmbedItem::Audio(_) => "audio",
        }
    }

    fn content_digest(&self, space: EmbeddingSpace) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"embed/v1\0");
        h.update(space.tag().as_bytes());
        h.update([0]);
        h.update(self.kind().as_bytes());
        h.update([0]);
        match self {
            EmbedItem::Text(t) => h.update(t.as_bytes()),
            EmbedItem::Image(r) => hash_raster(&mut h, r),
            EmbedItem::Audio(a) => hash_audio(&mut h, a),
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub space: EmbeddingSpace,
    pub values: Vec<f64>,
}

pub trait MusicClient: Send + Sync {
    fn sample_rate_hz(&self) -> u32;
    fn generate(&self, request: &MusicRequest) -> Result<MediaAsset>;
}

pub trait ImageClient: Send + Sync {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<MediaAsset>>;
}

pub trait EmbeddingClient: Send + Sync {
    fn dimension(&self, space: EmbeddingSpace) -> usize;
    fn embed(&self, item: &EmbedItem<'_>, space: EmbeddingSpace) -> Result<EmbeddingVector>;
}

fn contract(message: String) -> Error {
    Error::Client {
        message,
        retryable: false,
    }
}

/// Validates the request, calls the client, and checks the reply against the
/// contract: one audio asset at the declared rate, at least `duration_s` long.
pub fn request_music(client: &dyn MusicClient, request: &MusicRequest) -> Result<MediaAsset> {
    request.validate()?;
    let asset = client.generate(request)?;
    let rate = client.sample_rate_hz();
    let clip = asset
        .audio()
        .ok_or_else(|| contract("music service returned a non-audio asset".into()))?;
    if clip.sample_rate_hz() != rate {
        return Err(contract(format!(
            "music service declared {rate} Hz but returned {} Hz",
            clip.sample_rate_hz()
        )));
    }
    let needed = (request.duration_s * rate as f64).ceil() as usize;
    if clip.len() < needed {
        return Err(contract(format!(
            "music service returned {} samples, {needed} required",
            clip.len()
        )));
    }
    Ok(asset)
}

pub fn request_image_sequence(
    client: &dyn ImageClient,
    request: &ImageRequest,
) -> Result<Vec<MediaAsset>> {
    request.validate()?;
    let frames = client.generate(request)?;
    if frames.len() != request.frame_count {
        return Err(contract(format!(
            "image service returned {} frames, {} requested",
            frames.len(),
            request.frame_count
        )));
    }
    for f in &frames {
        let img = f
            .image()
            .ok_or_else(|| contract("image service returned a non-image asset".into()))?;
        if (img.width, img.height) != (request.sketch.width, request.sketch.height) {
            return Err(contract(format!(
                "image service returned {}x{}, sketch is {}x{}",
                img.width, img.height, request.sketch.width, request.sketch.height
            )));
        }
    }
    Ok(frames)
}

pub fn embed(
    client: &dyn EmbeddingClient,
    item: &EmbedItem<'_>,
    space: EmbeddingSpace,
) -> Result<EmbeddingVector> {
    if !space.admits(item) {
        return Err(Error::invalid(format!(
            "{} items cannot be embedded in the {space} space",
            item.kind()
        )));
    }
    let v = client.embed(item, space)?;
    let dim = client.dimension(space);
    if v.space != space || v.values.len() != dim {
        return Err(contract(format!(
            "embedding service returned {} values in {}, expected {dim} in {space}",
            v.values.len(),
            v.space
        )));
    }
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(contract("embedding service returned non-finite values".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let data: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let r = RgbRaster::new(4, 3, data).unwrap();
        assert_eq!(RgbRaster::decode_png(&r.encode_png().unwrap()).unwrap(), r);
        assert!(RgbRaster::new(4, 3, vec![0; 5]).is_err());
        assert!(RgbRaster::decode_png(b"nope").is_err());
    }

    #[test]
    fn request_validation() {
        let melody = AudioClip::new(vec![0.1; 10], 100).unwrap();
        let mut m = MusicRequest {
            prompt: "p".into(),
            melody,
            duration_s: 0.0,
        };
        assert!(m.validate().is_err());
        m.duration_s = 1.0;
        assert!(m.validate().is_ok());
        m.melody = AudioClip::new(vec![], 100).unwrap();
        assert!(m.validate().is_err());

        let mut i = ImageRequest {
            prompt: "p".into(),
            sketch: RgbRaster::filled(2, 2, [1, 2, 3]).unwrap(),
            strength: 1.5,
            frame_count: 1,
            seed: 0,
        };
        assert!(i.validate().is_err());
        i.strength = 1.0;
        assert!(i.validate().is_ok());
        i.frame_count = 0;
        assert!(i.validate().is_err());
    }

    #[test]
    fn request_keys_track_content() {
        let melody = AudioClip::new(vec![0.1; 10], 100).unwrap();
        let a = MusicRequest {
            prompt: "p".into(),
            melody: melody.clone(),
            duration_s: 1.0,
        };
        let mut b = a.clone();
        assert_eq!(a.request_key(), b.request_key());
        b.prompt = "q".into();
        assert_ne!(a.request_key(), b.request_key());
        assert_eq!(a.request_key().len(), 64);
    }

    #[test]
    fn admissibility() {
        let clip = AudioClip::new(vec![0.0; 4], 10).unwrap();
        let img = RgbRaster::filled(1, 1, [0, 0, 0]).unwrap();
        assert!(EmbeddingSpace::TextImage.admits(&EmbedItem::Text("x")));
        assert!(EmbeddingSpace::TextImage.admits(&EmbedItem::Image(&img)));
        assert!(!EmbeddingSpace::TextImage.admits(&EmbedItem::Audio(&clip)));
        assert!(EmbeddingSpace::TextAudio.admits(&EmbedItem::Audio(&clip)));
        assert!(!EmbeddingSpace::TextAudio.admits(&EmbedItem::Image(&img)));
        assert_eq!(serde_json::to_string(&EmbeddingSpace::TextAudio).unwrap(), "\"text-audio\"");
    }
}
