//! JSON-over-HTTP clients. Wire schemas are documented in
//! `docs/wire-protocol.md`.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    EmbedItem, EmbeddingClient, EmbeddingSpace, EmbeddingVector, ImageClient, ImageRequest,
    MediaAsset, MediaPayload, MusicClient, MusicRequest, Provenance, RgbRaster, EMBEDDING_DIM,
};
use crate::assembler::{decode_wav, encode_wav};
use crate::error::{Error, Result};
use crate::promptgen::{RewriteRequest, Rewriter};

pub const WIRE_SCHEMA_VERSION: u32 = 1;

pub const ENV_MUSIC_URL: &str = "RYM_MUSIC_URL";
pub const ENV_IMAGE_URL: &str = "RYM_IMAGE_URL";
pub const ENV_EMBED_URL: &str = "RYM_EMBED_URL";
pub const ENV_REWRITER_URL: &str = "RYM_REWRITER_URL";
pub const ENV_API_KEY: &str = "RYM_API_KEY";

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

/// The environment variable wins over the configured value.
pub fn endpoint_from_env(var: &str, configured: Option<&str>) -> Option<String> {
    std::env::var(var)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .or_else(|| configured.map(str::to_string))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Delay before retry `n` (0-based) is `backoff_ms * 2^n`.
    pub backoff_ms: u64,
    pub api_key: Option<String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            timeout_s: 120.0,
            max_retries: 3,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

struct Transport {
    agent: ureq::Agent,
    base_url: String,
    settings: HttpSettings,
}

fn transport_error(url: &str, e: ureq::Error) -> Error {
    let retryable = matches!(
        e,
        ureq::Error::Timeout(_)
            | ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::Protocol(_)
            | ureq::Error::BodyStalled
    );
    Error::Client {
        message: format!("{url}: {e}"),
        retryable,
    }
}

impl Transport {
    fn new(base_url: &str, settings: HttpSettings) -> Result<Self> {
        if !(settings.timeout_s > 0.0) {
            return Err(Error::Config("client timeout must be positive".into()));
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(settings.timeout_s)))
            .http_status_as_error(false)
            .build();
        Ok(Transport {
            agent: config.into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            settings,
        })
    }

    fn once<Q: Serialize, R: DeserializeOwned>(&self, url: &str, key: &str, body: &Q) -> Result<R> {
        let mut req = self
            .agent
            .post(url)
            .header("Idempotency-Key", key)
            .header("Accept", "application/json");
        if let Some(k) = &self.settings.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let resp = req.send_json(body).map_err(|e| transport_error(url, e))?;
        let status = resp.status().as_u16();
        let mut body = resp.into_body();
        if (200..300).contains(&status) {
            return body
                .with_config()
                .limit(MAX_RESPONSE_BYTES)
                .read_json()
                .map_err(|e| Error::Client {
                    message: format!("{url}: malformed response: {e}"),
                    retryable: false,
                });
        }
        let text = body.read_to_string().unwrap_or_default();
        Err(Error::Client {
            message: format!("{url}: HTTP {status}: {}", text.trim()),
            retryable: status >= 500 || status == 429,
        })
    }

    /// Sends the same body and idempotency key on every attempt.
    fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, key: &str, body: &Q) -> Result<R> {
        let url = format!("{}{path}", self.base_url);
        let mut attempt = 0;
        loop {
            debug!("POST {url} key={key} attempt={attempt}");
            match self.once(&url, key, body) {
                Err(e) if e.is_retryable() && attempt < self.settings.max_retries => {
                    let delay = self.settings.backoff_ms.saturating_mul(1 << attempt.min(20));
                    warn!("{e}; retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn b64_decode(field: &str, text: &str) -> Result<Vec<u8>> {
    B64.decode(text).map_err(|e| Error::Client {
        message: format!("{field}: invalid base64: {e}"),
        retryable: false,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MusicWireRequest {
    pub schema_version: u32,
    pub prompt: String,
    pub duration_s: f64,
    pub melody_wav_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MusicWireResponse {
    pub audio_wav_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageWireRequest {
    pub schema_version: u32,
    pub prompt: String,
    pub sketch_png_b64: String,
    pub strength: f64,
    pub frame_count: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageWireResponse {
    pub frames_png_b64: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireRequest {
    pub schema_version: u32,
    pub space: EmbeddingSpace,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// PNG for images, WAV for audio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_b64: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireResponse {
    pub space: EmbeddingSpace,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewriteWireRequest {
    pub schema_version: u32,
    #[serde(flatten)]
    pub request: RewriteRequest,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewriteWireResponse {
    pub text: String,
}

pub struct HttpMusicClient {
    transport: Transport,
    sample_rate_hz: u32,
}

impl HttpMusicClient {
    pub fn new(base_url: &str, sample_rate_hz: u32, settings: HttpSettings) -> Result<Self> {
        Ok(HttpMusicClient {
            transport: Transport::new(base_url, settings)?,
            sample_rate_hz,
        })
    }
}

impl MusicClient for HttpMusicClient {
    fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    fn generate(&self, request: &MusicRequest) -> Result<MediaAsset> {
        request.validate()?;
        let key = request.request_key();
        let body = MusicWireRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            prompt: request.prompt.clone(),
            duration_s: request.duration_s,
            melody_wav_b64: B64.encode(encode_wav(&request.melody)?),
        };
        let resp: MusicWireResponse = self.transport.post("/v1/music", &key, &body)?;
        let clip = decode_wav(&b64_decode("audio_wav_b64", &resp.audio_wav_b64)?)?;
        Ok(MediaAsset {
            payload: MediaPayload::Audio(clip),
            provenance: Provenance::Live,
            request_key: key,
        })
    }
}

pub struct HttpImageClient {
    transport: Transport,
}

impl HttpImageClient {
    pub fn new(base_url: &str, settings: HttpSettings) -> Result<Self> {
        Ok(HttpImageClient {
            transport: Transport::new(base_url, settings)?,
        })
    }
}

impl ImageClient for HttpImageClient {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<MediaAsset>> {
        request.validate()?;
        let key = request.request_key();
        let body = ImageWireRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            prompt: request.prompt.clone(),
            sketch_png_b64: B64.encode(request.sketch.encode_png()?),
            strength: request.strength,
            frame_count: request.frame_count,
            seed: request.seed,
        };
        let resp: ImageWireResponse = self.transport.post("/v1/images", &key, &body)?;
        resp.frames_png_b64
            .iter()
            .map(|f| {
                Ok(MediaAsset {
                    payload: MediaPayload::Image(RgbRaster::decode_png(&b64_decode(
                        "frames_png_b64",
                        f,
                    )?)?),
                    provenance: Provenance::Live,
                    request_key: key.clone(),
                })
            })
            .collect()
    }
}

pub struct HttpEmbeddingClient {
    transport: Transport,
    dimension: usize,
}

impl HttpEmbeddingClient {
    pub fn new(base_url: &str, settings: HttpSettings) -> Result<Self> {
        Ok(HttpEmbeddingClient {
            transport: Transport::new(base_url, settings)?,
            dimension: EMBEDDING_DIM,
        })
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn dimension(&self, _space: EmbeddingSpace) -> usize {
        self.dimension
    }

    fn embed(&self, item: &EmbedItem<'_>, space: EmbeddingSpace) -> Result<EmbeddingVector> {
        let (text, data) = match item {
            EmbedItem::Text(t) => (Some(t.to_string()), None),
            EmbedItem::Image(r) => (None, Some(B64.encode(r.encode_png()?))),
            EmbedItem::Audio(a) => (None, Some(B64.encode(encode_wav(a)?))),
        };
        let key: String = item
            .content_digest(space)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let body = EmbedWireRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            space,
            kind: item.kind().to_string(),
            text,
            data_b64: data,
        };
        let resp: EmbedWireResponse = self.transport.post("/v1/embeddings", &key, &body)?;
        Ok(EmbeddingVector {
            space: resp.space,
            values: resp.values,
        })
    }
}

pub struct HttpRewriter {
    transport: Transport,
}

impl HttpRewriter {
    pub fn new(base_url: &str, settings: HttpSettings) -> Result<Self> {
        Ok(HttpRewriter {
            transport: Transport::new(base_url, settings)?,
        })
    }
}

impl Rewriter for HttpRewriter {
    fn rewrite(&self, request: &RewriteRequest) -> Result<String> {
        let body = RewriteWireRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            request: request.clone(),
        };
        let json = serde_json::to_vec(&body).expect("rewrite request serializes");
        let key: String = Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect();
        let resp: RewriteWireResponse = self.transport.post("/v1/rewrite", &key, &body)?;
        Ok(resp.text)
    }
}
