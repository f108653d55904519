//! The run configuration file (TOML). See `docs/config.md` for every key.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembler::DEFAULT_CROSSFADE_S;
use crate::decoder::{KRule, KnnConfig};
use crate::embedder::EncoderConfig;
use crate::error::{Error, Result};
use crate::genclients::http::HttpSettings;
use crate::genclients::mock::MOCK_MUSIC_RATE_HZ;
use crate::promptgen::{AffectWordBank, DEFAULT_WORDS_PER_PROMPT};
use crate::timeline::DEFAULT_MIN_SEGMENT_S;
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives prompt word draws, image seeds and the control permutation.
    #[serde(default)]
    pub seed: u64,
    /// Relative to the config file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Subject whose decoded trajectory drives generation; defaults to the
    /// first session.
    #[serde(default)]
    pub target_subject: Option<String>,
    #[serde(default = "default_min_segment_s")]
    pub min_segment_s: f64,
    #[serde(default = "default_crossfade_s")]
    pub crossfade_s: f64,
    #[serde(default = "default_prompt_words")]
    pub prompt_words: usize,
    #[serde(default = "default_frames")]
    pub frames_per_segment: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_strength")]
    pub image_strength: f64,
    /// Custom affect word bank; the bundled one otherwise.
    #[serde(default)]
    pub word_bank: Option<PathBuf>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub knn: KnnConfig,
    #[serde(default)]
    pub clients: ClientConfig,
    pub sessions: Vec<SessionConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_min_segment_s() -> f64 {
    DEFAULT_MIN_SEGMENT_S
}
fn default_crossfade_s() -> f64 {
    DEFAULT_CROSSFADE_S
}
fn default_prompt_words() -> usize {
    DEFAULT_WORDS_PER_PROMPT
}
fn default_frames() -> usize {
    1
}
fn default_fps() -> f64 {
    24.0
}
fn default_strength() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub mock: bool,
    pub music_url: Option<String>,
    pub image_url: Option<String>,
    pub embed_url: Option<String>,
    pub rewriter_url: Option<String>,
    /// Rewrite prompts with a language model instead of the template.
    pub use_rewriter: bool,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Segment requests in flight at once during `generate`.
    pub concurrency: usize,
    /// Rate the live music service returns.
    pub music_sample_rate_hz: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        let http = HttpSettings::default();
        ClientConfig {
            mock: false,
            music_url: None,
            image_url: None,
            embed_url: None,
            rewriter_url: None,
            use_rewriter: false,
            timeout_s: http.timeout_s,
            max_retries: http.max_retries,
            backoff_ms: http.backoff_ms,
            concurrency: 2,
            music_sample_rate_hz: MOCK_MUSIC_RATE_HZ,
        }
    }
}

impl ClientConfig {
    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings {
            timeout_s: self.timeout_s,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
            api_key: std::env::var(crate::genclients::http::ENV_API_KEY).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub subject_id: String,
    /// Channel CSV; its sidecar sits next to it unless `sidecar` is given.
    pub recording: PathBuf,
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    /// Capture log (`.json`) or line-delimited keypress records.
    pub events: PathBuf,
    /// Plain-text memory description.
    pub essay: PathBuf,
    pub sketch: PathBuf,
    pub melody: PathBuf,
    /// Falls back to the confidence stored in a capture log.
    #[serde(default)]
    pub confidence: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub max_lag_s: f64,
    /// Rate at which keypress logs are rasterized for cross-correlation.
    pub rate_hz: f64,
    pub keypress: Vec<KeypressPair>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            max_lag_s: 5.0,
            rate_hz: 10.0,
            keypress: Vec::new(),
        }
    }
}

/// One participant's viewing logs for the real and the permuted video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypressPair {
    pub subject_id: String,
    pub real: PathBuf,
    pub fake: PathBuf,
}

/// A validated config together with the exact text it was parsed from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub text: String,
    pub sha256: String,
}

impl LoadedConfig {
    /// Resolves a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn target_subject(&self) -> &str {
        self.config
            .target_subject
            .as_deref()
            .unwrap_or(&self.config.sessions[0].subject_id)
    }

    pub fn word_bank(&self) -> Result<AffectWordBank> {
        match &self.config.word_bank {
            Some(p) => AffectWordBank::load(&self.resolve(p)),
            None => Ok(AffectWordBank::default()),
        }
    }

    /// Every input file referenced by the config, as written in it.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let c = &self.config;
        let mut files = Vec::new();
        for s in &c.sessions {
            files.push(s.recording.clone());
            files.push(
                s.sidecar
                    .clone()
                    .unwrap_or_else(|| crate::data::sidecar_path(&s.recording)),
            );
            files.extend([s.events.clone(), s.essay.clone(), s.sketch.clone(), s.melody.clone()]);
        }
        files.extend(c.word_bank.clone());
        for k in &c.evaluation.keypress {
            files.extend([k.real.clone(), k.fake.clone()]);
        }
        files
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

/// Parses, fills defaults, range-checks and checks that referenced paths
/// exist.
pub fn validate_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let loaded = LoadedConfig {
        sha256: sha256_hex(text.as_bytes()),
        config,
        path: path.to_path_buf(),
        base_dir,
        text,
    };
    check_ranges(&loaded.config)?;
    for f in loaded.input_files() {
        let full = loaded.resolve(&f);
        if !full.is_file() {
            return Err(Error::Config(format!(
                "referenced file {} does not exist",
                full.display()
            )));
        }
    }
    let bank = loaded.word_bank()?;
    let smallest = bank
        .words(crate::data::ValenceState::Positive)
        .len()
        .min(bank.words(crate::data::ValenceState::Negative).len());
    if loaded.config.prompt_words > smallest {
        return Err(Error::Config(format!(
            "prompt_words = {} exceeds the {smallest} words available per polarity",
            loaded.config.prompt_words
        )));
    }
    Ok(loaded)
}

fn range(field: &str, ok: bool, requirement: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be {requirement}")))
    }
}

pub fn check_ranges(c: &PipelineConfig) -> Result<()> {
    range("crossfade_s", c.crossfade_s >= 0.0 && c.crossfade_s.is_finite(), ">= 0")?;
    range("min_segment_s", c.min_segment_s >= 0.0 && c.min_segment_s.is_finite(), ">= 0")?;
    range("frames_per_segment", c.frames_per_segment >= 1, ">= 1")?;
    range("fps", c.fps > 0.0 && c.fps.is_finite(), "> 0")?;
    range("image_strength", (0.0..=1.0).contains(&c.image_strength), "in [0, 1]")?;
    range("clients.timeout_s", c.clients.timeout_s > 0.0 && c.clients.timeout_s.is_finite(), "> 0")?;
    range("clients.concurrency", c.clients.concurrency >= 1, ">= 1")?;
    range("clients.music_sample_rate_hz", c.clients.music_sample_rate_hz > 0, "> 0")?;
    range("evaluation.max_lag_s", c.evaluation.max_lag_s >= 0.0 && c.evaluation.max_lag_s.is_finite(), ">= 0")?;
    range("evaluation.rate_hz", c.evaluation.rate_hz > 0.0 && c.evaluation.rate_hz.is_finite(), "> 0")?;
    if let KRule::Explicit(k) = c.knn.k {
        range("knn.k", k >= 1, ">= 1 or \"sqrt\"")?;
    }
    c.encoder.validate()?;
    range("sessions", c.sessions.len() >= 2, "at least two entries (leave-one-out)")?;
    let mut ids = BTreeSet::new();
    for s in &c.sessions {
        if !ids.insert(s.subject_id.as_str()) {
            return Err(Error::Config(format!("sessions: duplicate subject_id {:?}", s.subject_id)));
        }
        if let Some(conf) = s.confidence {
            range("sessions.confidence", (1..=7).contains(&conf), "in 1..=7")?;
        }
    }
    if let Some(t) = &c.target_subject {
        if !ids.contains(t.as_str()) {
            return Err(Error::Config(format!("target_subject {t:?} is not among the sessions")));
        }
    }
    for k in &c.evaluation.keypress {
        if !ids.contains(k.subject_id.as_str()) {
            return Err(Error::Config(format!(
                "evaluation.keypress: unknown subject_id {:?}",
                k.subject_id
            )));
        }
    }
    Ok(())
}
