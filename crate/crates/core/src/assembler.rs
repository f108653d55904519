//! Soundtrack assembly with linear crossfades, and the frame manifest that
//! keeps video in sync with it.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ValenceState;
use crate::error::{Error, Result};
use crate::timeline::AffectTimeline;
use crate::util::atomic_write;

pub const DEFAULT_CROSSFADE_S: f64 = 0.040;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !(v.abs() <= 1.0)) {
            return Err(Error::invalid(format!(
                "sample {i} = {} lies outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

pub fn seconds_to_samples(seconds: f64, sample_rate_hz: u32) -> usize {
    (seconds * sample_rate_hz as f64).round() as usize
}

/// First `round(duration_s * rate)` samples.
pub fn cut(clip: &AudioClip, duration_s: f64) -> Result<AudioClip> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("cut duration must be positive"));
    }
    cut_samples(clip, seconds_to_samples(duration_s, clip.sample_rate_hz))
}

pub fn cut_samples(clip: &AudioClip, n: usize) -> Result<AudioClip> {
    if n > clip.len() {
        return Err(Error::invalid(format!(
            "clip has {} samples, {n} requested",
            clip.len()
        )));
    }
    Ok(AudioClip {
        samples: clip.samples[..n].to_vec(),
        sample_rate_hz: clip.sample_rate_hz,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTrack {
    pub clip: AudioClip,
    /// Start of each clip in the output (where its fade-in begins), followed
    /// by the track duration.
    pub boundaries_s: Vec<f64>,
    pub clipped_samples: usize,
}

/// Overlap-adds `clips`, ramping the outgoing clip 1 -> 0 and the incoming
/// clip 0 -> 1 across `round(overlap_s * rate)` samples.
pub fn crossfade_concat(clips: &[AudioClip], overlap_s: f64) -> Result<RenderedTrack> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("no clips to concatenate"))?;
    if !(overlap_s >= 0.0) {
        return Err(Error::invalid("overlap must be non-negative"));
    }
    let rate = first.sample_rate_hz;
    if let Some(c) = clips.iter().find(|c| c.sample_rate_hz != rate) {
        return Err(Error::invalid(format!(
            "mixed sample rates: {rate} Hz and {} Hz",
            c.sample_rate_hz
        )));
    }
    let ov = seconds_to_samples(overlap_s, rate);
    if clips.len() > 1 {
        if let Some(i) = clips.iter().position(|c| c.len() <= ov) {
            return Err(Error::invalid(format!(
                "clip {i} has {} samples, not longer than the {ov}-sample overlap",
                clips[i].len()
            )));
        }
    }
    let n = clips.len();
    let total: usize = clips.iter().map(AudioClip::len).sum::<usize>() - (n - 1) * ov;
    let mut out = vec![0.0; total];
    let mut starts = Vec::with_capacity(n + 1);
    let mut pos = 0usize;
    for (i, clip) in clips.iter().enumerate() {
        starts.push(pos as f64 / rate as f64);
        let len = clip.len();
        for (j, &v) in clip.samples.iter().enumerate() {
            let mut g = 1.0;
            if i > 0 && j < ov {
                g *= j as f64 / ov as f64;
            }
            if i + 1 < n && j + ov >= len {
                g *= 1.0 - (j + ov - len) as f64 / ov as f64;
            }
            out[pos + j] += g * v;
        }
        pos += len - if i + 1 < n { ov } else { 0 };
    }
    starts.push(total as f64 / rate as f64);
    let mut clipped = 0;
    for v in &mut out {
        if v.abs() > 1.0 {
            clipped += 1;
            *v = v.clamp(-1.0, 1.0);
        }
    }
    Ok(RenderedTrack {
        clip: AudioClip {
            samples: out,
            sample_rate_hz: rate,
        },
        boundaries_s: starts,
        clipped_samples: clipped,
    })
}

/// Sample count to request per segment so that after crossfading the track
/// lasts exactly `round(total * rate)` samples: the segment's own span plus
/// one overlap on every segment but the last.
pub fn padded_segment_lengths(timeline: &AffectTimeline, sample_rate_hz: u32, overlap_s: f64) -> Vec<usize> {
    let ov = seconds_to_samples(overlap_s, sample_rate_hz);
    let n = timeline.len();
    timeline
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let span = seconds_to_samples(s.end_s, sample_rate_hz)
                - seconds_to_samples(s.start_s, sample_rate_hz);
            span + if i + 1 < n { ov } else { 0 }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub segment_index: usize,
    pub state: ValenceState,
    pub start_s: f64,
    pub end_s: f64,
    pub frames: Vec<String>,
    /// Each frame is shown for `(end_s - start_s) / frames.len()` seconds.
    pub frame_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub schema_version: u32,
    pub fps: f64,
    pub audio: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

impl VideoManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: VideoManifest =
            serde_json::from_str(text).map_err(|e| Error::parse("video manifest", e))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::parse(
                "video manifest",
                format!("unsupported schema_version {}", m.schema_version),
            ));
        }
        Ok(m)
    }
}

pub fn build_video_manifest(
    timeline: &AffectTimeline,
    frames: &[Vec<String>],
    fps: f64,
) -> Result<VideoManifest> {
    if !(fps > 0.0) {
        return Err(Error::invalid("fps must be positive"));
    }
    if frames.len() != timeline.len() {
        return Err(Error::invalid(format!(
            "{} frame groups for {} segments",
            frames.len(),
            timeline.len()
        )));
    }
    let mut entries = Vec::with_capacity(frames.len());
    for (i, (seg, group)) in timeline.segments().iter().zip(frames).enumerate() {
        if group.is_empty() {
            return Err(Error::invalid(format!("segment {i} has no frames")));
        }
        entries.push(ManifestEntry {
            segment_index: i,
            state: seg.state,
            start_s: seg.start_s,
            end_s: seg.end_s,
            frames: group.clone(),
            frame_rate_hz: group.len() as f64 / seg.duration_s(),
        });
    }
    Ok(VideoManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        fps,
        audio: None,
        entries,
    })
}

/// 16-bit mono PCM.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    let wav_err = |e: hound::Error| Error::parse("wav", e);
    let mut w = hound::WavWriter::new(&mut buf, spec).map_err(wav_err)?;
    for &v in &clip.samples {
        w.write_sample((v * i16::MAX as f64).round() as i16)
            .map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)?;
    Ok(buf.into_inner())
}

/// Accepts integer or float PCM of any width; multi-channel input is
/// averaged down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let wav_err = |e: hound::Error| Error::parse("wav", e);
    let mut r = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_err)?;
    let spec = r.spec();
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = ((1i64 << (spec.bits_per_sample - 1)) - 1) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let samples = raw
        .chunks(ch)
        .map(|frame| (frame.iter().sum::<f64>() / ch as f64).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    atomic_write(path, &encode_wav(clip)?)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}
