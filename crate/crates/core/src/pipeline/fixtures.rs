//! Self-contained synthetic inputs for a mock-mode run: recordings with
//! sidecars, keypress traces, essays, sketches, melodies, viewing logs and a
//! config that references them.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembler::{write_wav, AudioClip};
use crate::data::{
    format_event_lines, labels_to_events, write_recording, CaptureKind, CaptureLog, Preference, ValenceEvent,
    CAPTURE_LOG_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::genclients::RgbRaster;
use crate::synth::{synthetic_sessions, SyntheticSpec};
use crate::timeline::{expand, permute, to_timeline};

const ESSAYS: [&str; 4] = [
    "A summer afternoon at the lake with my grandmother, the dock warm under our feet",
    "Walking home through the old market after the train was cancelled",
    "The first night in a new apartment, boxes everywhere and rain on the window",
    "Learning to ride a bicycle on the gravel road behind the school",
];

const MELODY_RATE_HZ: u32 = 32_000;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub n_sessions: usize,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub offset_amplitude: f64,
    pub seed: u64,
    pub encoder_iterations: usize,
    pub encoder_batch_size: usize,
    /// Subjects (from the first) that also get real/fake viewing logs.
    pub n_viewers: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_sessions: 9,
            n_channels: 8,
            sample_rate_hz: 10.0,
            duration_s: 60.0,
            offset_amplitude: 1.0,
            seed: 7,
            encoder_iterations: 100,
            encoder_batch_size: 256,
            n_viewers: 6,
        }
    }
}

fn sketch(width: u32, height: u32, seed: u64) -> Result<RgbRaster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tint: [f64; 3] = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
    let mut data = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let g = 0.5 + 0.5 * (x as f64 / width as f64) * (1.0 - y as f64 / height as f64);
            let stroke = (x as i64 - y as i64).rem_euclid(16) < 2;
            for t in tint {
                let v = if stroke { 0.1 } else { g * t };
                data.push((v * 255.0).round() as u8);
            }
        }
    }
    RgbRaster::new(width, height, data)
}

fn melody(seed: u64) -> Result<AudioClip> {
    let notes = [261.63, 293.66, 329.63, 392.0, 440.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq: Vec<f64> = (0..4).map(|_| notes[rng.random_range(0..notes.len())]).collect();
    let n = 2 * MELODY_RATE_HZ as usize;
    let samples = (0..n)
        .map(|i| {
            let f = seq[i * seq.len() / n];
            0.3 * (TAU * f * i as f64 / MELODY_RATE_HZ as f64).sin()
        })
        .collect();
    AudioClip::new(samples, MELODY_RATE_HZ)
}

fn viewing_log(subject: &str, intervals: Vec<ValenceEvent>, preference: Option<Preference>) -> String {
    let log = CaptureLog {
        schema_version: CAPTURE_LOG_SCHEMA_VERSION,
        session_kind: CaptureKind::VideoEval,
        subject_id: subject.to_string(),
        start_wall_clock: "2024-05-02T10:00:00Z".to_string(),
        intervals,
        confidence: None,
        preference,
        focus_lost: None,
    };
    serde_json::to_string_pretty(&log).expect("capture log serializes")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the fixture tree under `dir` and returns the config path.
pub fn write_fixtures(dir: &Path, spec: &FixtureSpec) -> Result<PathBuf> {
    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    let sessions = synthetic_sessions(&SyntheticSpec {
        n_sessions: spec.n_sessions,
        n_channels: spec.n_channels,
        sample_rate_hz: spec.sample_rate_hz,
        duration_s: spec.duration_s,
        offset_amplitude: spec.offset_amplitude,
        seed: spec.seed,
        ..SyntheticSpec::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED);
    let mut config = String::new();
    writeln!(config, "# synthetic fixture run, mock clients").unwrap();
    writeln!(config, "seed = {}", spec.seed).unwrap();
    writeln!(config, "output_dir = \"runs\"").unwrap();
    writeln!(config, "min_segment_s = 1.0").unwrap();
    writeln!(config, "crossfade_s = 0.040").unwrap();
    writeln!(config, "\n[encoder]").unwrap();
    writeln!(config, "iterations = {}", spec.encoder_iterations).unwrap();
    writeln!(config, "batch_size = {}", spec.encoder_batch_size).unwrap();
    writeln!(config, "seed = {}", spec.seed).unwrap();
    writeln!(config, "\n[clients]\nmock = true\nuse_rewriter = true").unwrap();
    writeln!(config, "\n[evaluation]\nmax_lag_s = 3.0\nrate_hz = {}", spec.sample_rate_hz).unwrap();

    for (i, s) in sessions.iter().enumerate() {
        let id = s.subject_id();
        write_recording(s.recording(), &data.join(format!("{id}.csv")))?;
        let events = labels_to_events(s.labels(), spec.sample_rate_hz);
        // the first subject's trace is a browser capture log, the rest are
        // line-delimited records
        let events_name = if i == 0 {
            let log = CaptureLog {
                schema_version: CAPTURE_LOG_SCHEMA_VERSION,
                session_kind: CaptureKind::Recall,
                subject_id: id.to_string(),
                start_wall_clock: "2024-05-01T09:30:00Z".to_string(),
                intervals: events.clone(),
                confidence: Some(5),
                preference: None,
                focus_lost: None,
            };
            let name = format!("{id}_recall.json");
            write(&data.join(&name), serde_json::to_string_pretty(&log).expect("log serializes").as_bytes())?;
            name
        } else {
            let name = format!("{id}_events.jsonl");
            write(&data.join(&name), format_event_lines(&events).as_bytes())?;
            name
        };
        write(&data.join(format!("{id}.txt")), ESSAYS[i % ESSAYS.len()].as_bytes())?;
        sketch(64, 48, spec.seed + i as u64)?.encode_png().and_then(|b| write(&data.join(format!("{id}.png")), &b))?;
        write_wav(&melody(spec.seed + 100 + i as u64)?, &data.join(format!("{id}.wav")))?;

        writeln!(config, "\n[[sessions]]").unwrap();
        writeln!(config, "subject_id = \"{id}\"").unwrap();
        writeln!(config, "recording = \"data/{id}.csv\"").unwrap();
        writeln!(config, "events = \"data/{events_name}\"").unwrap();
        writeln!(config, "essay = \"data/{id}.txt\"").unwrap();
        writeln!(config, "sketch = \"data/{id}.png\"").unwrap();
        writeln!(config, "melody = \"data/{id}.wav\"").unwrap();
        if i > 0 {
            writeln!(config, "confidence = {}", rng.random_range(3..=7)).unwrap();
        }
    }

    for s in sessions.iter().take(spec.n_viewers) {
        let id = s.subject_id();
        let duration = s.recording().duration_s();
        let lag = rng.random_range(1..=5) as f64 / spec.sample_rate_hz;
        let real: Vec<ValenceEvent> = labels_to_events(s.labels(), spec.sample_rate_hz)
            .into_iter()
            .filter_map(|e| {
                let (a, b) = (e.t_start_s + lag, (e.t_end_s + lag).min(duration));
                (b > a).then(|| ValenceEvent::new(a, b, e.state))
            })
            .collect();
        let tl = to_timeline(s.labels(), spec.sample_rate_hz)?;
        let fake_labels = expand(&permute(&tl, spec.seed ^ rng.random::<u64>())?, spec.sample_rate_hz);
        let fake = labels_to_events(&fake_labels, spec.sample_rate_hz);
        let preference = [Preference::Real, Preference::Both, Preference::Fake, Preference::Neither]
            [rng.random_range(0..4)];
        write(&data.join(format!("{id}_real.json")), viewing_log(id, real, Some(preference)).as_bytes())?;
        write(&data.join(format!("{id}_fake.json")), viewing_log(id, fake, None).as_bytes())?;
        writeln!(config, "\n[[evaluation.keypress]]").unwrap();
        writeln!(config, "subject_id = \"{id}\"").unwrap();
        writeln!(config, "real = \"data/{id}_real.json\"").unwrap();
        writeln!(config, "fake = \"data/{id}_fake.json\"").unwrap();
    }

    let path = dir.join("rym.toml");
    write(&path, config.as_bytes())?;
    Ok(path)
}
