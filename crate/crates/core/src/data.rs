//! EEG recordings, keypress valence traces and their alignment.
//!
//! Recordings live on disk as a CSV matrix (header row of channel names,
//! one row per timepoint) next to a JSON sidecar carrying the subject id
//! and sample rate. Keypress traces are either line-delimited JSON records
//! or a full capture log as exported by the browser capture tool.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;
pub const CAPTURE_LOG_SCHEMA_VERSION: u32 = 1;

/// Discrete valence label. Numeric codes are fixed and used directly by the
/// correlation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValenceState {
    Negative,
    Neutral,
    Positive,
}

impl ValenceState {
    pub const ALL: [ValenceState; 3] = [
        ValenceState::Negative,
        ValenceState::Neutral,
        ValenceState::Positive,
    ];

    pub fn code(self) -> i8 {
        match self {
            ValenceState::Negative => -1,
            ValenceState::Neutral => 0,
            ValenceState::Positive => 1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            -1 => Ok(ValenceState::Negative),
            0 => Ok(ValenceState::Neutral),
            1 => Ok(ValenceState::Positive),
            other => Err(Error::invalid(format!("unknown valence code {other}"))),
        }
    }

    /// Capture keyboard mapping: '1' positive, '3' negative, nothing else.
    pub fn from_key(key: char) -> Option<Self> {
        match key {
            '1' => Some(ValenceState::Positive),
            '3' => Some(ValenceState::Negative),
            _ => None,
        }
    }

    /// Dense index in `ALL` order.
    pub fn index(self) -> usize {
        (self.code() + 1) as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ValenceState::Negative => "negative",
            ValenceState::Neutral => "neutral",
            ValenceState::Positive => "positive",
        }
    }
}

impl fmt::Display for ValenceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ValenceState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.code())
    }
}

impl<'de> Deserialize<'de> for ValenceState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = i64::deserialize(d)?;
        ValenceState::from_code(code).map_err(serde::de::Error::custom)
    }
}

/// Multichannel EEG, `samples` is `[n_channels, n_timepoints]` in microvolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    subject_id: String,
    sample_rate_hz: f64,
    channels: Vec<String>,
    samples: Array2<f64>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        channels: Vec<String>,
        samples: Array2<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.is_empty() {
            return Err(Error::invalid("recording has no channels"));
        }
        if samples.nrows() != channels.len() {
            return Err(Error::Shape {
                expected: format!("{} channel rows", channels.len()),
                actual: format!("{} rows", samples.nrows()),
            });
        }
        if samples.ncols() == 0 {
            return Err(Error::invalid("no timepoints"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Recording {
            subject_id: subject_id.into(),
            sample_rate_hz,
            channels,
            samples,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_timepoints() as f64 / self.sample_rate_hz
    }
}

/// A keypress interval `[t_start_s, t_end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceEvent {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub state: ValenceState,
}

impl ValenceEvent {
    pub fn new(t_start_s: f64, t_end_s: f64, state: ValenceState) -> Self {
        ValenceEvent {
            t_start_s,
            t_end_s,
            state,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_start_s <= t && t < self.t_end_s
    }
}

/// Checks ordering and non-overlap of a keypress trace.
pub fn validate_events(events: &[ValenceEvent]) -> Result<()> {
    for (i, ev) in events.iter().enumerate() {
        if !(ev.t_start_s.is_finite() && ev.t_end_s.is_finite()) {
            return Err(Error::invalid(format!("event {i}: non-finite time")));
        }
        if ev.t_start_s < 0.0 || ev.t_start_s >= ev.t_end_s {
            return Err(Error::invalid(format!(
                "event {i}: need 0 <= t_start_s < t_end_s, got [{}, {})",
                ev.t_start_s, ev.t_end_s
            )));
        }
        if i > 0 {
            let prev = &events[i - 1];
            if ev.t_start_s < prev.t_start_s {
                return Err(Error::invalid(format!("event {i}: events not time-sorted")));
            }
            if ev.t_start_s < prev.t_end_s {
                return Err(Error::invalid(format!(
                    "event {i}: overlap with previous event ({} < {})",
                    ev.t_start_s, prev.t_end_s
                )));
            }
        }
    }
    Ok(())
}

/// A recording plus one valence label per timepoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    recording: Recording,
    labels: Vec<ValenceState>,
}

impl LabeledSeries {
    pub fn new(recording: Recording, labels: Vec<ValenceState>) -> Result<Self> {
        if labels.len() != recording.n_timepoints() {
            return Err(Error::Shape {
                expected: format!("{} labels", recording.n_timepoints()),
                actual: format!("{} labels", labels.len()),
            });
        }
        Ok(LabeledSeries { recording, labels })
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }

    pub fn labels(&self) -> &[ValenceState] {
        &self.labels
    }

    pub fn subject_id(&self) -> &str {
        self.recording.subject_id()
    }

    /// Same samples, different labels (used by shuffle controls).
    pub fn with_labels(&self, labels: Vec<ValenceState>) -> Result<Self> {
        LabeledSeries::new(self.recording.clone(), labels)
    }
}

/// Maps keypress intervals onto timepoints. Timepoint `i` sits at
/// `i / sample_rate_hz`; uncovered timepoints are neutral.
pub fn align_labels(recording: &Recording, events: &[ValenceEvent]) -> Result<LabeledSeries> {
    validate_events(events)?;
    let duration = recording.duration_s();
    if let Some(last) = events.last() {
        if last.t_end_s > duration {
            return Err(Error::invalid(format!(
                "event ends at {} s, beyond recording duration {} s",
                last.t_end_s, duration
            )));
        }
    }
    let rate = recording.sample_rate_hz();
    let mut labels = vec![ValenceState::Neutral; recording.n_timepoints()];
    let mut cursor = 0;
    for (i, label) in labels.iter_mut().enumerate() {
        let t = i as f64 / rate;
        while cursor < events.len() && events[cursor].t_end_s <= t {
            cursor += 1;
        }
        if cursor < events.len() && events[cursor].contains(t) {
            *label = events[cursor].state;
        }
    }
    LabeledSeries::new(recording.clone(), labels)
}

/// Sliding windows of `receptive_field` timepoints, labelled at their center
/// (the earlier of the two middle indices for even widths).
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    series: &'a LabeledSeries,
    receptive_field: usize,
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.series.recording.n_timepoints() - self.receptive_field + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn receptive_field(&self) -> usize {
        self.receptive_field
    }

    pub fn center(&self, i: usize) -> usize {
        i + (self.receptive_field - 1) / 2
    }

    pub fn label(&self, i: usize) -> ValenceState {
        self.series.labels[self.center(i)]
    }

    pub fn labels(&self) -> Vec<ValenceState> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn view(&self, i: usize) -> ArrayView2<'a, f64> {
        self.series
            .recording
            .samples
            .slice_axis(
                Axis(1),
                ndarray::Slice::from(i..i + self.receptive_field),
            )
    }

    pub fn iter(&self) -> impl Iterator<Item = (ArrayView2<'a, f64>, ValenceState)> + '_ {
        (0..self.len()).map(move |i| (self.view(i), self.label(i)))
    }

    pub fn to_vec(&self) -> Vec<(Array2<f64>, ValenceState)> {
        self.iter().map(|(w, l)| (w.to_owned(), l)).collect()
    }
}

pub fn extract_windows(series: &LabeledSeries, receptive_field: usize) -> Result<Windows<'_>> {
    if receptive_field == 0 {
        return Err(Error::invalid("receptive_field must be >= 1"));
    }
    let n = series.recording.n_timepoints();
    if n < receptive_field {
        return Err(Error::invalid(format!(
            "recording has {n} timepoints, shorter than receptive field {receptive_field}"
        )));
    }
    Ok(Windows {
        series,
        receptive_field,
    })
}

/// Everything collected for one participant's recall session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionBundle {
    pub labeled: LabeledSeries,
    pub essay_text: String,
    pub sketch_ref: PathBuf,
    pub melody_ref: PathBuf,
    pub confidence: u8,
}

impl SessionBundle {
    pub fn new(
        labeled: LabeledSeries,
        essay_text: String,
        sketch_ref: PathBuf,
        melody_ref: PathBuf,
        confidence: u8,
    ) -> Result<Self> {
        if !(1..=7).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence must be in 1..=7, got {confidence}"
            )));
        }
        Ok(SessionBundle {
            labeled,
            essay_text,
            sketch_ref,
            melody_ref,
            confidence,
        })
    }
}

/// Sidecar metadata stored next to a recording CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub schema_version: u32,
    pub subject_id: String,
    pub sample_rate_hz: f64,
}

/// Which columns to read, and where the sidecar lives.
#[derive(Debug, Clone, Default)]
pub struct ColumnSpec {
    /// Subset of channel columns, in the order given. `None` keeps all columns
    /// in file order.
    pub channels: Option<Vec<String>>,
    /// Defaults to the CSV path with a `.json` extension.
    pub sidecar: Option<PathBuf>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn load_recording(path: &Path, schema: &ColumnSpec) -> Result<Recording> {
    let sidecar = schema.sidecar.clone().unwrap_or_else(|| sidecar_path(path));
    let meta_text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: RecordingMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::parse(sidecar.display().to_string(), e))?;
    if meta.schema_version != SIDECAR_SCHEMA_VERSION {
        return Err(Error::parse(
            sidecar.display().to_string(),
            format!("unsupported sidecar schema_version {}", meta.schema_version),
        ));
    }
    if !(meta.sample_rate_hz > 0.0) {
        return Err(Error::invalid(format!(
            "sample_rate_hz must be positive, got {}",
            meta.sample_rate_hz
        )));
    }

    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return Err(Error::parse(&ctx, e)),
    };
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::invalid("no timepoints"));
    }
    let selected: Vec<usize> = match &schema.channels {
        None => (0..header.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::parse(&ctx, format!("no column named {n:?}")))
            })
            .collect::<Result<_>>()?,
    };
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&ctx, format!("inconsistent row lengths: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::parse(
                &ctx,
                format!(
                    "inconsistent row lengths: row {} has {} fields, header has {}",
                    row_idx + 2,
                    record.len(),
                    header.len()
                ),
            ));
        }
        for (out, &col) in columns.iter_mut().zip(&selected) {
            let cell = record[col].trim();
            let value: f64 = cell.parse().map_err(|_| {
                Error::parse(&ctx, format!("non-numeric cell {cell:?} at row {}", row_idx + 2))
            })?;
            if !value.is_finite() {
                return Err(Error::invalid("non-finite sample"));
            }
            out.push(value);
        }
    }
    let n_t = columns.first().map_or(0, Vec::len);
    if n_t == 0 {
        return Err(Error::invalid("no timepoints"));
    }
    let mut samples = Array2::zeros((selected.len(), n_t));
    for (c, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            samples[[c, t]] = *v;
        }
    }
    let channels = selected.iter().map(|&i| header[i].clone()).collect();
    Recording::new(meta.subject_id, meta.sample_rate_hz, channels, samples)
}

/// Writes the CSV matrix and its sidecar (`<stem>.json`).
pub fn write_recording(recording: &Recording, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let to_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
    writer.write_record(recording.channels()).map_err(to_err)?;
    for t in 0..recording.n_timepoints() {
        let row: Vec<String> = recording
            .samples()
            .column(t)
            .iter()
            .map(|v| v.to_string())
            .collect();
        writer.write_record(&row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    let meta = RecordingMeta {
        schema_version: SIDECAR_SCHEMA_VERSION,
        subject_id: recording.subject_id().to_string(),
        sample_rate_hz: recording.sample_rate_hz(),
    };
    let sidecar = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureKind {
    Recall,
    VideoEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    Both,
    Real,
    Fake,
    Neither,
}

/// Keypress log exported by the browser capture tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureLog {
    pub schema_version: u32,
    pub session_kind: CaptureKind,
    pub subject_id: String,
    pub start_wall_clock: String,
    pub intervals: Vec<ValenceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Preference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_lost: Option<Vec<f64>>,
}

impl CaptureLog {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CAPTURE_LOG_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported capture log schema_version {}",
                self.schema_version
            )));
        }
        validate_events(&self.intervals)?;
        if let Some(c) = self.confidence {
            if !(1..=7).contains(&c) {
                return Err(Error::invalid(format!("confidence must be in 1..=7, got {c}")));
            }
            if self.session_kind != CaptureKind::Recall {
                return Err(Error::invalid("confidence is only recorded for recall sessions"));
            }
        }
        if self.preference.is_some() && self.session_kind != CaptureKind::VideoEval {
            return Err(Error::invalid("preference is only recorded for video-eval sessions"));
        }
        Ok(())
    }
}

pub fn parse_capture_log(text: &str) -> Result<CaptureLog> {
    let log: CaptureLog =
        serde_json::from_str(text).map_err(|e| Error::parse("capture log", e))?;
    log.validate()?;
    Ok(log)
}

/// One `{"t_start_s":..,"t_end_s":..,"state":..}` object per line; blank lines
/// are skipped.
pub fn parse_event_lines(text: &str) -> Result<Vec<ValenceEvent>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ev: ValenceEvent = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("event line {}", i + 1), e))?;
        events.push(ev);
    }
    validate_events(&events)?;
    Ok(events)
}

pub fn format_event_lines(events: &[ValenceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&serde_json::to_string(ev).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Reads a keypress trace: `.json` files are capture logs, anything else is
/// line-delimited records.
pub fn load_events(path: &Path) -> Result<Vec<ValenceEvent>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_log = path.extension().is_some_and(|e| e == "json");
    if is_log {
        parse_capture_log(&text).map(|log| log.intervals)
    } else {
        parse_event_lines(&text).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{}: {context}", path.display()),
                message,
            },
            other => other,
        })
    }
}

/// Inverse of `align_labels` for traces built from per-timepoint labels:
/// every non-neutral run becomes one event.
pub fn labels_to_events(labels: &[ValenceState], sample_rate_hz: f64) -> Vec<ValenceEvent> {
    let mut events = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let state = labels[i];
        let start = i;
        while i < labels.len() && labels[i] == state {
            i += 1;
        }
        if state != ValenceState::Neutral {
            events.push(ValenceEvent::new(
                start as f64 / sample_rate_hz,
                i as f64 / sample_rate_hz,
                state,
            ));
        }
    }
    events
}
