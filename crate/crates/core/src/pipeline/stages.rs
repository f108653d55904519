//! What each stage reads and writes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assembler::{
    build_video_manifest, crossfade_concat, cut_samples, encode_wav, padded_segment_lengths,
    read_wav, seconds_to_samples, AudioClip,
};
use crate::data::{
    align_labels, labels_to_events, load_events, load_recording, parse_capture_log, CaptureKind, ColumnSpec,
    LabeledSeries, Preference, SessionBundle, ValenceEvent, ValenceState,
};
use crate::decoder::{leave_one_out_observed, prior_chance_f1, EvalReport};
use crate::embedder::{decode_checkpoint, encode_checkpoint, train};
use crate::error::{Error, Result};
use crate::evalsuite::audio::mel_spectrogram;
use crate::evalsuite::stats::{crosscorr_curve, state_codes, wilcoxon_ranksum_test, RankSumResult};
use crate::evalsuite::{
    affect_attribute_correlation, best_crosscorr, embedding_distance, extract_attributes, Attribute, AttributeRow,
    CrossCorrResult, EmbeddingMetric,
};
use crate::genclients::http::{
    endpoint_from_env, HttpEmbeddingClient, HttpImageClient, HttpMusicClient, HttpRewriter, ENV_EMBED_URL,
    ENV_IMAGE_URL, ENV_MUSIC_URL, ENV_REWRITER_URL,
};
use crate::genclients::mock::{MockEmbeddingClient, MockImageClient, MockMusicClient};
use crate::genclients::{
    embed, request_image_sequence, request_music, EmbedItem, EmbeddingClient, EmbeddingSpace, EmbeddingVector,
    ImageClient, ImageRequest, MusicClient, MusicRequest, Provenance, RgbRaster,
};
use crate::promptgen::{select_affect_words, synthesize_prompt, EchoRewriter, PromptSpec, Rewriter};
use crate::timeline::{permute, smooth, to_timeline, AffectTimeline};
use crate::util::sha256_hex;

use super::{Run, Stage, StageWriter};

pub const EVALUATION_REPORT_SCHEMA_VERSION: u32 = 1;

const SEGMENT_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const CONTROL_SEED_SALT: u64 = 0xC0_47_50_4C;
const MEL_WINDOW: usize = 2048;
const MEL_HOP: usize = 1024;
const MEL_BANDS: usize = 64;

pub(crate) fn execute(run: &Run, stage: Stage, w: &mut StageWriter) -> Result<()> {
    match stage {
        Stage::Ingest => ingest(run, w),
        Stage::Train => train_stage(run, w),
        Stage::Decode => decode(run, w),
        Stage::Timeline => timeline(run, w),
        Stage::Prompts => prompts(run, w),
        Stage::Generate => generate(run, w),
        Stage::Assemble => assemble(run, w),
        Stage::Evaluate => evaluate(run, w),
        Stage::Report => report(run, w),
    }
}

fn read_json<T: DeserializeOwned>(run: &Run, rel: &str) -> Result<T> {
    let path = run.path(rel);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(rel, e))
}

fn read_timeline(run: &Run, rel: &str) -> Result<AffectTimeline> {
    let path = run.path(rel);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    AffectTimeline::from_json(&text)
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn segment_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(SEGMENT_SEED_MIX)
}

fn load_sessions(run: &Run) -> Result<Vec<SessionBundle>> {
    read_json(run, Stage::Ingest.primary_artifact())
}

fn target_bundle<'a>(run: &Run, sessions: &'a [SessionBundle]) -> Result<&'a SessionBundle> {
    let target = run.config().target_subject();
    sessions
        .iter()
        .find(|b| b.labeled.subject_id() == target)
        .ok_or_else(|| Error::invalid(format!("target subject {target:?} missing from ingest output")))
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    subject_id: String,
    n_channels: usize,
    n_timepoints: usize,
    sample_rate_hz: f64,
    /// Timepoints per state, negative / neutral / positive.
    label_counts: [usize; 3],
    n_events: usize,
    confidence: u8,
}

/// Recall events plus the confidence a capture log may carry.
fn recall_events(path: &Path, subject: &str) -> Result<(Vec<ValenceEvent>, Option<u8>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let log = parse_capture_log(&text).map_err(|e| in_file(path, e))?;
        if log.subject_id != subject {
            return Err(Error::invalid(format!(
                "{}: capture log is for subject {:?}, not {subject:?}",
                path.display(),
                log.subject_id
            )));
        }
        if log.session_kind != CaptureKind::Recall {
            return Err(Error::invalid(format!("{}: expected a recall capture log", path.display())));
        }
        Ok((log.intervals, log.confidence))
    } else {
        Ok((load_events(path)?, None))
    }
}

fn ingest(run: &Run, w: &mut StageWriter) -> Result<()> {
    let cfg = run.config();
    let mut bundles = Vec::new();
    let mut summary = Vec::new();
    for s in &cfg.config.sessions {
        let csv = cfg.resolve(&s.recording);
        let spec = ColumnSpec {
            channels: s.channels.clone(),
            sidecar: s.sidecar.as_ref().map(|p| cfg.resolve(p)),
        };
        let recording = load_recording(&csv, &spec).map_err(|e| in_file(&csv, e))?;
        if recording.subject_id() != s.subject_id {
            return Err(Error::invalid(format!(
                "{}: sidecar subject_id {:?} does not match session {:?}",
                csv.display(),
                recording.subject_id(),
                s.subject_id
            )));
        }
        let events_path = cfg.resolve(&s.events);
        let (events, logged_confidence) = recall_events(&events_path, &s.subject_id)?;
        let labeled = align_labels(&recording, &events).map_err(|e| in_file(&events_path, e))?;
        let confidence = s.confidence.or(logged_confidence).ok_or_else(|| {
            Error::Config(format!(
                "session {:?}: no confidence in the config or its capture log",
                s.subject_id
            ))
        })?;
        let essay_path = cfg.resolve(&s.essay);
        let essay = fs::read_to_string(&essay_path).map_err(|e| Error::io(&essay_path, e))?;
        let essay = essay.trim().to_string();
        if essay.is_empty() {
            return Err(Error::invalid(format!("{}: essay is empty", essay_path.display())));
        }
        let sketch = cfg.resolve(&s.sketch);
        RgbRaster::read_png(&sketch).map_err(|e| in_file(&sketch, e))?;
        let melody = cfg.resolve(&s.melody);
        read_wav(&melody).map_err(|e| in_file(&melody, e))?;

        let mut label_counts = [0usize; 3];
        for l in labeled.labels() {
            label_counts[l.index()] += 1;
        }
        summary.push(IngestSummary {
            subject_id: s.subject_id.clone(),
            n_channels: recording.n_channels(),
            n_timepoints: recording.n_timepoints(),
            sample_rate_hz: recording.sample_rate_hz(),
            label_counts,
            n_events: events.len(),
            confidence,
        });
        bundles.push(SessionBundle::new(labeled, essay, sketch, melody, confidence)?);
    }
    w.json("sessions.json", &bundles)?;
    w.json("summary.json", &summary)
}

fn train_stage(run: &Run, w: &mut StageWriter) -> Result<()> {
    let sessions = load_sessions(run)?;
    let labeled: Vec<LabeledSeries> = sessions.into_iter().map(|b| b.labeled).collect();
    let model = train(&labeled, &run.config().config.encoder)?;
    w.write("model.ckpt", &encode_checkpoint(&model))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in model.loss_history.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    w.text("loss.csv", &csv)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct FoldRecord {
    held_out: String,
    training_subjects: Vec<String>,
    n_train: usize,
    k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DecodingSummary {
    report: EvalReport,
    /// Class-prior chance level per held-out subject.
    chance_f1: BTreeMap<String, f64>,
    mean_chance_f1: f64,
    folds: Vec<FoldRecord>,
}

/// Window-level predictions for one held-out subject. Window `i` is labelled
/// at timepoint `first_center + i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TraceRecord {
    subject_id: String,
    sample_rate_hz: f64,
    n_timepoints: usize,
    first_center: usize,
    predictions: Vec<ValenceState>,
    truth: Vec<ValenceState>,
}

fn decode(run: &Run, w: &mut StageWriter) -> Result<()> {
    let sessions = load_sessions(run)?;
    let labeled: Vec<LabeledSeries> = sessions.into_iter().map(|b| b.labeled).collect();
    let ckpt = run.path(Stage::Train.primary_artifact());
    let bytes = fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let model = decode_checkpoint(&bytes)?;
    let folds = Mutex::new(Vec::new());
    let loo = leave_one_out_observed(&model, &labeled, &run.config().config.knn, |f| {
        folds.lock().expect("fold log").push(FoldRecord {
            held_out: f.held_out.clone(),
            training_subjects: f.training_subjects.clone(),
            n_train: f.n_train,
            k: f.k,
        })
    })?;
    let mut folds = folds.into_inner().expect("fold log");
    folds.sort_by(|a, b| a.held_out.cmp(&b.held_out));

    let rf = model.config.receptive_field;
    let mut chance_f1 = BTreeMap::new();
    let mut traces = Vec::new();
    for (trace, truth) in loo.traces.iter().zip(&loo.truth) {
        let series = labeled
            .iter()
            .find(|s| s.subject_id() == trace.subject_id)
            .expect("trace for a known subject");
        chance_f1.insert(trace.subject_id.clone(), prior_chance_f1(truth));
        traces.push(TraceRecord {
            subject_id: trace.subject_id.clone(),
            sample_rate_hz: series.recording().sample_rate_hz(),
            n_timepoints: series.recording().n_timepoints(),
            first_center: (rf - 1) / 2,
            predictions: trace.predictions.clone(),
            truth: truth.clone(),
        });
    }
    let mean_chance_f1 = chance_f1.values().sum::<f64>() / chance_f1.len() as f64;
    log::info!("leave-one-out mean weighted F1 {:.4} (chance {mean_chance_f1:.4})", loo.report.mean_f1);
    w.json(
        "decoding.json",
        &DecodingSummary {
            report: loo.report.clone(),
            chance_f1,
            mean_chance_f1,
            folds,
        },
    )?;
    w.text("report.txt", &loo.report.table())?;
    w.json("traces.json", &traces)
}

/// Spreads window predictions back onto timepoints; the edges, which no
/// window is centred on, take the nearest window's label.
fn per_timepoint(trace: &TraceRecord) -> Result<Vec<ValenceState>> {
    if trace.predictions.is_empty() {
        return Err(Error::invalid(format!("no predictions for {}", trace.subject_id)));
    }
    let last = trace.predictions.len() - 1;
    Ok((0..trace.n_timepoints)
        .map(|t| trace.predictions[t.saturating_sub(trace.first_center).min(last)])
        .collect())
}

fn timeline(run: &Run, w: &mut StageWriter) -> Result<()> {
    let cfg = &run.config().config;
    let traces: Vec<TraceRecord> = read_json(run, Stage::Decode.primary_artifact())?;
    let target = run.config().target_subject();
    let trace = traces
        .iter()
        .find(|t| t.subject_id == target)
        .ok_or_else(|| Error::invalid(format!("no decoded trace for target subject {target:?}")))?;
    let raw = to_timeline(&per_timepoint(trace)?, trace.sample_rate_hz)?;
    let smoothed = smooth(&raw, cfg.min_segment_s)?;
    log::info!("timeline: {} raw segments, {} after smoothing", raw.len(), smoothed.len());
    w.text("raw_timeline.json", &raw.to_json())?;
    w.text("timeline.json", &smoothed.to_json())?;
    match permute(&smoothed, cfg.seed ^ CONTROL_SEED_SALT) {
        Ok(control) => w.text("control_timeline.json", &control.to_json()),
        Err(e) => {
            log::warn!("no control timeline: {e}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SegmentPrompt {
    segment_index: usize,
    state: ValenceState,
    start_s: f64,
    end_s: f64,
    seed: u64,
    prompt: PromptSpec,
}

fn rewriter(run: &Run) -> Result<Option<Box<dyn Rewriter>>> {
    let clients = &run.config().config.clients;
    if !clients.use_rewriter {
        return Ok(None);
    }
    if run.mock() {
        return Ok(Some(Box::new(EchoRewriter)));
    }
    let url = endpoint_from_env(ENV_REWRITER_URL, clients.rewriter_url.as_deref())
        .ok_or_else(|| missing_endpoint("rewriter_url", ENV_REWRITER_URL))?;
    Ok(Some(Box::new(HttpRewriter::new(&url, clients.http_settings())?)))
}

fn missing_endpoint(key: &str, var: &str) -> Error {
    Error::Config(format!("live mode needs clients.{key} or {var}"))
}

fn prompts(run: &Run, w: &mut StageWriter) -> Result<()> {
    let cfg = &run.config().config;
    let sessions = load_sessions(run)?;
    let base = &target_bundle(run, &sessions)?.essay_text;
    let tl = read_timeline(run, Stage::Timeline.primary_artifact())?;
    let bank = run.config().word_bank()?;
    let rewriter = rewriter(run)?;
    let out = tl
        .segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let seed = segment_seed(cfg.seed, i);
            let words = select_affect_words(&bank, seg.state, cfg.prompt_words, seed)?;
            let prompt = synthesize_prompt(base, seg.state, &words, rewriter.as_deref())?;
            Ok(SegmentPrompt {
                segment_index: i,
                state: seg.state,
                start_s: seg.start_s,
                end_s: seg.end_s,
                seed,
                prompt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    w.json("prompts.json", &out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SegmentAssets {
    segment_index: usize,
    state: ValenceState,
    /// Files relative to the generate directory.
    audio: String,
    audio_samples: usize,
    sample_rate_hz: u32,
    frames: Vec<String>,
    music_request_key: String,
    image_request_key: String,
    provenance: Provenance,
}

fn music_client(run: &Run) -> Result<Box<dyn MusicClient>> {
    if run.mock() {
        return Ok(Box::new(MockMusicClient));
    }
    let c = &run.config().config.clients;
    let url = endpoint_from_env(ENV_MUSIC_URL, c.music_url.as_deref())
        .ok_or_else(|| missing_endpoint("music_url", ENV_MUSIC_URL))?;
    Ok(Box::new(HttpMusicClient::new(&url, c.music_sample_rate_hz, c.http_settings())?))
}

fn image_client(run: &Run) -> Result<Box<dyn ImageClient>> {
    if run.mock() {
        return Ok(Box::new(MockImageClient));
    }
    let c = &run.config().config.clients;
    let url = endpoint_from_env(ENV_IMAGE_URL, c.image_url.as_deref())
        .ok_or_else(|| missing_endpoint("image_url", ENV_IMAGE_URL))?;
    Ok(Box::new(HttpImageClient::new(&url, c.http_settings())?))
}

fn embedding_client(run: &Run) -> Result<Box<dyn EmbeddingClient>> {
    if run.mock() {
        return Ok(Box::new(MockEmbeddingClient));
    }
    let c = &run.config().config.clients;
    let url = endpoint_from_env(ENV_EMBED_URL, c.embed_url.as_deref())
        .ok_or_else(|| missing_endpoint("embed_url", ENV_EMBED_URL))?;
    Ok(Box::new(HttpEmbeddingClient::new(&url, c.http_settings())?))
}

struct Generated {
    audio: AudioClip,
    frames: Vec<RgbRaster>,
    music_key: String,
    image_key: String,
    provenance: Provenance,
}

fn generate(run: &Run, w: &mut StageWriter) -> Result<()> {
    let cfg = &run.config().config;
    let sessions = load_sessions(run)?;
    let target = target_bundle(run, &sessions)?;
    let melody = read_wav(&target.melody_ref)?;
    let sketch = RgbRaster::read_png(&target.sketch_ref)?;
    let tl = read_timeline(run, Stage::Timeline.primary_artifact())?;
    let prompts: Vec<SegmentPrompt> = read_json(run, Stage::Prompts.primary_artifact())?;
    if prompts.len() != tl.len() {
        return Err(Error::invalid(format!(
            "{} prompts for {} timeline segments",
            prompts.len(),
            tl.len()
        )));
    }
    let music = music_client(run)?;
    let images = image_client(run)?;
    let rate = music.sample_rate_hz();
    let lengths = padded_segment_lengths(&tl, rate, cfg.crossfade_s);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.clients.concurrency)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let one = |p: &SegmentPrompt, len: usize| -> Result<Generated> {
        let text = &p.prompt.final_prompt;
        let asset = request_music(
            music.as_ref(),
            &MusicRequest {
                prompt: text.clone(),
                melody: melody.clone(),
                duration_s: len as f64 / rate as f64,
            },
        )?;
        let provenance = asset.provenance;
        let music_key = asset.request_key.clone();
        let audio = cut_samples(asset.audio().expect("checked by request_music"), len)?;
        let request = ImageRequest {
            prompt: text.clone(),
            sketch: sketch.clone(),
            strength: cfg.image_strength,
            frame_count: cfg.frames_per_segment,
            seed: p.seed,
        };
        let frames = request_image_sequence(images.as_ref(), &request)?
            .into_iter()
            .map(|a| a.image().cloned().expect("checked by request_image_sequence"))
            .collect();
        Ok(Generated {
            audio,
            frames,
            music_key,
            image_key: request.request_key(),
            provenance,
        })
    };
    let generated: Vec<Result<Generated>> = pool.install(|| {
        prompts
            .par_iter()
            .zip(lengths.par_iter())
            .map(|(p, &len)| one(p, len))
            .collect()
    });

    let mut assets = Vec::with_capacity(generated.len());
    for (p, g) in prompts.iter().zip(generated) {
        let g = g.map_err(|e| segment_error(p.segment_index, e))?;
        let audio_name = format!("seg_{:03}.wav", p.segment_index);
        w.write(&audio_name, &encode_wav(&g.audio)?)?;
        let mut frame_names = Vec::with_capacity(g.frames.len());
        for (f, frame) in g.frames.iter().enumerate() {
            let name = format!("seg_{:03}_f{f:02}.png", p.segment_index);
            w.write(&name, &frame.encode_png()?)?;
            frame_names.push(name);
        }
        assets.push(SegmentAssets {
            segment_index: p.segment_index,
            state: p.state,
            audio: audio_name,
            audio_samples: g.audio.len(),
            sample_rate_hz: g.audio.sample_rate_hz(),
            frames: frame_names,
            music_request_key: g.music_key,
            image_request_key: g.image_key,
            provenance: g.provenance,
        });
    }
    w.json("assets.json", &assets)
}

/// Prefixes the segment index, keeping the error class.
fn segment_error(index: usize, e: Error) -> Error {
    match e {
        Error::Client { message, retryable } => Error::Client {
            message: format!("segment {index}: {message}"),
            retryable,
        },
        Error::Invalid(m) => Error::Invalid(format!("segment {index}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TrackSummary {
    sample_rate_hz: u32,
    n_samples: usize,
    duration_s: f64,
    crossfade_s: f64,
    boundaries_s: Vec<f64>,
    clipped_samples: usize,
}

fn load_assets(run: &Run) -> Result<Vec<SegmentAssets>> {
    read_json(run, Stage::Generate.primary_artifact())
}

fn segment_audio(run: &Run, asset: &SegmentAssets) -> Result<AudioClip> {
    read_wav(&run.path(&format!("generate/{}", asset.audio)))
}

fn assemble(run: &Run, w: &mut StageWriter) -> Result<()> {
    let cfg = &run.config().config;
    let tl = read_timeline(run, Stage::Timeline.primary_artifact())?;
    let assets = load_assets(run)?;
    let clips = assets
        .iter()
        .map(|a| segment_audio(run, a))
        .collect::<Result<Vec<_>>>()?;
    let track = crossfade_concat(&clips, cfg.crossfade_s)?;
    let rate = track.clip.sample_rate_hz();
    let expected = seconds_to_samples(tl.total_duration_s(), rate);
    if track.clip.len() != expected {
        return Err(Error::Shape {
            expected: format!("{expected} soundtrack samples"),
            actual: format!("{}", track.clip.len()),
        });
    }
    if track.clipped_samples > 0 {
        log::warn!("soundtrack: {} samples clipped", track.clipped_samples);
    }
    w.write("soundtrack.wav", &encode_wav(&track.clip)?)?;
    let frames: Vec<Vec<String>> = assets
        .iter()
        .map(|a| a.frames.iter().map(|f| format!("generate/{f}")).collect())
        .collect();
    let mut manifest = build_video_manifest(&tl, &frames, cfg.fps)?;
    manifest.audio = Some(Stage::Assemble.primary_artifact().to_string());
    w.text("video_manifest.json", &manifest.to_json())?;
    w.json(
        "track.json",
        &TrackSummary {
            sample_rate_hz: rate,
            n_samples: track.clip.len(),
            duration_s: track.clip.duration_s(),
            crossfade_s: cfg.crossfade_s,
            boundaries_s: track.boundaries_s,
            clipped_samples: track.clipped_samples,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub attribute: String,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

/// Mean distance between a reference text and one kind of output, over the
/// segments of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    /// `essay`, `prompt`, `positive-words` or `negative-words`.
    pub reference: String,
    /// `thumbnail` or `audio`.
    pub output: String,
    pub space: EmbeddingSpace,
    pub metric: EmbeddingMetric,
    pub state: ValenceState,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypressEntry {
    pub subject_id: String,
    pub real: Option<CrossCorrResult>,
    pub fake: Option<CrossCorrResult>,
    pub preference: Option<Preference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypressSummary {
    pub rate_hz: f64,
    pub max_lag_s: f64,
    pub entries: Vec<KeypressEntry>,
    /// Best real-video coefficients against best fake-video coefficients.
    pub ranksum: Option<RankSumResult>,
    pub preferences: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub target_subject: String,
    pub decoding: EvalReport,
    pub chance_f1: BTreeMap<String, f64>,
    pub mean_chance_f1: f64,
    pub n_segments: usize,
    pub duration_s: f64,
    pub attributes: Vec<AttributeRow>,
    pub correlations: Vec<CorrelationEntry>,
    pub distances: Vec<DistanceEntry>,
    pub keypress: KeypressSummary,
}

/// Labels at `rate_hz` over `[0, duration_s)`; time `i / rate_hz` takes the
/// state of the event covering it, neutral otherwise.
pub fn rasterize(events: &[ValenceEvent], duration_s: f64, rate_hz: f64) -> Vec<ValenceState> {
    let n = (duration_s * rate_hz).round() as usize;
    let mut out = vec![ValenceState::Neutral; n];
    for ev in events {
        let lo = (ev.t_start_s * rate_hz).ceil().max(0.0) as usize;
        for (i, slot) in out.iter_mut().enumerate().skip(lo) {
            let t = i as f64 / rate_hz;
            if t >= ev.t_end_s {
                break;
            }
            if ev.contains(t) {
                *slot = ev.state;
            }
        }
    }
    out
}

fn viewing_log(path: &Path, subject: &str) -> Result<crate::data::CaptureLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let log = parse_capture_log(&text).map_err(|e| in_file(path, e))?;
    if log.session_kind != CaptureKind::VideoEval {
        return Err(Error::invalid(format!("{}: expected a video-eval capture log", path.display())));
    }
    if log.subject_id != subject {
        return Err(Error::invalid(format!(
            "{}: capture log is for subject {:?}, not {subject:?}",
            path.display(),
            log.subject_id
        )));
    }
    Ok(log)
}

fn preference_name(p: Preference) -> &'static str {
    match p {
        Preference::Both => "Both",
        Preference::Real => "Real",
        Preference::Fake => "Fake",
        Preference::Neither => "Neither",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::parse("csv output", e))?;
    }
    wtr.into_inner().map_err(|e| Error::parse("csv output", e.to_string()))
}

fn evaluate(run: &Run, w: &mut StageWriter) -> Result<()> {
    let lc = run.config();
    let sessions = load_sessions(run)?;
    let target = target_bundle(run, &sessions)?;
    let decoding: DecodingSummary = read_json(run, "decode/decoding.json")?;
    let tl = read_timeline(run, Stage::Timeline.primary_artifact())?;
    let prompts: Vec<SegmentPrompt> = read_json(run, Stage::Prompts.primary_artifact())?;
    let assets = load_assets(run)?;

    // per-segment media: first frame as thumbnail, audio cut to the span
    let mut media = Vec::with_capacity(assets.len());
    for (a, seg) in assets.iter().zip(tl.segments()) {
        let clip = segment_audio(run, a)?;
        let rate = clip.sample_rate_hz();
        let span = seconds_to_samples(seg.end_s, rate) - seconds_to_samples(seg.start_s, rate);
        let clip = cut_samples(&clip, span.min(clip.len()))?;
        let thumb = RgbRaster::read_png(&run.path(&format!("generate/{}", a.frames[0])))?;
        media.push((thumb, clip));
    }
    let attributes = media
        .par_iter()
        .enumerate()
        .map(|(i, (thumb, clip))| extract_attributes(i, tl.segments()[i].state, thumb, clip))
        .collect::<Result<Vec<_>>>()?;
    let correlations: Vec<CorrelationEntry> = Attribute::ALL
        .iter()
        .map(|&attr| match affect_attribute_correlation(&attributes, attr) {
            Ok(c) => CorrelationEntry {
                attribute: attr.name().to_string(),
                r: Some(c.r),
                p_value: Some(c.p_value),
                n: c.n,
                undefined: None,
            },
            Err(e) => CorrelationEntry {
                attribute: attr.name().to_string(),
                r: None,
                p_value: None,
                n: attributes.len(),
                undefined: Some(e.to_string()),
            },
        })
        .collect();

    let distances = semantic_distances(run, target, &prompts, &media)?;
    let (keypress, curves) = keypress_summary(run, &sessions, &tl)?;

    let soundtrack = read_wav(&run.path(Stage::Assemble.primary_artifact()))?;
    let mel = mel_spectrogram(&soundtrack, MEL_WINDOW, MEL_HOP, MEL_BANDS)?;
    let mut mel_csv = String::from("time_s");
    for c in &mel.center_hz {
        mel_csv.push_str(&format!(",{c}"));
    }
    mel_csv.push('\n');
    for (t, time) in mel.frame_times_s.iter().enumerate() {
        mel_csv.push_str(&time.to_string());
        for m in 0..mel.center_hz.len() {
            mel_csv.push_str(&format!(",{}", mel.data[[m, t]]));
        }
        mel_csv.push('\n');
    }

    let report = EvaluationReport {
        schema_version: EVALUATION_REPORT_SCHEMA_VERSION,
        target_subject: lc.target_subject().to_string(),
        decoding: decoding.report,
        chance_f1: decoding.chance_f1,
        mean_chance_f1: decoding.mean_chance_f1,
        n_segments: tl.len(),
        duration_s: tl.total_duration_s(),
        attributes,
        correlations,
        distances,
        keypress,
    };
    w.write("attributes.csv", &csv_bytes(&report.attributes)?)?;
    let mut corr_csv = String::from("attribute,r,p_value,n\n");
    for c in &report.correlations {
        corr_csv.push_str(&format!("{},{},{},{}\n", c.attribute, fmt_opt(c.r), fmt_opt(c.p_value), c.n));
    }
    w.text("correlations.csv", &corr_csv)?;
    let mut dist_csv = String::from("reference,output,space,metric,state,mean,n\n");
    for d in &report.distances {
        dist_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.reference,
            d.output,
            d.space.tag(),
            match d.metric {
                EmbeddingMetric::CosineDistance => "cosine-distance",
                EmbeddingMetric::Euclidean => "euclidean",
            },
            d.state,
            d.mean,
            d.n
        ));
    }
    w.text("distances.csv", &dist_csv)?;
    w.text("crosscorr_curves.csv", &curves)?;
    w.text("mel_spectrogram.csv", &mel_csv)?;
    w.json("eval_report.json", &report)
}

fn semantic_distances(
    run: &Run,
    target: &SessionBundle,
    prompts: &[SegmentPrompt],
    media: &[(RgbRaster, AudioClip)],
) -> Result<Vec<DistanceEntry>> {
    let client = embedding_client(run)?;
    let bank = run.config().word_bank()?;
    let positive = bank.words(ValenceState::Positive).join(", ");
    let negative = bank.words(ValenceState::Negative).join(", ");
    let mut text_cache: HashMap<(String, EmbeddingSpace), EmbeddingVector> = HashMap::new();
    let mut text_vec = |text: &str, space: EmbeddingSpace| -> Result<EmbeddingVector> {
        let key = (text.to_string(), space);
        if let Some(v) = text_cache.get(&key) {
            return Ok(v.clone());
        }
        let v = embed(client.as_ref(), &EmbedItem::Text(text), space)?;
        text_cache.insert(key, v.clone());
        Ok(v)
    };
    // (reference, output, metric, state) -> (space, sum, n)
    type Key = (String, String, i8, bool);
    let mut sums: BTreeMap<Key, (EmbeddingSpace, f64, usize)> = BTreeMap::new();
    for (p, (thumb, clip)) in prompts.iter().zip(media) {
        let outputs = [
            ("thumbnail", EmbeddingSpace::TextImage, embed(client.as_ref(), &EmbedItem::Image(thumb), EmbeddingSpace::TextImage)?),
            ("audio", EmbeddingSpace::TextAudio, embed(client.as_ref(), &EmbedItem::Audio(clip), EmbeddingSpace::TextAudio)?),
        ];
        let references = [
            ("essay", target.essay_text.as_str()),
            ("prompt", p.prompt.final_prompt.as_str()),
            ("positive-words", positive.as_str()),
            ("negative-words", negative.as_str()),
        ];
        for (ref_name, text) in references {
            for (out_name, space, out_vec) in &outputs {
                let t = text_vec(text, *space)?;
                for (euclid, metric) in [(false, EmbeddingMetric::CosineDistance), (true, EmbeddingMetric::Euclidean)] {
                    let d = embedding_distance(&t, out_vec, metric)?;
                    let e = sums
                        .entry((ref_name.to_string(), out_name.to_string(), p.state.code(), euclid))
                        .or_insert((*space, 0.0, 0));
                    e.1 += d;
                    e.2 += 1;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|((reference, output, code, euclid), (space, sum, n))| DistanceEntry {
            reference,
            output,
            space,
            metric: if euclid {
                EmbeddingMetric::Euclidean
            } else {
                EmbeddingMetric::CosineDistance
            },
            state: ValenceState::from_code(code as i64).expect("valid code"),
            mean: sum / n as f64,
            n,
        })
        .collect())
}

fn keypress_summary(
    run: &Run,
    sessions: &[SessionBundle],
    tl: &AffectTimeline,
) -> Result<(KeypressSummary, String)> {
    let lc = run.config();
    let ev = &lc.config.evaluation;
    let mut entries = Vec::new();
    let mut preferences = BTreeMap::new();
    let mut curves = String::from("subject_id,condition,lag_samples,lag_s,coefficient\n");
    for pair in &ev.keypress {
        let bundle = sessions
            .iter()
            .find(|b| b.labeled.subject_id() == pair.subject_id)
            .ok_or_else(|| Error::invalid(format!("keypress pair for unknown subject {:?}", pair.subject_id)))?;
        let rec = bundle.labeled.recording();
        let recall = labels_to_events(bundle.labeled.labels(), rec.sample_rate_hz());
        let duration = rec.duration_s().max(tl.total_duration_s());
        let a = rasterize(&recall, duration, ev.rate_hz);
        let mut results = Vec::new();
        let mut preference = None;
        for (condition, path) in [("real", &pair.real), ("fake", &pair.fake)] {
            let path = lc.resolve(path);
            let log = viewing_log(&path, &pair.subject_id)?;
            preference = preference.or(log.preference);
            let b = rasterize(&log.intervals, duration, ev.rate_hz);
            for (lag, c) in crosscorr_curve(&state_codes(&a), &state_codes(&b), ev.rate_hz, ev.max_lag_s) {
                curves.push_str(&format!(
                    "{},{condition},{lag},{},{}\n",
                    pair.subject_id,
                    lag as f64 / ev.rate_hz,
                    fmt_opt(c)
                ));
            }
            results.push(best_crosscorr(&a, &b, ev.rate_hz, ev.max_lag_s).ok());
        }
        if let Some(p) = preference {
            *preferences.entry(preference_name(p).to_string()).or_insert(0) += 1;
        }
        entries.push(KeypressEntry {
            subject_id: pair.subject_id.clone(),
            real: results[0],
            fake: results[1],
            preference,
        });
    }
    let real: Vec<f64> = entries.iter().filter_map(|e| e.real.map(|r| r.best_coefficient)).collect();
    let fake: Vec<f64> = entries.iter().filter_map(|e| e.fake.map(|r| r.best_coefficient)).collect();
    let ranksum = wilcoxon_ranksum_test(&real, &fake).ok();
    Ok((
        KeypressSummary {
            rate_hz: ev.rate_hz,
            max_lag_s: ev.max_lag_s,
            entries,
            ranksum,
            preferences,
        },
        curves,
    ))
}

fn report(run: &Run, w: &mut StageWriter) -> Result<()> {
    let eval: EvaluationReport = read_json(run, Stage::Evaluate.primary_artifact())?;
    let mut md = String::from("# Run summary\n\n");
    md.push_str(&format!("Run `{}`, tool version {}.\n\n", run.manifest().run_id, run.manifest().tool_version));
    md.push_str("## Decoding (leave one subject out)\n\n```\n");
    md.push_str(&eval.decoding.table());
    md.push_str(&format!("{:<16} {:>10.4}\n```\n\n", "chance", eval.mean_chance_f1));
    md.push_str(&format!(
        "## Timeline\n\nTarget subject `{}`: {} segments over {:.2} s.\n\n",
        eval.target_subject, eval.n_segments, eval.duration_s
    ));
    md.push_str("## Affect and attribute correlations\n\n| attribute | r | p |\n|---|---|---|\n");
    for c in &eval.correlations {
        match (c.r, c.p_value) {
            (Some(r), Some(p)) => md.push_str(&format!("| {} | {r:.4} | {p:.4} |\n", c.attribute)),
            _ => md.push_str(&format!("| {} | undefined | |\n", c.attribute)),
        }
    }
    if let Some(rs) = eval.keypress.ranksum {
        md.push_str(&format!(
            "\n## Keypress cross-correlation\n\nRank-sum test, real vs fake best coefficients: p = {:.4} ({:?}).\n",
            rs.p_value, rs.method
        ));
    }
    md.push_str("\n## Deliverables\n\n| file | sha256 |\n|---|---|\n");
    for rel in [
        Stage::Assemble.primary_artifact(),
        "assemble/video_manifest.json",
        Stage::Evaluate.primary_artifact(),
    ] {
        let path = run.path(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        md.push_str(&format!("| {rel} | {} |\n", sha256_hex(&bytes)));
    }
    md.push_str("\n## Stages\n\n| stage | wall time (s) | outputs |\n|---|---|---|\n");
    for s in &run.manifest().stages {
        md.push_str(&format!("| {} | {:.2} | {} |\n", s.stage, s.wall_time_s, s.outputs.len()));
    }
    w.text("summary.md", &md)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::decode_wav;

    #[test]
    fn rasterize_is_half_open() {
        let ev = [ValenceEvent::new(0.2, 0.5, ValenceState::Positive)];
        let r = rasterize(&ev, 1.0, 10.0);
        let codes: Vec<i8> = r.iter().map(|s| s.code()).collect();
        assert_eq!(codes, [0, 0, 1, 1, 1, 0, 0, 0, 0, 0]);
        assert!(rasterize(&[], 0.0, 10.0).is_empty());
    }

    #[test]
    fn window_predictions_cover_every_timepoint() {
        let t = TraceRecord {
            subject_id: "a".into(),
            sample_rate_hz: 1.0,
            n_timepoints: 6,
            first_center: 2,
            predictions: vec![ValenceState::Negative, ValenceState::Positive],
            truth: vec![],
        };
        let codes: Vec<i8> = per_timepoint(&t).unwrap().iter().map(|s| s.code()).collect();
        assert_eq!(codes, [-1, -1, -1, 1, 1, 1]);
    }

    #[test]
    fn segment_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| segment_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn wav_bytes_roundtrip_through_decode() {
        let clip = AudioClip::new(vec![0.0, 0.5, -0.5], 8000).unwrap();
        let back = decode_wav(&encode_wav(&clip).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
    }
}
