//! Label-conditional contrastive embedding of EEG windows.
//!
//! Each session gets its own encoder with identical architecture. Training
//! draws anchors uniformly over all windows, positives uniformly from windows
//! that share the anchor's valence label in *any* session, and a shared set of
//! label-agnostic negatives. Cross-session positives are what pulls the
//! per-session latent spaces into a common geometry.

mod checkpoint;
pub mod encoder;
mod loss;
mod sampling;

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{extract_windows, LabeledSeries};
use crate::error::{Error, Result};
use crate::util::stable_hash;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{Encoder, EncoderParams, Geometry};
pub use loss::{batch_infonce, infonce_loss, BatchLoss};
pub use sampling::{sample_contrastive_batch, ContrastiveBatch, WindowPool, WindowRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub receptive_field: usize,
    pub hidden_units: usize,
    pub out_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Stored for completeness; has no effect.
    pub hybrid: bool,
    pub optimizer: Optimizer,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            receptive_field: 10,
            hidden_units: 95,
            out_dim: 7,
            batch_size: 2048,
            learning_rate: 0.005,
            iterations: 2000,
            temperature: 1.0,
            seed: 0,
            hybrid: false,
            optimizer: Optimizer::Adam,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("receptive_field", self.receptive_field),
            ("hidden_units", self.hidden_units),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("encoder.{name} must be >= 1")));
            }
        }
        if self.out_dim < 2 {
            return Err(Error::Config("encoder.out_dim must be >= 2".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("encoder.temperature must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("encoder.learning_rate must be > 0".into()));
        }
        if self.hybrid {
            return Err(Error::Config("encoder.hybrid is not supported (must be false)".into()));
        }
        Ok(())
    }

    pub fn geometry(&self, n_channels: usize) -> Geometry {
        Geometry {
            n_channels,
            receptive_field: self.receptive_field,
            hidden: self.hidden_units,
            out_dim: self.out_dim,
        }
    }

    /// Initialization seed for one session, independent of session order.
    pub fn session_seed(&self, session_id: &str) -> u64 {
        self.seed ^ stable_hash(session_id.as_bytes())
    }
}

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::ZeroNorm);
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(Embedding(v))
    }

    /// Wraps a vector that must already be unit norm (within 1e-6).
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("embedding norm {n} is not 1")));
        }
        Ok(Embedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionEncoder {
    pub session_id: String,
    pub encoder: Encoder,
}

/// Trained per-session encoders, the config that produced them, and the loss
/// recorded at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderModel {
    pub config: EncoderConfig,
    pub sessions: Vec<SessionEncoder>,
    pub loss_history: Vec<f64>,
}

impl EmbedderModel {
    /// Seeded, untrained encoders for the given sessions.
    pub fn initialize(sessions: &[LabeledSeries], config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        if sessions.is_empty() {
            return Err(Error::invalid("need at least one session"));
        }
        let mut seen = HashSet::new();
        let mut encoders = Vec::with_capacity(sessions.len());
        for s in sessions {
            if !seen.insert(s.subject_id()) {
                return Err(Error::invalid(format!("duplicate session id {}", s.subject_id())));
            }
            let g = config.geometry(s.recording().n_channels());
            encoders.push(SessionEncoder {
                session_id: s.subject_id().to_string(),
                encoder: Encoder::seeded(g, config.session_seed(s.subject_id())),
            });
        }
        Ok(EmbedderModel {
            config: config.clone(),
            sessions: encoders,
            loss_history: Vec::new(),
        })
    }

    pub fn encoder(&self, session_id: &str) -> Result<&Encoder> {
        self.sessions
            .iter()
            .find(|s| s.session_id == session_id)
            .map(|s| &s.encoder)
            .ok_or_else(|| Error::invalid(format!("unknown session id {session_id:?}")))
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.iter().map(|s| s.session_id.as_str())
    }
}

pub fn encode(model: &EmbedderModel, session_id: &str, window: ArrayView2<'_, f64>) -> Result<Embedding> {
    let cache = model.encoder(session_id)?.forward(&[window])?;
    Ok(Embedding(cache.embeddings.row(0).to_vec()))
}

const ENCODE_CHUNK: usize = 4096;

/// Embeds every window of a series with that series' own encoder.
pub fn encode_series(model: &EmbedderModel, series: &LabeledSeries) -> Result<Vec<Embedding>> {
    let encoder = model.encoder(series.subject_id())?;
    let windows = extract_windows(series, model.config.receptive_field)?;
    let views: Vec<_> = (0..windows.len()).map(|i| windows.view(i)).collect();
    let mut out = Vec::with_capacity(views.len());
    for chunk in views.chunks(ENCODE_CHUNK) {
        let cache = encoder.forward(chunk)?;
        out.extend(cache.embeddings.rows().into_iter().map(|r| Embedding(r.to_vec())));
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum Role {
    Anchor,
    Positive,
    Negative,
}

/// Mean batch InfoNCE and its gradient for every session's parameters.
/// `sessions[i]` must correspond to `model.sessions[i]`.
pub fn contrastive_objective(
    model: &EmbedderModel,
    sessions: &[LabeledSeries],
    batch: &ContrastiveBatch,
) -> Result<(f64, Vec<EncoderParams>)> {
    if sessions.len() != model.sessions.len() {
        return Err(Error::invalid("session list does not match model"));
    }
    let rf = model.config.receptive_field;
    let d = model.config.out_dim;
    let windows: Vec<_> = sessions
        .iter()
        .map(|s| extract_windows(s, rf))
        .collect::<Result<_>>()?;

    let mut groups: Vec<Vec<(Role, usize, usize)>> = vec![Vec::new(); sessions.len()];
    let roles = [
        (Role::Anchor, &batch.anchors),
        (Role::Positive, &batch.positives),
        (Role::Negative, &batch.negatives),
    ];
    for (role, refs) in roles {
        for (pos, r) in refs.iter().enumerate() {
            groups[r.session].push((role, pos, r.window));
        }
    }

    let forwards: Vec<Option<encoder::ForwardCache>> = groups
        .par_iter()
        .enumerate()
        .map(|(s, group)| {
            if group.is_empty() {
                return Ok(None);
            }
            let views: Vec<_> = group.iter().map(|&(_, _, w)| windows[s].view(w)).collect();
            model.sessions[s].encoder.forward(&views).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut a = Array2::zeros((batch.anchors.len(), d));
    let mut p = Array2::zeros((batch.positives.len(), d));
    let mut n = Array2::zeros((batch.negatives.len(), d));
    for (group, cache) in groups.iter().zip(&forwards) {
        let Some(cache) = cache else { continue };
        for (row, &(role, pos, _)) in group.iter().enumerate() {
            let target = match role {
                Role::Anchor => &mut a,
                Role::Positive => &mut p,
                Role::Negative => &mut n,
            };
            target.row_mut(pos).assign(&cache.embeddings.row(row));
        }
    }

    let out = batch_infonce(&a, &p, &n, model.config.temperature)?;

    let grads = groups
        .par_iter()
        .zip(forwards.par_iter())
        .enumerate()
        .map(|(s, (group, cache))| {
            let enc = &model.sessions[s].encoder;
            let Some(cache) = cache else {
                return EncoderParams::zeros(enc.geometry());
            };
            let mut g = Array2::zeros((group.len(), d));
            for (row, &(role, pos, _)) in group.iter().enumerate() {
                let src = match role {
                    Role::Anchor => &out.grad_anchors,
                    Role::Positive => &out.grad_positives,
                    Role::Negative => &out.grad_negatives,
                };
                g.row_mut(row).assign(&src.row(pos));
            }
            enc.backward(cache, &g)
        })
        .collect();
    Ok((out.loss, grads))
}

struct AdamState {
    step: i32,
    m: Vec<EncoderParams>,
    v: Vec<EncoderParams>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(
    model: &mut EmbedderModel,
    grads: &[EncoderParams],
    adam: &mut Option<AdamState>,
) {
    let lr = model.config.learning_rate;
    match adam {
        None => {
            for (enc, g) in model.sessions.iter_mut().zip(grads) {
                for (w, gw) in enc.encoder.params_mut().slices_mut().into_iter().zip(g.slices()) {
                    for (x, dx) in w.iter_mut().zip(gw) {
                        *x -= lr * dx;
                    }
                }
            }
        }
        Some(state) => {
            state.step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(state.step);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.step);
            for (s, (enc, g)) in model.sessions.iter_mut().zip(grads).enumerate() {
                let params = enc.encoder.params_mut().slices_mut();
                let ms = state.m[s].slices_mut();
                let vs = state.v[s].slices_mut();
                for (((w, gw), m), v) in params.into_iter().zip(g.slices()).zip(ms).zip(vs) {
                    for i in 0..w.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gw[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gw[i] * gw[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Jointly trains one encoder per session for `config.iterations` steps.
pub fn train(sessions: &[LabeledSeries], config: &EncoderConfig) -> Result<EmbedderModel> {
    let mut model = EmbedderModel::initialize(sessions, config)?;
    if config.iterations == 0 {
        return Ok(model);
    }
    let pool = WindowPool::new(sessions, config.receptive_field)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = match config.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => Some(AdamState {
            step: 0,
            m: model
                .sessions
                .iter()
                .map(|s| EncoderParams::zeros(s.encoder.geometry()))
                .collect(),
            v: model
                .sessions
                .iter()
                .map(|s| EncoderParams::zeros(s.encoder.geometry()))
                .collect(),
        }),
    };
    model.loss_history.reserve(config.iterations);
    for step in 0..config.iterations {
        let batch = sample_contrastive_batch(&pool, config.batch_size, &mut rng);
        let (loss, grads) = match contrastive_objective(&model, sessions, &batch) {
            Ok(v) => v,
            Err(Error::ZeroNorm) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        let grads_finite = grads
            .iter()
            .all(|g| g.slices().iter().all(|s| s.iter().all(|v| v.is_finite())));
        if !loss.is_finite() || !grads_finite {
            return Err(Error::Diverged { step, loss });
        }
        apply_update(&mut model, &grads, &mut adam);
        model.loss_history.push(loss);
        if step % 100 == 0 || step + 1 == config.iterations {
            log::debug!("train step {step}: loss {loss:.5}");
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Recording, ValenceState};
    use crate::synth::{synthetic_sessions, SyntheticSpec};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            receptive_field: 4,
            hidden_units: 8,
            out_dim: 3,
            batch_size: 64,
            learning_rate: 0.01,
            iterations: 60,
            seed: 3,
            ..EncoderConfig::default()
        }
    }

    fn fixture() -> Vec<LabeledSeries> {
        synthetic_sessions(&SyntheticSpec {
            n_sessions: 3,
            n_channels: 4,
            duration_s: 30.0,
            offset_amplitude: 1.5,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = EncoderConfig::default();
        assert_eq!(
            (c.receptive_field, c.hidden_units, c.out_dim, c.batch_size, c.iterations),
            (10, 95, 7, 2048, 2000)
        );
        assert_eq!(c.learning_rate, 0.005);
        assert!(!c.hybrid);
    }

    #[test]
    fn config_validation() {
        let c = EncoderConfig {
            out_dim: 1,
            ..EncoderConfig::default()
        };
        assert!(c.validate().is_err());
        let c = EncoderConfig {
            temperature: 0.0,
            ..EncoderConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let sessions = fixture();
        let m1 = EmbedderModel::initialize(&sessions, &small_config()).unwrap();
        let m2 = EmbedderModel::initialize(&sessions, &small_config()).unwrap();
        let w = extract_windows(&sessions[0], 4).unwrap();
        let e1 = encode(&m1, sessions[0].subject_id(), w.view(10)).unwrap();
        let e2 = encode(&m2, sessions[0].subject_id(), w.view(10)).unwrap();
        assert_eq!(e1, e2);
        assert!((e1.norm() - 1.0).abs() < 1e-6);
        assert!(encode(&m1, "nobody", w.view(0)).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_norm() {
        let sessions = fixture();
        let mut m = EmbedderModel::initialize(&sessions, &small_config()).unwrap();
        for s in &mut m.sessions {
            let g = *s.encoder.geometry();
            s.encoder = Encoder::from_params(g, EncoderParams::zeros(&g)).unwrap();
        }
        let w = extract_windows(&sessions[0], 4).unwrap();
        let err = encode(&m, sessions[0].subject_id(), w.view(0)).unwrap_err();
        assert!(err.to_string().contains("zero-norm embedding"));
    }

    #[test]
    fn zero_iterations_is_initialization() {
        let sessions = fixture();
        let cfg = EncoderConfig {
            iterations: 0,
            ..small_config()
        };
        let m = train(&sessions, &cfg).unwrap();
        assert_eq!(m, EmbedderModel::initialize(&sessions, &cfg).unwrap());
        assert!(m.loss_history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_records_every_step() {
        let sessions = fixture();
        let a = train(&sessions, &small_config()).unwrap();
        let b = train(&sessions, &small_config()).unwrap();
        assert_eq!(a.loss_history.len(), 60);
        let bits = |m: &EmbedderModel| m.loss_history.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn sgd_trains_too() {
        let sessions = fixture();
        let cfg = EncoderConfig {
            optimizer: Optimizer::Sgd,
            iterations: 5,
            ..small_config()
        };
        let m = train(&sessions, &cfg).unwrap();
        assert_eq!(m.loss_history.len(), 5);
    }

    #[test]
    fn lone_label_fails_training() {
        let n = 40;
        let rec = Recording::new("x", 10.0, vec!["c".into()], Array2::ones((1, n))).unwrap();
        let mut labels = vec![ValenceState::Neutral; n];
        labels[20] = ValenceState::Positive;
        let s = LabeledSeries::new(rec, labels).unwrap();
        let cfg = EncoderConfig {
            receptive_field: 1,
            ..small_config()
        };
        assert!(matches!(train(&[s], &cfg), Err(Error::NoPositive(ValenceState::Positive))));
    }
}
