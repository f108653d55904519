//! Synthetic multi-session EEG with label-dependent channel offsets.

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{LabeledSeries, Recording, ValenceState};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_sessions: usize,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Magnitude of each state's per-channel offset.
    pub offset_amplitude: f64,
    pub noise_std: f64,
    /// Spread of the per-session channel baselines.
    pub baseline_std: f64,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_sessions: 9,
            n_channels: 8,
            sample_rate_hz: 10.0,
            duration_s: 120.0,
            offset_amplitude: 0.5,
            noise_std: 1.0,
            baseline_std: 0.5,
            min_segment_s: 4.0,
            max_segment_s: 12.0,
            seed: 2024,
        }
    }
}

/// Random piecewise-constant labels whose adjacent runs differ.
pub fn random_labels<R: Rng + ?Sized>(
    n: usize,
    rate: f64,
    min_s: f64,
    max_s: f64,
    rng: &mut R,
) -> Vec<ValenceState> {
    let mut labels = Vec::with_capacity(n);
    let mut prev: Option<ValenceState> = None;
    while labels.len() < n {
        let choices: Vec<ValenceState> = ValenceState::ALL
            .into_iter()
            .filter(|s| Some(*s) != prev)
            .collect();
        let state = *choices.choose(rng).expect("two choices remain");
        let len = ((rng.random_range(min_s..=max_s) * rate).round() as usize).max(1);
        labels.extend(std::iter::repeat_n(state, len.min(n - labels.len())));
        prev = Some(state);
    }
    labels
}

/// Each state adds a fixed `±offset_amplitude` sign pattern across channels
/// (shared by all sessions) on top of a per-session baseline and white noise.
pub fn synthetic_sessions(spec: &SyntheticSpec) -> Result<Vec<LabeledSeries>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let patterns: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..spec.n_channels)
                .map(|_| if rng.random_bool(0.5) { spec.offset_amplitude } else { -spec.offset_amplitude })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("valid noise std");
    let baseline = Normal::new(0.0, spec.baseline_std.max(0.0)).expect("valid baseline std");
    let n = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let channels: Vec<String> = (0..spec.n_channels).map(|c| format!("ch{c:02}")).collect();
    (0..spec.n_sessions)
        .map(|s| {
            let labels = random_labels(n, spec.sample_rate_hz, spec.min_segment_s, spec.max_segment_s, &mut rng);
            let base: Vec<f64> = (0..spec.n_channels).map(|_| baseline.sample(&mut rng)).collect();
            let mut samples = Array2::zeros((spec.n_channels, n));
            for t in 0..n {
                let pattern = &patterns[labels[t].index()];
                for c in 0..spec.n_channels {
                    samples[[c, t]] = base[c] + pattern[c] + noise.sample(&mut rng);
                }
            }
            let rec = Recording::new(format!("s{:02}", s + 1), spec.sample_rate_hz, channels.clone(), samples)?;
            LabeledSeries::new(rec, labels)
        })
        .collect()
}

/// Within-session random permutation of the per-timepoint labels.
pub fn shuffle_labels(sessions: &[LabeledSeries], seed: u64) -> Result<Vec<LabeledSeries>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sessions
        .iter()
        .map(|s| {
            let mut labels = s.labels().to_vec();
            labels.shuffle(&mut rng);
            s.with_labels(labels)
        })
        .collect()
}
