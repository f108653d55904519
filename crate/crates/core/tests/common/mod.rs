//! Helpers shared by the integration targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rym::embedder::{contrastive_objective, sample_contrastive_batch, WindowPool};
use rym::synth::{synthetic_sessions, SyntheticSpec};
use rym::{EmbedderModel, EncoderConfig};

pub const FD_STEP: f64 = 1e-5;

/// Relative error `|g - fd| / max(|g|, |fd|)` (Euclidean norms over every
/// parameter of every session) between the analytic gradient and central
/// differences, for one random small instance.
pub fn gradient_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sessions = rng.random_range(1..=3);
    // redraw until every present state has a positive partner
    let (sessions, pool) = (0..)
        .find_map(|attempt: u64| {
            let sessions = synthetic_sessions(&SyntheticSpec {
                n_sessions,
                n_channels: 2,
                duration_s: 4.0,
                min_segment_s: 0.4,
                max_segment_s: 1.2,
                seed: seed.wrapping_mul(1000).wrapping_add(attempt),
                ..SyntheticSpec::default()
            })
            .unwrap();
            WindowPool::new(&sessions, 3).ok().map(|pool| (sessions, pool))
        })
        .unwrap();
    let config = EncoderConfig {
        receptive_field: 3,
        hidden_units: 4,
        out_dim: 3,
        batch_size: rng.random_range(3..=8),
        temperature: rng.random_range(0.5..2.0),
        seed,
        ..EncoderConfig::default()
    };
    let mut model = EmbedderModel::initialize(&sessions, &config).unwrap();
    let batch = sample_contrastive_batch(&pool, config.batch_size, &mut rng);
    let (_, grads) = contrastive_objective(&model, &sessions, &batch).unwrap();

    let (mut diff, mut an, mut num) = (0.0, 0.0, 0.0);
    for (s, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let x = model.sessions[s].encoder.params().get(j);
            model.sessions[s].encoder.params_mut().set(j, x + FD_STEP);
            let plus = contrastive_objective(&model, &sessions, &batch).unwrap().0;
            model.sessions[s].encoder.params_mut().set(j, x - FD_STEP);
            let minus = contrastive_objective(&model, &sessions, &batch).unwrap().0;
            model.sessions[s].encoder.params_mut().set(j, x);
            let fd = (plus - minus) / (2.0 * FD_STEP);
            diff += (g.get(j) - fd).powi(2);
            an += g.get(j).powi(2);
            num += fd * fd;
        }
    }
    diff.sqrt() / an.sqrt().max(num.sqrt()).max(1e-12)
}
