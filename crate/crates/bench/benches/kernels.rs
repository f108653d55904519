use std::f64::consts::TAU;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rym::assembler::{crossfade_concat, AudioClip};
use rym::data::extract_windows;
use rym::decoder::{knn_predict, KnnConfig};
use rym::embedder::{contrastive_objective, encode_series, sample_contrastive_batch, train, Encoder, WindowPool};
use rym::evalsuite::audio::{spectral_centroid, DEFAULT_HOP, DEFAULT_WINDOW};
use rym::synth::{synthetic_sessions, SyntheticSpec};
use rym::{EmbedderModel, EncoderConfig};

fn sessions(n: usize) -> Vec<rym::LabeledSeries> {
    synthetic_sessions(&SyntheticSpec {
        n_sessions: n,
        duration_s: 60.0,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn encoder(c: &mut Criterion) {
    let s = sessions(1);
    let config = EncoderConfig::default();
    let enc = Encoder::seeded(config.geometry(8), 1);
    let windows = extract_windows(&s[0], config.receptive_field).unwrap();
    let views: Vec<_> = (0..256).map(|i| windows.view(i)).collect();
    c.bench_function("encoder forward, 256 windows", |b| b.iter(|| enc.forward(black_box(&views)).unwrap()));

    let s = sessions(3);
    let config = EncoderConfig {
        batch_size: 256,
        ..EncoderConfig::default()
    };
    let model = EmbedderModel::initialize(&s, &config).unwrap();
    let pool = WindowPool::new(&s, config.receptive_field).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = sample_contrastive_batch(&pool, config.batch_size, &mut rng);
    c.bench_function("contrastive objective, batch 256", |b| {
        b.iter(|| contrastive_objective(&model, &s, black_box(&batch)).unwrap())
    });
}

fn knn(c: &mut Criterion) {
    let s = sessions(9);
    let config = EncoderConfig {
        iterations: 20,
        batch_size: 256,
        ..EncoderConfig::default()
    };
    let model = train(&s, &config).unwrap();
    let mut reference = Vec::new();
    for series in &s[1..] {
        let labels = extract_windows(series, config.receptive_field).unwrap().labels();
        reference.extend(encode_series(&model, series).unwrap().into_iter().zip(labels));
    }
    let query = encode_series(&model, &s[0]).unwrap().remove(0);
    let knn = KnnConfig::default();
    c.bench_function("knn predict, 4.7k references", |b| {
        b.iter(|| knn_predict(&reference, black_box(&query), &knn).unwrap())
    });
}

fn audio(c: &mut Criterion) {
    let rate = 32_000u32;
    let clips: Vec<AudioClip> = (0..8)
        .map(|_| AudioClip::new(vec![0.3; 2 * rate as usize], rate).unwrap())
        .collect();
    c.bench_function("crossfade 8 x 2 s clips", |b| b.iter(|| crossfade_concat(black_box(&clips), 0.040).unwrap()));

    let sine = AudioClip::new(
        (0..4 * rate as usize).map(|i| (TAU * 440.0 * i as f64 / rate as f64).sin()).collect(),
        rate,
    )
    .unwrap();
    c.bench_function("spectral centroid, 4 s", |b| {
        b.iter(|| spectral_centroid(black_box(&sine), DEFAULT_WINDOW, DEFAULT_HOP).unwrap())
    });
}

criterion_group!(benches, encoder, knn, audio);
criterion_main!(benches);
