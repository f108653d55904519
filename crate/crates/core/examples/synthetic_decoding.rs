//! Trains on synthetic sessions and prints leave-one-out weighted F1.
//!
//! `cargo run --release -p rym-core --example synthetic_decoding [iterations] [sgd|adam] [shuffle]`

use std::time::Instant;

use rym::decoder::{leave_one_out, prior_chance_f1, KnnConfig};
use rym::embedder::{train, EncoderConfig, Optimizer};
use rym::synth::{shuffle_labels, synthetic_sessions, SyntheticSpec};

fn main() -> rym::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let optimizer = match args.get(2).map(String::as_str) {
        Some("sgd") => Optimizer::Sgd,
        _ => Optimizer::Adam,
    };
    let mut sessions = synthetic_sessions(&SyntheticSpec::default())?;
    if args.get(3).is_some_and(|s| s == "shuffle") {
        sessions = shuffle_labels(&sessions, 99)?;
    }
    let config = EncoderConfig {
        iterations,
        optimizer,
        ..EncoderConfig::default()
    };
    let start = Instant::now();
    let model = train(&sessions, &config)?;
    let trained = start.elapsed();
    let h = &model.loss_history;
    if !h.is_empty() {
        let q = (h.len() / 4).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        println!("loss first quartile {:.4}, last quartile {:.4}", mean(&h[..q]), mean(&h[h.len() - q..]));
    }
    let loo = leave_one_out(&model, &sessions, &KnnConfig::default())?;
    print!("{}", loo.report.table());
    let truth: Vec<_> = loo.truth.concat();
    println!("chance {:.4}", prior_chance_f1(&truth));
    println!("train {:.1?}, total {:.1?}", trained, start.elapsed());
    Ok(())
}
