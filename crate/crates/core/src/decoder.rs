//! KNN valence decoding on embeddings and leave-one-subject-out scoring.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{extract_windows, LabeledSeries, ValenceState};
use crate::embedder::{encode_series, EmbedderModel, Embedding};
use crate::error::{Error, Result};

pub const EVAL_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KRule {
    Explicit(usize),
    #[serde(with = "sqrt_tag")]
    SqrtOfTrainSize,
}

mod sqrt_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("sqrt")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "sqrt" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"sqrt\" or an integer, got {s:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: KRule,
    pub distance: Distance,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: KRule::SqrtOfTrainSize,
            distance: Distance::Euclidean,
        }
    }
}

impl KnnConfig {
    /// `round(sqrt(n))`, forced odd by subtracting one, floored at 1.
    pub fn resolve_k(&self, n_train: usize) -> Result<usize> {
        if n_train == 0 {
            return Err(Error::invalid("empty training set"));
        }
        let k = match self.k {
            KRule::Explicit(k) => k,
            KRule::SqrtOfTrainSize => {
                let k = (n_train as f64).sqrt().round() as usize;
                let k = if k.is_multiple_of(2) { k.saturating_sub(1) } else { k };
                k.max(1)
            }
        };
        if k == 0 || k > n_train {
            return Err(Error::invalid(format!(
                "k = {k} out of range for {n_train} training points"
            )));
        }
        Ok(k)
    }
}

fn distance(kind: Distance, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        Distance::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Distance::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (na * nb)
        }
    }
}

/// Majority vote over the `k` nearest training points. Distance ties go to the
/// lower training index; vote ties go to the lowest state code.
pub fn knn_predict(
    train: &[(Embedding, ValenceState)],
    query: &Embedding,
    config: &KnnConfig,
) -> Result<ValenceState> {
    let k = config.resolve_k(train.len())?;
    let mut scored: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (e, _))| (distance(config.distance, e.as_slice(), query.as_slice()), i))
        .collect();
    let by_dist_then_index = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_dist_then_index);
    }
    let mut votes = [0usize; 3];
    for &(_, i) in &scored[..k] {
        votes[train[i].1.index()] += 1;
    }
    let best = votes.iter().copied().max().expect("three classes");
    let winner = ValenceState::ALL
        .into_iter()
        .find(|s| votes[s.index()] == best)
        .expect("some class has the max");
    Ok(winner)
}

/// Per-class F1 weighted by true-class support; classes absent from `truth`
/// carry no weight.
pub fn weighted_f1(predictions: &[ValenceState], truth: &[ValenceState]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", truth.len()),
            actual: format!("{}", predictions.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("weighted_f1 of empty input"));
    }
    let mut tp = [0usize; 3];
    let mut pred_count = [0usize; 3];
    let mut true_count = [0usize; 3];
    for (&p, &t) in predictions.iter().zip(truth) {
        pred_count[p.index()] += 1;
        true_count[t.index()] += 1;
        if p == t {
            tp[t.index()] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..3 {
        if true_count[c] == 0 {
            continue;
        }
        // 2PR/(P+R) = 2tp / (predicted + actual)
        let f1 = 2.0 * tp[c] as f64 / (pred_count[c] + true_count[c]) as f64;
        total += f1 * true_count[c] as f64;
    }
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedTrace {
    pub subject_id: String,
    pub predictions: Vec<ValenceState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Keyed by subject id, so serialization order is fixed.
    pub per_subject_f1: BTreeMap<String, f64>,
    pub mean_f1: f64,
}

impl EvalReport {
    pub fn from_scores(per_subject_f1: BTreeMap<String, f64>) -> Self {
        let mean_f1 = per_subject_f1.values().sum::<f64>() / per_subject_f1.len().max(1) as f64;
        EvalReport {
            schema_version: EVAL_REPORT_SCHEMA_VERSION,
            per_subject_f1,
            mean_f1,
        }
    }

    /// Fixed-width per-subject table for terminal output.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>10}\n", "subject", "weighted_f1");
        for (s, f) in &self.per_subject_f1 {
            out.push_str(&format!("{s:<16} {f:>10.4}\n"));
        }
        out.push_str(&format!("{:<16} {:>10.4}\n", "mean", self.mean_f1));
        out
    }
}

/// What one fold trained on; handed to the observer passed to
/// [`leave_one_out_observed`].
#[derive(Debug, Clone)]
pub struct FoldInfo {
    pub held_out: String,
    pub training_subjects: Vec<String>,
    pub n_train: usize,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct LeaveOneOut {
    pub report: EvalReport,
    pub traces: Vec<DecodedTrace>,
    /// Window-center ground truth per subject, aligned with `traces`.
    pub truth: Vec<Vec<ValenceState>>,
}

pub fn leave_one_out(
    model: &EmbedderModel,
    sessions: &[LabeledSeries],
    config: &KnnConfig,
) -> Result<LeaveOneOut> {
    leave_one_out_observed(model, sessions, config, |_| {})
}

/// For each session: fit on every other session's embeddings, predict the
/// held-out windows, score weighted F1.
pub fn leave_one_out_observed<F>(
    model: &EmbedderModel,
    sessions: &[LabeledSeries],
    config: &KnnConfig,
    observer: F,
) -> Result<LeaveOneOut>
where
    F: Fn(&FoldInfo) + Sync,
{
    if sessions.len() < 2 {
        return Err(Error::invalid("need ≥ 2 sessions for leave-one-out"));
    }
    let rf = model.config.receptive_field;
    let embedded: Vec<(Vec<Embedding>, Vec<ValenceState>)> = sessions
        .iter()
        .map(|s| {
            let fold = |e: Error| Error::Fold {
                fold: s.subject_id().to_string(),
                source: Box::new(e),
            };
            let emb = encode_series(model, s).map_err(fold)?;
            let labels = extract_windows(s, rf).map_err(fold)?.labels();
            Ok((emb, labels))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.sort_by(|&a, &b| sessions[a].subject_id().cmp(sessions[b].subject_id()));

    let folds: Vec<(String, f64, DecodedTrace, Vec<ValenceState>)> = order
        .par_iter()
        .map(|&held| {
            let subject = sessions[held].subject_id().to_string();
            let fold_err = |e: Error| Error::Fold {
                fold: subject.clone(),
                source: Box::new(e),
            };
            let mut train = Vec::new();
            let mut training_subjects = Vec::new();
            for (i, (emb, labels)) in embedded.iter().enumerate() {
                if i == held {
                    continue;
                }
                training_subjects.push(sessions[i].subject_id().to_string());
                train.extend(emb.iter().cloned().zip(labels.iter().copied()));
            }
            let k = config.resolve_k(train.len()).map_err(fold_err)?;
            observer(&FoldInfo {
                held_out: subject.clone(),
                training_subjects,
                n_train: train.len(),
                k,
            });
            let fixed = KnnConfig {
                k: KRule::Explicit(k),
                ..*config
            };
            let (queries, truth) = &embedded[held];
            let predictions = queries
                .iter()
                .map(|q| knn_predict(&train, q, &fixed))
                .collect::<Result<Vec<_>>>()
                .map_err(fold_err)?;
            let f1 = weighted_f1(&predictions, truth).map_err(fold_err)?;
            Ok((
                subject.clone(),
                f1,
                DecodedTrace {
                    subject_id: subject,
                    predictions,
                },
                truth.clone(),
            ))
        })
        .collect::<Result<_>>()?;

    let mut scores = BTreeMap::new();
    let mut traces = Vec::new();
    let mut truth = Vec::new();
    for (s, f1, trace, t) in folds {
        scores.insert(s, f1);
        traces.push(trace);
        truth.push(t);
    }
    Ok(LeaveOneOut {
        report: EvalReport::from_scores(scores),
        traces,
        truth,
    })
}

/// Expected weighted F1 of a guesser that draws labels from the class
/// priors: sum of squared class frequencies.
pub fn prior_chance_f1(truth: &[ValenceState]) -> f64 {
    let mut counts = [0usize; 3];
    for t in truth {
        counts[t.index()] += 1;
    }
    let n = truth.len() as f64;
    counts.iter().map(|&c| (c as f64 / n).powi(2)).sum()
}
