//! InfoNCE objective on unit-norm embeddings with dot-product similarity.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};

use super::Embedding;
use crate::error::{Error, Result};

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log( exp(a.p/t) / (exp(a.p/t) + sum_k exp(a.n_k/t)) )`.
pub fn infonce_loss(
    anchor: &Embedding,
    positive: &Embedding,
    negatives: &[Embedding],
    temperature: f64,
) -> Result<f64> {
    check_temperature(temperature)?;
    if negatives.is_empty() {
        return Err(Error::invalid("infonce_loss needs at least one negative"));
    }
    let dim = anchor.dim();
    if positive.dim() != dim || negatives.iter().any(|n| n.dim() != dim) {
        return Err(Error::Shape {
            expected: format!("embeddings of dimension {dim}"),
            actual: "mixed dimensions".into(),
        });
    }
    let pos = anchor.dot(positive) / temperature;
    let logits: Vec<f64> = std::iter::once(pos)
        .chain(negatives.iter().map(|n| anchor.dot(n) / temperature))
        .collect();
    Ok(log_sum_exp(logits.iter().copied()) - pos)
}

/// Mean InfoNCE over a batch where all anchors share the same negatives, plus
/// its gradients with respect to every embedding row.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad_anchors: Array2<f64>,
    pub grad_positives: Array2<f64>,
    pub grad_negatives: Array2<f64>,
}

pub fn batch_infonce(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    negatives: &Array2<f64>,
    temperature: f64,
) -> Result<BatchLoss> {
    check_temperature(temperature)?;
    let (b, d) = anchors.dim();
    if positives.dim() != (b, d) || negatives.ncols() != d {
        return Err(Error::Shape {
            expected: format!("[{b} x {d}] positives and [_ x {d}] negatives"),
            actual: format!("{:?} and {:?}", positives.dim(), negatives.dim()),
        });
    }
    if b == 0 || negatives.nrows() == 0 {
        return Err(Error::invalid("batch needs anchors and negatives"));
    }
    let inv_t = 1.0 / temperature;
    let pos: Array1<f64> = anchors
        .axis_iter(Axis(0))
        .zip(positives.axis_iter(Axis(0)))
        .map(|(a, p)| a.dot(&p) * inv_t)
        .collect();
    // Row i: softmax weights over [negatives...]; positive weight kept apart.
    let mut weights = Array2::zeros((b, negatives.nrows()));
    general_mat_mul(inv_t, anchors, &negatives.t(), 0.0, &mut weights);
    let mut pos_weight = Array1::zeros(b);
    let mut total = 0.0;
    for (i, mut row) in weights.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(pos[i], f64::max);
        let mut denom = (pos[i] - max).exp();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        total += max + denom.ln() - pos[i];
        row /= denom;
        pos_weight[i] = (pos[i] - max).exp() / denom;
    }
    let scale = inv_t / b as f64;
    let coef = (&pos_weight - 1.0) * scale;

    let mut grad_anchors = Array2::zeros((b, d));
    general_mat_mul(scale, &weights, negatives, 0.0, &mut grad_anchors);
    let mut grad_positives = anchors.to_owned();
    for i in 0..b {
        grad_anchors
            .row_mut(i)
            .scaled_add(coef[i], &positives.row(i));
        grad_positives.row_mut(i).mapv_inplace(|v| v * coef[i]);
    }
    let mut grad_negatives = Array2::zeros((negatives.nrows(), d));
    general_mat_mul(scale, &weights.t(), anchors, 0.0, &mut grad_negatives);

    Ok(BatchLoss {
        loss: total / b as f64,
        grad_anchors,
        grad_positives,
        grad_negatives,
    })
}
