//! Correlation, lagged cross-correlation and the rank-sum test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::data::ValenceState;
use crate::error::{Error, Result};

/// Exact rank-sum enumeration is used up to this combined sample size.
pub const EXACT_RANKSUM_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided p of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Pearson r with a two-sided p from the t distribution on n - 2 degrees of
/// freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} values", x.len()),
            actual: format!("{} values", y.len()),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Undefined(format!("correlation needs n >= 3, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in correlation input"));
    }
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(Error::Undefined("zero variance".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(CorrelationResult { r, p_value, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrResult {
    pub best_coefficient: f64,
    pub best_lag_samples: i64,
    pub best_lag_s: f64,
}

/// Pearson r between `a[i]` and `b[i + lag]` over the overlap, or `None`
/// when the overlap is shorter than 3 or either side is constant.
pub fn lagged_correlation(a: &[f64], b: &[f64], lag: i64) -> Option<f64> {
    let start = (-lag).max(0) as usize;
    let end = (a.len() as i64).min(b.len() as i64 - lag);
    if end - (start as i64) < 3 {
        return None;
    }
    let end = end as usize;
    let xs = &a[start..end];
    let ys = &b[(start as i64 + lag) as usize..(end as i64 + lag) as usize];
    pearson(xs, ys).ok().map(|c| c.r)
}

pub fn max_lag_samples(rate_hz: f64, max_lag_s: f64) -> i64 {
    (max_lag_s * rate_hz + 1e-9).floor() as i64
}

/// Coefficient at every integer lag in `[-max, max]` (`None` where skipped).
pub fn crosscorr_curve(a: &[f64], b: &[f64], rate_hz: f64, max_lag_s: f64) -> Vec<(i64, Option<f64>)> {
    let m = max_lag_samples(rate_hz, max_lag_s);
    (-m..=m).map(|l| (l, lagged_correlation(a, b, l))).collect()
}

/// Highest coefficient over lags; ties go to the smallest |lag|, then to the
/// negative lag.
pub fn best_crosscorr_values(a: &[f64], b: &[f64], rate_hz: f64, max_lag_s: f64) -> Result<CrossCorrResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cross-correlation needs non-empty series"));
    }
    if !(max_lag_s >= 0.0) || !(rate_hz > 0.0) {
        return Err(Error::invalid("max_lag_s must be >= 0 and rate positive"));
    }
    let m = max_lag_samples(rate_hz, max_lag_s);
    let mut best: Option<(f64, i64)> = None;
    let order = std::iter::once(0).chain((1..=m).flat_map(|k| [-k, k]));
    for lag in order {
        if let Some(r) = lagged_correlation(a, b, lag) {
            if best.is_none_or(|(br, _)| r > br) {
                best = Some((r, lag));
            }
        }
    }
    let (r, lag) = best.ok_or_else(|| {
        Error::Undefined("cross-correlation: every lag lacks overlap or variance".into())
    })?;
    Ok(CrossCorrResult {
        best_coefficient: r,
        best_lag_samples: lag,
        best_lag_s: lag as f64 / rate_hz,
    })
}

pub fn state_codes(states: &[ValenceState]) -> Vec<f64> {
    states.iter().map(|s| s.code() as f64).collect()
}

pub fn best_crosscorr(
    a: &[ValenceState],
    b: &[ValenceState],
    rate_hz: f64,
    max_lag_s: f64,
) -> Result<CrossCorrResult> {
    best_crosscorr_values(&state_codes(a), &state_codes(b), rate_hz, max_lag_s)
}

/// Midranks (1-based) of the pooled sample and the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Counts of rank-sum values over all `C(n_total, n_x)` assignments of ranks
/// `1..=n_total` to the first sample, indexed by sum.
fn ranksum_distribution(n_x: usize, n_total: usize) -> Vec<u64> {
    let max_sum = n_total * (n_total + 1) / 2;
    // counts[k][s]: subsets of size k with sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; n_x + 1];
    counts[0][0] = 1;
    for rank in 1..=n_total {
        for k in (1..=n_x.min(rank)).rev() {
            for s in (rank..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - rank];
            }
        }
    }
    counts.swap_remove(n_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSumMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Sum of the midranks of `x` in the pooled sample.
    pub statistic: f64,
    pub p_value: f64,
    pub method: RankSumMethod,
}

/// Two-sided Wilcoxon rank-sum test. Exact when the pooled size is at most
/// [`EXACT_RANKSUM_MAX_N`] and there are no ties; otherwise the normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_ranksum_test(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("rank-sum test needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in rank-sum input"));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let (n, m) = (x.len(), y.len());
    let total = n + m;
    let w: f64 = ranks[..n].iter().sum();
    let tie_free = ties.iter().all(|&t| t == 1);
    if tie_free && total <= EXACT_RANKSUM_MAX_N {
        let dist = ranksum_distribution(n, total);
        let w_int = w as usize;
        let all: u64 = dist.iter().sum();
        let lo: u64 = dist[..=w_int].iter().sum();
        let hi: u64 = dist[w_int..].iter().sum();
        let p = (2 * lo.min(hi)) as f64 / all as f64;
        return Ok(RankSumResult {
            statistic: w,
            p_value: p.min(1.0),
            method: RankSumMethod::Exact,
        });
    }
    let nf = total as f64;
    let mu = n as f64 * (nf + 1.0) / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = n as f64 * m as f64 / 12.0 * ((nf + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w - mu).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSumResult {
        statistic: w,
        p_value: p,
        method: RankSumMethod::Normal,
    })
}

pub fn wilcoxon_ranksum(x: &[f64], y: &[f64]) -> Result<f64> {
    wilcoxon_ranksum_test(x, y).map(|r| r.p_value)
}
