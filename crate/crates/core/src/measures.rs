//! Divergences and similarities between points on the probability simplex.
//!
//! Natural logarithms throughout, so `jsd` is bounded by `ln 2`.

use std::ops::Deref;

use thiserror::Error;

/// Floor applied to probabilities inside log ratios where a finite value is
/// required (`kl_clamped`, `distinctiveness`).
pub const LOG_RATIO_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("need at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("not a probability vector: {0}")]
    NotSimplex(String),
}

/// Nonnegative vector summing to one (within 1e-9).
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, MeasureError> {
        if probs.is_empty() {
            return Err(MeasureError::NotSimplex("empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(MeasureError::NotSimplex(format!("entry {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(MeasureError::NotSimplex(format!("sums to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalize a nonnegative vector with positive mass.
    pub fn normalized(weights: &[f64]) -> Result<Self, MeasureError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(MeasureError::NotSimplex("cannot normalize".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), MeasureError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(MeasureError::LengthMismatch(a.len(), b.len()))
    }
}

/// Kullback-Leibler divergence KL(a || b), with `0 log 0 = 0`. Returns
/// `f64::INFINITY` when `a` puts mass where `b` has none.
pub fn kl(a: &[f64], b: &[f64]) -> Result<f64, MeasureError> {
    same_len(a, b)?;
    let mut total = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai > 0.0 {
            if bi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += ai * (ai / bi).ln();
        }
    }
    Ok(total.max(0.0))
}

/// KL with both arguments floored at `eps` inside the log ratio; always finite.
pub fn kl_clamped(a: &[f64], b: &[f64], eps: f64) -> Result<f64, MeasureError> {
    same_len(a, b)?;
    Ok(a
        .iter()
        .zip(b)
        .filter(|(ai, _)| **ai > 0.0)
        .map(|(&ai, &bi)| ai * (ai.max(eps) / bi.max(eps)).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Jensen-Shannon divergence, `0.5 * (KL(p||m) + KL(q||m))` with `m = (p+q)/2`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, MeasureError> {
    same_len(p, q)?;
    // Summed per coordinate so that swapping p and q permutes identical terms.
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        let mut term = 0.0;
        if pi > 0.0 {
            term += pi * (pi / m).ln();
        }
        if qi > 0.0 {
            term += qi * (qi / m).ln();
        }
        total += term;
    }
    Ok((0.5 * total).clamp(0.0, std::f64::consts::LN_2))
}

pub fn cosine_similarity(p: &[f64], q: &[f64]) -> Result<f64, MeasureError> {
    same_len(p, q)?;
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(MeasureError::ZeroVector);
    }
    Ok(dot / (np * nq))
}

fn distinctiveness_term(bk: f64, bl: f64) -> f64 {
    let log_ratio = (bk.max(LOG_RATIO_FLOOR) / bl.max(LOG_RATIO_FLOOR)).ln();
    bk * log_ratio + bl - bk
}

/// Distinctiveness of feature `d`: the largest, over topics k, of
/// `min_{l != k} b_kd log(b_kd / b_ld) + b_ld - b_kd`. Topics may come from
/// several models.
pub fn distinctiveness(d: usize, topics: &[&[f64]]) -> Result<f64, MeasureError> {
    if topics.len() < 2 {
        return Err(MeasureError::TooFewTopics(topics.len()));
    }
    let len = topics[0].len();
    for t in topics {
        same_len(topics[0], t)?;
    }
    if d >= len {
        return Err(MeasureError::LengthMismatch(d, len));
    }
    let mut best = f64::NEG_INFINITY;
    for (k, tk) in topics.iter().enumerate() {
        let worst = topics
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != k)
            .map(|(_, tl)| distinctiveness_term(tk[d], tl[d]))
            .fold(f64::INFINITY, f64::min);
        best = best.max(worst);
    }
    Ok(best)
}

/// Feature indices sorted from most to least distinctive (ties by index).
pub fn rank_by_distinctiveness(topics: &[&[f64]]) -> Result<Vec<usize>, MeasureError> {
    let len = topics.first().map_or(0, |t| t.len());
    let scores = (0..len)
        .map(|d| distinctiveness(d, topics))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}
