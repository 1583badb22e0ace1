//! Synthetic count data: true LDA, a multinomial null, LDA with per-sample
//! background noise, and strain switching between near-identical topics.
//!
//! Draw schedule (all streams derive from the spec's [`SeededRng`]):
//!
//! * stream `[1]` draws the topic matrix `B`;
//! * stream `[2, i]` draws `γ_i`, then any per-sample variant choices, then
//!   the counts of sample `i`;
//! * stream `[3, i]` draws the background profile `ν_i`;
//! * stream `[4, k]` draws the perturbed subset and variants of topic `k`.
//!
//! Background noise lives on its own stream, so `α = 1` reproduces the true
//! LDA corpus exactly.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CountMatrix;
use crate::rng::SeededRng;

const TOPIC_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const VARIANT_STREAM: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

fn positive(name: &str, value: f64) -> Result<(), SimError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidSpec(format!("{name} must be positive, got {value}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaSimSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_topics: usize,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
    pub doc_total: u64,
    pub rng: SeededRng,
}

impl LdaSimSpec {
    /// N = 250, D = 1000, K = 5 with 10,000 reads per sample.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            n_samples: 250,
            n_features: 1000,
            n_topics: 5,
            lambda_gamma: 0.5,
            lambda_beta: 0.1,
            doc_total: 10_000,
            rng: SeededRng::new(seed),
        }
    }

    /// N = 150, D = 200, K = 5 with 1,000 reads per sample.
    pub fn desk_scale(seed: u64) -> Self {
        Self { n_samples: 150, n_features: 200, doc_total: 1_000, ..Self::full_scale(seed) }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_samples == 0 || self.n_features == 0 || self.n_topics == 0 || self.doc_total == 0 {
            return Err(SimError::InvalidSpec("dimensions and doc_total must be at least 1".into()));
        }
        positive("lambda_gamma", self.lambda_gamma)?;
        positive("lambda_beta", self.lambda_beta)
    }
}

impl Default for LdaSimSpec {
    fn default() -> Self {
        Self::full_scale(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSimSpec {
    pub base: LdaSimSpec,
    pub alpha: f64,
    pub lambda_nu: f64,
}

impl BackgroundSimSpec {
    pub fn new(base: LdaSimSpec, alpha: f64) -> Self {
        Self { base, alpha, lambda_nu: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.base.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SimError::InvalidSpec(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        positive("lambda_nu", self.lambda_nu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainSwitchSpec {
    pub base: LdaSimSpec,
    pub replicates_per_topic: Vec<usize>,
    pub subset_size: usize,
    pub lambda_s: f64,
}

impl StrainSwitchSpec {
    /// R = (2, 2, 1, 1, 1), S = 230, λ_S = 0.1 on top of `base`.
    pub fn new(base: LdaSimSpec) -> Self {
        Self { base, replicates_per_topic: vec![2, 2, 1, 1, 1], subset_size: 230, lambda_s: 0.1 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.base.validate()?;
        if self.replicates_per_topic.len() != self.base.n_topics {
            return Err(SimError::InvalidSpec(format!(
                "{} replicate counts for {} topics",
                self.replicates_per_topic.len(),
                self.base.n_topics
            )));
        }
        if self.replicates_per_topic.contains(&0) {
            return Err(SimError::InvalidSpec("every topic needs at least one variant".into()));
        }
        if self.subset_size == 0 || self.subset_size > self.base.n_features {
            return Err(SimError::InvalidSpec(format!(
                "subset size {} outside 1..={}",
                self.subset_size, self.base.n_features
            )));
        }
        positive("lambda_s", self.lambda_s)
    }
}

/// Generating parameters: `beta` is D × K (columns are topics), `gamma` is
/// N × K (rows are memberships).
#[derive(Clone, Debug, PartialEq)]
pub struct LdaTruth {
    pub beta: Array2<f64>,
    pub gamma: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub counts: CountMatrix,
    pub truth: LdaTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrainTruth {
    pub base: LdaTruth,
    /// `variants[k][r]` is the r-th perturbed version of topic k.
    pub variants: Vec<Vec<Vec<f64>>>,
    /// Sorted perturbed coordinates of each topic.
    pub subsets: Vec<Vec<usize>>,
    /// `choices[i][k]` is the variant of topic k used by sample i.
    pub choices: Vec<Vec<usize>>,
}

impl StrainTruth {
    /// The first two variants of the first two topics that have at least two
    /// variants, ordered as (topic a: r1, r2, topic b: r1, r2).
    pub fn competing_pairs(&self) -> Option<Vec<Vec<f64>>> {
        let multi: Vec<&Vec<Vec<f64>>> = self.variants.iter().filter(|v| v.len() >= 2).take(2).collect();
        if multi.len() < 2 {
            return None;
        }
        Some(multi.iter().flat_map(|v| [v[0].clone(), v[1].clone()]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrainSimulation {
    pub counts: CountMatrix,
    pub truth: StrainTruth,
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, concentration: f64, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(concentration, 1.0).expect("concentration checked positive");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, total: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut tail: Vec<f64> = vec![0.0; probs.len() + 1];
    for d in (0..probs.len()).rev() {
        tail[d] = tail[d + 1] + probs[d].max(0.0);
    }
    let mut left = total;
    for d in 0..probs.len() {
        if left == 0 {
            break;
        }
        if d + 1 == probs.len() || tail[d + 1] <= 0.0 {
            out[d] = left;
            break;
        }
        let p = (probs[d].max(0.0) / tail[d]).clamp(0.0, 1.0);
        let draw = Binomial::new(left, p).expect("probability clamped to [0, 1]").sample(rng);
        out[d] = draw;
        left -= draw;
    }
    out
}

fn draw_topics(spec: &LdaSimSpec) -> Array2<f64> {
    let mut rng = spec.rng.substream(TOPIC_STREAM).generator();
    let mut beta = Array2::zeros((spec.n_features, spec.n_topics));
    for k in 0..spec.n_topics {
        let topic = sample_dirichlet(&mut rng, spec.lambda_beta, spec.n_features);
        for (d, p) in topic.into_iter().enumerate() {
            beta[[d, k]] = p;
        }
    }
    beta
}

fn mixture(beta: &Array2<f64>, gamma: &[f64]) -> Vec<f64> {
    beta.rows().into_iter().map(|row| row.iter().zip(gamma).map(|(b, g)| b * g).sum()).collect()
}

fn assemble(rows: Vec<(Vec<f64>, Vec<u64>)>, n_topics: usize, beta: Array2<f64>) -> Simulation {
    let n = rows.len();
    let d = rows[0].1.len();
    let mut gamma = Array2::zeros((n, n_topics));
    let mut counts = Array2::zeros((n, d));
    for (i, (g, x)) in rows.into_iter().enumerate() {
        gamma.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
        counts.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
    }
    Simulation {
        counts: CountMatrix::from_counts(counts).expect("every sample has doc_total >= 1 reads"),
        truth: LdaTruth { beta, gamma },
    }
}

fn simulate_mixture(spec: &LdaSimSpec, noise: Option<(f64, f64)>) -> Simulation {
    let beta = draw_topics(spec);
    let rows: Vec<(Vec<f64>, Vec<u64>)> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = spec.rng.path(&[SAMPLE_STREAM, i as u64]).generator();
            let g = sample_dirichlet(&mut rng, spec.lambda_gamma, spec.n_topics);
            let mut mean = mixture(&beta, &g);
            if let Some((alpha, lambda_nu)) = noise {
                let mut noise_rng = spec.rng.path(&[NOISE_STREAM, i as u64]).generator();
                let nu = sample_dirichlet(&mut noise_rng, lambda_nu, spec.n_features);
                for (m, v) in mean.iter_mut().zip(&nu) {
                    *m = alpha * *m + (1.0 - alpha) * v;
                }
            }
            let x = sample_multinomial(&mut rng, spec.doc_total, &mean);
            (g, x)
        })
        .collect();
    assemble(rows, spec.n_topics, beta)
}

pub fn sim_lda(spec: &LdaSimSpec) -> Result<Simulation, SimError> {
    spec.validate()?;
    Ok(simulate_mixture(spec, None))
}

/// Independent multinomials whose means are drawn from a flat Dirichlet.
pub fn sim_null(n_samples: usize, n_features: usize, doc_total: u64, rng: SeededRng) -> Result<CountMatrix, SimError> {
    if n_samples == 0 || n_features == 0 || doc_total == 0 {
        return Err(SimError::InvalidSpec("dimensions and doc_total must be at least 1".into()));
    }
    let rows: Vec<Vec<u64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut g = rng.path(&[SAMPLE_STREAM, i as u64]).generator();
            let mean = sample_dirichlet(&mut g, 1.0, n_features);
            sample_multinomial(&mut g, doc_total, &mean)
        })
        .collect();
    let mut counts = Array2::zeros((n_samples, n_features));
    for (i, x) in rows.into_iter().enumerate() {
        counts.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
    }
    Ok(CountMatrix::from_counts(counts).expect("every sample has reads"))
}

pub fn sim_background(spec: &BackgroundSimSpec) -> Result<Simulation, SimError> {
    spec.validate()?;
    Ok(simulate_mixture(&spec.base, Some((spec.alpha, spec.lambda_nu))))
}

pub fn sim_strain_switching(spec: &StrainSwitchSpec) -> Result<StrainSimulation, SimError> {
    spec.validate()?;
    let base = &spec.base;
    let beta = draw_topics(base);
    let mut variants = Vec::with_capacity(base.n_topics);
    let mut subsets = Vec::with_capacity(base.n_topics);
    for (k, &reps) in spec.replicates_per_topic.iter().enumerate() {
        let mut rng = base.rng.path(&[VARIANT_STREAM, k as u64]).generator();
        let mut subset = index::sample(&mut rng, base.n_features, spec.subset_size).into_vec();
        subset.sort_unstable();
        let topic: Vec<f64> = beta.column(k).to_vec();
        let subset_mass: f64 = subset.iter().map(|&d| topic[d]).sum();
        let topic_variants: Vec<Vec<f64>> = (0..reps)
            .map(|_| {
                let nu = sample_dirichlet(&mut rng, spec.lambda_s, subset.len());
                let mut variant = topic.clone();
                for (&d, v) in subset.iter().zip(nu) {
                    variant[d] = v * subset_mass;
                }
                variant
            })
            .collect();
        variants.push(topic_variants);
        subsets.push(subset);
    }
    let rows: Vec<(Vec<f64>, Vec<usize>, Vec<u64>)> = (0..base.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.rng.path(&[SAMPLE_STREAM, i as u64]).generator();
            let g = sample_dirichlet(&mut rng, base.lambda_gamma, base.n_topics);
            let choice: Vec<usize> = variants.iter().map(|v| rng.random_range(0..v.len())).collect();
            let mut mean = vec![0.0; base.n_features];
            for (k, (&r, &gk)) in choice.iter().zip(&g).enumerate() {
                for (m, b) in mean.iter_mut().zip(&variants[k][r]) {
                    *m += gk * b;
                }
            }
            let x = sample_multinomial(&mut rng, base.doc_total, &mean);
            (g, choice, x)
        })
        .collect();
    let mut choices = Vec::with_capacity(rows.len());
    let mut lda_rows = Vec::with_capacity(rows.len());
    for (g, c, x) in rows {
        choices.push(c);
        lda_rows.push((g, x));
    }
    let sim = assemble(lda_rows, base.n_topics, beta);
    Ok(StrainSimulation { counts: sim.counts, truth: StrainTruth { base: sim.truth, variants, subsets, choices } })
}
