//! Latent Dirichlet allocation by collapsed Gibbs sampling.
//!
//! Each fit runs `burn_in` sweeps, then keeps every `thin`-th sweep until
//! `samples` states have been collected. `B` and `Γ` are the averages of the
//! smoothed count estimates over the kept states:
//!
//! ```text
//! beta[d, k]  = (n_kd + λβ) / (n_k + D λβ)
//! gamma[i, k] = (n_ik + λγ) / (n_i + K λγ)
//! ```
//!
//! Sweeps visit documents and tokens in a fixed order from a single stream,
//! so a fit is a pure function of the corpus, hyperparameters and config.

use std::ops::RangeInclusive;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::CountMatrix;
use crate::rng::SeededRng;

/// Fold-in sweeps used by [`perplexity`]; the second half is averaged.
pub const FOLD_IN_SWEEPS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum LdaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: model has {expected} features, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdaHyperparams {
    pub k: usize,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
}

impl LdaHyperparams {
    pub fn new(k: usize, lambda_gamma: f64, lambda_beta: f64) -> Result<Self, LdaError> {
        if k == 0 {
            return Err(LdaError::InvalidConfig("k must be at least 1".into()));
        }
        if !(lambda_gamma > 0.0 && lambda_gamma.is_finite()) {
            return Err(LdaError::InvalidConfig(format!("lambda_gamma must be > 0, got {lambda_gamma}")));
        }
        if !(lambda_beta > 0.0 && lambda_beta.is_finite()) {
            return Err(LdaError::InvalidConfig(format!("lambda_beta must be > 0, got {lambda_beta}")));
        }
        Ok(Self { k, lambda_gamma, lambda_beta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub rng: SeededRng,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { burn_in: 500, samples: 100, thin: 2, rng: SeededRng::new(0) }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), LdaError> {
        if self.samples == 0 {
            return Err(LdaError::InvalidConfig("samples must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(LdaError::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.samples * self.thin
    }
}

/// A fitted model: `beta` is D×K with topics as columns, `gamma` is N×K with
/// one membership vector per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    pub hyper: LdaHyperparams,
    pub beta: Array2<f64>,
    pub gamma: Array2<f64>,
    pub log_likelihood_trace: Vec<f64>,
}

impl TopicModel {
    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn n_features(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn topic(&self, k: usize) -> ArrayView1<'_, f64> {
        self.beta.column(k)
    }

    pub fn topic_vec(&self, k: usize) -> Vec<f64> {
        self.beta.column(k).to_vec()
    }

    /// Topic masses `sum_i gamma[i, k]`.
    pub fn masses(&self) -> Vec<f64> {
        self.gamma.sum_axis(Axis(0)).to_vec()
    }

    /// Checks the stochasticity of both matrices to within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<(), String> {
        if self.beta.ncols() != self.hyper.k || self.gamma.ncols() != self.hyper.k {
            return Err("matrix widths disagree with k".into());
        }
        if self.beta.iter().chain(self.gamma.iter()).any(|x| !(*x >= 0.0)) {
            return Err("negative or NaN entry".into());
        }
        for (k, col) in self.beta.axis_iter(Axis(1)).enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > tol {
                return Err(format!("beta column {k} sums to {s}"));
            }
        }
        for (i, row) in self.gamma.axis_iter(Axis(0)).enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > tol {
                return Err(format!("gamma row {i} sums to {s}"));
            }
        }
        Ok(())
    }
}

/// Models over strictly increasing K, all fitted to the same corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEnsemble {
    pub models: Vec<TopicModel>,
    pub corpus_fingerprint: String,
}

impl ModelEnsemble {
    pub fn new(models: Vec<TopicModel>, corpus_fingerprint: String) -> Result<Self, LdaError> {
        let Some(first) = models.first() else {
            return Err(LdaError::InvalidEnsemble("no models".into()));
        };
        let (n, d) = (first.n_samples(), first.n_features());
        for pair in models.windows(2) {
            if pair[1].k() <= pair[0].k() {
                return Err(LdaError::InvalidEnsemble(format!(
                    "K must increase strictly, found {} then {}",
                    pair[0].k(),
                    pair[1].k()
                )));
            }
        }
        for m in &models {
            if m.n_samples() != n || m.n_features() != d {
                return Err(LdaError::InvalidEnsemble(format!(
                    "model K={} is {}x{} but the first model is {n}x{d}",
                    m.k(),
                    m.n_samples(),
                    m.n_features()
                )));
            }
            if m.beta.ncols() != m.k() || m.gamma.ncols() != m.k() {
                return Err(LdaError::InvalidEnsemble(format!("model K={} has wrong widths", m.k())));
            }
        }
        Ok(Self { models, corpus_fingerprint })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.models.iter().map(TopicModel::k).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.models[0].n_samples()
    }

    pub fn n_features(&self) -> usize {
        self.models[0].n_features()
    }

    pub fn model_for_k(&self, k: usize) -> Option<&TopicModel> {
        self.models.iter().find(|m| m.k() == k)
    }
}

/// Flattened tokens: `words[doc_start[i]..doc_start[i+1]]` are document i.
struct Tokens {
    words: Vec<u32>,
    doc_start: Vec<usize>,
}

impl Tokens {
    fn from_counts(counts: &CountMatrix) -> Self {
        let mut words = Vec::new();
        let mut doc_start = Vec::with_capacity(counts.n_samples() + 1);
        doc_start.push(0);
        for row in counts.counts().outer_iter() {
            for (d, &c) in row.iter().enumerate() {
                words.extend(std::iter::repeat_n(d as u32, c as usize));
            }
            doc_start.push(words.len());
        }
        Self { words, doc_start }
    }

    fn doc(&self, i: usize) -> std::ops::Range<usize> {
        self.doc_start[i]..self.doc_start[i + 1]
    }
}

/// Sample an index from unnormalized cumulative weights.
#[inline]
fn draw_from_cumulative(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.iter().position(|&c| target < c).unwrap_or(cum.len() - 1)
}

struct GibbsState {
    k: usize,
    d: usize,
    lambda_gamma: f64,
    lambda_beta: f64,
    z: Vec<u32>,
    /// doc-major N×K
    n_dk: Vec<u32>,
    /// word-major D×K
    n_wk: Vec<u32>,
    n_k: Vec<u32>,
}

impl GibbsState {
    fn sweep(&mut self, tokens: &Tokens, rng: &mut impl Rng, cum: &mut [f64]) {
        let k = self.k;
        let d_lb = self.d as f64 * self.lambda_beta;
        let n_docs = tokens.doc_start.len() - 1;
        for i in 0..n_docs {
            let doc_counts = i * k;
            for t in tokens.doc(i) {
                let w = tokens.words[t] as usize * k;
                let old = self.z[t] as usize;
                self.n_dk[doc_counts + old] -= 1;
                self.n_wk[w + old] -= 1;
                self.n_k[old] -= 1;
                let mut acc = 0.0;
                for j in 0..k {
                    let word = (self.n_wk[w + j] as f64 + self.lambda_beta) / (self.n_k[j] as f64 + d_lb);
                    acc += word * (self.n_dk[doc_counts + j] as f64 + self.lambda_gamma);
                    cum[j] = acc;
                }
                let new = draw_from_cumulative(cum, rng.random::<f64>());
                self.z[t] = new as u32;
                self.n_dk[doc_counts + new] += 1;
                self.n_wk[w + new] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    /// Collapsed joint log-likelihood log p(w, z).
    fn log_likelihood(&self, doc_totals: &[usize]) -> f64 {
        let (k, d) = (self.k, self.d);
        let (lb, lg) = (self.lambda_beta, self.lambda_gamma);
        let mut ll = 0.0;
        let lg_lb = ln_gamma(lb);
        for j in 0..k {
            ll += ln_gamma(d as f64 * lb) - ln_gamma(self.n_k[j] as f64 + d as f64 * lb);
            for w in 0..d {
                let c = self.n_wk[w * k + j];
                if c > 0 {
                    ll += ln_gamma(c as f64 + lb) - lg_lb;
                }
            }
        }
        let lg_lg = ln_gamma(lg);
        for (i, &n_i) in doc_totals.iter().enumerate() {
            ll += ln_gamma(k as f64 * lg) - ln_gamma(n_i as f64 + k as f64 * lg);
            for j in 0..k {
                let c = self.n_dk[i * k + j];
                if c > 0 {
                    ll += ln_gamma(c as f64 + lg) - lg_lg;
                }
            }
        }
        ll
    }

    fn accumulate(&self, beta: &mut Array2<f64>, gamma: &mut Array2<f64>, doc_totals: &[usize]) {
        let (k, d) = (self.k, self.d);
        for j in 0..k {
            let denom = self.n_k[j] as f64 + d as f64 * self.lambda_beta;
            for w in 0..d {
                beta[[w, j]] += (self.n_wk[w * k + j] as f64 + self.lambda_beta) / denom;
            }
        }
        for (i, &n_i) in doc_totals.iter().enumerate() {
            let denom = n_i as f64 + k as f64 * self.lambda_gamma;
            for j in 0..k {
                gamma[[i, j]] += (self.n_dk[i * k + j] as f64 + self.lambda_gamma) / denom;
            }
        }
    }
}

fn normalize_columns(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        col.mapv_inplace(|x| x / s);
    }
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
}

pub fn fit_lda(counts: &CountMatrix, hyper: LdaHyperparams, cfg: &GibbsConfig) -> Result<TopicModel, LdaError> {
    cfg.validate()?;
    let hyper = LdaHyperparams::new(hyper.k, hyper.lambda_gamma, hyper.lambda_beta)?;
    let k = hyper.k;
    if k > u32::MAX as usize {
        return Err(LdaError::InvalidConfig("k too large".into()));
    }
    let (n, d) = (counts.n_samples(), counts.n_features());
    let tokens = Tokens::from_counts(counts);
    let doc_totals: Vec<usize> = (0..n).map(|i| tokens.doc(i).len()).collect();
    let mut rng = cfg.rng.generator();

    let mut state = GibbsState {
        k,
        d,
        lambda_gamma: hyper.lambda_gamma,
        lambda_beta: hyper.lambda_beta,
        z: vec![0; tokens.words.len()],
        n_dk: vec![0; n * k],
        n_wk: vec![0; d * k],
        n_k: vec![0; k],
    };
    for i in 0..n {
        for t in tokens.doc(i) {
            let topic = rng.random_range(0..k);
            state.z[t] = topic as u32;
            state.n_dk[i * k + topic] += 1;
            state.n_wk[tokens.words[t] as usize * k + topic] += 1;
            state.n_k[topic] += 1;
        }
    }

    let mut beta = Array2::zeros((d, k));
    let mut gamma = Array2::zeros((n, k));
    let mut trace = Vec::with_capacity(cfg.total_sweeps());
    let mut cum = vec![0.0; k];
    let mut kept = 0;
    let mut sweep = 0;
    while kept < cfg.samples {
        state.sweep(&tokens, &mut rng, &mut cum);
        sweep += 1;
        trace.push(state.log_likelihood(&doc_totals));
        if sweep > cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thin) {
            state.accumulate(&mut beta, &mut gamma, &doc_totals);
            kept += 1;
        }
    }
    normalize_columns(&mut beta);
    normalize_rows(&mut gamma);
    Ok(TopicModel { hyper, beta, gamma, log_likelihood_trace: trace })
}

/// Fit one model per K in `k_range`. Each K draws from its own substream of
/// `cfg.rng`, so results do not depend on scheduling.
pub fn fit_ensemble(
    counts: &CountMatrix,
    k_range: RangeInclusive<usize>,
    lambda_gamma: f64,
    lambda_beta: f64,
    cfg: &GibbsConfig,
) -> Result<ModelEnsemble, LdaError> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(LdaError::InvalidConfig(format!(
            "k range {}..{} must be nonempty and start at 1 or more",
            k_range.start(),
            k_range.end()
        )));
    }
    cfg.validate()?;
    let ks: Vec<usize> = k_range.collect();
    let models = ks
        .par_iter()
        .map(|&k| {
            let hyper = LdaHyperparams::new(k, lambda_gamma, lambda_beta)?;
            let cfg_k = GibbsConfig { rng: cfg.rng.substream(k as u64), ..*cfg };
            fit_lda(counts, hyper, &cfg_k)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ModelEnsemble::new(models, counts.fingerprint())
}

/// Held-out perplexity `exp(-sum_i log p(x_i) / sum_i n_i)`.
///
/// `log p(x_i)` is the multinomial log-likelihood (without the multinomial
/// coefficient) at `B γ̂_i`, where `γ̂_i` is the fold-in posterior mean: topic
/// assignments for the held-out document are Gibbs-sampled with `B` fixed
/// for [`FOLD_IN_SWEEPS`] sweeps and the last half are averaged.
pub fn perplexity(model: &TopicModel, heldout: &CountMatrix, cfg: &GibbsConfig) -> Result<f64, LdaError> {
    if heldout.n_features() != model.n_features() {
        return Err(LdaError::DimensionMismatch { expected: model.n_features(), found: heldout.n_features() });
    }
    let k = model.k();
    let lg = model.hyper.lambda_gamma;
    let beta = &model.beta;
    let per_doc: Vec<(f64, u64)> = (0..heldout.n_samples())
        .into_par_iter()
        .map(|i| {
            let row = heldout.row(i);
            let words: Vec<usize> = row
                .iter()
                .enumerate()
                .flat_map(|(d, &c)| std::iter::repeat_n(d, c as usize))
                .collect();
            let n_i = words.len();
            let mut rng = cfg.rng.substream(i as u64).generator();
            let mut z: Vec<usize> = words.iter().map(|_| rng.random_range(0..k)).collect();
            let mut n_k = vec![0u32; k];
            for &t in &z {
                n_k[t] += 1;
            }
            let mut cum = vec![0.0; k];
            let mut gamma_hat = vec![0.0; k];
            let keep_from = FOLD_IN_SWEEPS / 2;
            for sweep in 0..FOLD_IN_SWEEPS {
                for (t, &w) in words.iter().enumerate() {
                    n_k[z[t]] -= 1;
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += beta[[w, j]] * (n_k[j] as f64 + lg);
                        cum[j] = acc;
                    }
                    let new = draw_from_cumulative(&cum, rng.random::<f64>());
                    z[t] = new;
                    n_k[new] += 1;
                }
                if sweep >= keep_from {
                    let denom = n_i as f64 + k as f64 * lg;
                    for j in 0..k {
                        gamma_hat[j] += (n_k[j] as f64 + lg) / denom;
                    }
                }
            }
            let s: f64 = gamma_hat.iter().sum();
            gamma_hat.iter_mut().for_each(|g| *g /= s);
            let mut log_p = 0.0;
            for (d, &c) in row.iter().enumerate() {
                if c > 0 {
                    let theta: f64 = (0..k).map(|j| beta[[d, j]] * gamma_hat[j]).sum();
                    log_p += c as f64 * theta.ln();
                }
            }
            (log_p, n_i as u64)
        })
        .collect();
    let total_log_p: f64 = per_doc.iter().map(|(l, _)| l).sum();
    let total_n: u64 = per_doc.iter().map(|(_, n)| n).sum();
    Ok((-total_log_p / total_n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> CountMatrix {
        CountMatrix::from_counts(array![[5, 0, 1, 0], [4, 1, 0, 0], [0, 0, 6, 3], [1, 0, 4, 5], [2, 2, 2, 2]])
            .unwrap()
    }

    fn quick(seed: u64) -> GibbsConfig {
        GibbsConfig { burn_in: 20, samples: 10, thin: 2, rng: SeededRng::new(seed) }
    }

    #[test]
    fn single_topic_is_smoothed_frequency() {
        let c = toy();
        let m = fit_lda(&c, LdaHyperparams::new(1, 0.5, 0.1).unwrap(), &quick(1)).unwrap();
        assert!(m.gamma.iter().all(|&g| g == 1.0));
        let totals = c.counts().sum_axis(Axis(0));
        let n: u64 = totals.sum();
        for d in 0..4 {
            let expected = (totals[d] as f64 + 0.1) / (n as f64 + 4.0 * 0.1);
            assert_abs_diff_eq!(m.beta[[d, 0]], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn fits_are_stochastic_and_deterministic() {
        let c = toy();
        let h = LdaHyperparams::new(3, 0.5, 0.1).unwrap();
        let a = fit_lda(&c, h, &quick(4)).unwrap();
        let b = fit_lda(&c, h, &quick(4)).unwrap();
        assert_eq!(a, b);
        a.check_stochastic(1e-9).unwrap();
        assert_eq!(a.log_likelihood_trace.len(), quick(4).total_sweeps());
        let other = fit_lda(&c, h, &quick(5)).unwrap();
        assert_ne!(a.gamma, other.gamma);
    }

    #[test]
    fn invalid_configs() {
        assert!(LdaHyperparams::new(0, 0.5, 0.1).is_err());
        assert!(LdaHyperparams::new(2, 0.0, 0.1).is_err());
        assert!(LdaHyperparams::new(2, 0.5, -1.0).is_err());
        let cfg = GibbsConfig { samples: 0, ..quick(0) };
        assert!(matches!(
            fit_lda(&toy(), LdaHyperparams::new(2, 0.5, 0.1).unwrap(), &cfg),
            Err(LdaError::InvalidConfig(_))
        ));
        let cfg = GibbsConfig { thin: 0, ..quick(0) };
        assert!(cfg.validate().is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(fit_ensemble(&toy(), empty, 0.5, 0.1, &quick(0)).is_err());
    }

    #[test]
    fn ensemble_shape_and_ordering() {
        let e = fit_ensemble(&toy(), 2..=4, 0.5, 0.1, &quick(2)).unwrap();
        assert_eq!(e.ks(), vec![2, 3, 4]);
        assert_eq!(e.corpus_fingerprint, toy().fingerprint());
        let mut models = e.models.clone();
        models.swap(0, 1);
        assert!(ModelEnsemble::new(models, String::new()).is_err());
    }

    #[test]
    fn uniform_model_perplexity_is_d() {
        let d = 4;
        let model = TopicModel {
            hyper: LdaHyperparams::new(2, 0.5, 0.1).unwrap(),
            beta: Array2::from_elem((d, 2), 1.0 / d as f64),
            gamma: Array2::from_elem((1, 2), 0.5),
            log_likelihood_trace: vec![],
        };
        let p = perplexity(&model, &toy(), &quick(0)).unwrap();
        assert_abs_diff_eq!(p.ln(), (d as f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn point_mass_perplexity_tends_to_one() {
        let c = CountMatrix::from_counts(array![[50, 0, 0], [20, 0, 0]]).unwrap();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-8] {
            let model = TopicModel {
                hyper: LdaHyperparams::new(1, 0.5, eps).unwrap(),
                beta: array![[1.0 - 2.0 * eps], [eps], [eps]],
                gamma: array![[1.0]],
                log_likelihood_trace: vec![],
            };
            let p = perplexity(&model, &c, &quick(0)).unwrap();
            assert!(p >= 1.0 && p < last);
            last = p;
        }
        assert!(last - 1.0 < 1e-7);
    }

    #[test]
    fn perplexity_dimension_mismatch() {
        let m = fit_lda(&toy(), LdaHyperparams::new(2, 0.5, 0.1).unwrap(), &quick(0)).unwrap();
        let other = CountMatrix::from_counts(array![[1, 2, 3]]).unwrap();
        assert_eq!(
            perplexity(&m, &other, &quick(0)),
            Err(LdaError::DimensionMismatch { expected: 4, found: 3 })
        );
    }
}
