//! Replicated simulation sweeps: simulate, fit an ensemble, align, score,
//! and aggregate per-replicate diagnostics into a report.
//!
//! Each replicate writes its own record file under `<out>/replicates/`, so an
//! interrupted run picks up where it stopped. Records carry a digest of the
//! configuration and are only reused when it matches.
//!
//! Replicate `r` draws its corpus from the same stream in every grid cell, so
//! cells differ only in the swept parameter.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::Method;
use crate::corpus::{CorpusError, CountMatrix};
use crate::diagnostics::estimation_specificity;
use crate::lda::{fit_ensemble, GibbsConfig};
use crate::report::{analyze, summarize, AlignmentDocument, Envelope, PlateauSummary};
use crate::rng::SeededRng;
use crate::simulate::{
    sim_background, sim_lda, sim_null, sim_strain_switching, BackgroundSimSpec, LdaSimSpec, StrainSwitchSpec,
};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Lda,
    Null,
    Background,
    Strain,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Lda => "lda",
            Mechanism::Null => "null",
            Mechanism::Background => "background",
            Mechanism::Strain => "strain",
        })
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(Mechanism::Lda),
            "null" => Ok(Mechanism::Null),
            "background" => Ok(Mechanism::Background),
            "strain" => Ok(Mechanism::Strain),
            other => Err(format!("unknown mechanism `{other}` (expected lda, null, background or strain)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mechanism: Mechanism,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_topics: usize,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
    pub doc_total: u64,
    /// Mixing weight for `background` when `grid` is empty.
    pub alpha: f64,
    pub lambda_nu: f64,
    pub replicates_per_topic: Vec<usize>,
    /// Perturbed subset size for `strain` when `grid` is empty.
    pub subset_size: usize,
    pub lambda_s: f64,
    /// Swept values: α for `background`, S for `strain`; ignored otherwise.
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub fit_lambda_gamma: f64,
    pub fit_lambda_beta: f64,
    pub method: Method,
    pub seed: u64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = LdaSimSpec::desk_scale(0);
        let gibbs = GibbsConfig::default();
        Self {
            mechanism: Mechanism::Lda,
            n_samples: sim.n_samples,
            n_features: sim.n_features,
            n_topics: sim.n_topics,
            lambda_gamma: sim.lambda_gamma,
            lambda_beta: sim.lambda_beta,
            doc_total: sim.doc_total,
            alpha: 1.0,
            lambda_nu: 1.0,
            replicates_per_topic: vec![2, 2, 1, 1, 1],
            subset_size: 230,
            lambda_s: 0.1,
            grid: Vec::new(),
            replicates: 1,
            k_min: 2,
            k_max: 8,
            fit_lambda_gamma: 0.5,
            fit_lambda_beta: 0.1,
            method: Method::Product,
            seed: 0,
            burn_in: gibbs.burn_in,
            samples: gibbs.samples,
            thin: gibbs.thin,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Usage(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad(format!("invalid K range {}..{}", self.k_min, self.k_max));
        }
        for (i, cell) in self.cells().iter().enumerate() {
            if let Some(v) = cell {
                match self.mechanism {
                    Mechanism::Background if !(0.0..=1.0).contains(v) => {
                        return bad(format!("grid value {i} ({v}) is not a mixing weight in [0, 1]"));
                    }
                    Mechanism::Strain if v.fract() != 0.0 || *v < 1.0 || *v > self.n_features as f64 => {
                        return bad(format!("grid value {i} ({v}) is not a subset size in 1..={}", self.n_features));
                    }
                    _ => {}
                }
            }
        }
        self.gibbs(SeededRng::new(self.seed)).validate()?;
        Ok(())
    }

    /// Grid cells; `None` for mechanisms without a swept parameter.
    pub fn cells(&self) -> Vec<Option<f64>> {
        match self.mechanism {
            Mechanism::Lda | Mechanism::Null => vec![None],
            Mechanism::Background if self.grid.is_empty() => vec![Some(self.alpha)],
            Mechanism::Strain if self.grid.is_empty() => vec![Some(self.subset_size as f64)],
            _ => self.grid.iter().copied().map(Some).collect(),
        }
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("configs always serialize");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn gibbs(&self, rng: SeededRng) -> GibbsConfig {
        GibbsConfig { burn_in: self.burn_in, samples: self.samples, thin: self.thin, rng }
    }

    fn lda_spec(&self, rng: SeededRng) -> LdaSimSpec {
        LdaSimSpec {
            n_samples: self.n_samples,
            n_features: self.n_features,
            n_topics: self.n_topics,
            lambda_gamma: self.lambda_gamma,
            lambda_beta: self.lambda_beta,
            doc_total: self.doc_total,
            rng,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub config_digest: String,
    pub cell: usize,
    pub grid_value: Option<f64>,
    pub replicate: usize,
    pub ks: Vec<usize>,
    pub n_paths: Vec<usize>,
    pub plateau: Option<PlateauSummary>,
    /// Per-model coherence of every topic, indexed like `ks`.
    pub coherence: Vec<Vec<f64>>,
    /// Per-model refinement; empty for the finest model.
    pub refinement: Vec<Vec<f64>>,
    /// Estimation specificity per model (strain switching only).
    pub specificity: Option<Vec<f64>>,
}

impl ReplicateRecord {
    fn model_position(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn coherence_at(&self, k: usize) -> Option<&[f64]> {
        self.model_position(k).map(|m| self.coherence[m].as_slice())
    }

    pub fn coherence_envelope(&self, k: usize) -> Option<Envelope> {
        self.coherence_at(k).and_then(Envelope::of)
    }

    pub fn refinement_envelope(&self, k: usize) -> Option<Envelope> {
        self.model_position(k).and_then(|m| Envelope::of(&self.refinement[m]))
    }

    pub fn specificity_at(&self, k: usize) -> Option<f64> {
        let m = self.model_position(k)?;
        self.specificity.as_ref().map(|s| s[m])
    }

    pub fn plateau_value(&self) -> Option<usize> {
        self.plateau.as_ref().filter(|p| p.is_plateau).map(|p| p.value)
    }

    pub fn all_coherence(&self) -> Vec<f64> {
        self.coherence.concat()
    }

    pub fn all_refinement(&self) -> Vec<f64> {
        self.refinement.concat()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, cell: usize) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(move |r| r.cell == cell)
    }

    pub fn to_csv(&self) -> String {
        let join_u = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        let join_f = |v: Vec<Option<f64>>| {
            v.into_iter().map(|x| x.map(|y| y.to_string()).unwrap_or_default()).collect::<Vec<_>>().join(";")
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mechanism",
            "grid_value",
            "replicate",
            "ks",
            "n_paths",
            "plateau_value",
            "plateau_start_k",
            "plateau_run_length",
            "coherence_min",
            "coherence_median",
            "coherence_max",
            "refinement_median",
            "specificity",
        ])
        .expect("writing to memory");
        for r in &self.records {
            let (pv, ps, pl) = match &r.plateau {
                Some(p) => (p.value.to_string(), p.start_k.to_string(), p.run_length.to_string()),
                None => Default::default(),
            };
            let env: Vec<Option<Envelope>> = r.ks.iter().map(|&k| r.coherence_envelope(k)).collect();
            w.write_record([
                self.config.mechanism.to_string(),
                r.grid_value.map(|g| g.to_string()).unwrap_or_default(),
                r.replicate.to_string(),
                join_u(&r.ks),
                join_u(&r.n_paths),
                pv,
                ps,
                pl,
                join_f(env.iter().map(|e| e.map(|e| e.min)).collect()),
                join_f(env.iter().map(|e| e.map(|e| e.median)).collect()),
                join_f(env.iter().map(|e| e.map(|e| e.max)).collect()),
                join_f(r.ks.iter().map(|&k| r.refinement_envelope(k).map(|e| e.median)).collect()),
                join_f(r.specificity.clone().map(|s| s.into_iter().map(Some).collect()).unwrap_or_default()),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Corpus(CorpusError::IoFailure { path: path.display().to_string(), source })
}

fn record_path(dir: &Path, cell: usize, replicate: usize) -> PathBuf {
    dir.join("replicates").join(format!("cell{cell:03}_rep{replicate:03}.json"))
}

fn load_checkpoint(path: &Path, digest: &str) -> Option<ReplicateRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str::<ReplicateRecord>(&text).ok().filter(|r| r.config_digest == digest)
}

/// Simulate, fit, align and score one replicate of one grid cell.
pub fn run_replicate(config: &ExperimentConfig, cell: usize, replicate: usize) -> Result<ReplicateRecord, Error> {
    let grid_value = config.cells()[cell];
    let root = SeededRng::new(config.seed);
    let data_rng = root.path(&[replicate as u64, 0]);
    let fit_rng = root.path(&[replicate as u64, 1]);
    let mut competing = None;
    let counts: CountMatrix = match config.mechanism {
        Mechanism::Lda => sim_lda(&config.lda_spec(data_rng))?.counts,
        Mechanism::Null => sim_null(config.n_samples, config.n_features, config.doc_total, data_rng)?,
        Mechanism::Background => {
            let spec = BackgroundSimSpec {
                base: config.lda_spec(data_rng),
                alpha: grid_value.unwrap_or(config.alpha),
                lambda_nu: config.lambda_nu,
            };
            sim_background(&spec)?.counts
        }
        Mechanism::Strain => {
            let spec = StrainSwitchSpec {
                base: config.lda_spec(data_rng),
                replicates_per_topic: config.replicates_per_topic.clone(),
                subset_size: grid_value.map_or(config.subset_size, |v| v as usize),
                lambda_s: config.lambda_s,
            };
            let sim = sim_strain_switching(&spec)?;
            competing = sim.truth.competing_pairs();
            sim.counts
        }
    };
    let ensemble = fit_ensemble(
        &counts,
        config.k_min..=config.k_max,
        config.fit_lambda_gamma,
        config.fit_lambda_beta,
        &config.gibbs(fit_rng),
    )?;
    let analysis = analyze(&ensemble, config.method)?;
    let doc = AlignmentDocument::new(&ensemble, &analysis);
    let summary = summarize(&doc);
    let ks = ensemble.ks();
    let coherence = (0..ks.len()).map(|m| analysis.scores.coherence_of(m)).collect();
    let refinement = (0..ks.len()).map(|m| analysis.scores.refinement_of(m)).collect();
    let specificity = match competing {
        Some(truth) => Some(
            ensemble
                .models
                .iter()
                .map(|model| estimation_specificity(&truth, model))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    Ok(ReplicateRecord {
        config_digest: config.digest(),
        cell,
        grid_value,
        replicate,
        ks,
        n_paths: summary.models.iter().map(|m| m.n_paths).collect(),
        plateau: summary.plateau,
        coherence,
        refinement,
        specificity,
    })
}

/// Run every grid cell and replicate. With an output directory, finished
/// replicates are checkpointed and reused, and `report.csv` / `report.json`
/// are written at the end.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport, Error> {
    config.validate()?;
    let digest = config.digest();
    if let Some(dir) = out_dir {
        let rep_dir = dir.join("replicates");
        std::fs::create_dir_all(&rep_dir).map_err(io(&rep_dir))?;
    }
    let jobs: Vec<(usize, usize)> = (0..config.cells().len())
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(cell, rep)| {
            let Some(dir) = out_dir else { return run_replicate(config, cell, rep) };
            let path = record_path(dir, cell, rep);
            if let Some(done) = load_checkpoint(&path, &digest) {
                return Ok(done);
            }
            let record = run_replicate(config, cell, rep)?;
            let text = serde_json::to_string_pretty(&record).expect("records always serialize");
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, text).map_err(io(&tmp))?;
            std::fs::rename(&tmp, &path).map_err(io(&path))?;
            Ok(record)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = ExperimentReport { config: config.clone(), records };
    if let Some(dir) = out_dir {
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, report.to_csv()).map_err(io(&csv_path))?;
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report).expect("reports always serialize");
        std::fs::write(&json_path, json).map_err(io(&json_path))?;
    }
    Ok(report)
}
