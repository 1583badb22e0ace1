//! Count matrices and the on-disk formats for corpora and fitted ensembles.
//!
//! Corpora are read from CSV (header row of feature IDs, leading sample-ID
//! column) or JSON (`{"sample_ids", "feature_ids", "counts"}`). Ensembles are
//! a JSON list of model records; `beta` is stored column-major (one topic per
//! contiguous block of `D` values) and `gamma` row-major (one sample per block
//! of `K` values).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lda::{LdaHyperparams, ModelEnsemble, TopicModel};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("sample `{0}` has no counts")]
    EmptySample(String),
    #[error("need at least 2 features, found {0}")]
    DimensionTooSmall(usize),
    #[error("ensemble schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::IoFailure { path: path.display().to_string(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountFormat {
    Csv,
    Json,
}

impl CountFormat {
    /// Guess from the file extension; anything other than `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => CountFormat::Json,
            _ => CountFormat::Csv,
        }
    }
}

/// N×D table of nonnegative counts with row and column labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    counts: Array2<u64>,
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
}

impl CountMatrix {
    pub fn new(
        counts: Array2<u64>,
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let (n, d) = counts.dim();
        if n == 0 {
            return Err(CorpusError::MalformedFile("no samples".into()));
        }
        if d < 2 {
            return Err(CorpusError::DimensionTooSmall(d));
        }
        if sample_ids.len() != n || feature_ids.len() != d {
            return Err(CorpusError::MalformedFile(format!(
                "{} sample labels and {} feature labels for a {n}x{d} table",
                sample_ids.len(),
                feature_ids.len()
            )));
        }
        for (i, row) in counts.outer_iter().enumerate() {
            if row.sum() == 0 {
                return Err(CorpusError::EmptySample(sample_ids[i].clone()));
            }
        }
        Ok(Self { counts, sample_ids, feature_ids })
    }

    /// Unlabelled matrix; samples are named `s1..sN` and features `f1..fD`.
    pub fn from_counts(counts: Array2<u64>) -> Result<Self, CorpusError> {
        let (n, d) = counts.dim();
        let sample_ids = (1..=n).map(|i| format!("s{i}")).collect();
        let feature_ids = (1..=d).map(|j| format!("f{j}")).collect();
        Self::new(counts, sample_ids, feature_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, u64> {
        self.counts.row(i)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    /// Per-sample totals n_i.
    pub fn totals(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(1)).to_vec()
    }

    /// Keep the listed rows, in the given order.
    pub fn select_samples(&self, rows: &[usize]) -> Result<Self, CorpusError> {
        let counts = self.counts.select(Axis(0), rows);
        let ids = rows.iter().map(|&i| self.sample_ids[i].clone()).collect();
        Self::new(counts, ids, self.feature_ids.clone())
    }

    /// SHA-256 over the shape and the counts, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_samples() as u64).to_le_bytes());
        h.update((self.n_features() as u64).to_le_bytes());
        for &c in self.counts.iter() {
            h.update(c.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CountsJson {
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
    counts: Vec<Vec<i64>>,
}

pub fn load_counts(path: &Path, format: CountFormat) -> Result<CountMatrix, CorpusError> {
    match format {
        CountFormat::Csv => load_counts_csv(path),
        CountFormat::Json => load_counts_json(path),
    }
}

fn parse_count(cell: &str, line: usize) -> Result<u64, CorpusError> {
    cell.trim().parse::<u64>().map_err(|_| {
        CorpusError::MalformedFile(format!("line {line}: `{cell}` is not a nonnegative integer"))
    })
}

fn load_counts_csv(path: &Path) -> Result<CountMatrix, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| CorpusError::MalformedFile(e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(CorpusError::MalformedFile("empty header".into()));
    }
    let feature_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let d = feature_ids.len();
    let mut sample_ids = Vec::new();
    let mut flat = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
        if record.len() != d + 1 {
            return Err(CorpusError::MalformedFile(format!(
                "line {line}: expected {} fields, found {}",
                d + 1,
                record.len()
            )));
        }
        sample_ids.push(record[0].trim().to_string());
        for cell in record.iter().skip(1) {
            flat.push(parse_count(cell, line)?);
        }
    }
    let n = sample_ids.len();
    if d < 2 {
        return Err(CorpusError::DimensionTooSmall(d));
    }
    let counts = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
    CountMatrix::new(counts, sample_ids, feature_ids)
}

fn load_counts_json(path: &Path) -> Result<CountMatrix, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let doc: CountsJson = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
    let d = doc.feature_ids.len();
    if d < 2 {
        return Err(CorpusError::DimensionTooSmall(d));
    }
    let mut flat = Vec::with_capacity(doc.counts.len() * d);
    for (i, row) in doc.counts.iter().enumerate() {
        if row.len() != d {
            return Err(CorpusError::MalformedFile(format!("row {i}: ragged")));
        }
        for &c in row {
            let c = u64::try_from(c)
                .map_err(|_| CorpusError::MalformedFile(format!("row {i}: negative count {c}")))?;
            flat.push(c);
        }
    }
    let counts = Array2::from_shape_vec((doc.counts.len(), d), flat)
        .map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
    CountMatrix::new(counts, doc.sample_ids, doc.feature_ids)
}

pub fn save_counts(counts: &CountMatrix, path: &Path, format: CountFormat) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        CountFormat::Csv => {
            write!(out, "sample").map_err(io_err(path))?;
            for f in &counts.feature_ids {
                write!(out, ",{f}").map_err(io_err(path))?;
            }
            writeln!(out).map_err(io_err(path))?;
            for (id, row) in counts.sample_ids.iter().zip(counts.counts.outer_iter()) {
                write!(out, "{id}").map_err(io_err(path))?;
                for c in row {
                    write!(out, ",{c}").map_err(io_err(path))?;
                }
                writeln!(out).map_err(io_err(path))?;
            }
        }
        CountFormat::Json => {
            let doc = CountsJson {
                sample_ids: counts.sample_ids.clone(),
                feature_ids: counts.feature_ids.clone(),
                counts: counts
                    .counts
                    .outer_iter()
                    .map(|r| r.iter().map(|&c| c as i64).collect())
                    .collect(),
            };
            serde_json::to_writer(&mut out, &doc)
                .map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
        }
    }
    out.flush().map_err(io_err(path))
}

/// One entry of the ensemble file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelRecord {
    pub k: usize,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
    /// D×K, column-major.
    pub beta: Vec<f64>,
    /// N×K, row-major.
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

impl ModelRecord {
    pub fn from_model(model: &TopicModel, fingerprint: Option<&str>) -> Self {
        let beta = model.beta.t().iter().copied().collect();
        let gamma = model.gamma.iter().copied().collect();
        Self {
            k: model.hyper.k,
            lambda_gamma: model.hyper.lambda_gamma,
            lambda_beta: model.hyper.lambda_beta,
            beta,
            gamma,
            corpus_fingerprint: fingerprint.map(str::to_string),
            log_likelihood_trace: model.log_likelihood_trace.clone(),
        }
    }

    pub fn into_model(self) -> Result<TopicModel, CorpusError> {
        let k = self.k;
        if k == 0 {
            return Err(CorpusError::SchemaMismatch("k must be at least 1".into()));
        }
        if self.beta.is_empty() || !self.beta.len().is_multiple_of(k) {
            return Err(CorpusError::SchemaMismatch(format!(
                "beta has {} values, not a multiple of k={k}",
                self.beta.len()
            )));
        }
        if self.gamma.is_empty() || !self.gamma.len().is_multiple_of(k) {
            return Err(CorpusError::SchemaMismatch(format!(
                "gamma has {} values, not a multiple of k={k}",
                self.gamma.len()
            )));
        }
        let d = self.beta.len() / k;
        let n = self.gamma.len() / k;
        let beta_t = Array2::from_shape_vec((k, d), self.beta)
            .map_err(|e| CorpusError::SchemaMismatch(e.to_string()))?;
        let gamma = Array2::from_shape_vec((n, k), self.gamma)
            .map_err(|e| CorpusError::SchemaMismatch(e.to_string()))?;
        let hyper = LdaHyperparams::new(k, self.lambda_gamma, self.lambda_beta)
            .map_err(|e| CorpusError::SchemaMismatch(e.to_string()))?;
        Ok(TopicModel {
            hyper,
            beta: beta_t.reversed_axes().as_standard_layout().to_owned(),
            gamma,
            log_likelihood_trace: self.log_likelihood_trace,
        })
    }
}

/// Serialize to the ensemble JSON text.
pub fn ensemble_to_json(ensemble: &ModelEnsemble) -> String {
    let fp = (!ensemble.corpus_fingerprint.is_empty()).then_some(ensemble.corpus_fingerprint.as_str());
    let records: Vec<ModelRecord> =
        ensemble.models.iter().map(|m| ModelRecord::from_model(m, fp)).collect();
    serde_json::to_string(&records).expect("ensemble records always serialize")
}

pub fn ensemble_from_json(text: &str) -> Result<ModelEnsemble, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
    let records: Vec<ModelRecord> =
        serde_json::from_value(value).map_err(|e| CorpusError::SchemaMismatch(e.to_string()))?;
    let fingerprint = records
        .iter()
        .find_map(|r| r.corpus_fingerprint.clone())
        .unwrap_or_default();
    let models = records
        .into_iter()
        .map(ModelRecord::into_model)
        .collect::<Result<Vec<_>, _>>()?;
    ModelEnsemble::new(models, fingerprint).map_err(|e| CorpusError::SchemaMismatch(e.to_string()))
}

pub fn save_ensemble(ensemble: &ModelEnsemble, path: &Path) -> Result<(), CorpusError> {
    std::fs::write(path, ensemble_to_json(ensemble)).map_err(io_err(path))
}

pub fn load_ensemble(path: &Path) -> Result<ModelEnsemble, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    ensemble_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parses_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "c.csv", "sample,a,b,c\nx,1,2,3\ny,0,0,5\n");
        let m = load_counts(&p, CountFormat::Csv).unwrap();
        assert_eq!(m.totals(), vec![6, 5]);
        assert_eq!(m.sample_ids(), ["x", "y"]);
        assert_eq!(m.feature_ids(), ["a", "b", "c"]);
    }

    #[test]
    fn rejects_negative_and_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "neg.csv", "sample,a,b\nx,1,-1\n");
        assert!(matches!(load_counts(&p, CountFormat::Csv), Err(CorpusError::MalformedFile(_))));
        let p = write_tmp(&dir, "frac.csv", "sample,a,b\nx,1,2.5\n");
        assert!(matches!(load_counts(&p, CountFormat::Csv), Err(CorpusError::MalformedFile(_))));
        let p = write_tmp(&dir, "rag.csv", "sample,a,b\nx,1,2\ny,3\n");
        assert!(matches!(load_counts(&p, CountFormat::Csv), Err(CorpusError::MalformedFile(_))));
    }

    #[test]
    fn rejects_empty_sample_and_narrow_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "z.csv", "sample,a,b\nx,1,2\ny,0,0\n");
        match load_counts(&p, CountFormat::Csv) {
            Err(CorpusError::EmptySample(s)) => assert_eq!(s, "y"),
            other => panic!("expected EmptySample, got {other:?}"),
        }
        let p = write_tmp(&dir, "d1.csv", "sample,a\nx,4\n");
        assert!(matches!(load_counts(&p, CountFormat::Csv), Err(CorpusError::DimensionTooSmall(1))));
    }

    #[test]
    fn json_counts_reject_negative() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "c.json",
            r#"{"sample_ids":["x"],"feature_ids":["a","b"],"counts":[[1,-2]]}"#,
        );
        assert!(matches!(load_counts(&p, CountFormat::Json), Err(CorpusError::MalformedFile(_))));
    }

    #[test]
    fn counts_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = CountMatrix::new(
            array![[1, 2, 3], [0, 7, 1]],
            vec!["s-a".into(), "s-b".into()],
            vec!["ASV1".into(), "ASV2".into(), "ASV3".into()],
        )
        .unwrap();
        for fmt in [CountFormat::Csv, CountFormat::Json] {
            let p = dir.path().join(format!("{fmt:?}"));
            save_counts(&m, &p, fmt).unwrap();
            assert_eq!(load_counts(&p, fmt).unwrap(), m);
        }
    }

    #[test]
    fn missing_gamma_is_schema_mismatch() {
        let text = r#"[{"k":2,"lambda_gamma":0.5,"lambda_beta":0.1,"beta":[0.5,0.5,0.5,0.5]}]"#;
        assert!(matches!(ensemble_from_json(text), Err(CorpusError::SchemaMismatch(_))));
        let text = r#"[{"lambda_gamma":0.5,"lambda_beta":0.1,"beta":[1.0],"gamma":[1.0]}]"#;
        assert!(matches!(ensemble_from_json(text), Err(CorpusError::SchemaMismatch(_))));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = CountMatrix::from_counts(array![[1, 2], [3, 4]]).unwrap();
        let b = CountMatrix::from_counts(array![[1, 2], [3, 5]]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
