//! The alignment document written by `align`, plus the scores table and
//! per-model summary derived from it.
//!
//! The document carries the full weight matrices so downstream tools can
//! rebuild the graph without refitting or recomputing alignments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{align_ensemble, reorder_topics, AlignError, AlignmentGraph, Method, PairBlock, Reordering};
use crate::corpus::CorpusError;
use crate::diagnostics::{assign_paths, compute_scores, detect_plateau, PathAssignment, TopicScores};
use crate::lda::ModelEnsemble;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub k: usize,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    /// Position of the model in the ensemble.
    pub model: usize,
    pub index: usize,
    pub display_index: usize,
    pub mass: f64,
    pub path: usize,
    pub coherence: f64,
    pub refinement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub m: usize,
    pub m2: usize,
    pub w: Vec<Vec<f64>>,
    pub w_in: Vec<Vec<f64>>,
    pub w_out: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorderRecord {
    pub objective_before: f64,
    pub objective_after: f64,
    pub permutations: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDocument {
    pub method: Method,
    pub n_samples: usize,
    pub models: Vec<ModelInfo>,
    pub nodes: Vec<NodeRecord>,
    pub pairs: Vec<PairRecord>,
    pub reorder: ReorderRecord,
}

/// Everything computed from one ensemble.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub graph: AlignmentGraph,
    pub reordering: Reordering,
    pub paths: PathAssignment,
    pub scores: TopicScores,
}

/// Align, reorder for display, assign paths and score every topic.
pub fn analyze(ensemble: &ModelEnsemble, method: Method) -> Result<Analysis, AlignError> {
    let mut graph = align_ensemble(ensemble, method)?;
    let reordering = reorder_topics(&mut graph);
    let paths = assign_paths(&graph);
    let scores = compute_scores(&graph, &paths);
    Ok(Analysis { graph, reordering, paths, scores })
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<ndarray::Array2<f64>, CorpusError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CorpusError::SchemaMismatch(format!("ragged matrix `{name}`")));
    }
    ndarray::Array2::from_shape_vec((rows.len(), ncols), rows.concat())
        .map_err(|e| CorpusError::SchemaMismatch(e.to_string()))
}

impl AlignmentDocument {
    pub fn new(ensemble: &ModelEnsemble, analysis: &Analysis) -> Self {
        let graph = &analysis.graph;
        let models = ensemble
            .models
            .iter()
            .map(|m| ModelInfo { k: m.k(), lambda_gamma: m.hyper.lambda_gamma, lambda_beta: m.hyper.lambda_beta })
            .collect();
        let nodes = graph
            .nodes()
            .iter()
            .zip(&analysis.scores.topics)
            .map(|(node, score)| NodeRecord {
                model: node.model_index,
                index: node.topic_index,
                display_index: node.display_index,
                mass: node.mass,
                path: score.path,
                coherence: score.coherence,
                refinement: score.refinement,
            })
            .collect();
        let pairs = graph
            .pairs()
            .iter()
            .map(|p| PairRecord {
                m: p.source,
                m2: p.target,
                w: rows(&p.weights),
                w_in: rows(&p.w_in),
                w_out: rows(&p.w_out),
            })
            .collect();
        let r = &analysis.reordering;
        Self {
            method: graph.method,
            n_samples: graph.n_samples,
            models,
            nodes,
            pairs,
            reorder: ReorderRecord {
                objective_before: r.objective_before,
                objective_after: r.objective_after,
                permutations: r.permutations.clone(),
            },
        }
    }

    /// Rebuild the alignment graph, including display positions.
    pub fn to_graph(&self) -> Result<AlignmentGraph, CorpusError> {
        let mut masses: Vec<Vec<f64>> = self.models.iter().map(|m| vec![f64::NAN; m.k]).collect();
        let mut display: Vec<Vec<usize>> = self.models.iter().map(|m| vec![usize::MAX; m.k]).collect();
        for n in &self.nodes {
            let slot = masses
                .get_mut(n.model)
                .and_then(|m| m.get_mut(n.index))
                .ok_or_else(|| CorpusError::SchemaMismatch(format!("node ({}, {}) out of range", n.model, n.index)))?;
            *slot = n.mass;
            display[n.model][n.index] = n.display_index;
        }
        if masses.iter().flatten().any(|m| m.is_nan()) {
            return Err(CorpusError::SchemaMismatch("missing node records".into()));
        }
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                Ok(PairBlock {
                    source: p.m,
                    target: p.m2,
                    weights: matrix("w", &p.w)?,
                    w_out: matrix("w_out", &p.w_out)?,
                    w_in: matrix("w_in", &p.w_in)?,
                })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        let mut graph = AlignmentGraph::from_parts(self.method, self.n_samples, masses, pairs)
            .map_err(|e| CorpusError::SchemaMismatch(e.to_string()))?;
        for (m, order) in display.iter().enumerate() {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..order.len()).collect::<Vec<_>>() {
                return Err(CorpusError::SchemaMismatch(format!("display indices of model {m} are not a permutation")));
            }
            graph.set_display_order(m, order);
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("alignment documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CorpusError::MalformedFile(e.to_string()))?;
        serde_json::from_value(value).map_err(|e| CorpusError::SchemaMismatch(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::IoFailure { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| CorpusError::IoFailure { path: path.display().to_string(), source })
    }

    pub fn node_scores(&self, model: usize) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.iter().filter(move |n| n.model == model)
    }
}

/// Scores table with one row per topic. Refinement is left empty for the
/// finest model.
pub fn scores_csv(doc: &AlignmentDocument) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_k", "topic_index", "path_id", "mass", "coherence", "refinement"])
        .expect("writing to memory");
    for n in &doc.nodes {
        w.write_record([
            doc.models[n.model].k.to_string(),
            n.index.to_string(),
            n.path.to_string(),
            n.mass.to_string(),
            n.coherence.to_string(),
            n.refinement.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Envelope {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self { min: v[0], median: median_sorted(&v), max: v[v.len() - 1] })
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Envelope::of(values).map(|e| e.median)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSummary {
    pub value: usize,
    pub start_k: usize,
    pub run_length: usize,
    pub is_plateau: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub k: usize,
    pub n_paths: usize,
    pub coherence: Envelope,
    pub refinement: Option<Envelope>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSummary {
    pub models: Vec<ModelSummary>,
    /// Absent when the ensemble has fewer than three models.
    pub plateau: Option<PlateauSummary>,
}

pub fn summarize(doc: &AlignmentDocument) -> DiagnosticSummary {
    let mut models = Vec::with_capacity(doc.models.len());
    let mut counts = Vec::with_capacity(doc.models.len());
    for (m, info) in doc.models.iter().enumerate() {
        let nodes: Vec<&NodeRecord> = doc.node_scores(m).collect();
        let mut paths: Vec<usize> = nodes.iter().map(|n| n.path).collect();
        paths.sort_unstable();
        paths.dedup();
        counts.push(paths.len());
        let coherence: Vec<f64> = nodes.iter().map(|n| n.coherence).collect();
        let refinement: Vec<f64> = nodes.iter().filter_map(|n| n.refinement).collect();
        models.push(ModelSummary {
            k: info.k,
            n_paths: paths.len(),
            coherence: Envelope::of(&coherence).unwrap_or(Envelope { min: 0.0, median: 0.0, max: 0.0 }),
            refinement: Envelope::of(&refinement),
        });
    }
    let plateau = detect_plateau(&counts).ok().map(|p| PlateauSummary {
        value: p.value,
        start_k: doc.models[p.start_model].k,
        run_length: p.run_length,
        is_plateau: p.is_plateau(),
    });
    DiagnosticSummary { models, plateau }
}
