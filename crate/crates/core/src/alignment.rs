//! Topic alignment graphs.
//!
//! Nodes are the topics of every model in an ensemble. For each ordered pair
//! of models `(m, m2)` with `m < m2` the graph stores a weight block
//! `w[v, v2]` over `V_m × V_m2` together with its row normalization `w_out`
//! and column normalization `w_in`. Weights come either from membership
//! inner products (`Γ_mᵀ Γ_m2`) or from an optimal transport plan between
//! topic masses under JSD costs on the topic compositions.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lda::{ModelEnsemble, TopicModel};
use crate::measures::jsd;
use crate::transport::{solve_exact, TransportError, TransportProblem};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("sample count mismatch: {0} vs {1}")]
    SampleCountMismatch(usize, usize),
    #[error("feature count mismatch: {0} vs {1}")]
    FeatureCountMismatch(usize, usize),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("invalid alignment graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Product,
    Transport,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Product => "product",
            Method::Transport => "transport",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "product" => Ok(Method::Product),
            "transport" => Ok(Method::Transport),
            other => Err(format!("unknown alignment method `{other}` (expected product or transport)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicNode {
    pub model_index: usize,
    pub topic_index: usize,
    pub mass: f64,
    pub display_index: usize,
}

/// Weights between the topics of models `source < target`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBlock {
    pub source: usize,
    pub target: usize,
    pub weights: Array2<f64>,
    pub w_out: Array2<f64>,
    pub w_in: Array2<f64>,
}

impl PairBlock {
    pub fn new(source: usize, target: usize, weights: Array2<f64>) -> Self {
        let (w_out, w_in) = normalize(&weights);
        Self { source, target, weights, w_out, w_in }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentGraph {
    pub method: Method,
    /// Topic count of each model, in ensemble order.
    pub ks: Vec<usize>,
    pub n_samples: usize,
    nodes: Vec<TopicNode>,
    offsets: Vec<usize>,
    pairs: Vec<PairBlock>,
}

/// Position of block `(m, m2)` in the all-pairs order
/// `(0,1), (0,2), .., (0,M-1), (1,2), ..`.
fn pair_slot(m: usize, m2: usize, n_models: usize) -> usize {
    m * n_models - m * (m + 1) / 2 + (m2 - m - 1)
}

impl AlignmentGraph {
    /// Assemble a graph from per-model masses and all-pairs weight blocks
    /// (any order). Display indices start as the topic indices.
    pub fn from_parts(
        method: Method,
        n_samples: usize,
        masses: Vec<Vec<f64>>,
        mut pairs: Vec<PairBlock>,
    ) -> Result<Self, AlignError> {
        if masses.is_empty() {
            return Err(AlignError::EmptyEnsemble);
        }
        let ks: Vec<usize> = masses.iter().map(Vec::len).collect();
        let n_models = ks.len();
        let mut nodes = Vec::new();
        let mut offsets = Vec::with_capacity(n_models);
        for (m, mm) in masses.iter().enumerate() {
            offsets.push(nodes.len());
            for (k, &mass) in mm.iter().enumerate() {
                if !(mass >= 0.0 && mass.is_finite()) {
                    return Err(AlignError::InvalidGraph(format!("model {m} topic {k} has mass {mass}")));
                }
                nodes.push(TopicNode { model_index: m, topic_index: k, mass, display_index: k });
            }
        }
        let expected = n_models * (n_models - 1) / 2;
        if pairs.len() != expected {
            return Err(AlignError::InvalidGraph(format!("expected {expected} pair blocks, found {}", pairs.len())));
        }
        pairs.sort_by_key(|p| (p.source, p.target));
        for (slot, p) in pairs.iter().enumerate() {
            if p.source >= p.target || p.target >= n_models || pair_slot(p.source, p.target, n_models) != slot {
                return Err(AlignError::InvalidGraph(format!("unexpected pair ({}, {})", p.source, p.target)));
            }
            let shape = (ks[p.source], ks[p.target]);
            if p.weights.dim() != shape || p.w_out.dim() != shape || p.w_in.dim() != shape {
                return Err(AlignError::InvalidGraph(format!(
                    "pair ({}, {}) is not {}x{}",
                    p.source, p.target, shape.0, shape.1
                )));
            }
            if p.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(AlignError::InvalidGraph(format!("pair ({}, {}) has a bad weight", p.source, p.target)));
            }
        }
        Ok(Self { method, ks, n_samples, nodes, offsets, pairs })
    }

    pub fn n_models(&self) -> usize {
        self.ks.len()
    }

    pub fn nodes(&self) -> &[TopicNode] {
        &self.nodes
    }

    pub fn model_nodes(&self, m: usize) -> &[TopicNode] {
        &self.nodes[self.offsets[m]..self.offsets[m] + self.ks[m]]
    }

    pub fn node(&self, m: usize, k: usize) -> &TopicNode {
        &self.nodes[self.offsets[m] + k]
    }

    /// Flat node id of topic `k` in model `m`.
    pub fn node_id(&self, m: usize, k: usize) -> usize {
        self.offsets[m] + k
    }

    pub fn pairs(&self) -> &[PairBlock] {
        &self.pairs
    }

    /// Block for `m < m2`.
    pub fn pair(&self, m: usize, m2: usize) -> &PairBlock {
        assert!(m < m2 && m2 < self.n_models(), "pair ({m}, {m2}) out of range");
        &self.pairs[pair_slot(m, m2, self.n_models())]
    }

    pub fn display_order(&self, m: usize) -> Vec<usize> {
        self.model_nodes(m).iter().map(|n| n.display_index).collect()
    }

    pub fn set_display_order(&mut self, m: usize, order: &[usize]) {
        let start = self.offsets[m];
        for (k, &pos) in order.iter().enumerate() {
            self.nodes[start + k].display_index = pos;
        }
    }
}

pub fn product_weights(gamma_m: &Array2<f64>, gamma_m2: &Array2<f64>) -> Result<Array2<f64>, AlignError> {
    if gamma_m.nrows() != gamma_m2.nrows() {
        return Err(AlignError::SampleCountMismatch(gamma_m.nrows(), gamma_m2.nrows()));
    }
    Ok(gamma_m.t().dot(gamma_m2))
}

pub fn transport_weights(model_m: &TopicModel, model_m2: &TopicModel) -> Result<Array2<f64>, AlignError> {
    if model_m.n_features() != model_m2.n_features() {
        return Err(AlignError::FeatureCountMismatch(model_m.n_features(), model_m2.n_features()));
    }
    let topics_a: Vec<Vec<f64>> = (0..model_m.k()).map(|k| model_m.topic_vec(k)).collect();
    let topics_b: Vec<Vec<f64>> = (0..model_m2.k()).map(|k| model_m2.topic_vec(k)).collect();
    let mut cost = Array2::zeros((topics_a.len(), topics_b.len()));
    for (i, a) in topics_a.iter().enumerate() {
        for (j, b) in topics_b.iter().enumerate() {
            cost[[i, j]] = jsd(a, b).expect("equal lengths checked above");
        }
    }
    let problem = TransportProblem::new(model_m.masses(), model_m2.masses(), cost)?;
    Ok(solve_exact(&problem).plan)
}

/// Row-normalized (`w_out`) and column-normalized (`w_in`) copies of a
/// nonnegative block. All-zero rows or columns stay zero.
pub fn normalize(weights: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut w_out = weights.clone();
    for mut row in w_out.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
        }
    }
    let mut w_in = weights.clone();
    for mut col in w_in.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|x| x / s);
        }
    }
    (w_out, w_in)
}

pub fn align_ensemble(ensemble: &ModelEnsemble, method: Method) -> Result<AlignmentGraph, AlignError> {
    if ensemble.is_empty() {
        return Err(AlignError::EmptyEnsemble);
    }
    let n_models = ensemble.len();
    let index_pairs: Vec<(usize, usize)> =
        (0..n_models).flat_map(|m| (m + 1..n_models).map(move |m2| (m, m2))).collect();
    let pairs = index_pairs
        .par_iter()
        .map(|&(m, m2)| {
            let (a, b) = (&ensemble.models[m], &ensemble.models[m2]);
            let w = match method {
                Method::Product => product_weights(&a.gamma, &b.gamma)?,
                Method::Transport => transport_weights(a, b)?,
            };
            Ok(PairBlock::new(m, m2, w))
        })
        .collect::<Result<Vec<_>, AlignError>>()?;
    let masses = ensemble.models.iter().map(TopicModel::masses).collect();
    AlignmentGraph::from_parts(method, ensemble.n_samples(), masses, pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reordering {
    /// `permutations[m][k]` is the display position of topic k of model m.
    pub permutations: Vec<Vec<usize>>,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// `sum over consecutive pairs of |pos_m[k] - pos_m2[k2]| * w(k, k2)` for the
/// given display positions.
pub fn crossing_objective_for(graph: &AlignmentGraph, positions: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for m in 0..graph.n_models().saturating_sub(1) {
        let block = &graph.pair(m, m + 1).weights;
        for ((i, j), w) in block.indexed_iter() {
            total += (positions[m][i] as f64 - positions[m + 1][j] as f64).abs() * w;
        }
    }
    total
}

pub fn crossing_objective(graph: &AlignmentGraph) -> f64 {
    let positions: Vec<Vec<usize>> = (0..graph.n_models()).map(|m| graph.display_order(m)).collect();
    crossing_objective_for(graph, &positions)
}

/// Rank centers of gravity; ties keep the topic-index order.
fn rank(centers: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut positions = vec![0; centers.len()];
    for (pos, &k) in order.iter().enumerate() {
        positions[k] = pos;
    }
    positions
}

/// One forward and one backward barycenter pass over consecutive models.
/// Only display indices change.
pub fn reorder_topics(graph: &mut AlignmentGraph) -> Reordering {
    let objective_before = crossing_objective(graph);
    let n_models = graph.n_models();
    let mut pos: Vec<Vec<usize>> = (0..n_models).map(|m| graph.display_order(m)).collect();
    for m in 1..n_models {
        let w_in = &graph.pair(m - 1, m).w_in;
        let centers: Vec<f64> = (0..graph.ks[m])
            .map(|j| (0..graph.ks[m - 1]).map(|i| pos[m - 1][i] as f64 * w_in[[i, j]]).sum())
            .collect();
        pos[m] = rank(&centers);
    }
    for m in (1..n_models).rev() {
        let w_out = &graph.pair(m - 1, m).w_out;
        let centers: Vec<f64> = (0..graph.ks[m - 1])
            .map(|i| (0..graph.ks[m]).map(|j| pos[m][j] as f64 * w_out[[i, j]]).sum())
            .collect();
        pos[m - 1] = rank(&centers);
    }
    for (m, order) in pos.iter().enumerate() {
        graph.set_display_order(m, order);
    }
    let objective_after = crossing_objective(graph);
    Reordering { permutations: pos, objective_before, objective_after }
}
