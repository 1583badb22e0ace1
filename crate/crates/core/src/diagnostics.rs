//! Paths through an alignment graph and the per-topic diagnostics built on
//! them: number of paths, coherence and refinement.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::AlignmentGraph;
use crate::lda::TopicModel;
use crate::measures::cosine_similarity;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("refinement is undefined for topics of the finest model")]
    FinestLevel,
    #[error("plateau detection needs at least 3 models, got {0}")]
    TooFewModels(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Path IDs keyed by flat node id (see [`AlignmentGraph::node_id`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathAssignment {
    pub path_of: Vec<usize>,
    pub paths: BTreeMap<usize, Vec<usize>>,
}

impl PathAssignment {
    pub fn path(&self, graph: &AlignmentGraph, m: usize, k: usize) -> usize {
        self.path_of[graph.node_id(m, k)]
    }

    pub fn members(&self, path: usize) -> &[usize] {
        self.paths.get(&path).map_or(&[], Vec::as_slice)
    }
}

/// Seeds path IDs at the finest model with its topic indices, then gives
/// every coarser topic the path of its strongest downstream partner by
/// `w_out + w_in`. Ties go to the smaller model index, then topic index.
pub fn assign_paths(graph: &AlignmentGraph) -> PathAssignment {
    let n_models = graph.n_models();
    let mut path_of = vec![usize::MAX; graph.nodes().len()];
    let finest = n_models - 1;
    for k in 0..graph.ks[finest] {
        path_of[graph.node_id(finest, k)] = k;
    }
    for m in (0..finest).rev() {
        for k in 0..graph.ks[m] {
            let mut best: Option<(f64, usize, usize)> = None;
            for m2 in m + 1..n_models {
                let block = graph.pair(m, m2);
                for k2 in 0..graph.ks[m2] {
                    let score = block.w_out[[k, k2]] + block.w_in[[k, k2]];
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, m2, k2));
                    }
                }
            }
            let (_, m2, k2) = best.expect("downstream models are nonempty");
            path_of[graph.node_id(m, k)] = path_of[graph.node_id(m2, k2)];
        }
    }
    let mut paths: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node, &p) in path_of.iter().enumerate() {
        paths.entry(p).or_default().push(node);
    }
    PathAssignment { path_of, paths }
}

pub fn n_paths(graph: &AlignmentGraph, assignment: &PathAssignment, m: usize) -> usize {
    (0..graph.ks[m])
        .map(|k| assignment.path(graph, m, k))
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn n_paths_by_model(graph: &AlignmentGraph, assignment: &PathAssignment) -> Vec<usize> {
    (0..graph.n_models()).map(|m| n_paths(graph, assignment, m)).collect()
}

/// Average of `min(w_in, w_out)` between topic `k` of model `m` and the other
/// members of its path. Members from the same model contribute zero; a path
/// with a single member scores zero.
pub fn coherence(graph: &AlignmentGraph, assignment: &PathAssignment, m: usize, k: usize) -> f64 {
    let me = graph.node_id(m, k);
    let members = assignment.members(assignment.path_of[me]);
    if members.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for &other in members {
        let node = &graph.nodes()[other];
        let m2 = node.model_index;
        if m2 == m {
            continue;
        }
        let k2 = node.topic_index;
        let (block, i, j) = if m < m2 { (graph.pair(m, m2), k, k2) } else { (graph.pair(m2, m), k2, k) };
        total += block.w_in[[i, j]].min(block.w_out[[i, j]]);
    }
    (total / (members.len() - 1) as f64).clamp(0.0, 1.0)
}

/// `|V_m| / (M - m) * sum over downstream models and topics of w_out * w_in`,
/// where `M - m` counts the downstream models.
pub fn refinement(graph: &AlignmentGraph, m: usize, k: usize) -> Result<f64, DiagnosticsError> {
    let n_models = graph.n_models();
    if m + 1 >= n_models {
        return Err(DiagnosticsError::FinestLevel);
    }
    let mut total = 0.0;
    for m2 in m + 1..n_models {
        let block = graph.pair(m, m2);
        total += block.w_out.row(k).dot(&block.w_in.row(k));
    }
    Ok(graph.ks[m] as f64 / (n_models - 1 - m) as f64 * total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicScore {
    pub model_index: usize,
    pub topic_index: usize,
    pub path: usize,
    pub mass: f64,
    pub coherence: f64,
    pub refinement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicScores {
    /// One entry per node in flat node order.
    pub topics: Vec<TopicScore>,
    pub n_paths: Vec<usize>,
}

impl TopicScores {
    pub fn for_model(&self, m: usize) -> impl Iterator<Item = &TopicScore> {
        self.topics.iter().filter(move |t| t.model_index == m)
    }

    pub fn coherence_of(&self, m: usize) -> Vec<f64> {
        self.for_model(m).map(|t| t.coherence).collect()
    }

    pub fn refinement_of(&self, m: usize) -> Vec<f64> {
        self.for_model(m).filter_map(|t| t.refinement).collect()
    }
}

pub fn compute_scores(graph: &AlignmentGraph, assignment: &PathAssignment) -> TopicScores {
    let topics = graph
        .nodes()
        .par_iter()
        .map(|node| {
            let (m, k) = (node.model_index, node.topic_index);
            TopicScore {
                model_index: m,
                topic_index: k,
                path: assignment.path(graph, m, k),
                mass: node.mass,
                coherence: coherence(graph, assignment, m, k),
                refinement: refinement(graph, m, k).ok(),
            }
        })
        .collect();
    TopicScores { topics, n_paths: n_paths_by_model(graph, assignment) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plateau {
    pub value: usize,
    /// Model position (0-based) where the run starts.
    pub start_model: usize,
    pub run_length: usize,
}

impl Plateau {
    pub fn is_plateau(&self) -> bool {
        self.run_length >= 2
    }
}

/// Longest run of consecutive models with equal path counts; the earliest run
/// wins ties.
pub fn detect_plateau(counts: &[usize]) -> Result<Plateau, DiagnosticsError> {
    if counts.len() < 3 {
        return Err(DiagnosticsError::TooFewModels(counts.len()));
    }
    let mut best = Plateau { value: counts[0], start_model: 0, run_length: 1 };
    let mut start = 0;
    for i in 1..=counts.len() {
        if i == counts.len() || counts[i] != counts[start] {
            let len = i - start;
            if len > best.run_length {
                best = Plateau { value: counts[start], start_model: start, run_length: len };
            }
            start = i;
        }
    }
    Ok(best)
}

/// How differently a fitted model treats two pairs of near-identical true
/// topics: `(1/K) sum_k |xi_1k - xi_2k| + |xi_3k - xi_4k|` with `xi_jk` the
/// cosine similarity between true topic j and fitted topic k.
pub fn estimation_specificity(true_betas: &[Vec<f64>], fitted: &TopicModel) -> Result<f64, DiagnosticsError> {
    if true_betas.len() != 4 {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "expected 4 true topics, got {}",
            true_betas.len()
        )));
    }
    let d = fitted.n_features();
    if let Some(bad) = true_betas.iter().find(|b| b.len() != d) {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "true topic has {} features, fitted model has {d}",
            bad.len()
        )));
    }
    let k = fitted.k();
    let mut total = 0.0;
    for kk in 0..k {
        let topic = fitted.topic_vec(kk);
        let xi: Vec<f64> = true_betas
            .iter()
            .map(|b| cosine_similarity(b, &topic).map_err(|e| DiagnosticsError::DimensionMismatch(e.to_string())))
            .collect::<Result<_, _>>()?;
        total += (xi[0] - xi[1]).abs() + (xi[2] - xi[3]).abs();
    }
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{Method, PairBlock};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn graph(masses: Vec<Vec<f64>>, blocks: Vec<((usize, usize), Array2<f64>)>) -> AlignmentGraph {
        let pairs = blocks.into_iter().map(|((a, b), w)| PairBlock::new(a, b, w)).collect();
        AlignmentGraph::from_parts(Method::Product, 10, masses, pairs).unwrap()
    }

    fn diagonal_chain(k: usize, levels: usize) -> AlignmentGraph {
        let mut blocks = Vec::new();
        for m in 0..levels {
            for m2 in m + 1..levels {
                blocks.push(((m, m2), Array2::<f64>::eye(k)));
            }
        }
        graph(vec![vec![1.0; k]; levels], blocks)
    }

    #[test]
    fn diagonal_chain_paths_and_scores() {
        let g = diagonal_chain(3, 4);
        let a = assign_paths(&g);
        assert_eq!(n_paths_by_model(&g, &a), vec![3, 3, 3, 3]);
        for m in 0..4 {
            for k in 0..3 {
                assert_eq!(a.path(&g, m, k), k);
                assert_eq!(coherence(&g, &a, m, k), 1.0);
            }
        }
        let p = detect_plateau(&n_paths_by_model(&g, &a)).unwrap();
        assert_eq!((p.value, p.run_length), (3, 4));
    }

    #[test]
    fn single_model_paths_are_indices() {
        let g = graph(vec![vec![0.5, 0.5, 1.0]], vec![]);
        let a = assign_paths(&g);
        assert_eq!(a.path_of, vec![0, 1, 2]);
        assert_eq!(coherence(&g, &a, 0, 1), 0.0);
        assert_eq!(refinement(&g, 0, 0), Err(DiagnosticsError::FinestLevel));
    }

    #[test]
    fn three_level_hand_walk() {
        // K = 2, 3, 3. Topics 0 and 1 of the middle model both prefer finest
        // topic 0; the coarse model then follows the middle model.
        let w12 = array![[5.0, 1.0, 0.0], [0.0, 1.0, 5.0]];
        let w13 = array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let w23 = array![[4.0, 2.0, 1.0], [3.0, 1.0, 0.0], [0.0, 2.0, 6.0]];
        let g = graph(
            vec![vec![1.0; 2], vec![1.0; 3], vec![1.0; 3]],
            vec![((0, 1), w12), ((0, 2), w13), ((1, 2), w23)],
        );
        let a = assign_paths(&g);
        // Middle: t0 -> (4/7 + 4/7) at finest 0; t1 -> (3/4 + 3/7) at finest 0;
        // t2 -> (3/4 + 6/7) at finest 2.
        assert_eq!((0..3).map(|k| a.path(&g, 1, k)).collect::<Vec<_>>(), vec![0, 0, 2]);
        // Coarse: t0 best partner is middle 0 (5/6 + 1); t1 is middle 2 (5/6 + 1).
        assert_eq!((0..2).map(|k| a.path(&g, 0, k)).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(n_paths_by_model(&g, &a), vec![2, 2, 3]);
    }

    #[test]
    fn ties_prefer_earliest_model_then_topic() {
        let flat = Array2::from_elem((1, 2), 1.0);
        let g = graph(
            vec![vec![1.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![((0, 1), flat.clone()), ((0, 2), flat), ((1, 2), Array2::eye(2))],
        );
        let a = assign_paths(&g);
        assert_eq!(a.path(&g, 0, 0), a.path(&g, 1, 0));
        assert_eq!(a.path(&g, 0, 0), 0);
    }

    #[test]
    fn two_level_coherence_uses_min() {
        // w_out(a, b) = 0.8 and w_in(a, b) = 0.6.
        let w = array![[0.8, 0.2], [0.533_333_333_333_333_4, 1.0]];
        let g = graph(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![((0, 1), w)]);
        let block = g.pair(0, 1);
        assert_abs_diff_eq!(block.w_out[[0, 0]], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(block.w_in[[0, 0]], 0.6, epsilon = 1e-12);
        let a = assign_paths(&g);
        assert_eq!(a.path(&g, 0, 0), 0);
        assert_abs_diff_eq!(coherence(&g, &a, 0, 0), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn refinement_extremes() {
        // Equal weights everywhere.
        let g = graph(
            vec![vec![1.0; 2], vec![1.0; 3], vec![1.0; 4]],
            vec![
                ((0, 1), Array2::from_elem((2, 3), 0.7)),
                ((0, 2), Array2::from_elem((2, 4), 0.7)),
                ((1, 2), Array2::from_elem((3, 4), 0.7)),
            ],
        );
        for (m, k) in [(0, 0), (0, 1), (1, 0), (1, 2)] {
            assert_abs_diff_eq!(refinement(&g, m, k).unwrap(), 1.0, epsilon = 1e-12);
        }
        // Sole-parent tree: every child has one positive-weight parent.
        let g = graph(
            vec![vec![1.0; 2], vec![1.0; 4]],
            vec![((0, 1), array![[0.3, 0.2, 0.0, 0.0], [0.0, 0.0, 0.1, 0.4]])],
        );
        for k in 0..2 {
            assert_abs_diff_eq!(refinement(&g, 0, k).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn refinement_vanishes_under_competition() {
        let mut last = f64::INFINITY;
        for delta in [0.1, 0.01, 0.001] {
            let w = array![[delta, delta], [1.0 - delta, 1.0 - delta]];
            let g = graph(vec![vec![1.0; 2], vec![1.0; 2]], vec![((0, 1), w)]);
            // Closed form: 2 * (0.5 * delta + 0.5 * delta) = 2 delta.
            let r = refinement(&g, 0, 0).unwrap();
            assert_abs_diff_eq!(r, 2.0 * delta, epsilon = 1e-12);
            assert!(r < last);
            last = r;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn plateau_rules() {
        let p = detect_plateau(&[2, 3, 4, 5, 5, 5, 6]).unwrap();
        assert_eq!((p.value, p.start_model, p.run_length), (5, 3, 3));
        let p = detect_plateau(&[2, 3, 4, 5]).unwrap();
        assert_eq!(p.run_length, 1);
        assert!(!p.is_plateau());
        let p = detect_plateau(&[2, 3, 3, 5, 5, 5]).unwrap();
        assert_eq!(p.value, 5);
        let p = detect_plateau(&[2, 2, 3, 3]).unwrap();
        assert_eq!((p.value, p.start_model), (2, 0));
        assert_eq!(detect_plateau(&[1, 1]), Err(DiagnosticsError::TooFewModels(2)));
    }
}
