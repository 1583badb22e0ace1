//! Exact balanced optimal transport.
//!
//! [`solve_exact`] runs the transportation simplex (u-v potentials on a
//! spanning-tree basis, north-west corner start). Entering and leaving
//! variables follow Bland's rule, so the returned vertex is a deterministic
//! function of the problem. [`lp_oracle`] solves the same linear program with
//! a dense two-phase tableau simplex and exists to cross-check the solver on
//! small instances.

use ndarray::Array2;
use thiserror::Error;

/// Relative imbalance between total supply and demand that is repaired by
/// rescaling the demand.
pub const BALANCE_TOL: f64 = 1e-6;

/// Largest `A * B` accepted by [`lp_oracle`].
pub const ORACLE_MAX_CELLS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("supply total {supply} and demand total {demand} differ beyond tolerance")]
    UnbalancedProblem { supply: f64, demand: f64 },
    #[error("total supply is zero")]
    ZeroMass,
    #[error("invalid transport problem: {0}")]
    Invalid(String),
    #[error("problem with {0} cells is too large for the oracle")]
    TooLarge(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Array2<f64>,
}

impl TransportProblem {
    /// Validates shapes and signs; demand is rescaled to the supply total when
    /// the two differ by at most `BALANCE_TOL` relative.
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Array2<f64>) -> Result<Self, TransportError> {
        let (a, b) = cost.dim();
        if supply.is_empty() || demand.is_empty() {
            return Err(TransportError::Invalid("empty marginal".into()));
        }
        if a != supply.len() || b != demand.len() {
            return Err(TransportError::Invalid(format!(
                "cost is {a}x{b} but marginals have lengths {} and {}",
                supply.len(),
                demand.len()
            )));
        }
        let ok = |x: &f64| x.is_finite() && *x >= 0.0;
        if !supply.iter().all(ok) || !demand.iter().all(ok) {
            return Err(TransportError::Invalid("marginals must be finite and nonnegative".into()));
        }
        if !cost.iter().all(ok) {
            return Err(TransportError::Invalid("costs must be finite and nonnegative".into()));
        }
        let total_supply: f64 = supply.iter().sum();
        let total_demand: f64 = demand.iter().sum();
        if total_supply <= 0.0 {
            return Err(TransportError::ZeroMass);
        }
        if (total_supply - total_demand).abs() > BALANCE_TOL * total_supply {
            return Err(TransportError::UnbalancedProblem { supply: total_supply, demand: total_demand });
        }
        let scale = total_supply / total_demand;
        let demand = demand.into_iter().map(|q| q * scale).collect();
        Ok(Self { supply, demand, cost })
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn total_mass(&self) -> f64 {
        self.supply.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub objective: f64,
}

/// Frobenius inner product `<C, P>`.
pub fn frobenius(cost: &Array2<f64>, plan: &Array2<f64>) -> f64 {
    cost.iter().zip(plan.iter()).map(|(c, p)| c * p).sum()
}

/// Spanning-tree basis of the transportation polytope.
struct Basis {
    rows: usize,
    cols: usize,
    /// `flow[i * cols + j]`, meaningful for basic cells only.
    flow: Vec<f64>,
    basic: Vec<bool>,
}

impl Basis {
    fn north_west(supply: &[f64], demand: &[f64]) -> Self {
        let (rows, cols) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut flow = vec![0.0; rows * cols];
        let mut basic = vec![false; rows * cols];
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            flow[i * cols + j] = x;
            basic[i * cols + j] = true;
            s[i] -= x;
            d[j] -= x;
            if i == rows - 1 && j == cols - 1 {
                break;
            }
            // Exactly one index advances per step, giving rows + cols - 1 cells.
            let row_done = s[i] <= d[j];
            if (row_done && i < rows - 1) || j == cols - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { rows, cols, flow, basic }
    }

    /// Node ids: rows are `0..rows`, columns are `rows..rows+cols`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.rows + self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.basic[i * self.cols + j] {
                    adj[i].push(self.rows + j);
                    adj[self.rows + j].push(i);
                }
            }
        }
        adj
    }

    fn potentials(&self, cost: &Array2<f64>, adj: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.rows];
        let mut v = vec![f64::NAN; self.cols];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &next in &adj[node] {
                if node < self.rows {
                    let (i, j) = (node, next - self.rows);
                    if v[j].is_nan() {
                        v[j] = cost[[i, j]] - u[i];
                        stack.push(next);
                    }
                } else {
                    let (i, j) = (next, node - self.rows);
                    if u[i].is_nan() {
                        u[i] = cost[[i, j]] - v[j];
                        stack.push(next);
                    }
                }
            }
        }
        (u, v)
    }

    /// Tree path from row node `i` to column node `rows + j`, as a list of
    /// cells in traversal order.
    fn tree_path(&self, adj: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let n = self.rows + self.cols;
        let target = self.rows + j;
        let mut parent = vec![usize::MAX; n];
        parent[i] = i;
        let mut queue = std::collections::VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let prev = parent[node];
            let (r, c) = if prev < self.rows { (prev, node - self.rows) } else { (node, prev - self.rows) };
            cells.push(r * self.cols + c);
            node = prev;
        }
        cells.reverse();
        cells
    }
}

pub fn solve_exact(problem: &TransportProblem) -> TransportPlan {
    let (rows, cols) = problem.cost.dim();
    let cost = &problem.cost;
    let mut basis = Basis::north_west(&problem.supply, &problem.demand);
    let scale = cost.iter().fold(1.0f64, |m, c| m.max(*c));
    let tol = 1e-12 * scale;
    // Bland's rule terminates; the cap only guards against a logic error.
    let max_iter = 50 * (rows + cols) * rows * cols + 100;
    for _ in 0..max_iter {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(cost, &adj);
        let entering = (0..rows * cols).find(|&cell| {
            let (i, j) = (cell / cols, cell % cols);
            !basis.basic[cell] && cost[[i, j]] - u[i] - v[j] < -tol
        });
        let Some(enter) = entering else { break };
        let (ei, ej) = (enter / cols, enter % cols);
        // Cycle: entering cell (+), then the tree path from column ej back to
        // row ei alternates -, +, -, ...
        let mut path = basis.tree_path(&adj, ei, ej);
        path.reverse();
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus.iter().map(|&c| basis.flow[c]).fold(f64::INFINITY, f64::min);
        let leave = *minus
            .iter()
            .filter(|&&c| basis.flow[c] <= theta)
            .min()
            .expect("cycle has a minus cell");
        for (pos, &cell) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flow[cell] -= theta;
            } else {
                basis.flow[cell] += theta;
            }
        }
        basis.flow[enter] = theta;
        basis.basic[enter] = true;
        basis.basic[leave] = false;
        basis.flow[leave] = 0.0;
    }
    let mut plan = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            if basis.basic[i * cols + j] {
                plan[[i, j]] = basis.flow[i * cols + j].max(0.0);
            }
        }
    }
    let objective = frobenius(cost, &plan);
    TransportPlan { plan, objective }
}

/// Optimal objective by a dense two-phase simplex over the full LP
/// `min <C, X>` subject to row sums `p`, column sums `q`, `X >= 0`.
pub fn lp_oracle(problem: &TransportProblem) -> Result<f64, TransportError> {
    let (rows, cols) = problem.cost.dim();
    let nvars = rows * cols;
    if nvars > ORACLE_MAX_CELLS {
        return Err(TransportError::TooLarge(nvars));
    }
    let mut a = Vec::with_capacity(rows + cols);
    let mut b = Vec::with_capacity(rows + cols);
    for i in 0..rows {
        let mut row = vec![0.0; nvars];
        for j in 0..cols {
            row[i * cols + j] = 1.0;
        }
        a.push(row);
        b.push(problem.supply[i]);
    }
    for j in 0..cols {
        let mut row = vec![0.0; nvars];
        for i in 0..rows {
            row[i * cols + j] = 1.0;
        }
        a.push(row);
        b.push(problem.demand[j]);
    }
    let c: Vec<f64> = problem.cost.iter().copied().collect();
    Ok(dense_simplex(&a, &b, &c))
}

/// Two-phase tableau simplex with Bland's rule for `min c.x, Ax = b, x >= 0`
/// with `b >= 0`. Assumes the program is feasible and bounded.
fn dense_simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let m = a.len();
    let n = c.len();
    let width = n + m + 1;
    // Columns: originals, artificials, rhs.
    let mut tab = Tableau {
        rows: (0..m)
            .map(|r| {
                let mut row = vec![0.0; width];
                row[..n].copy_from_slice(&a[r]);
                row[n + r] = 1.0;
                row[width - 1] = b[r];
                row
            })
            .collect(),
        basis: (n..n + m).collect(),
    };

    // Phase one: minimize the sum of artificials.
    let mut phase1 = vec![0.0; n + m];
    phase1[n..].fill(1.0);
    tab.optimize(&phase1, n + m);

    // Drive zero-level artificials out of the basis; rows with no original
    // coefficient left are redundant constraints and are dropped.
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| tab.rows[r][j].abs() > PIVOT_EPS) {
                tab.pivot(r, col);
            } else {
                tab.rows.remove(r);
                tab.basis.remove(r);
                continue;
            }
        }
        r += 1;
    }

    let mut phase2 = c.to_vec();
    phase2.resize(n + m, 0.0);
    tab.optimize(&phase2, n);
    tab.rows
        .iter()
        .zip(&tab.basis)
        .map(|(row, &j)| c[j] * row[width - 1])
        .sum()
}

const PIVOT_EPS: f64 = 1e-12;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k != r && row[col] != 0.0 {
                let f = row[col];
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        self.basis[r] = col;
    }

    /// Bland's rule over the first `allowed` columns.
    fn optimize(&mut self, cost: &[f64], allowed: usize) {
        let rhs = self.rows.first().map_or(0, |r| r.len() - 1);
        loop {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let z: f64 = self.rows.iter().zip(&self.basis).map(|(row, &bj)| cost[bj] * row[j]).sum();
                cost[j] - z < -PIVOT_EPS
            });
            let Some(col) = entering else { return };
            let mut best: Option<(f64, usize)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[col] > PIVOT_EPS {
                    let ratio = row[rhs] / row[col];
                    best = match best {
                        Some((br, bi)) if ratio > br + PIVOT_EPS => Some((br, bi)),
                        Some((br, bi)) if (ratio - br).abs() <= PIVOT_EPS && self.basis[bi] < self.basis[r] => {
                            Some((br, bi))
                        }
                        _ => Some((ratio, r)),
                    };
                }
            }
            let Some((_, r)) = best else { return };
            self.pivot(r, col);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn one_by_one() {
        let p = TransportProblem::new(vec![1.0], vec![1.0], array![[0.0]]).unwrap();
        let s = solve_exact(&p);
        assert_eq!(s.plan, array![[1.0]]);
        assert_eq!(s.objective, 0.0);
        let p = TransportProblem::new(vec![2.0], vec![2.0], array![[3.0]]).unwrap();
        assert_eq!(lp_oracle(&p).unwrap(), 6.0);
    }

    #[test]
    fn zero_cost_matching_is_diagonal() {
        let p = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], array![[0.0, 1.0], [1.0, 0.0]])
            .unwrap();
        let s = solve_exact(&p);
        assert_eq!(s.plan, array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(s.objective, 0.0);
        assert_eq!(lp_oracle(&p).unwrap(), 0.0);
    }

    #[test]
    fn anti_diagonal_optimum() {
        let p = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], array![[1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        let s = solve_exact(&p);
        assert_eq!(s.plan, array![[0.0, 0.5], [0.5, 0.0]]);
        assert_eq!(lp_oracle(&p).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_problems() {
        assert_eq!(
            TransportProblem::new(vec![0.0], vec![0.0], array![[1.0]]),
            Err(TransportError::ZeroMass)
        );
        assert!(matches!(
            TransportProblem::new(vec![1.0], vec![1.1], array![[1.0]]),
            Err(TransportError::UnbalancedProblem { .. })
        ));
        assert!(matches!(
            TransportProblem::new(vec![1.0], vec![1.0], array![[-1.0]]),
            Err(TransportError::Invalid(_))
        ));
        let big = TransportProblem::new(vec![1.0; 9], vec![1.0; 9], Array2::zeros((9, 9))).unwrap();
        assert_eq!(lp_oracle(&big), Err(TransportError::TooLarge(81)));
    }

    #[test]
    fn small_imbalance_is_rescaled() {
        let p = TransportProblem::new(vec![1.0, 1.0], vec![1.0, 1.0 + 1e-7], array![[0.0, 1.0], [1.0, 0.0]])
            .unwrap();
        assert_abs_diff_eq!(p.demand().iter().sum::<f64>(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_mass_rows_are_fine() {
        let p = TransportProblem::new(
            vec![0.0, 1.0, 2.0],
            vec![1.5, 0.0, 1.5],
            array![[0.1, 0.2, 0.3], [0.5, 0.0, 0.2], [0.3, 0.9, 0.1]],
        )
        .unwrap();
        let s = solve_exact(&p);
        assert_abs_diff_eq!(s.objective, lp_oracle(&p).unwrap(), epsilon = 1e-12);
        assert_eq!(s.plan.row(0).sum(), 0.0);
    }
}
