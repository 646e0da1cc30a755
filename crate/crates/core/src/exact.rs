//! Exact optimal transport between normalized measures.
//!
//! [`exact_transport`] runs the transportation simplex (the MODI or u-v
//! method): a northwest-corner basis, potentials from the basis tree, and
//! pivots chosen by Bland's rule so plans are reproducible even on
//! degenerate instances. Optimality is certified by complementary
//! slackness, which also yields the dual vectors `(α, β)`.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, GroundMetric, TransportPlan, NORMALIZATION_TOL};

/// Relative tolerance on reduced costs. Scaled by `max(1, C_M)`.
const REDUCED_COST_TOL: f64 = 1e-12;

/// Threshold below which a basic flow or reduced cost counts as zero when
/// flagging degenerate optima.
const DEGENERACY_TOL: f64 = 1e-12;

/// Optimal plan, cost and dual potentials of the transport LP.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub cost: f64,
    pub plan: TransportPlan,
    /// Row potentials `α`. Satisfy `α_i + β_j <= M_ij`, with equality on the
    /// support of the plan.
    pub dual_alpha: Array1<f64>,
    pub dual_beta: Array1<f64>,
    pub pivots: usize,
    degenerate: bool,
}

impl ExactSolution {
    /// `α·mu + β·nu`, the dual objective.
    pub fn dual_objective(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        self.dual_alpha.dot(&mu.values()) + self.dual_beta.dot(&nu.values())
    }

    /// Largest violation of `α_i + β_j <= M_ij` over all pairs, or zero.
    pub fn max_dual_violation(&self, metric: &GroundMetric) -> f64 {
        let mut worst = 0.0_f64;
        for ((i, j), &c) in metric.costs().indexed_iter() {
            worst = worst.max(self.dual_alpha[i] + self.dual_beta[j] - c);
        }
        worst
    }

    /// True when some basic flow or some nonbasic reduced cost is zero. The
    /// subgradient is not unique at such optima, so finite-difference checks
    /// skip them.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure, metric: &GroundMetric) -> Result<()> {
    metric.check_size(mu.len())?;
    metric.check_size(nu.len())?;
    for m in [mu, nu] {
        let mass = m.mass();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { mass });
        }
    }
    if (mu.mass() - nu.mass()).abs() > NORMALIZATION_TOL {
        return Err(Error::MassMismatch { left: mu.mass(), right: nu.mass() });
    }
    Ok(())
}

/// Solves `min ⟨T, M⟩` over couplings of `mu` and `nu`.
pub fn exact_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure, metric: &GroundMetric) -> Result<ExactSolution> {
    check_pair(mu, nu, metric)?;
    let k = metric.size();
    let mut simplex = TransportSimplex::new(mu.values().to_vec(), nu.values().to_vec(), metric);
    let pivots = simplex.solve(metric.max_cost())?;

    let flow = Array2::from_shape_vec((k, k), simplex.flow.clone()).expect("shape matches");
    let plan = TransportPlan::new(flow.mapv(|f| f.max(0.0)))?;
    let cost = plan.cost(metric);
    let degenerate = simplex.is_degenerate(metric.max_cost());
    Ok(ExactSolution {
        cost,
        plan,
        dual_alpha: Array1::from(simplex.row_pot),
        dual_beta: Array1::from(simplex.col_pot),
        pivots,
        degenerate,
    })
}

struct TransportSimplex {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    is_basic: Vec<bool>,
    basis: Vec<usize>,
    row_pot: Vec<f64>,
    col_pot: Vec<f64>,
}

impl TransportSimplex {
    fn new(mut supply: Vec<f64>, mut demand: Vec<f64>, metric: &GroundMetric) -> Self {
        let (rows, cols) = (supply.len(), demand.len());
        let cost: Vec<f64> = metric.costs().iter().copied().collect();
        let mut flow = vec![0.0; rows * cols];
        let mut is_basic = vec![false; rows * cols];
        let mut basis = Vec::with_capacity(rows + cols - 1);

        // Northwest corner: a monotone staircase of exactly rows + cols - 1
        // cells, which is always a spanning tree of the bipartite graph.
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            let cell = i * cols + j;
            flow[cell] = x;
            is_basic[cell] = true;
            basis.push(cell);
            supply[i] -= x;
            demand[j] -= x;
            if i == rows - 1 && j == cols - 1 {
                break;
            }
            if j == cols - 1 || (i < rows - 1 && supply[i] <= 0.0) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), rows + cols - 1);

        Self { rows, cols, cost, flow, is_basic, basis, row_pot: vec![0.0; rows], col_pot: vec![0.0; cols] }
    }

    /// Adjacency of the basis tree. Nodes `0..rows` are rows and
    /// `rows..rows + cols` are columns.
    fn tree(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.rows + self.cols];
        for &cell in &self.basis {
            let (i, j) = (cell / self.cols, cell % self.cols);
            adj[i].push((self.rows + j, cell));
            adj[self.rows + j].push((i, cell));
        }
        adj
    }

    /// Solves `u_i + v_j = c_ij` on the basis tree with `u_0 = 0`.
    fn update_potentials(&mut self, adj: &[Vec<(usize, usize)>]) {
        let mut seen = vec![false; self.rows + self.cols];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.row_pot[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &(next, cell) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let c = self.cost[cell];
                if next >= self.rows {
                    self.col_pot[next - self.rows] = c - self.row_pot[node];
                } else {
                    self.row_pot[next] = c - self.col_pot[node - self.rows];
                }
                queue.push_back(next);
            }
        }
    }

    fn reduced_cost(&self, cell: usize) -> f64 {
        self.cost[cell] - self.row_pot[cell / self.cols] - self.col_pot[cell % self.cols]
    }

    /// Cells on the tree path from column node `col` to row node `row`, in
    /// order.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.rows + self.cols];
        let mut seen = vec![false; self.rows + self.cols];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(node) = queue.pop_front() {
            if node == to {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = to;
        while let Some((prev, cell)) = parent[node] {
            path.push(cell);
            node = prev;
        }
        path.reverse();
        path
    }

    fn solve(&mut self, max_cost: f64) -> Result<usize> {
        let tol = REDUCED_COST_TOL * max_cost.max(1.0);
        let max_pivots = 50 * self.rows * self.cols + 100;
        for pivot in 0..=max_pivots {
            let adj = self.tree();
            self.update_potentials(&adj);

            // Bland: lowest-index improving cell enters.
            let entering = (0..self.rows * self.cols).find(|&c| !self.is_basic[c] && self.reduced_cost(c) < -tol);
            let Some(entering) = entering else {
                return Ok(pivot);
            };
            let (p, q) = (entering / self.cols, entering % self.cols);

            // The cycle closes through the tree path from column q to row p;
            // its cells alternate -θ, +θ, ..., -θ.
            let path = self.tree_path(&adj, self.rows + q, p);
            let leaving = path
                .iter()
                .step_by(2)
                .copied()
                .min_by(|&a, &b| self.flow[a].total_cmp(&self.flow[b]).then(a.cmp(&b)))
                .expect("cycle has at least one decreasing cell");
            let theta = self.flow[leaving];
            for (pos, &cell) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[cell] -= theta;
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[leaving] = 0.0;
            self.flow[entering] = theta;
            self.is_basic[leaving] = false;
            self.is_basic[entering] = true;
            let slot = self.basis.iter().position(|&c| c == leaving).expect("leaving cell is basic");
            self.basis[slot] = entering;
        }
        Err(Error::Diverged { iters: max_pivots, residual: f64::NAN })
    }

    fn is_degenerate(&self, max_cost: f64) -> bool {
        let tol = DEGENERACY_TOL * max_cost.max(1.0);
        let zero_flow = self.basis.iter().any(|&c| self.flow[c] <= DEGENERACY_TOL);
        let zero_reduced = (0..self.rows * self.cols).any(|c| !self.is_basic[c] && self.reduced_cost(c) <= tol);
        zero_flow || zero_reduced
    }
}

/// The `α` subgradient of `W(·, nu)` at `mu`, shifted to sum to zero so it
/// is tangent to the simplex.
pub fn dual_subgradient(solution: &ExactSolution) -> Array1<f64> {
    let alpha = &solution.dual_alpha;
    let mean = alpha.mean().unwrap_or(0.0);
    alpha - mean
}

/// `W_1` on the line metric `|i - j|`: the ℓ1 distance between the two
/// cumulative distribution functions.
pub fn cdf_wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: nu.len() });
    }
    for m in [mu, nu] {
        if (m.mass() - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { mass: m.mass() });
        }
    }
    let (mut cdf_mu, mut cdf_nu, mut total) = (0.0, 0.0, 0.0);
    // The final CDF difference is zero and skipped.
    for k in 0..mu.len() - 1 {
        cdf_mu += mu.get(k);
        cdf_nu += nu.get(k);
        total += (cdf_mu - cdf_nu).abs();
    }
    Ok(total)
}

/// Exact loss against the one-hot label `e_target`. The only coupling moves
/// all of `h` into column `target`, so the loss is `Σ_i M[i, target] h_i`.
pub fn one_hot_loss(h: &DiscreteMeasure, target: usize, metric: &GroundMetric) -> Result<f64> {
    metric.check_size(h.len())?;
    if target >= h.len() {
        return Err(Error::IndexOutOfRange { index: target, len: h.len() });
    }
    if (h.mass() - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { mass: h.mass() });
    }
    Ok(metric.costs().column(target).dot(&h.values()))
}
