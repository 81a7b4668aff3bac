//! Certified lower bounds and continuous solutions for search nodes.
//!
//! The mandatory bounding mode fits support-restricted least squares per
//! column (normal equations with a small ridge jitter) and is valid because
//! it relaxes the cycle cuts, counts the edge penalty only on forced edges,
//! and lets the fit use every non-forbidden edge. The optional `qp` mode
//! solves the full continuous relaxation with accumulated cuts by operator
//! splitting and certifies its bound through weak duality (see `qp`).

use crate::error::{Error, Result};
use crate::graph::{BinaryAdjacency, CycleCut};
use crate::linalg::{frobenius_rss, GramFitter};
use crate::{DataMatrix, WeightMatrix};
use ndarray::Array2;

/// Bounding mode for search nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundMode {
    /// Closed-form support-restricted least squares (mandatory, default).
    Ls,
    /// Operator-splitting solve of the continuous relaxation with cuts.
    Qp,
}

/// Default relative KKT tolerance for the qp relaxation.
pub const QP_KKT_TOL: f64 = 1e-6;
/// Iteration cap for the qp relaxation.
pub const QP_MAX_ITERATIONS: usize = 100_000;

/// Branching state: per-edge 0/1 bounds on the indicator variables plus a
/// certified lower bound on the objective of any completion. `lb[i][j] = 1`
/// forces edge `(i,j)`, `ub[i][j] = 0` forbids it; the diagonal is fixed to
/// zero. Masks are stored column-major as bitsets (bit `i` of column `j`).
#[derive(Clone, Debug)]
pub struct SearchNode {
    d: usize,
    words: usize,
    ub: Vec<u64>,
    lb: Vec<u64>,
    pub depth: u32,
    pub bound: f64,
    pub id: u64,
    pub parent: Option<u64>,
}

impl SearchNode {
    /// Root node: every off-diagonal edge free, nothing forced.
    pub fn root(d: usize) -> Self {
        assert!(d >= 1);
        let words = d.div_ceil(64);
        let mut ub = vec![0u64; d * words];
        for j in 0..d {
            for i in 0..d {
                if i != j {
                    ub[j * words + i / 64] |= 1u64 << (i % 64);
                }
            }
        }
        SearchNode { d, words, ub, lb: vec![0u64; d * words], depth: 0, bound: f64::NEG_INFINITY, id: 0, parent: None }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn ub(&self, i: usize, j: usize) -> bool {
        self.ub[j * self.words + i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn lb(&self, i: usize, j: usize) -> bool {
        self.lb[j * self.words + i / 64] >> (i % 64) & 1 == 1
    }

    /// Forbids edge `(i,j)` in place (clears its upper bound).
    pub fn forbid(&mut self, i: usize, j: usize) {
        debug_assert!(!self.lb(i, j), "cannot forbid a forced edge");
        self.ub[j * self.words + i / 64] &= !(1u64 << (i % 64));
    }

    /// Forces edge `(i,j)` in place (raises its lower bound).
    pub fn force(&mut self, i: usize, j: usize) {
        debug_assert!(self.ub(i, j), "cannot force a forbidden edge");
        self.lb[j * self.words + i / 64] |= 1u64 << (i % 64);
    }

    /// Number of edges neither forced nor forbidden.
    pub fn free_count(&self) -> usize {
        self.ub
            .iter()
            .zip(self.lb.iter())
            .map(|(u, l)| (u & !l).count_ones() as usize)
            .sum()
    }

    pub fn is_fully_fixed(&self) -> bool {
        self.free_count() == 0
    }

    pub fn forced_count(&self) -> usize {
        self.lb.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Allowed parents (non-forbidden in-edges) of column `j`, ascending.
    pub fn allowed_parents(&self, j: usize) -> Vec<usize> {
        self.mask_bits(&self.ub, j)
    }

    pub fn forced_parents(&self, j: usize) -> Vec<usize> {
        self.mask_bits(&self.lb, j)
    }

    fn mask_bits(&self, m: &[u64], j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for w in 0..self.words {
            let mut bits = m[j * self.words + w];
            while bits != 0 {
                out.push(w * 64 + bits.trailing_zeros() as usize);
                bits &= bits - 1;
            }
        }
        out
    }

    /// Graph of forced edges.
    pub fn forced_graph(&self) -> BinaryAdjacency {
        let mut g = BinaryAdjacency::new(self.d);
        for j in 0..self.d {
            for i in self.forced_parents(j) {
                g.add_edge(i, j);
            }
        }
        g
    }

    /// Graph of allowed (non-forbidden) edges.
    pub fn allowed_graph(&self) -> BinaryAdjacency {
        let mut g = BinaryAdjacency::new(self.d);
        for j in 0..self.d {
            for i in self.allowed_parents(j) {
                g.add_edge(i, j);
            }
        }
        g
    }

    /// Free edges in row-major order.
    pub fn free_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && self.ub(i, j) && !self.lb(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Continuous solution of a node relaxation with its weak-duality
/// certificate. `dual_bound <= objective` always holds; the bound stays
/// valid even when the iteration cap is reached.
#[derive(Clone, Debug)]
pub struct RelaxationSolution {
    pub w: WeightMatrix,
    pub e: Array2<f64>,
    pub objective: f64,
    pub dual_bound: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Ordinary least squares of every column on its allowed parent set, via
/// normal equations with ridge jitter. Returns the fitted weights (supported
/// on `allowed`) and `|X - XW|_F^2`; a column with an empty parent set
/// contributes its squared norm.
pub fn restricted_least_squares(
    x: &DataMatrix,
    allowed: &BinaryAdjacency,
) -> Result<(WeightMatrix, f64)> {
    if x.nrows() < 1 {
        return Err(Error::DegenerateData("least squares needs n >= 1".into()));
    }
    let d = x.ncols();
    if allowed.vertex_count() != d {
        return Err(Error::DimensionMismatch(format!(
            "data has {d} columns but graph has {} vertices",
            allowed.vertex_count()
        )));
    }
    let mut fitter = GramFitter::new(x);
    let mut w = Array2::zeros((d, d));
    let mut buf = Vec::new();
    let mut rss = 0.0;
    for j in 0..d {
        let parents = allowed.parents_of(j);
        rss += fitter.fit_exact(x, j, &parents, &mut buf);
        for (a, &p) in parents.iter().enumerate() {
            w[[p, j]] = buf[a];
        }
    }
    Ok((w, rss))
}

/// The score `J(W) = |X - XW|_F^2 + lambda * sum(e)`; fails with
/// `LinkViolation` if some weight exceeds its big-M link `|w_ij| <= c*e_ij`
/// beyond `link_tol`.
pub fn evaluate_objective(
    x: &DataMatrix,
    w: &WeightMatrix,
    e: &BinaryAdjacency,
    lambda: f64,
    big_m: f64,
    link_tol: f64,
) -> Result<f64> {
    let d = x.ncols();
    if w.nrows() != d || w.ncols() != d || e.vertex_count() != d {
        return Err(Error::DimensionMismatch("objective inputs disagree on d".into()));
    }
    for ((i, j), &v) in w.indexed_iter() {
        let cap = if i != j && e.edge(i, j) { big_m } else { 0.0 };
        if v.abs() > cap + link_tol {
            return Err(Error::LinkViolation { i, j, w: v, bound: cap });
        }
    }
    Ok(frobenius_rss(x, w) + lambda * e.edge_count() as f64)
}

/// Certified lower bound for a search node.
///
/// Mode `ls`: `restricted_least_squares(X, allowed = ub).rss + lambda * #lb`.
/// Mode `qp`: the weak-duality bound of [`crate::qp::qp_relaxation_solve`]
/// over the linked relaxation with all pooled cuts, which never falls below
/// the `ls` bound by construction.
pub fn node_lower_bound(
    x: &DataMatrix,
    node: &SearchNode,
    lambda: f64,
    mode: BoundMode,
    cuts: &[CycleCut],
    big_m: f64,
) -> Result<f64> {
    match mode {
        BoundMode::Ls => {
            let (_, rss) = restricted_least_squares(x, &node.allowed_graph())?;
            Ok(rss + lambda * node.forced_count() as f64)
        }
        BoundMode::Qp => {
            match crate::qp::qp_relaxation_solve(x, node, cuts, lambda, big_m, QP_KKT_TOL) {
                Ok(sol) => Ok(sol.dual_bound),
                Err(Error::MaxIterations(sol)) => Ok(sol.dual_bound),
                Err(e) => Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::residual_gradient;
    use crate::synth::{gen_er_dag, sample_sem, sample_weights, NoiseSpec};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_instance(d: usize, n: usize, seed: u64) -> (DataMatrix, WeightMatrix) {
        let edge_factor = if d > 2 { 1.0 } else { 0.5 };
        let g = gen_er_dag(d, edge_factor, seed).unwrap();
        let w = sample_weights(&g, seed + 1);
        let x = sample_sem(&w, n, &NoiseSpec::default(), seed + 2).unwrap();
        (x, w)
    }

    #[test]
    fn empty_support_gives_zero_weights_and_full_norm() {
        let (x, _) = small_instance(4, 30, 0);
        let allowed = BinaryAdjacency::new(4);
        let (w, rss) = restricted_least_squares(&x, &allowed).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert_relative_eq!(rss, sq, max_relative = 1e-12);
    }

    #[test]
    fn exact_linear_columns_are_recovered() {
        // Columns 0 and 1 are independent sources; columns 2 and 3 are exact
        // linear images of linearly independent parent sets, so the restricted
        // fit interpolates them and recovers the generating weights.
        let n = 40;
        let mut rng = StdRng::seed_from_u64(5);
        let mut x = Array2::zeros((n, 4));
        for r in 0..n {
            x[[r, 0]] = rng.gen::<f64>() * 2.0 - 1.0;
            x[[r, 1]] = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let mut w_true = Array2::zeros((4, 4));
        w_true[[0, 2]] = 1.3;
        w_true[[1, 2]] = -0.7;
        w_true[[2, 3]] = 0.9;
        for r in 0..n {
            x[[r, 2]] = w_true[[0, 2]] * x[[r, 0]] + w_true[[1, 2]] * x[[r, 1]];
            x[[r, 3]] = w_true[[2, 3]] * x[[r, 2]];
        }
        let support = BinaryAdjacency::support_of(&w_true);
        let (w, rss) = restricted_least_squares(&x, &support).unwrap();
        for ((i, j), &v) in w_true.indexed_iter() {
            if v != 0.0 {
                assert_relative_eq!(w[[i, j]], v, max_relative = 1e-7);
            }
        }
        // The source columns have no parents and contribute their own norms;
        // the fitted columns interpolate, so the rest is at rounding level.
        let root_sq: f64 = (0..n).map(|r| x[[r, 0]] * x[[r, 0]] + x[[r, 1]] * x[[r, 1]]).sum();
        let total_sq: f64 = x.iter().map(|v| v * v).sum();
        assert!(rss - root_sq <= 1e-16 * total_sq, "fitted-column residual too large");
    }

    #[test]
    fn single_edge_fit_is_the_scalar_ols_ratio() {
        let (x, _) = small_instance(2, 25, 3);
        let mut allowed = BinaryAdjacency::new(2);
        allowed.add_edge(0, 1);
        let (w, _) = restricted_least_squares(&x, &allowed).unwrap();
        let num: f64 = x.column(0).iter().zip(x.column(1)).map(|(a, b)| a * b).sum();
        let den: f64 = x.column(0).iter().map(|a| a * a).sum();
        assert_relative_eq!(w[[0, 1]], num / den, max_relative = 1e-8);
    }

    #[test]
    fn objective_examples() {
        let (x, _) = small_instance(3, 20, 9);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        let w0 = WeightMatrix::zeros((3, 3));
        let e0 = BinaryAdjacency::new(3);
        let j0 = evaluate_objective(&x, &w0, &e0, 0.25, 100.0, 1e-9).unwrap();
        assert_relative_eq!(j0, sq, max_relative = 1e-12);

        // an indicated-but-unused edge costs exactly lambda
        let mut e1 = BinaryAdjacency::new(3);
        e1.add_edge(0, 1);
        let j1 = evaluate_objective(&x, &w0, &e1, 0.25, 100.0, 1e-9).unwrap();
        assert_relative_eq!(j1 - j0, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn objective_rejects_link_violations() {
        let (x, _) = small_instance(2, 10, 1);
        let mut w = WeightMatrix::zeros((2, 2));
        w[[0, 1]] = 0.5;
        let e = BinaryAdjacency::new(2); // edge not indicated
        assert!(matches!(
            evaluate_objective(&x, &w, &e, 0.1, 100.0, 1e-9),
            Err(Error::LinkViolation { i: 0, j: 1, .. })
        ));
    }

    #[test]
    fn objective_at_ground_truth_of_near_noiseless_instance_is_lambda_times_edges() {
        let g = gen_er_dag(6, 1.5, 21).unwrap();
        let w = sample_weights(&g, 22);
        let x = sample_sem(&w, 100, &NoiseSpec::Fixed { variance: 1e-16 }, 23).unwrap();
        let lambda = 0.1;
        let j = evaluate_objective(&x, &w, &g, lambda, 100.0, 1e-9).unwrap();
        let expect = lambda * g.edge_count() as f64;
        assert!((j - expect).abs() < 1e-10, "J = {j}, expected ~{expect}");
    }

    #[test]
    fn root_bound_is_full_support_fit() {
        let (x, _) = small_instance(4, 50, 13);
        let node = SearchNode::root(4);
        let b = node_lower_bound(&x, &node, 0.1, BoundMode::Ls, &[], 100.0).unwrap();
        let mut full = BinaryAdjacency::new(4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    full.add_edge(i, j);
                }
            }
        }
        let (_, rss) = restricted_least_squares(&x, &full).unwrap();
        assert_relative_eq!(b, rss, max_relative = 1e-9);
    }

    #[test]
    fn all_forbidden_bound_is_data_norm() {
        let (x, _) = small_instance(3, 30, 17);
        let mut node = SearchNode::root(3);
        for (i, j) in node.free_edges() {
            node.forbid(i, j);
        }
        let b = node_lower_bound(&x, &node, 0.1, BoundMode::Ls, &[], 100.0).unwrap();
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert_relative_eq!(b, sq, max_relative = 1e-12);
    }

    #[test]
    fn fully_fixed_bound_matches_objective_of_the_fit() {
        let (x, w_true) = small_instance(4, 60, 19);
        let support = BinaryAdjacency::support_of(&w_true);
        let mut node = SearchNode::root(4);
        for (i, j) in node.free_edges() {
            if support.edge(i, j) {
                node.force(i, j);
            } else {
                node.forbid(i, j);
            }
        }
        assert!(node.is_fully_fixed());
        let lambda = 0.2;
        let b = node_lower_bound(&x, &node, lambda, BoundMode::Ls, &[], 100.0).unwrap();
        let (w_fit, _) = restricted_least_squares(&x, &support).unwrap();
        let j = evaluate_objective(&x, &w_fit, &support, lambda, 100.0, 1e-6).unwrap();
        assert_relative_eq!(b, j, max_relative = 1e-9);
    }

    #[test]
    fn bound_is_monotone_under_branching() {
        let (x, _) = small_instance(5, 40, 23);
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..40 {
            let mut node = SearchNode::root(5);
            // random partial fixing
            for (i, j) in node.free_edges() {
                match rng.gen_range(0..4) {
                    0 => node.forbid(i, j),
                    1 => node.force(i, j),
                    _ => {}
                }
            }
            let parent_bound =
                node_lower_bound(&x, &node, 0.15, BoundMode::Ls, &[], 100.0).unwrap();
            let free = node.free_edges();
            if free.is_empty() {
                continue;
            }
            let (i, j) = free[rng.gen_range(0..free.len())];
            let mut forbid_child = node.clone();
            forbid_child.forbid(i, j);
            let mut force_child = node.clone();
            force_child.force(i, j);
            for child in [forbid_child, force_child] {
                let cb = node_lower_bound(&x, &child, 0.15, BoundMode::Ls, &[], 100.0).unwrap();
                assert!(cb >= parent_bound - 1e-9, "child bound {cb} < parent {parent_bound}");
            }
        }
    }

    #[test]
    fn bound_is_valid_for_every_consistent_completion() {
        // Enumerate all DAG supports on d = 3 consistent with random nodes and
        // compare against the objective of their least-squares fits.
        let (x, _) = small_instance(3, 30, 29);
        let lambda = 0.2;
        let mut rng = StdRng::seed_from_u64(37);
        let all_dags = crate::metrics::enumerate_dags(3).unwrap();
        for _ in 0..20 {
            let mut node = SearchNode::root(3);
            for (i, j) in node.free_edges() {
                match rng.gen_range(0..5) {
                    0 => node.forbid(i, j),
                    1 => node.force(i, j),
                    _ => {}
                }
            }
            let bound = node_lower_bound(&x, &node, lambda, BoundMode::Ls, &[], 100.0).unwrap();
            for dag in &all_dags {
                let consistent = dag.edges().iter().all(|&(i, j)| node.ub(i, j))
                    && node.forced_graph().edges().iter().all(|&(i, j)| dag.edge(i, j));
                if !consistent {
                    continue;
                }
                let (w_fit, _) = restricted_least_squares(&x, dag).unwrap();
                let obj = evaluate_objective(&x, &w_fit, dag, lambda, 100.0, 1e-6).unwrap();
                assert!(
                    bound <= obj + 1e-7,
                    "bound {bound} exceeds completion objective {obj}"
                );
            }
        }
    }

    #[test]
    fn residual_gradient_matches_central_differences() {
        let (x, _) = small_instance(4, 25, 41);
        let mut rng = StdRng::seed_from_u64(43);
        let mut w = WeightMatrix::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = rng.gen::<f64>() - 0.5;
                }
            }
        }
        let grad = residual_gradient(&x, &w);
        let h = 1e-5;
        for i in 0..4 {
            for j in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[[i, j]] += h;
                wm[[i, j]] -= h;
                let fd = (frobenius_rss(&x, &wp) - frobenius_rss(&x, &wm)) / (2.0 * h);
                let scale = grad[[i, j]].abs().max(1.0);
                assert!(
                    (grad[[i, j]] - fd).abs() / scale < 1e-5,
                    "gradient mismatch at ({i},{j}): {} vs {fd}",
                    grad[[i, j]]
                );
            }
        }
    }
}
