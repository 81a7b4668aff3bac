//! Branch-and-bound-and-cut driver: best-first node queue, branching on
//! indicator variables, lazy cycle-cut separation at integer-feasible
//! candidates, incumbent management, and MIP-gap tracking.
//!
//! Cycle-exclusion constraints are never enumerated up front. Integral
//! candidates (fully fixed nodes and heuristic candidates) are checked by
//! depth-first search; every cycle found becomes a cut in a single global
//! pool shared by all nodes of the tree.

use crate::error::{Error, Result};
use crate::graph::{
    cycle_to_cut, find_cycles, is_acyclic, BinaryAdjacency, Cycle, CycleCut,
};
use crate::linalg::GramFitter;
use crate::relax::{BoundMode, RelaxationSolution, SearchNode, QP_KKT_TOL};
use crate::{DataMatrix, WeightMatrix};
use ndarray::Array2;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

/// Pruning slack: a node is pruned only if its bound is at least the
/// incumbent objective minus this.
const PRUNE_EPS: f64 = 1e-9;

/// The hyper-parameter grid used by the tuning protocol.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [4.0, 3.0, 2.0, 1.0, 0.1, 0.05, 0.01];

/// Which lazy cuts to add per violated integral candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CutVariant {
    /// Only the first cycle found by the traversal.
    FirstCycle,
    /// Only the shortest cycle found (first among ties).
    ShortestCycle,
    /// One cut per cycle found.
    #[default]
    AllCycles,
}

/// Solver configuration. Defaults follow the evaluation protocol: a two-hour
/// wall limit, big-M of 100, post-threshold 0.3.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Edge penalty coefficient, must be positive.
    pub lambda: f64,
    /// Big-M weight cap `c` in `|w_ij| <= c e_ij`.
    pub big_m: f64,
    /// Threshold applied to the final reported solution only.
    pub delta: f64,
    /// Relative MIP gap at which the search stops.
    pub gap_tol: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: f64,
    /// Integrality tolerance for indicator values.
    pub int_tol: f64,
    pub mode: BoundMode,
    pub variant: CutVariant,
    /// Pre-seed the pool with all two-cycle cuts (off: pure lazy protocol).
    pub seed_two_cycle_cuts: bool,
    /// Reserved for randomized components; the current single-worker
    /// algorithms are fully deterministic.
    pub seed: u64,
    pub node_limit: Option<u64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            lambda: 0.1,
            big_m: 100.0,
            delta: 0.3,
            gap_tol: 1e-4,
            time_limit: 7200.0,
            int_tol: 1e-6,
            mode: BoundMode::Ls,
            variant: CutVariant::AllCycles,
            seed_two_cycle_cuts: false,
            seed: 0,
            node_limit: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParams("lambda must be positive".into()));
        }
        if !(self.big_m > 0.0) || !(self.gap_tol > 0.0) || !(self.int_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be positive".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParams("delta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Global cut pool, deduplicated by edge set. Insertion order is preserved.
#[derive(Default)]
pub struct CutPool {
    cuts: Vec<CycleCut>,
    seen: HashSet<Vec<(usize, usize)>>,
}

impl CutPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pool with every two-cycle cut `e_ij + e_ji <= 1` pre-seeded.
    pub fn with_two_cycle_cuts(d: usize) -> Self {
        let mut pool = Self::new();
        for i in 0..d {
            for j in (i + 1)..d {
                pool.add(cycle_to_cut(&Cycle::new(vec![i, j])));
            }
        }
        pool
    }

    /// Inserts a cut unless an identical edge set is already pooled.
    /// Returns true when the cut is new.
    pub fn add(&mut self, cut: CycleCut) -> bool {
        if self.seen.contains(cut.edge_set()) {
            return false;
        }
        self.seen.insert(cut.edge_set().to_vec());
        self.cuts.push(cut);
        true
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn cuts(&self) -> &[CycleCut] {
        &self.cuts
    }

    /// True when some pooled cut is violated by the binary candidate.
    pub fn any_violated_by(&self, g: &BinaryAdjacency) -> bool {
        self.cuts.iter().any(|c| !c.satisfied_by(g))
    }
}

/// Runs the separation routine on an integral candidate: finds the back-edge
/// cycles of its support, converts them to cuts per the configured variant,
/// and appends the new ones to the pool. Returns only the newly added cuts;
/// the return is empty iff the candidate is acyclic or every found cut was
/// already pooled.
pub fn separate_lazy_cuts(
    candidate: &BinaryAdjacency,
    pool: &mut CutPool,
    variant: CutVariant,
) -> Vec<CycleCut> {
    let cycles = find_cycles(candidate);
    if cycles.is_empty() {
        return Vec::new();
    }
    let selected: Vec<&Cycle> = match variant {
        CutVariant::AllCycles => cycles.iter().collect(),
        CutVariant::FirstCycle => vec![&cycles[0]],
        CutVariant::ShortestCycle => {
            let best = cycles.iter().enumerate().min_by_key(|(k, c)| (c.len(), *k)).unwrap().1;
            vec![best]
        }
    };
    let mut added = Vec::new();
    for c in selected {
        let cut = cycle_to_cut(c);
        if pool.add(cut.clone()) {
            added.push(cut);
        }
    }
    added
}

/// Relaxation information available at a node for branching decisions.
pub enum NodeRelaxation<'a> {
    /// Least-squares fit on the node's allowed support.
    LsFit(&'a WeightMatrix),
    /// Continuous relaxation solution with fractional indicators.
    Qp(&'a RelaxationSolution),
}

/// Picks the branching edge among the node's free variables: the most
/// fractional indicator in qp mode, the largest-magnitude fitted weight in
/// ls mode. Ties break lexicographically by `(i, j)`.
pub fn select_branch_variable(
    node: &SearchNode,
    relax: &NodeRelaxation<'_>,
) -> Result<(usize, usize)> {
    let free = node.free_edges();
    if free.is_empty() {
        return Err(Error::NoFreeVariable);
    }
    let score = |i: usize, j: usize| -> f64 {
        match relax {
            NodeRelaxation::LsFit(w) => w[[i, j]].abs(),
            NodeRelaxation::Qp(sol) => -(sol.e[[i, j]] - 0.5).abs(),
        }
    };
    let mut best = free[0];
    let mut best_score = score(free[0].0, free[0].1);
    for &(i, j) in &free[1..] {
        let s = score(i, j);
        if s > best_score {
            best_score = s;
            best = (i, j);
        }
    }
    Ok(best)
}

/// Cheap infeasibility test run before bounding: false iff the forced-edge
/// graph already contains a cycle or fully forces a pooled cut's edge set.
pub fn node_feasible(node: &SearchNode, pool: &CutPool) -> bool {
    let forced = node.forced_graph();
    if !is_acyclic(&forced) {
        return false;
    }
    !pool
        .cuts()
        .iter()
        .any(|cut| cut.edge_set().iter().all(|&(i, j)| node.lb(i, j)))
}

/// Relative MIP gap `|primal - dual| / |primal|`. Undefined gaps (no finite
/// incumbent, or `|primal| < 1e-12`) are reported as infinite.
pub fn mip_gap(primal: f64, dual: f64) -> f64 {
    if !primal.is_finite() || primal.abs() < 1e-12 || !dual.is_finite() {
        return f64::INFINITY;
    }
    (primal - dual).abs() / primal.abs()
}

/// Best feasible (acyclic, integral) solution found so far.
#[derive(Clone, Debug)]
pub struct Incumbent {
    pub w: WeightMatrix,
    pub e: BinaryAdjacency,
    pub objective: f64,
    pub wall_time_found: f64,
}

/// One convergence-trajectory record.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryPoint {
    pub wall_s: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub nodes: u64,
    pub cuts: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    GapReached,
    TimeLimit,
    NodeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapReached => "gap-reached",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::NodeLimit => "node-limit",
        }
    }
}

/// Full solve outcome: incumbent, certified dual bound, gap, trajectory, and
/// the final cut pool.
#[derive(Debug)]
pub struct SolveReport {
    pub best: Incumbent,
    pub dual_bound: f64,
    pub mip_gap: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub node_count: u64,
    pub cut_count: u64,
    pub status: SolveStatus,
    pub cuts: Vec<CycleCut>,
    pub wall_time_s: f64,
    /// Number of improving incumbents found beyond the trivial zero solution.
    pub incumbent_updates: u64,
    /// Set when some final weight magnitude exceeds 0.99 * big_m, indicating
    /// the weight cap may be binding.
    pub big_m_binding: bool,
}

/// Thresholds the node's fitted weights, repairs cycles by repeatedly
/// deleting the smallest-magnitude edge on any cycle found (pooling a cut
/// for every cycle seen on the way), refits the repaired support, and
/// returns the candidate when it beats `current_best`.
pub fn incumbent_heuristic(
    x: &DataMatrix,
    node: &SearchNode,
    lambda: f64,
    delta_h: f64,
    pool: &mut CutPool,
    current_best: Option<f64>,
) -> Result<Option<Incumbent>> {
    let (w_node, _) = crate::relax::restricted_least_squares(x, &node.allowed_graph())?;
    let mut support = BinaryAdjacency::new(x.ncols());
    for ((i, j), &v) in w_node.indexed_iter() {
        if i != j && v.abs() >= delta_h {
            support.add_edge(i, j);
        }
    }
    repair_support(&mut support, &w_node, pool);
    debug_assert!(separate_lazy_cuts(&support, pool, CutVariant::AllCycles).is_empty());
    let (w_fit, rss) = crate::relax::restricted_least_squares(x, &support)?;
    let objective = rss + lambda * support.edge_count() as f64;
    match current_best {
        Some(b) if objective >= b - 1e-12 * b.abs().max(1.0) => Ok(None),
        _ => Ok(Some(Incumbent { w: w_fit, e: support, objective, wall_time_found: 0.0 })),
    }
}

/// Deletes the smallest-|w| edge of every cycle found, pass after pass,
/// until the support is acyclic. Each cycle encountered contributes its cut
/// to the pool. Returns the number of new cuts pooled.
fn repair_support(support: &mut BinaryAdjacency, w: &WeightMatrix, pool: &mut CutPool) -> u64 {
    let mut new_cuts = 0;
    loop {
        let cycles = find_cycles(support);
        if cycles.is_empty() {
            return new_cuts;
        }
        for c in &cycles {
            if pool.add(cycle_to_cut(c)) {
                new_cuts += 1;
            }
            // earlier deletions in this pass may already have broken it
            let mut victim: Option<((usize, usize), f64)> = None;
            let mut intact = true;
            for (i, j) in c.edges() {
                if !support.edge(i, j) {
                    intact = false;
                    break;
                }
                let m = w[[i, j]].abs();
                if victim.map_or(true, |(_, vm)| m < vm) {
                    victim = Some(((i, j), m));
                }
            }
            if intact {
                let ((i, j), _) = victim.unwrap();
                support.remove_edge(i, j);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// driver internals
// ---------------------------------------------------------------------------

/// Compact branching record; nodes are materialized by walking parent links.
#[derive(Clone, Copy)]
struct Delta {
    parent: u32,
    edge: u16,
    forced: bool,
}

struct OpenEntry {
    bound: f64,
    seq: u64,
    idx: u32,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound.total_cmp(&other.bound).then(self.seq.cmp(&other.seq))
    }
}

/// Hard cap on stored tree nodes, independent of the configured node limit;
/// keeps worst-case memory of long runs bounded.
const ARENA_CAP: usize = 120_000_000;

struct Driver<'a> {
    x: &'a DataMatrix,
    cfg: &'a SolveConfig,
    d: usize,
    fitter: GramFitter,
    pool: CutPool,
    arena: Vec<Delta>,
    open: BinaryHeap<Reverse<OpenEntry>>,
    seq: u64,
    incumbent: Incumbent,
    incumbent_updates: u64,
    dual: f64,
    trajectory: Vec<TrajectoryPoint>,
    node_count: u64,
    t0: Instant,
    // scratch reused across pops
    w_fit: Array2<f64>,
    col_rss: Vec<f64>,
    parents_buf: Vec<usize>,
    weights_buf: Vec<f64>,
    last_polished: Option<BinaryAdjacency>,
}

impl<'a> Driver<'a> {
    fn elapsed(&self) -> f64 {
        self.t0.elapsed().as_secs_f64()
    }

    fn primal(&self) -> f64 {
        self.incumbent.objective
    }

    fn record(&mut self) {
        let gap = mip_gap(self.primal(), self.dual);
        self.trajectory.push(TrajectoryPoint {
            wall_s: self.elapsed(),
            primal: self.primal(),
            dual: self.dual,
            gap,
            nodes: self.node_count,
            cuts: self.pool.len() as u64,
        });
    }

    /// Materializes the masks of an arena node into a `SearchNode`.
    fn materialize(&self, idx: u32) -> SearchNode {
        let mut node = SearchNode::root(self.d);
        let mut chain: Vec<u32> = Vec::new();
        let mut cur = idx;
        while cur != u32::MAX {
            chain.push(cur);
            cur = self.arena[cur as usize].parent;
        }
        // skip the root sentinel
        for &c in chain.iter().rev().skip(1) {
            let delta = self.arena[c as usize];
            let (i, j) = ((delta.edge as usize) / self.d, (delta.edge as usize) % self.d);
            if delta.forced {
                node.force(i, j);
            } else {
                node.forbid(i, j);
            }
            node.depth += 1;
        }
        node.id = idx as u64;
        node.parent = {
            let p = self.arena[idx as usize].parent;
            (p != u32::MAX).then_some(p as u64)
        };
        node
    }

    /// Per-column allowed-support fits for a node: fills `w_fit` and
    /// `col_rss`, returns `sum(rss) + lambda * #forced`.
    fn fit_node(&mut self, node: &SearchNode) -> f64 {
        self.w_fit.fill(0.0);
        let mut total = 0.0;
        for j in 0..self.d {
            self.parents_buf.clear();
            self.parents_buf.extend(node.allowed_parents(j));
            let parents = std::mem::take(&mut self.parents_buf);
            let rss = self.fitter.fit_gram(j, &parents, &mut self.weights_buf);
            for (a, &p) in parents.iter().enumerate() {
                self.w_fit[[p, j]] = self.weights_buf[a];
            }
            self.parents_buf = parents;
            self.col_rss[j] = rss;
            total += rss;
        }
        total + self.cfg.lambda * node.forced_count() as f64
    }

    /// Column rss under a mask with one extra forbidden parent.
    fn column_rss_without(&mut self, node: &SearchNode, banned: usize, j: usize) -> f64 {
        self.parents_buf.clear();
        self.parents_buf.extend(node.allowed_parents(j).into_iter().filter(|&p| p != banned));
        let parents = std::mem::take(&mut self.parents_buf);
        let rss = self.fitter.fit_gram(j, &parents, &mut self.weights_buf);
        self.parents_buf = parents;
        rss
    }

    /// Exact-residual objective of a support's restricted fit, for incumbent
    /// bookkeeping. Returns the fitted weights as a dense matrix.
    fn exact_fit(&mut self, support: &BinaryAdjacency) -> (WeightMatrix, f64) {
        let mut w = Array2::zeros((self.d, self.d));
        let mut rss = 0.0;
        for j in 0..self.d {
            self.parents_buf.clear();
            self.parents_buf.extend(support.parents_of(j));
            let parents = std::mem::take(&mut self.parents_buf);
            rss += self.fitter.fit_exact(self.x, j, &parents, &mut self.weights_buf);
            for (a, &p) in parents.iter().enumerate() {
                w[[p, j]] = self.weights_buf[a];
            }
            self.parents_buf = parents;
        }
        (w, rss + self.cfg.lambda * support.edge_count() as f64)
    }

    fn try_accept(&mut self, w: WeightMatrix, support: BinaryAdjacency, objective: f64) -> bool {
        if objective >= self.primal() - 1e-12 * self.primal().abs().max(1.0) {
            return false;
        }
        debug_assert!(is_acyclic(&support));
        log::debug!(
            "node={} bound={:.6} action=incumbent objective={objective:.6}",
            self.node_count,
            self.dual
        );
        self.incumbent =
            Incumbent { w, e: support, objective, wall_time_found: self.elapsed() };
        self.incumbent_updates += 1;
        self.record();
        true
    }

    /// Gram-evaluated objective of a support's restricted fit.
    fn screen_objective(&mut self, support: &BinaryAdjacency) -> f64 {
        let mut screen = self.cfg.lambda * support.edge_count() as f64;
        for j in 0..self.d {
            self.parents_buf.clear();
            self.parents_buf.extend(support.parents_of(j));
            let parents = std::mem::take(&mut self.parents_buf);
            screen += self.fitter.fit_gram(j, &parents, &mut self.weights_buf);
            self.parents_buf = parents;
        }
        screen
    }

    fn column_rss_of(&mut self, support: &BinaryAdjacency, j: usize) -> f64 {
        self.parents_buf.clear();
        self.parents_buf.extend(support.parents_of(j));
        let parents = std::mem::take(&mut self.parents_buf);
        let rss = self.fitter.fit_gram(j, &parents, &mut self.weights_buf);
        self.parents_buf = parents;
        rss
    }

    /// Greedy local improvement over acyclic supports: single-edge additions,
    /// deletions, and reversals that lower the objective, scanned in
    /// lexicographic order until a fixed point. Keeps incumbents from
    /// stalling on near-threshold edges the repair step dropped.
    fn polish_support(&mut self, support: &mut BinaryAdjacency) {
        let mut col_rss: Vec<f64> = (0..self.d)
            .map(|j| {
                self.parents_buf.clear();
                self.parents_buf.extend(support.parents_of(j));
                let parents = std::mem::take(&mut self.parents_buf);
                let rss = self.fitter.fit_gram(j, &parents, &mut self.weights_buf);
                self.parents_buf = parents;
                rss
            })
            .collect();
        let scale = (col_rss.iter().sum::<f64>()).abs().max(1.0);
        let eps = 1e-9 * scale;
        for _pass in 0..40 {
            let mut improved = false;
            for i in 0..self.d {
                for j in 0..self.d {
                    if i == j {
                        continue;
                    }
                    if support.edge(i, j) {
                        // deletion
                        support.remove_edge(i, j);
                        let without = self.column_rss_of(support, j);
                        let delta_del = without - col_rss[j] - self.cfg.lambda;
                        if delta_del < -eps {
                            col_rss[j] = without;
                            improved = true;
                            continue;
                        }
                        // reversal (delete i->j, add j->i)
                        if !support.edge(j, i) {
                            support.add_edge(j, i);
                            if is_acyclic(support) {
                                let src = self.column_rss_of(support, i);
                                let delta = (without - col_rss[j]) + (src - col_rss[i]);
                                if delta < -eps {
                                    col_rss[j] = without;
                                    col_rss[i] = src;
                                    improved = true;
                                    continue;
                                }
                            }
                            support.remove_edge(j, i);
                        }
                        support.add_edge(i, j);
                    } else {
                        // addition
                        support.add_edge(i, j);
                        if is_acyclic(support) {
                            let with = self.column_rss_of(support, j);
                            let delta = with - col_rss[j] + self.cfg.lambda;
                            if delta < -eps {
                                col_rss[j] = with;
                                improved = true;
                                continue;
                            }
                        }
                        support.remove_edge(i, j);
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }

    /// Threshold-and-repair heuristic on the current node fit, with greedy
    /// polish on promising candidates.
    fn run_heuristic(&mut self, node: &SearchNode) {
        let mut support = BinaryAdjacency::new(self.d);
        for j in 0..self.d {
            for i in node.allowed_parents(j) {
                if self.w_fit[[i, j]].abs() >= self.cfg.delta {
                    support.add_edge(i, j);
                }
            }
        }
        let w_snapshot = self.w_fit.clone();
        repair_support(&mut support, &w_snapshot, &mut self.pool);
        // quick objective screen with gram fits before paying for the polish
        let screen = self.screen_objective(&support);
        let primal = self.primal();
        if screen >= primal + 0.05 * primal.abs() {
            return;
        }
        if self.last_polished.as_ref() == Some(&support) {
            return;
        }
        self.last_polished = Some(support.clone());
        self.polish_support(&mut support);
        if self.screen_objective(&support) >= primal - 1e-12 * primal.abs().max(1.0) {
            return;
        }
        let (w, objective) = self.exact_fit(&support);
        self.try_accept(w, support, objective);
    }

    /// Push a child delta unless it is prunable or infeasible.
    fn push_child(&mut self, parent_idx: u32, node: &SearchNode, i: usize, j: usize, forced: bool, bound: f64) {
        if bound >= self.primal() - PRUNE_EPS {
            return;
        }
        if forced {
            // forcing may close a forced cycle or complete a pooled cut
            let mut forced_graph = node.forced_graph();
            forced_graph.add_edge(i, j);
            if !is_acyclic(&forced_graph) {
                return;
            }
            if self.pool.cuts().iter().any(|cut| {
                cut.edge_set().iter().all(|&(a, b)| (a == i && b == j) || node.lb(a, b))
            }) {
                return;
            }
        }
        if self.arena.len() >= ARENA_CAP {
            return;
        }
        self.arena.push(Delta { parent: parent_idx, edge: (i * self.d + j) as u16, forced });
        let idx = (self.arena.len() - 1) as u32;
        self.seq += 1;
        self.open.push(Reverse(OpenEntry { bound, seq: self.seq, idx }));
    }

    /// Drops prunable entries when the heap has grown far beyond the last
    /// compaction size.
    fn maybe_compact(&mut self, watermark: &mut usize) {
        if self.open.len() < 65_536 || self.open.len() < 2 * *watermark {
            return;
        }
        let cutoff = self.primal() - PRUNE_EPS;
        let entries = std::mem::take(&mut self.open).into_vec();
        let kept: Vec<_> = entries.into_iter().filter(|Reverse(e)| e.bound < cutoff).collect();
        self.open = BinaryHeap::from(kept);
        *watermark = self.open.len().max(1);
    }
}

/// Globally solves the score-minimization problem over acyclic supports.
///
/// Returns the optimum when `status` is `Optimal` (and, up to `gap_tol`,
/// when `GapReached`); otherwise the best incumbent found plus a valid dual
/// bound. The incumbent support is acyclic at every point of the search.
pub fn solve(x: &DataMatrix, config: &SolveConfig) -> Result<SolveReport> {
    config.validate()?;
    let d = x.ncols();
    let n = x.nrows();
    if d < 1 || n < 1 {
        return Err(Error::DegenerateData(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    if d > 255 {
        return Err(Error::InvalidParams(format!("solver supports d <= 255, got {d}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("data matrix contains non-finite values".into()));
    }

    let fitter = GramFitter::new(x);
    let trivial_obj: f64 = (0..d).map(|j| fitter.col_sq_norm(j)).sum();
    let pool = if config.seed_two_cycle_cuts {
        CutPool::with_two_cycle_cuts(d)
    } else {
        CutPool::new()
    };

    let mut driver = Driver {
        x,
        cfg: config,
        d,
        fitter,
        pool,
        arena: vec![Delta { parent: u32::MAX, edge: 0, forced: false }],
        open: BinaryHeap::new(),
        seq: 0,
        incumbent: Incumbent {
            w: Array2::zeros((d, d)),
            e: BinaryAdjacency::new(d),
            objective: trivial_obj,
            wall_time_found: 0.0,
        },
        incumbent_updates: 0,
        dual: f64::NEG_INFINITY,
        trajectory: Vec::new(),
        node_count: 0,
        t0: Instant::now(),
        w_fit: Array2::zeros((d, d)),
        col_rss: vec![0.0; d],
        parents_buf: Vec::new(),
        weights_buf: Vec::new(),
        last_polished: None,
    };

    let root = SearchNode::root(d);
    let root_bound = driver.fit_node(&root);
    driver.dual = root_bound.min(driver.primal());
    driver.record();
    driver.open.push(Reverse(OpenEntry { bound: root_bound, seq: 0, idx: 0 }));

    let mut status = SolveStatus::Optimal;
    let mut watermark = 1usize;

    while let Some(Reverse(entry)) = driver.open.pop() {
        if entry.bound >= driver.primal() - PRUNE_EPS {
            // best-first order: every remaining node is prunable
            driver.dual = driver.primal();
            status = SolveStatus::Optimal;
            break;
        }
        driver.node_count += 1;
        let node = driver.materialize(entry.idx);

        let new_dual = entry.bound.max(driver.dual).min(driver.primal());
        if new_dual > driver.dual + 1e-9 * driver.dual.abs().max(1.0) {
            driver.dual = new_dual;
            driver.record();
        } else {
            driver.dual = new_dual;
        }
        if mip_gap(driver.primal(), driver.dual) <= config.gap_tol {
            status = SolveStatus::GapReached;
            break;
        }
        if driver.elapsed() > config.time_limit {
            status = SolveStatus::TimeLimit;
            break;
        }
        if let Some(limit) = config.node_limit {
            if driver.node_count >= limit {
                status = SolveStatus::NodeLimit;
                break;
            }
        }

        // integral candidate: fully fixed node
        if node.is_fully_fixed() {
            let support = node.forced_graph();
            let new_cuts = separate_lazy_cuts(&support, &mut driver.pool, config.variant);
            if !new_cuts.is_empty() || driver.pool.any_violated_by(&support) {
                log::debug!("node={} bound={:.6} action=cut count={}", driver.node_count, entry.bound, new_cuts.len());
                continue;
            }
            let (w, objective) = driver.exact_fit(&support);
            driver.try_accept(w, support, objective);
            continue;
        }

        // node relaxation: fit + optional qp strengthening
        let ls_bound = driver.fit_node(&node).max(entry.bound);
        let (local_bound, qp_sol) = if config.mode == BoundMode::Qp {
            match crate::qp::qp_relaxation_solve(
                x,
                &node,
                driver.pool.cuts(),
                config.lambda,
                config.big_m,
                QP_KKT_TOL,
            ) {
                Ok(sol) => (sol.dual_bound.max(ls_bound), Some(sol)),
                Err(Error::MaxIterations(sol)) => (sol.dual_bound.max(ls_bound), Some(*sol)),
                Err(e) => return Err(e),
            }
        } else {
            (ls_bound, None)
        };
        if local_bound >= driver.primal() - PRUNE_EPS {
            log::debug!("node={} bound={local_bound:.6} action=prune", driver.node_count);
            continue;
        }

        // primal heuristic: always early on, then on a fixed cadence
        if driver.node_count <= 4096 || driver.node_count % 8 == 0 {
            driver.run_heuristic(&node);
        }

        let branch = match &qp_sol {
            Some(sol) => select_branch_variable(&node, &NodeRelaxation::Qp(sol))?,
            None => {
                let w_ref = &driver.w_fit;
                let free = node.free_edges();
                let mut best = free[0];
                let mut best_mag = w_ref[[best.0, best.1]].abs();
                for &(i, j) in &free[1..] {
                    let m = w_ref[[i, j]].abs();
                    if m > best_mag {
                        best_mag = m;
                        best = (i, j);
                    }
                }
                best
            }
        };
        let (bi, bj) = branch;
        log::debug!("node={} bound={local_bound:.6} action=branch edge=({bi},{bj})", driver.node_count);

        let forbid_bound =
            (local_bound - driver.col_rss[bj] + driver.column_rss_without(&node, bi, bj)).max(local_bound);
        let force_bound = local_bound + config.lambda;
        driver.push_child(entry.idx, &node, bi, bj, false, forbid_bound);
        driver.push_child(entry.idx, &node, bi, bj, true, force_bound);
        driver.maybe_compact(&mut watermark);
    }

    if driver.open.is_empty() && status == SolveStatus::Optimal {
        driver.dual = driver.primal();
    }
    driver.record();

    let gap = mip_gap(driver.incumbent.objective, driver.dual);
    let big_m_binding = driver
        .incumbent
        .w
        .iter()
        .any(|v| v.abs() > 0.99 * config.big_m);
    if big_m_binding {
        log::warn!(
            "big-M may be binding: max |w| = {:.3} with c = {}",
            driver.incumbent.w.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            config.big_m
        );
    }
    Ok(SolveReport {
        dual_bound: driver.dual,
        mip_gap: gap,
        node_count: driver.node_count,
        cut_count: driver.pool.len() as u64,
        status,
        cuts: driver.pool.cuts.clone(),
        wall_time_s: driver.t0.elapsed().as_secs_f64(),
        incumbent_updates: driver.incumbent_updates,
        big_m_binding,
        trajectory: std::mem::take(&mut driver.trajectory),
        best: driver.incumbent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::brute_force_oracle;
    use crate::relax::evaluate_objective;
    use crate::synth::{gen_er_dag, sample_sem, sample_weights, NoiseSpec};
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn instance(d: usize, edges: f64, n: usize, seed: u64) -> DataMatrix {
        let g = gen_er_dag(d, edges / d as f64, seed).unwrap();
        let w = sample_weights(&g, seed + 1);
        sample_sem(&w, n, &NoiseSpec::default(), seed + 2).unwrap()
    }

    #[test]
    fn mip_gap_examples() {
        assert_eq!(mip_gap(100.0, 100.0), 0.0);
        assert!((mip_gap(100.0, 90.0) - 0.1).abs() < 1e-15);
        assert!(mip_gap(f64::INFINITY, 90.0).is_infinite());
        assert!(mip_gap(1e-13, 0.0).is_infinite());
        assert!(mip_gap(100.0, f64::NEG_INFINITY).is_infinite());
    }

    #[test]
    fn separation_examples() {
        let mut pool = CutPool::new();
        let acyclic = BinaryAdjacency::from_edges(3, [(0, 1), (1, 2)]);
        assert!(separate_lazy_cuts(&acyclic, &mut pool, CutVariant::AllCycles).is_empty());

        let two_cycle = BinaryAdjacency::from_edges(3, [(0, 1), (1, 0)]);
        let added = separate_lazy_cuts(&two_cycle, &mut pool, CutVariant::AllCycles);
        assert_eq!(added.len(), 1);
        assert_eq!(added[0].rhs(), 1);

        // resubmission: deduplicated, but the pool still rejects the candidate
        let again = separate_lazy_cuts(&two_cycle, &mut pool, CutVariant::AllCycles);
        assert!(again.is_empty());
        assert!(pool.any_violated_by(&two_cycle));
    }

    #[test]
    fn separation_variants_differ_on_multi_cycle_candidates() {
        let g = BinaryAdjacency::from_edges(5, [(0, 1), (1, 0), (2, 3), (3, 4), (4, 2)]);
        let mut p1 = CutPool::new();
        let mut p2 = CutPool::new();
        let mut p3 = CutPool::new();
        assert_eq!(separate_lazy_cuts(&g, &mut p1, CutVariant::FirstCycle).len(), 1);
        let shortest = separate_lazy_cuts(&g, &mut p2, CutVariant::ShortestCycle);
        assert_eq!(shortest.len(), 1);
        assert_eq!(shortest[0].edge_set().len(), 2);
        assert_eq!(separate_lazy_cuts(&g, &mut p3, CutVariant::AllCycles).len(), 2);
    }

    #[test]
    fn branch_selection_rules() {
        let node = SearchNode::root(3);

        // qp rule: most fractional indicator
        let mut e = Array2::zeros((3, 3));
        e[[0, 1]] = 0.9;
        e[[1, 0]] = 0.5;
        let sol = RelaxationSolution {
            w: Array2::zeros((3, 3)),
            e,
            objective: 0.0,
            dual_bound: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
        };
        assert_eq!(select_branch_variable(&node, &NodeRelaxation::Qp(&sol)).unwrap(), (1, 0));

        // ls rule: largest fitted magnitude
        let mut w = Array2::zeros((3, 3));
        w[[0, 2]] = -1.7;
        w[[1, 2]] = 0.4;
        assert_eq!(select_branch_variable(&node, &NodeRelaxation::LsFit(&w)).unwrap(), (0, 2));

        // single free variable
        let mut nearly = SearchNode::root(2);
        nearly.force(0, 1);
        let w2 = Array2::zeros((2, 2));
        assert_eq!(select_branch_variable(&nearly, &NodeRelaxation::LsFit(&w2)).unwrap(), (1, 0));

        let mut fixed = nearly.clone();
        fixed.forbid(1, 0);
        assert!(matches!(
            select_branch_variable(&fixed, &NodeRelaxation::LsFit(&w2)),
            Err(Error::NoFreeVariable)
        ));
    }

    #[test]
    fn node_feasibility_rules() {
        let pool_empty = CutPool::new();
        let root = SearchNode::root(3);
        assert!(node_feasible(&root, &pool_empty));

        let mut two = SearchNode::root(3);
        two.force(0, 1);
        two.force(1, 0);
        assert!(!node_feasible(&two, &pool_empty));

        // two of three edges of a pooled 3-cycle cut forced: still feasible
        let mut pool = CutPool::new();
        pool.add(cycle_to_cut(&Cycle::new(vec![0, 1, 2])));
        let mut partial = SearchNode::root(3);
        partial.force(0, 1);
        partial.force(1, 2);
        assert!(node_feasible(&partial, &pool));
        let mut full = partial.clone();
        full.force(2, 0);
        assert!(!node_feasible(&full, &pool));
    }

    #[test]
    fn heuristic_repairs_two_cycle_by_deleting_weaker_edge() {
        // construct data where the full fit has |w_01| > |w_10| well above
        // the threshold; the repaired support must drop (1,0).
        let mut w_true = Array2::zeros((2, 2));
        w_true[[0, 1]] = 1.5;
        let x = sample_sem(&w_true, 400, &NoiseSpec::default(), 5).unwrap();
        let node = SearchNode::root(2);
        let mut pool = CutPool::new();
        let cand = incumbent_heuristic(&x, &node, 0.1, 0.3, &mut pool, None).unwrap().unwrap();
        assert!(cand.e.edge(0, 1));
        assert!(!cand.e.edge(1, 0));
        assert!(is_acyclic(&cand.e));
        // the 2-cycle seen during repair left its cut in the pool
        assert!(pool.len() >= 1);
        // a candidate that does not improve is withheld
        let again =
            incumbent_heuristic(&x, &node, 0.1, 0.3, &mut pool, Some(cand.objective)).unwrap();
        assert!(again.is_none());
    }

    #[test]
    fn solve_single_variable() {
        let x = Array2::from_shape_vec((5, 1), vec![1.0, -1.0, 2.0, 0.5, -0.25]).unwrap();
        let report = solve(&x, &SolveConfig::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert!((report.best.objective - sq).abs() < 1e-12);
        assert!(report.best.w.iter().all(|&v| v == 0.0));
        assert_eq!(report.mip_gap, 0.0);
    }

    #[test]
    fn solve_matches_oracle_on_small_instances() {
        for seed in [1u64, 2, 3, 4, 5] {
            let x = instance(4, 4.0, 60, seed * 100);
            let cfg = SolveConfig { gap_tol: 1e-9, ..SolveConfig::default() };
            let report = solve(&x, &cfg).unwrap();
            let (_, oracle_obj) = brute_force_oracle(&x, cfg.lambda, cfg.big_m).unwrap();
            let rel = (report.best.objective - oracle_obj).abs() / oracle_obj.abs();
            assert!(
                rel <= 1e-6,
                "seed {seed}: solver {} vs oracle {oracle_obj} (rel {rel:.2e})",
                report.best.objective
            );
            assert!(is_acyclic(&report.best.e));
            // incumbent objective is consistent with the objective function
            let j = evaluate_objective(&x, &report.best.w, &report.best.e, cfg.lambda, cfg.big_m, 1e-6)
                .unwrap();
            assert!((j - report.best.objective).abs() <= 1e-9 * j.abs().max(1.0));
        }
    }

    #[test]
    fn solve_respects_seeded_two_cycle_cuts_and_variants() {
        let x = instance(4, 4.0, 60, 900);
        for variant in [CutVariant::FirstCycle, CutVariant::ShortestCycle, CutVariant::AllCycles] {
            let cfg = SolveConfig {
                gap_tol: 1e-9,
                variant,
                seed_two_cycle_cuts: true,
                ..SolveConfig::default()
            };
            let report = solve(&x, &cfg).unwrap();
            let (_, oracle_obj) = brute_force_oracle(&x, cfg.lambda, cfg.big_m).unwrap();
            assert!((report.best.objective - oracle_obj).abs() / oracle_obj.abs() <= 1e-6);
            assert!(report.cut_count >= 6); // the seeded pool alone has d(d-1)/2
        }
    }

    #[test]
    fn trajectory_is_monotone_and_cuts_are_valid() {
        let x = instance(5, 7.0, 80, 1234);
        let cfg = SolveConfig { gap_tol: 1e-9, ..SolveConfig::default() };
        let report = solve(&x, &cfg).unwrap();

        for pair in report.trajectory.windows(2) {
            assert!(pair[1].primal <= pair[0].primal + 1e-9);
            assert!(pair[1].dual >= pair[0].dual - 1e-9);
        }
        assert!(report.dual_bound <= report.best.objective + 1e-9);

        // every pooled cut is satisfied by random DAGs
        let mut rng = StdRng::seed_from_u64(4321);
        for _ in 0..200 {
            let mut perm: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let mut dag = BinaryAdjacency::new(5);
            for a in 0..5 {
                for b in (a + 1)..5 {
                    if rng.gen::<f64>() < 0.5 {
                        dag.add_edge(perm[a], perm[b]);
                    }
                }
            }
            for cut in &report.cuts {
                assert!(cut.satisfied_by(&dag), "cut {cut:?} violated by a DAG");
            }
        }
    }

    #[test]
    fn solve_is_deterministic_modulo_wall_times() {
        let x = instance(5, 6.0, 50, 777);
        let cfg = SolveConfig { gap_tol: 1e-9, ..SolveConfig::default() };
        let a = solve(&x, &cfg).unwrap();
        let b = solve(&x, &cfg).unwrap();
        assert_eq!(a.best.objective, b.best.objective);
        assert_eq!(a.best.w, b.best.w);
        assert_eq!(a.node_count, b.node_count);
        assert_eq!(a.cut_count, b.cut_count);
        let seq_a: Vec<(f64, f64)> = a.trajectory.iter().map(|t| (t.primal, t.dual)).collect();
        let seq_b: Vec<(f64, f64)> = b.trajectory.iter().map(|t| (t.primal, t.dual)).collect();
        assert_eq!(seq_a, seq_b);
    }

    #[test]
    fn node_limit_is_reported() {
        let x = instance(6, 9.0, 60, 31);
        let cfg = SolveConfig { node_limit: Some(3), gap_tol: 1e-12, ..SolveConfig::default() };
        let report = solve(&x, &cfg).unwrap();
        assert_eq!(report.status, SolveStatus::NodeLimit);
        assert!(report.node_count <= 3);
        assert!(report.dual_bound <= report.best.objective);
    }

    #[test]
    fn qp_mode_agrees_with_oracle_on_tiny_instance() {
        let x = instance(3, 3.0, 40, 555);
        let cfg = SolveConfig { mode: BoundMode::Qp, gap_tol: 1e-9, ..SolveConfig::default() };
        let report = solve(&x, &cfg).unwrap();
        let (_, oracle_obj) = brute_force_oracle(&x, cfg.lambda, cfg.big_m).unwrap();
        assert!(
            (report.best.objective - oracle_obj).abs() / oracle_obj.abs() <= 1e-6,
            "qp-mode solve {} vs oracle {oracle_obj}",
            report.best.objective
        );
    }
}
