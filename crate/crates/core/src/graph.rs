//! Directed-graph primitives: acyclicity testing, back-edge cycle extraction,
//! topological ordering, and conversion of cycles into cycle-exclusion cuts.
//!
//! All traversals visit vertices and out-neighbors in ascending index order,
//! so every operation here is deterministic for a given input.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Dense binary adjacency matrix of a directed graph on `d` vertices,
/// stored as a row-major bitset. The diagonal is structurally zero:
/// self-loops cannot be represented.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryAdjacency {
    d: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BinaryAdjacency {
    /// Empty graph on `d` vertices.
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "vertex count must be positive");
        let words = d.div_ceil(64);
        BinaryAdjacency { d, words, bits: vec![0u64; d * words] }
    }

    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(d: usize, edges: I) -> Self {
        let mut g = Self::new(d);
        for (i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    /// Graph whose edges are the nonzero off-diagonal entries of `w`.
    /// Diagonal entries are ignored.
    pub fn support_of(w: &Array2<f64>) -> Self {
        let d = w.nrows();
        assert_eq!(d, w.ncols(), "support_of expects a square matrix");
        let mut g = Self::new(d);
        for ((i, j), &v) in w.indexed_iter() {
            if i != j && v != 0.0 {
                g.add_edge(i, j);
            }
        }
        g
    }

    pub fn vertex_count(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.d && j < self.d, "edge ({i},{j}) out of range");
        assert_ne!(i, j, "self-loops are excluded");
        self.bits[i * self.words + j / 64] |= 1u64 << (j % 64);
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] &= !(1u64 << (j % 64));
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.d {
            for j in self.out_neighbors(i) {
                out.push((i, j));
            }
        }
        out
    }

    /// Out-neighbors of `i` in ascending order.
    pub fn out_neighbors(&self, i: usize) -> NeighborIter<'_> {
        NeighborIter { row: &self.bits[i * self.words..(i + 1) * self.words], word: 0, cur: 0 }
    }

    /// In-neighbors (parents) of `j` in ascending order.
    pub fn parents_of(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.edge(i, j)).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.d, self.d));
        for (i, j) in self.edges() {
            m[[i, j]] = 1.0;
        }
        m
    }
}

impl std::fmt::Debug for BinaryAdjacency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryAdjacency(d={}, edges={:?})", self.d, self.edges())
    }
}

pub struct NeighborIter<'a> {
    row: &'a [u64],
    word: usize,
    cur: u64,
}

impl Iterator for NeighborIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        loop {
            if self.cur != 0 {
                let bit = self.cur.trailing_zeros() as usize;
                self.cur &= self.cur - 1;
                return Some((self.word - 1) * 64 + bit);
            }
            if self.word == self.row.len() {
                return None;
            }
            self.cur = self.row[self.word];
            self.word += 1;
        }
    }
}

/// A directed cycle, stored as its ordered vertex sequence
/// `v_0, v_1, ..., v_{k-1}` with implied edges `(v_0,v_1), ..., (v_{k-1},v_0)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cycle {
    vertices: Vec<usize>,
}

impl Cycle {
    pub fn new(vertices: Vec<usize>) -> Self {
        assert!(vertices.len() >= 2, "a cycle needs at least two vertices");
        Cycle { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// The edge set `E(c)` of the cycle, in traversal order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let k = self.vertices.len();
        (0..k).map(|t| (self.vertices[t], self.vertices[(t + 1) % k])).collect()
    }

    /// True when every implied edge of the cycle exists in `g`.
    pub fn is_cycle_of(&self, g: &BinaryAdjacency) -> bool {
        self.edges().iter().all(|&(i, j)| g.edge(i, j))
    }
}

/// One cycle-exclusion constraint: `sum of e_ij over edge_set <= rhs`
/// with `rhs = |edge_set| - 1`. Satisfied by every acyclic indicator matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CycleCut {
    edge_set: Vec<(usize, usize)>,
    rhs: usize,
}

impl CycleCut {
    pub fn edge_set(&self) -> &[(usize, usize)] {
        &self.edge_set
    }

    pub fn rhs(&self) -> usize {
        self.rhs
    }

    /// Evaluation against a binary graph (exact arithmetic, no tolerance).
    pub fn satisfied_by(&self, g: &BinaryAdjacency) -> bool {
        let lhs = self.edge_set.iter().filter(|&&(i, j)| g.edge(i, j)).count();
        lhs <= self.rhs
    }
}

/// Converts a cycle into its exclusion cut: `sum e_ij <= |E(c)| - 1`.
pub fn cycle_to_cut(c: &Cycle) -> CycleCut {
    let mut edge_set = c.edges();
    edge_set.sort_unstable();
    CycleCut { rhs: edge_set.len() - 1, edge_set }
}

/// True iff the cut holds for the (possibly fractional) indicator matrix `e`
/// within the integrality tolerance `eps_int`.
pub fn cut_satisfied(cut: &CycleCut, e: &Array2<f64>, eps_int: f64) -> bool {
    let lhs: f64 = cut.edge_set.iter().map(|&(i, j)| e[[i, j]]).sum();
    lhs <= cut.rhs as f64 + eps_int
}

const WHITE: u8 = 0;
const GRAY: u8 = 1;
const BLACK: u8 = 2;

/// True iff `g` has no directed cycle. One DFS forest pass, O(d^2) worst case.
pub fn is_acyclic(g: &BinaryAdjacency) -> bool {
    dfs_cycles(g, true).is_empty()
}

/// All cycles discovered as back edges during one deterministic DFS pass
/// (roots and neighbors in ascending index order). Returns an empty vector
/// iff the graph is acyclic. This does not enumerate all simple cycles of
/// the graph, only the back-edge cycles of this one traversal.
pub fn find_cycles(g: &BinaryAdjacency) -> Vec<Cycle> {
    dfs_cycles(g, false)
}

/// Iterative DFS over all roots. For every back edge u -> v encountered, the
/// gray path segment from v to u is emitted as a cycle. With `stop_early` the
/// traversal aborts after the first back edge (acyclicity testing).
fn dfs_cycles(g: &BinaryAdjacency, stop_early: bool) -> Vec<Cycle> {
    let d = g.vertex_count();
    let mut color = vec![WHITE; d];
    // position of each gray vertex on the current DFS path, usize::MAX otherwise
    let mut path_pos = vec![usize::MAX; d];
    let mut path: Vec<usize> = Vec::with_capacity(d);
    // (vertex, next out-neighbor index to try)
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(d);
    let mut cycles = Vec::new();

    for root in 0..d {
        if color[root] != WHITE {
            continue;
        }
        color[root] = GRAY;
        path_pos[root] = path.len();
        path.push(root);
        stack.push((root, 0));

        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            match next_neighbor_from(g, u, *next) {
                Some(v) => {
                    *next = v + 1;
                    match color[v] {
                        WHITE => {
                            color[v] = GRAY;
                            path_pos[v] = path.len();
                            path.push(v);
                            stack.push((v, 0));
                        }
                        GRAY => {
                            // back edge u -> v closes the cycle v ... u
                            cycles.push(Cycle::new(path[path_pos[v]..].to_vec()));
                            if stop_early {
                                return cycles;
                            }
                        }
                        _ => {}
                    }
                }
                None => {
                    color[u] = BLACK;
                    path_pos[u] = usize::MAX;
                    path.pop();
                    stack.pop();
                }
            }
        }
    }
    cycles
}

/// Smallest out-neighbor of `u` that is >= `from`, if any.
fn next_neighbor_from(g: &BinaryAdjacency, u: usize, from: usize) -> Option<usize> {
    if from >= g.d {
        return None;
    }
    let row = &g.bits[u * g.words..(u + 1) * g.words];
    let mut w = from / 64;
    let mut cur = row[w] & (!0u64 << (from % 64));
    loop {
        if cur != 0 {
            return Some(w * 64 + cur.trailing_zeros() as usize);
        }
        w += 1;
        if w == g.words {
            return None;
        }
        cur = row[w];
    }
}

/// Topological order by Kahn's algorithm with min-index tie-breaking.
/// Fails with `CyclicGraph` when `g` has a cycle.
pub fn topological_order(g: &BinaryAdjacency) -> Result<Vec<usize>> {
    let d = g.vertex_count();
    let mut indeg = vec![0usize; d];
    for (_, j) in g.edges() {
        indeg[j] += 1;
    }
    let mut ready = std::collections::BinaryHeap::new();
    for (v, &deg) in indeg.iter().enumerate() {
        if deg == 0 {
            ready.push(std::cmp::Reverse(v));
        }
    }
    let mut order = Vec::with_capacity(d);
    while let Some(std::cmp::Reverse(v)) = ready.pop() {
        order.push(v);
        for u in g.out_neighbors(v) {
            indeg[u] -= 1;
            if indeg[u] == 0 {
                ready.push(std::cmp::Reverse(u));
            }
        }
    }
    if order.len() != d {
        return Err(Error::CyclicGraph);
    }
    Ok(order)
}
