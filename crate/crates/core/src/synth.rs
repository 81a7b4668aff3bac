//! Ground-truth instance generation: random DAGs (Erdos-Renyi and
//! Barabasi-Albert ensembles), edge weights, and linear-SEM samples with
//! Gaussian noise.
//!
//! All sampling uses the seedable, cross-platform `ChaCha8` generator, and
//! every routine documents its draw order so instances are reproducible:
//!
//! * `gen_er_dag`: (1) Fisher-Yates permutation of `0..d` (one `gen_range`
//!   per swap, positions `d-1` down to `1`), (2) one `f64` per unordered
//!   pair `(i, j)` with `i < j` in lexicographic order.
//! * `gen_sf_dag`: for each arriving vertex, repeated `gen_range` draws into
//!   the degree-weighted repetition list until `m` distinct targets are found
//!   (the first arrival attaches to all initial vertices without drawing).
//! * `sample_weights`: per edge in row-major order, one `bool` (sign), then
//!   one `f64` (magnitude in `[0.5, 2.0)`).
//! * `sample_sem`: per-column variances first (one `f64` each in the
//!   uniform-variance case, none in the fixed case), then one standard
//!   normal per matrix entry in row-major order.

use crate::error::{Error, Result};
use crate::graph::{is_acyclic, topological_order, BinaryAdjacency};
use crate::{DataMatrix, WeightMatrix};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Additive-noise specification: zero-mean Gaussian with either a shared
/// fixed variance or one variance per variable drawn uniformly from an
/// interval (default `(0.4, 1.2)`).
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    Fixed { variance: f64 },
    UniformVariance { lo: f64, hi: f64 },
}

impl NoiseSpec {
    pub fn uniform_default() -> Self {
        NoiseSpec::UniformVariance { lo: 0.4, hi: 1.2 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Fixed { variance } if variance > 0.0 => Ok(()),
            NoiseSpec::UniformVariance { lo, hi } if lo > 0.0 && hi > lo => Ok(()),
            _ => Err(Error::InvalidParams(format!("invalid noise spec {self:?}"))),
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Fixed { variance: 1.0 }
    }
}

/// Random-graph ensemble for ground-truth generation.
#[derive(Clone, Debug, PartialEq)]
pub enum Ensemble {
    /// Erdos-Renyi with expected edge count `edge_factor * d`.
    ErdosRenyi { edge_factor: f64 },
    /// Barabasi-Albert with `attachment` edges per arriving vertex.
    ScaleFree { attachment: usize },
}

impl Ensemble {
    pub fn label(&self) -> String {
        match self {
            Ensemble::ErdosRenyi { edge_factor } => format!("er{edge_factor}"),
            Ensemble::ScaleFree { attachment } => format!("sf{attachment}"),
        }
    }
}

/// Parameters for one synthetic instance.
#[derive(Clone, Debug)]
pub struct InstanceParams {
    pub d: usize,
    pub n: usize,
    pub ensemble: Ensemble,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// A generated ground-truth instance: the DAG, its weights, and SEM samples.
#[derive(Clone, Debug)]
pub struct GroundTruthInstance {
    pub w_true: WeightMatrix,
    pub g_true: BinaryAdjacency,
    pub data: DataMatrix,
    pub noise_spec: NoiseSpec,
    pub seed: u64,
}

/// SplitMix64 step, used to derive independent sub-seeds from a master seed.
pub fn subseed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Erdos-Renyi DAG: an undirected G(d, p) draw with `p = 2*edge_factor/(d-1)`
/// (so the expected edge count is `edge_factor * d`), oriented from lower to
/// higher position in a random permutation. The orientation along a total
/// order makes the result acyclic by construction.
pub fn gen_er_dag(d: usize, edge_factor: f64, seed: u64) -> Result<BinaryAdjacency> {
    if d < 2 {
        return Err(Error::InvalidParams(format!("er ensemble needs d >= 2, got {d}")));
    }
    if !(edge_factor > 0.0) {
        return Err(Error::InvalidParams("edge_factor must be positive".into()));
    }
    let max_edges = (d * (d - 1) / 2) as f64;
    if edge_factor * d as f64 > max_edges {
        return Err(Error::InvalidParams(format!(
            "requested density infeasible: edge_factor*d = {} exceeds d(d-1)/2 = {max_edges}",
            edge_factor * d as f64
        )));
    }
    let p = 2.0 * edge_factor / (d - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut perm: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut pos = vec![0usize; d];
    for (k, &v) in perm.iter().enumerate() {
        pos[v] = k;
    }

    let mut g = BinaryAdjacency::new(d);
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.gen::<f64>() < p {
                if pos[i] < pos[j] {
                    g.add_edge(i, j);
                } else {
                    g.add_edge(j, i);
                }
            }
        }
    }
    Ok(g)
}

/// Barabasi-Albert DAG: `m` initial isolated vertices; each arriving vertex
/// attaches to `m` distinct existing vertices chosen preferentially by
/// degree, and every new edge is oriented existing -> new. The result is
/// acyclic with exactly `m * (d - m)` edges.
pub fn gen_sf_dag(d: usize, m: usize, seed: u64) -> Result<BinaryAdjacency> {
    if m < 1 || m >= d {
        return Err(Error::InvalidParams(format!(
            "scale-free ensemble needs 1 <= m < d, got m={m}, d={d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = BinaryAdjacency::new(d);
    // vertices repeated once per incident edge; drives preferential choice
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * m * (d - m));
    let mut targets: Vec<usize> = (0..m).collect();
    for v in m..d {
        for &t in &targets {
            g.add_edge(t, v);
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat(v).take(m));
        if v + 1 < d {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < m {
                let t = repeated[rng.gen_range(0..repeated.len())];
                picked.insert(t);
            }
            targets = picked.into_iter().collect();
        }
    }
    debug_assert_eq!(g.edge_count(), m * (d - m));
    Ok(g)
}

/// Weights supported on `g`, drawn uniformly from `[-2.0,-0.5] u [0.5,2.0]`:
/// a Bernoulli(1/2) sign and a magnitude uniform on `[0.5, 2.0)`.
pub fn sample_weights(g: &BinaryAdjacency, seed: u64) -> WeightMatrix {
    let d = g.vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::zeros((d, d));
    for (i, j) in g.edges() {
        let negative = rng.gen::<bool>();
        let magnitude = 0.5 + 1.5 * rng.gen::<f64>();
        w[[i, j]] = if negative { -magnitude } else { magnitude };
    }
    w
}

/// Draws `n` SEM samples `x = x W + z` row by row, propagating columns in
/// topological order of the support of `w`. Also returns the noise matrix.
pub fn sample_sem_with_noise(
    w: &WeightMatrix,
    n: usize,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(DataMatrix, DataMatrix)> {
    noise.validate()?;
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix must be square, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let support = BinaryAdjacency::support_of(w);
    let order = topological_order(&support)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sigmas: Vec<f64> = match *noise {
        NoiseSpec::Fixed { variance } => vec![variance.sqrt(); d],
        NoiseSpec::UniformVariance { lo, hi } => {
            (0..d).map(|_| (lo + (hi - lo) * rng.gen::<f64>()).sqrt()).collect()
        }
    };

    let mut z = Array2::zeros((n, d));
    for r in 0..n {
        for j in 0..d {
            let u: f64 = StandardNormal.sample(&mut rng);
            z[[r, j]] = sigmas[j] * u;
        }
    }

    let mut x = Array2::zeros((n, d));
    for &j in &order {
        for r in 0..n {
            let mut v = z[[r, j]];
            for i in support.parents_of(j) {
                v += x[[r, i]] * w[[i, j]];
            }
            x[[r, j]] = v;
        }
    }
    Ok((x, z))
}

/// Draws `n` SEM samples; see [`sample_sem_with_noise`].
pub fn sample_sem(w: &WeightMatrix, n: usize, noise: &NoiseSpec, seed: u64) -> Result<DataMatrix> {
    sample_sem_with_noise(w, n, noise, seed).map(|(x, _)| x)
}

/// Generates a full ground-truth instance. Sub-seeds are derived from
/// `params.seed` with [`subseed`] streams 0 (graph), 1 (weights), 2 (noise).
pub fn generate_instance(params: &InstanceParams) -> Result<GroundTruthInstance> {
    if params.n < 1 {
        return Err(Error::InvalidParams("sample count must be >= 1".into()));
    }
    let g_true = match params.ensemble {
        Ensemble::ErdosRenyi { edge_factor } => gen_er_dag(params.d, edge_factor, subseed(params.seed, 0))?,
        Ensemble::ScaleFree { attachment } => gen_sf_dag(params.d, attachment, subseed(params.seed, 0))?,
    };
    debug_assert!(is_acyclic(&g_true));
    let w_true = sample_weights(&g_true, subseed(params.seed, 1));
    let data = sample_sem(&w_true, params.n, &params.noise, subseed(params.seed, 2))?;
    Ok(GroundTruthInstance { w_true, g_true, data, noise_spec: params.noise.clone(), seed: params.seed })
}
