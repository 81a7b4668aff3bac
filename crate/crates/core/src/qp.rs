//! Continuous relaxation of the edge-penalized least-squares program with
//! accumulated cycle cuts, solved by an operator-splitting (ADMM) scheme
//! over the linear constraint set
//!
//! ```text
//!   minimize   |X - XW|_F^2 + lambda * sum(e)
//!   subject to -c e_ij <= w_ij <= c e_ij        (big-M links)
//!              lb <= e <= ub                    (branching box)
//!              sum over E(cut) of e_ij <= rhs   (pooled cycle cuts)
//! ```
//!
//! The returned `dual_bound` is certified by weak duality: the Lagrangian of
//! the links and cuts is minimized exactly over the box (the quadratic part
//! through an eigenbasis interval relaxation, the linear part in closed
//! form), so the bound is valid at any multiplier estimate, converged or
//! not. It never falls below the closed-form least-squares bound, which is
//! used as a fallback.

use crate::error::{Error, Result};
use crate::graph::CycleCut;
use crate::linalg::{frobenius_rss, symmetric_eigen, GramFitter};
use crate::relax::{node_lower_bound, BoundMode, RelaxationSolution, SearchNode, QP_MAX_ITERATIONS};
use crate::DataMatrix;
use ndarray::Array2;

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const CHECK_EVERY: usize = 25;
const ADAPT_EVERY: usize = 100;

/// Sparse row of the constraint matrix.
struct Row {
    cols: Vec<(usize, f64)>,
    lo: f64,
    hi: f64,
    /// row class for multiplier extraction
    kind: RowKind,
}

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    LinkUpper(usize), // w_ij - c e_ij <= 0, keyed by pair index
    LinkLower(usize), // w_ij + c e_ij >= 0
    Box,
    Cut(usize),
}

/// Solves the node relaxation; see the module docs. `tol` is the relative
/// KKT tolerance. Returns `MaxIterations` (carrying the best certified
/// solution so far) if the iteration cap is hit first.
pub fn qp_relaxation_solve(
    x: &DataMatrix,
    node: &SearchNode,
    cuts: &[CycleCut],
    lambda: f64,
    big_m: f64,
    tol: f64,
) -> Result<RelaxationSolution> {
    qp_relaxation_solve_capped(x, node, cuts, lambda, big_m, tol, QP_MAX_ITERATIONS)
}

pub fn qp_relaxation_solve_capped(
    x: &DataMatrix,
    node: &SearchNode,
    cuts: &[CycleCut],
    lambda: f64,
    big_m: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RelaxationSolution> {
    let d = x.ncols();
    if node.dim() != d {
        return Err(Error::DimensionMismatch("node dimension disagrees with data".into()));
    }
    let m = d * d;
    let nv = 2 * m;
    let fitter = GramFitter::new(x);
    let gram = fitter.gram().clone();
    let const_term: f64 = (0..d).map(|j| fitter.col_sq_norm(j)).sum();

    // box data per pair (column-major pair index p = j*d + i)
    let mut lbv = vec![0.0f64; m];
    let mut ubv = vec![0.0f64; m];
    for j in 0..d {
        for i in 0..d {
            let p = j * d + i;
            if i != j {
                lbv[p] = if node.lb(i, j) { 1.0 } else { 0.0 };
                ubv[p] = if node.ub(i, j) { 1.0 } else { 0.0 };
            }
        }
    }

    // objective: P block-diag(2G) on w, zero on e; q = (-2 g_j ; lambda)
    let mut q = vec![0.0f64; nv];
    for j in 0..d {
        for i in 0..d {
            q[j * d + i] = -2.0 * gram[[i, j]];
            q[m + j * d + i] = lambda;
        }
    }

    // constraint rows
    let mut rows: Vec<Row> = Vec::with_capacity(3 * m + cuts.len());
    for p in 0..m {
        rows.push(Row {
            cols: vec![(p, 1.0), (m + p, -big_m)],
            lo: f64::NEG_INFINITY,
            hi: 0.0,
            kind: RowKind::LinkUpper(p),
        });
        rows.push(Row {
            cols: vec![(p, 1.0), (m + p, big_m)],
            lo: 0.0,
            hi: f64::INFINITY,
            kind: RowKind::LinkLower(p),
        });
        rows.push(Row { cols: vec![(m + p, 1.0)], lo: lbv[p], hi: ubv[p], kind: RowKind::Box });
        // no explicit w-box rows: |w| <= c*ub is implied by the links and the
        // e-box, and duplicating an active link would split its multiplier
        // mass and slacken the dual certificate
    }
    for (t, cut) in cuts.iter().enumerate() {
        let cols: Vec<(usize, f64)> =
            cut.edge_set().iter().map(|&(i, j)| (m + j * d + i, 1.0)).collect();
        rows.push(Row { cols, lo: f64::NEG_INFINITY, hi: cut.rhs() as f64, kind: RowKind::Cut(t) });
    }
    let nr = rows.len();

    // cost scaling and row equilibration
    let pmax = gram.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 2.0;
    let qmax = q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let s_cost = 1.0 / pmax.max(qmax).max(1.0);
    let mut escale = vec![1.0f64; nr];
    for (r, row) in rows.iter_mut().enumerate() {
        let norm = row.cols.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs())).max(1e-12);
        escale[r] = norm;
        for c in row.cols.iter_mut() {
            c.1 /= norm;
        }
        if row.lo.is_finite() {
            row.lo /= norm;
        }
        if row.hi.is_finite() {
            row.hi /= norm;
        }
    }

    // eigendecomposition of G for the dual certificate
    let (mut eigs, evecs) = symmetric_eigen(&gram);
    for v in eigs.iter_mut() {
        *v = v.max(0.0);
    }

    let build_kkt = |rho: f64| -> Vec<f64> {
        let mut k = vec![0.0f64; nv * nv];
        for j in 0..d {
            for a in 0..d {
                for b in 0..d {
                    k[(j * d + a) * nv + (j * d + b)] = 2.0 * s_cost * gram[[a, b]];
                }
            }
        }
        for v in 0..nv {
            k[v * nv + v] += SIGMA;
        }
        for row in &rows {
            for &(c1, v1) in &row.cols {
                for &(c2, v2) in &row.cols {
                    k[c1 * nv + c2] += rho * v1 * v2;
                }
            }
        }
        assert!(crate::linalg::cholesky_in_place_pub(&mut k, nv), "kkt factorization failed");
        k
    };

    let mut rho = 0.1f64;
    let mut kkt = build_kkt(rho);

    let mut xv = vec![0.0f64; nv];
    let mut z = vec![0.0f64; nr];
    let mut y = vec![0.0f64; nr];
    // warm start z at the projection of Ax = 0
    for (r, row) in rows.iter().enumerate() {
        z[r] = 0.0f64.clamp(row.lo, row.hi);
    }

    let mut ax = vec![0.0f64; nr];
    let mut rhs = vec![0.0f64; nv];
    let mut best_cert = f64::NEG_INFINITY;
    let mut kkt_res = f64::INFINITY;
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        // rhs = sigma x - q_scaled + A'(rho z - y)
        for v in 0..nv {
            rhs[v] = SIGMA * xv[v] - s_cost * q[v];
        }
        for (r, row) in rows.iter().enumerate() {
            let coef = rho * z[r] - y[r];
            for &(c, v) in &row.cols {
                rhs[c] += v * coef;
            }
        }
        crate::linalg::cholesky_solve_pub(&kkt, &mut rhs, nv);
        xv.copy_from_slice(&rhs);

        for (r, row) in rows.iter().enumerate() {
            let mut s = 0.0;
            for &(c, v) in &row.cols {
                s += v * xv[c];
            }
            ax[r] = s;
        }
        for r in 0..nr {
            let zt = ALPHA * ax[r] + (1.0 - ALPHA) * z[r];
            let znew = (zt + y[r] / rho).clamp(rows[r].lo, rows[r].hi);
            y[r] += rho * (zt - znew);
            z[r] = znew;
        }

        if iterations % CHECK_EVERY == 0 || iterations == max_iter {
            let mut rp: f64 = 0.0;
            let mut ax_inf: f64 = 0.0;
            let mut z_inf: f64 = 0.0;
            for r in 0..nr {
                rp = rp.max((ax[r] - z[r]).abs());
                ax_inf = ax_inf.max(ax[r].abs());
                z_inf = z_inf.max(z[r].abs());
            }
            // dual residual: s P x + s q + A'y
            let mut aty = vec![0.0f64; nv];
            for (r, row) in rows.iter().enumerate() {
                for &(c, v) in &row.cols {
                    aty[c] += v * y[r];
                }
            }
            let mut rd: f64 = 0.0;
            let mut px_inf: f64 = 0.0;
            let mut aty_inf: f64 = 0.0;
            let mut q_inf: f64 = 0.0;
            for j in 0..d {
                for a in 0..d {
                    let mut px = 0.0;
                    for b in 0..d {
                        px += 2.0 * s_cost * gram[[a, b]] * xv[j * d + b];
                    }
                    let v = j * d + a;
                    rd = rd.max((px + s_cost * q[v] + aty[v]).abs());
                    px_inf = px_inf.max(px.abs());
                }
            }
            for v in m..nv {
                rd = rd.max((s_cost * q[v] + aty[v]).abs());
            }
            for v in 0..nv {
                aty_inf = aty_inf.max(aty[v].abs());
                q_inf = q_inf.max((s_cost * q[v]).abs());
            }
            let rp_rel = rp / ax_inf.max(z_inf).max(1.0);
            let rd_rel = rd / px_inf.max(aty_inf).max(q_inf).max(1.0);
            kkt_res = rp_rel.max(rd_rel);

            if iterations % ADAPT_EVERY == 0 {
                let cert = certificate(
                    d, m, &rows, &escale, s_cost, &y, &eigs, &evecs, &gram, lambda, big_m, &lbv,
                    &ubv, const_term, cuts,
                );
                best_cert = best_cert.max(cert);
            }

            if kkt_res <= tol {
                converged = true;
                break;
            }
            if iterations % ADAPT_EVERY == 0 && rp_rel > 0.0 && rd_rel > 0.0 {
                let factor = (rp_rel / rd_rel).sqrt().clamp(0.1, 10.0);
                let new_rho = (rho * factor).clamp(1e-6, 1e6);
                if new_rho > 2.0 * rho || new_rho < 0.5 * rho {
                    rho = new_rho;
                    kkt = build_kkt(rho);
                }
            }
        }
    }

    let cert = certificate(
        d, m, &rows, &escale, s_cost, &y, &eigs, &evecs, &gram, lambda, big_m, &lbv, &ubv,
        const_term, cuts,
    );
    best_cert = best_cert.max(cert);

    // polish the primal point: clamp w into its box, then give e its minimal
    // link-feasible value unless that violates a pooled cut
    let mut w = Array2::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            let p = j * d + i;
            let cap = big_m * ubv[p];
            w[[i, j]] = xv[p].clamp(-cap, cap);
        }
    }
    let mut e_min = Array2::zeros((d, d));
    let mut e_raw = Array2::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            let p = j * d + i;
            e_min[[i, j]] = (w[[i, j]].abs() / big_m).max(lbv[p]).min(ubv[p]);
            e_raw[[i, j]] = xv[m + p].clamp(lbv[p], ubv[p]).max(e_min[[i, j]]);
        }
    }
    let cut_eps = 10.0 * tol;
    let cuts_ok =
        |e: &Array2<f64>| cuts.iter().all(|c| crate::graph::cut_satisfied(c, e, cut_eps));
    let e = if cuts_ok(&e_min) { e_min } else { e_raw };
    let objective = frobenius_rss(x, &w) + lambda * e.iter().sum::<f64>();

    let ls_bound = node_lower_bound(x, node, lambda, BoundMode::Ls, &[], big_m)?;
    let dual_bound = best_cert.max(ls_bound).min(objective);

    let solution =
        RelaxationSolution { w, e, objective, dual_bound, kkt_residual: kkt_res, iterations };
    if converged {
        Ok(solution)
    } else {
        Err(Error::MaxIterations(Box::new(solution)))
    }
}

/// Weak-duality bound at the current (scaled) multipliers. Only the link and
/// cut rows are dualized; the `(w, e)` box stays implicit and is minimized
/// exactly, so the value is a valid lower bound at any multiplier estimate.
#[allow(clippy::too_many_arguments)]
fn certificate(
    d: usize,
    m: usize,
    rows: &[Row],
    escale: &[f64],
    s_cost: f64,
    y: &[f64],
    eigs: &[f64],
    evecs: &Array2<f64>,
    gram: &Array2<f64>,
    lambda: f64,
    big_m: f64,
    lbv: &[f64],
    ubv: &[f64],
    const_term: f64,
    cuts: &[CycleCut],
) -> f64 {
    let mut alpha = vec![0.0f64; m];
    let mut beta = vec![0.0f64; m];
    let mut mu = vec![0.0f64; cuts.len()];
    for (r, row) in rows.iter().enumerate() {
        // original-problem multiplier for a row scaled by 1/escale
        let y_orig = y[r] / (s_cost * escale[r]);
        match row.kind {
            RowKind::LinkUpper(p) => alpha[p] = y_orig.max(0.0),
            RowKind::LinkLower(p) => beta[p] = (-y_orig).max(0.0),
            RowKind::Cut(t) => mu[t] = y_orig.max(0.0),
            RowKind::Box => {}
        }
    }

    let mut kappa = vec![lambda; m];
    for p in 0..m {
        kappa[p] -= big_m * (alpha[p] + beta[p]);
    }
    let mut value = const_term;
    for (t, cut) in cuts.iter().enumerate() {
        value -= mu[t] * cut.rhs() as f64;
        for &(i, j) in cut.edge_set() {
            kappa[j * d + i] += mu[t];
        }
    }
    for p in 0..m {
        value += (kappa[p] * lbv[p]).min(kappa[p] * ubv[p]);
    }

    // per-column quadratic part: min over the w-box of w'Gw - v'w, relaxed
    // onto eigenbasis intervals |t_k| <= rho_k
    for j in 0..d {
        for k in 0..d {
            let mut u_k = 0.0;
            let mut rho_k = 0.0;
            for i in 0..d {
                let p = j * d + i;
                let v_i = 2.0 * gram[[i, j]] - (alpha[p] - beta[p]);
                u_k += evecs[[i, k]] * v_i;
                rho_k += evecs[[i, k]].abs() * big_m * ubv[p];
            }
            let lam = eigs[k];
            value += if lam > 0.0 {
                let t_star = u_k / (2.0 * lam);
                if t_star.abs() <= rho_k {
                    -u_k * u_k / (4.0 * lam)
                } else {
                    lam * rho_k * rho_k - u_k.abs() * rho_k
                }
            } else {
                -u_k.abs() * rho_k
            };
        }
    }
    value
}
