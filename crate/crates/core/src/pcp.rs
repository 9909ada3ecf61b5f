//! Low-rank plus sparse view of the Huber objective.
//!
//! Minimizing `||P(X) - P(L + S)||²/2 + gamma ||L||_* + c ||S||_1` over
//! `(L, S)` yields the same `L` as the Huber problem. For a fixed `L` the
//! optimal `S` is the entrywise soft-threshold of the observed residual, and
//! plugging it back in gives exactly half the Huber loss of that residual.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::huber::soft_threshold_scalar;
use crate::matrix::{frobenius_norm_sq, nuclear_norm, project, svd, DenseMatrix, Problem};
use crate::solvers::{relative_change, soft_impute_warm, WarmStart};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankSparsePair {
    pub low_rank: DenseMatrix,
    /// Zero off the observation mask.
    pub sparse: DenseMatrix,
}

impl LowRankSparsePair {
    pub fn new(low_rank: DenseMatrix, sparse: DenseMatrix, problem: &Problem) -> Result<Self> {
        low_rank.check_same_shape(&sparse)?;
        problem.values().check_same_shape(&low_rank)?;
        if let Some((i, j)) = problem
            .mask()
            .complement()
            .iter()
            .find(|&(i, j)| sparse[(i, j)] != 0.0)
        {
            return Err(invalid(
                "sparse",
                format!("entry ({i}, {j}) is unobserved but nonzero"),
            ));
        }
        Ok(Self { low_rank, sparse })
    }
}

/// Optimal sparse part for a given low-rank part: soft-threshold of the
/// observed residual `X - L` at `c`, zero off the mask.
pub fn extract_sparse(problem: &Problem, l: &DenseMatrix, c: f64) -> Result<DenseMatrix> {
    problem.values().check_same_shape(l)?;
    if !(c > 0.0) {
        return Err(invalid("cutoff", format!("must be positive, got {c}")));
    }
    let resid = problem.values() - l;
    let s = resid.map(|e| soft_threshold_scalar(e, c));
    project(&s, problem.mask())
}

pub fn objective_pcp(
    problem: &Problem,
    pair: &LowRankSparsePair,
    gamma: f64,
    c: f64,
) -> Result<f64> {
    let fit = &pair.low_rank + &pair.sparse;
    problem.values().check_same_shape(&fit)?;
    let resid = problem.values() - &project(&fit, problem.mask())?;
    let l1: f64 = pair.sparse.as_slice().iter().map(|v| v.abs()).sum();
    Ok(0.5 * frobenius_norm_sq(&resid) + gamma * nuclear_norm(&pair.low_rank)? + c * l1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcpSolution {
    pub pair: LowRankSparsePair,
    pub iterations: usize,
    pub svd_count: usize,
    /// Objective after each full sweep; the first entry is at `L = 0, S = 0`.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Block-coordinate descent on `(L, S)`.
///
/// Each sweep sets `S` to its closed-form optimum for the current `L`, then
/// refits `L` by Soft-Impute on the observed values `X - S`, warm-started
/// from the current `L`. Stops when the combined relative change of `(L, S)`
/// falls below `epsilon`.
pub fn solve_pcp_alternating(
    problem: &Problem,
    gamma: f64,
    c: f64,
    epsilon: f64,
    max_iters: usize,
) -> Result<PcpSolution> {
    if !(gamma > 0.0) || !(c > 0.0) || !(epsilon > 0.0) {
        return Err(invalid(
            "gamma/c/epsilon",
            format!("all must be positive, got {gamma}, {c}, {epsilon}"),
        ));
    }
    if problem.mask().is_empty() {
        return Err(Error::EmptyMask);
    }
    let (n1, n2) = problem.shape();
    let mut low = WarmStart::zero(n1, n2);
    let mut sparse = DenseMatrix::zeros(n1, n2);
    let mut trace = vec![0.5 * frobenius_norm_sq(problem.values())];
    let mut svd_count = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        let next_sparse = extract_sparse(problem, &low.y, c)?;
        let surrogate = problem.with_values(&(problem.values() - &next_sparse))?;
        // Inner solves run tighter than the outer test so sweep-to-sweep
        // changes are not dominated by inner truncation.
        let fit = soft_impute_warm(&surrogate, gamma, &low, epsilon * 1e-2, 100 * max_iters)?;
        iterations += 1;
        svd_count += fit.svd_count;

        let before = frobenius_norm_sq(&low.y) + frobenius_norm_sq(&sparse);
        let moved = frobenius_norm_sq(&(&fit.y_hat - &low.y))
            + frobenius_norm_sq(&(&next_sparse - &sparse));
        let change = if before == 0.0 {
            relative_change(&fit.y_hat, &low.y).max(relative_change(&next_sparse, &sparse))
        } else {
            moved / before
        };

        low = fit.warm_start();
        sparse = next_sparse;
        let l1: f64 = sparse.as_slice().iter().map(|v| v.abs()).sum();
        trace.push(fit.objective_final() + c * l1);
        if change < epsilon {
            converged = true;
            break;
        }
    }

    Ok(PcpSolution {
        pair: LowRankSparsePair {
            low_rank: low.y,
            sparse,
        },
        iterations,
        svd_count,
        objective_trace: trace,
        converged,
    })
}

/// Constrained-form weight on `||S||_1` relative to `||L||_*`.
pub fn lambda_from(c: f64, gamma: f64) -> Result<f64> {
    if !(c > 0.0) || !(gamma > 0.0) {
        return Err(invalid(
            "c/gamma",
            format!("both must be positive, got {c}, {gamma}"),
        ));
    }
    Ok(c / gamma)
}

/// Smallest incoherence parameters satisfied by a matrix's singular vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub rank: usize,
    pub mu_rows: f64,
    pub mu_cols: f64,
    pub mu_cross: f64,
}

/// Row, column and cross incoherence of `l`'s rank-`r` SVD, where `r`
/// counts singular values above `rank_tol` times the largest.
pub fn coherence(l: &DenseMatrix, rank_tol: f64) -> Result<Coherence> {
    if l.is_zero() {
        return Err(Error::Degenerate(
            "coherence of the zero matrix is undefined".into(),
        ));
    }
    let (n1, n2) = l.shape();
    let f = svd(l)?;
    let r = f.numerical_rank(rank_tol);
    let f = f.truncate(r);
    let max_row_sq = |m: &DenseMatrix| {
        (0..m.n_rows())
            .map(|i| m.row(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let uvt = f.u.matmul(&f.v.transpose())?;
    let rf = r as f64;
    Ok(Coherence {
        rank: r,
        mu_rows: n1 as f64 / rf * max_row_sq(&f.u),
        mu_cols: n2 as f64 / rf * max_row_sq(&f.v),
        mu_cross: (n1 * n2) as f64 / rf * uvt.max_abs().powi(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::huber::rho;
    use crate::matrix::ObservationMask;
    use crate::solvers::objective_g;

    fn problem() -> Problem {
        let x = DenseMatrix::from_fn(4, 3, |i, j| {
            (i as f64 - 1.5) * (j as f64 + 0.5) + 0.1 * j as f64
        });
        let mask = ObservationMask::from_fn(4, 3, |i, j| (i + j) % 3 != 0);
        Problem::new(&x, mask).unwrap()
    }

    #[test]
    fn sparse_is_zero_at_exact_fit() {
        let p = problem();
        let s = extract_sparse(&p, p.values(), 0.5).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn single_cell_spike() {
        let c = 0.4;
        let x = DenseMatrix::from_row_major(1, 1, vec![1.0 + 2.0 * c]).unwrap();
        let p = Problem::new(&x, ObservationMask::full(1, 1)).unwrap();
        let l = DenseMatrix::from_row_major(1, 1, vec![1.0]).unwrap();
        let s = extract_sparse(&p, &l, c).unwrap();
        assert!((s[(0, 0)] - c).abs() < 1e-15);
    }

    #[test]
    fn residual_identity() {
        let p = problem();
        let l = DenseMatrix::from_fn(4, 3, |i, j| 0.3 * i as f64 - 0.7 * j as f64);
        let c = 0.6;
        let s = extract_sparse(&p, &l, c).unwrap();
        for (i, j) in p.mask().iter() {
            let e = p.values()[(i, j)] - l[(i, j)];
            let lhs = e - s[(i, j)];
            assert!((lhs - 0.5 * crate::huber::psi(e, c)).abs() < 1e-12);
        }
        for (i, j) in p.mask().complement().iter() {
            assert_eq!(s[(i, j)], 0.0);
        }
    }

    #[test]
    fn objective_pcp_zero_pair() {
        let p = problem();
        let pair =
            LowRankSparsePair::new(DenseMatrix::zeros(4, 3), DenseMatrix::zeros(4, 3), &p).unwrap();
        let v = objective_pcp(&p, &pair, 1.0, 1.0).unwrap();
        assert!((v - 0.5 * frobenius_norm_sq(p.values())).abs() < 1e-14);
    }

    #[test]
    fn pair_rejects_unobserved_sparse_entries() {
        let p = problem();
        let mut s = DenseMatrix::zeros(4, 3);
        s[(0, 0)] = 1.0;
        assert!(LowRankSparsePair::new(DenseMatrix::zeros(4, 3), s, &p).is_err());
    }

    #[test]
    fn profile_equals_huber_objective() {
        let p = problem();
        let l = DenseMatrix::from_fn(4, 3, |i, j| 0.2 * (i * j) as f64 - 0.5);
        let (gamma, c) = (0.3, 0.45);
        let s = extract_sparse(&p, &l, c).unwrap();
        let pair = LowRankSparsePair::new(l.clone(), s, &p).unwrap();
        let a = objective_pcp(&p, &pair, gamma, c).unwrap();
        let b = objective_g(&p, &l, gamma, c).unwrap();
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        let direct: f64 = p
            .mask()
            .iter()
            .map(|(i, j)| 0.5 * rho(p.values()[(i, j)] - l[(i, j)], c))
            .sum();
        assert!((b - gamma * nuclear_norm(&l).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn lambda_examples() {
        assert!((lambda_from(0.3162, 1.0).unwrap() - 0.3162).abs() < 1e-15);
        assert_eq!(lambda_from(2.5, 2.5).unwrap(), 1.0);
        assert!(lambda_from(0.0, 1.0).is_err());
    }

    #[test]
    fn coherence_extremes() {
        let n = 6;
        let spike = DenseMatrix::from_fn(n, n, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let c = coherence(&spike, 1e-8).unwrap();
        assert_eq!(c.rank, 1);
        assert!((c.mu_rows - n as f64).abs() < 1e-10);

        let ones = DenseMatrix::from_fn(n, n, |_, _| 1.0);
        let c = coherence(&ones, 1e-8).unwrap();
        assert!((c.mu_rows - 1.0).abs() < 1e-10);
        assert!((c.mu_cols - 1.0).abs() < 1e-10);
        assert!((c.mu_cross - 1.0).abs() < 1e-10);

        assert!(coherence(&DenseMatrix::zeros(3, 3), 1e-8).is_err());
    }
}
