//! Nuclear-norm completion solvers.
//!
//! [`soft_impute`] minimizes the squared-loss objective `f(Y|X)`;
//! [`general_robust`] turns any squared-loss [`Completer`] into a minimizer of
//! the Huber objective `g(Y)` through pseudo data; [`robust_impute`] fuses the
//! pseudo-data step into the Soft-Impute iteration and sweeps a decreasing
//! regularization path with warm starts.
//!
//! Every objective trace starts with the value at the starting iterate, so
//! `objective_trace.len() == iterations + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::huber::{choose_cutoff, huber_norm_sq, pseudo_data, psi};
use crate::matrix::{
    frobenius_norm_sq, merge_on_mask, nuclear_norm, project, shrink_spectrum, spectral_norm, svd,
    DenseMatrix, Problem, Shrinkage, RANK_TOLERANCE,
};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MAX_INNER_ITERS: usize = 500;
pub const DEFAULT_MAX_OUTER_ITERS: usize = 100;
pub const DEFAULT_PATH_LENGTH: usize = 20;

/// Path endpoints as fractions of the largest singular value of the observed data.
pub const PATH_START_FRACTION: f64 = 0.95;
pub const PATH_END_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Strictly decreasing regularization levels.
    pub gamma_path: Vec<f64>,
    /// Fixed Huber cutoff; when `None` it is recomputed for every gamma with [`choose_cutoff`].
    pub cutoff: Option<f64>,
    /// Stop once `||Y_new - Y_old||² / ||Y_old||²` drops below this.
    pub epsilon: f64,
    pub max_inner_iters: usize,
    pub max_outer_iters: usize,
}

impl SolverConfig {
    pub fn new(gamma_path: Vec<f64>) -> Self {
        Self {
            gamma_path,
            cutoff: None,
            epsilon: DEFAULT_EPSILON,
            max_inner_iters: DEFAULT_MAX_INNER_ITERS,
            max_outer_iters: DEFAULT_MAX_OUTER_ITERS,
        }
    }

    pub fn single(gamma: f64) -> Self {
        Self::new(vec![gamma])
    }

    pub fn with_cutoff(mut self, c: f64) -> Self {
        self.cutoff = Some(c);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_inner_iters(mut self, n: usize) -> Self {
        self.max_inner_iters = n;
        self
    }

    pub fn with_max_outer_iters(mut self, n: usize) -> Self {
        self.max_outer_iters = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_path.is_empty() {
            return Err(invalid("gamma_path", "must not be empty"));
        }
        if let Some(g) = self
            .gamma_path
            .iter()
            .find(|g| !(**g >= 0.0) || !g.is_finite())
        {
            return Err(invalid(
                "gamma_path",
                format!("entries must be finite and >= 0, got {g}"),
            ));
        }
        if self.gamma_path.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("gamma_path", "must be strictly decreasing"));
        }
        if let Some(c) = self.cutoff {
            if !(c > 0.0) || !c.is_finite() {
                return Err(invalid(
                    "cutoff",
                    format!("must be positive and finite, got {c}"),
                ));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(
                "epsilon",
                format!("must be positive, got {}", self.epsilon),
            ));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 {
            return Err(invalid("max_iters", "iteration caps must be positive"));
        }
        Ok(())
    }

    /// Huber cutoff in effect at `gamma`.
    pub fn cutoff_for(&self, gamma: f64, problem: &Problem) -> Result<f64> {
        match self.cutoff {
            Some(c) => Ok(c),
            None => {
                let (n1, n2) = problem.shape();
                choose_cutoff(gamma, n1, n2, problem.mask().observed_fraction())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub y_hat: DenseMatrix,
    pub gamma: f64,
    /// Huber cutoff used, `None` for squared loss.
    pub cutoff: Option<f64>,
    pub iterations: usize,
    pub svd_count: usize,
    pub objective_trace: Vec<f64>,
    pub final_rank: usize,
    pub nuclear_norm: f64,
    pub converged: bool,
}

impl Solution {
    pub fn objective_final(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            y: self.y_hat.clone(),
            nuclear_norm: self.nuclear_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSolution {
    pub solutions: Vec<Solution>,
}

impl PathSolution {
    pub fn all_converged(&self) -> bool {
        self.solutions.iter().all(|s| s.converged)
    }

    pub fn total_svd_count(&self) -> usize {
        self.solutions.iter().map(|s| s.svd_count).sum()
    }

    pub fn last(&self) -> &Solution {
        self.solutions
            .last()
            .expect("a path always holds at least one solution")
    }
}

/// Starting iterate together with its nuclear norm.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub y: DenseMatrix,
    pub nuclear_norm: f64,
}

impl WarmStart {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            y: DenseMatrix::zeros(rows, cols),
            nuclear_norm: 0.0,
        }
    }

    pub fn from_matrix(y: &DenseMatrix) -> Result<Self> {
        Ok(Self {
            nuclear_norm: nuclear_norm(y)?,
            y: y.clone(),
        })
    }

    fn from_shrinkage(s: Shrinkage) -> Self {
        Self {
            nuclear_norm: s.nuclear_norm(),
            y: s.matrix,
        }
    }
}

/// A squared-loss completion routine usable inside [`general_robust`].
///
/// Implementations must return an approximate minimizer of `f(Y|problem)`
/// whose objective is no larger than that of `warm_start`.
pub trait Completer {
    fn complete(&self, problem: &Problem, gamma: f64, warm_start: &WarmStart) -> Result<Solution>;
}

#[derive(Clone, Copy, Debug)]
pub struct SoftImputeCompleter {
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for SoftImputeCompleter {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_INNER_ITERS,
        }
    }
}

impl Completer for SoftImputeCompleter {
    fn complete(&self, problem: &Problem, gamma: f64, warm_start: &WarmStart) -> Result<Solution> {
        soft_impute_warm(problem, gamma, warm_start, self.epsilon, self.max_iters)
    }
}

/// `||Y_new - Y_old||² / ||Y_old||²`, with `0/0 = 0` and `x/0 = inf`.
pub fn relative_change(new: &DenseMatrix, old: &DenseMatrix) -> f64 {
    let den = frobenius_norm_sq(old);
    if den == 0.0 {
        if new.is_zero() {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        frobenius_norm_sq(&(new - old)) / den
    }
}

fn observed_residual(problem: &Problem, y: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(problem.values() - &project(y, problem.mask())?)
}

/// `f(Y|X) = ||P(X) - P(Y)||²/2 + gamma ||Y||_*`.
pub fn objective_f(problem: &Problem, y: &DenseMatrix, gamma: f64) -> Result<f64> {
    problem.values().check_same_shape(y)?;
    objective_f_with(problem, y, gamma, nuclear_norm(y)?)
}

/// `g(Y) = ||P(X) - P(Y)||²_{rho,c}/2 + gamma ||Y||_*`.
pub fn objective_g(problem: &Problem, y: &DenseMatrix, gamma: f64, c: f64) -> Result<f64> {
    problem.values().check_same_shape(y)?;
    objective_g_with(problem, y, gamma, c, nuclear_norm(y)?)
}

fn objective_f_with(problem: &Problem, y: &DenseMatrix, gamma: f64, nuclear: f64) -> Result<f64> {
    let r = observed_residual(problem, y)?;
    Ok(0.5 * frobenius_norm_sq(&r) + gamma * nuclear)
}

fn objective_g_with(
    problem: &Problem,
    y: &DenseMatrix,
    gamma: f64,
    c: f64,
    nuclear: f64,
) -> Result<f64> {
    let r = observed_residual(problem, y)?;
    Ok(0.5 * huber_norm_sq(&r, c) + gamma * nuclear)
}

fn check_problem(problem: &Problem, start: &DenseMatrix) -> Result<()> {
    if problem.mask().is_empty() {
        return Err(Error::EmptyMask);
    }
    problem.values().check_same_shape(start)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            "gamma",
            format!("must be finite and >= 0, got {gamma}"),
        ))
    }
}

/// Soft-Impute: iterate `Y <- S_gamma(P(X) + P⊥(Y))` from `y_init`.
pub fn soft_impute(
    problem: &Problem,
    gamma: f64,
    y_init: &DenseMatrix,
    epsilon: f64,
    max_iters: usize,
) -> Result<Solution> {
    check_problem(problem, y_init)?;
    let start = if y_init.is_zero() {
        WarmStart::zero(y_init.n_rows(), y_init.n_cols())
    } else {
        WarmStart::from_matrix(y_init)?
    };
    soft_impute_warm(problem, gamma, &start, epsilon, max_iters)
}

/// [`soft_impute`] from a start whose nuclear norm is already known.
pub fn soft_impute_warm(
    problem: &Problem,
    gamma: f64,
    start: &WarmStart,
    epsilon: f64,
    max_iters: usize,
) -> Result<Solution> {
    check_problem(problem, &start.y)?;
    check_gamma(gamma)?;
    let mask = problem.mask();
    let mut current = start.clone();
    let mut trace = vec![objective_f_with(
        problem,
        &current.y,
        gamma,
        current.nuclear_norm,
    )?];
    let mut converged = false;
    let mut iterations = 0;
    let mut rank = 0;

    while iterations < max_iters {
        let filled = merge_on_mask(problem.values(), &current.y, mask);
        let shrunk = shrink_spectrum(&filled, gamma)?;
        iterations += 1;
        rank = shrunk.rank();
        let change = relative_change(&shrunk.matrix, &current.y);
        current = WarmStart::from_shrinkage(shrunk);
        trace.push(objective_f_with(
            problem,
            &current.y,
            gamma,
            current.nuclear_norm,
        )?);
        if change < epsilon {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        y_hat: current.y,
        gamma,
        cutoff: None,
        iterations,
        svd_count: iterations,
        objective_trace: trace,
        final_rank: rank,
        nuclear_norm: current.nuclear_norm,
        converged,
    })
}

/// Soft-Impute along a decreasing path, each stage warm-started from the previous one.
pub fn soft_impute_path(problem: &Problem, config: &SolverConfig) -> Result<PathSolution> {
    config.validate()?;
    let (n1, n2) = problem.shape();
    let mut start = WarmStart::zero(n1, n2);
    let mut solutions = Vec::with_capacity(config.gamma_path.len());
    for &gamma in &config.gamma_path {
        let sol = soft_impute_warm(
            problem,
            gamma,
            &start,
            config.epsilon,
            config.max_inner_iters,
        )?;
        start = sol.warm_start();
        solutions.push(sol);
    }
    Ok(PathSolution { solutions })
}

/// Algorithm-1 style wrapper: robustify any squared-loss completer.
///
/// The completer first fits the raw data; afterwards each outer iteration
/// rebuilds pseudo data from the current residuals and refits on it,
/// warm-started from the current estimate.
pub fn general_robust(
    problem: &Problem,
    gamma: f64,
    config: &SolverConfig,
    completer: &dyn Completer,
) -> Result<Solution> {
    check_gamma(gamma)?;
    let (n1, n2) = problem.shape();
    check_problem(problem, &DenseMatrix::zeros(n1, n2))?;
    let c = config.cutoff_for(gamma, problem)?;
    if !(c > 0.0) {
        return Err(invalid("cutoff", format!("must be positive, got {c}")));
    }

    let initial = completer.complete(problem, gamma, &WarmStart::zero(n1, n2))?;
    let mut svd_count = initial.svd_count;
    let mut current = initial.warm_start();
    let mut rank = initial.final_rank;
    let mut trace = vec![objective_g_with(
        problem,
        &current.y,
        gamma,
        c,
        current.nuclear_norm,
    )?];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_outer_iters {
        let z = pseudo_data(problem.values(), &current.y, problem.mask(), c)?;
        let pseudo = problem.with_values(&z)?;
        let refit = completer.complete(&pseudo, gamma, &current)?;
        iterations += 1;
        svd_count += refit.svd_count;
        rank = refit.final_rank;
        let change = relative_change(&refit.y_hat, &current.y);
        current = refit.warm_start();
        trace.push(objective_g_with(
            problem,
            &current.y,
            gamma,
            c,
            current.nuclear_norm,
        )?);
        if change < config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        y_hat: current.y,
        gamma,
        cutoff: Some(c),
        iterations,
        svd_count,
        objective_trace: trace,
        final_rank: rank,
        nuclear_norm: current.nuclear_norm,
        converged,
    })
}

/// One Robust-Impute stage at fixed `(gamma, c)`: pseudo data and a
/// singular value shrinkage per iteration, starting from `start`.
pub fn robust_impute_stage(
    problem: &Problem,
    gamma: f64,
    c: f64,
    start: &WarmStart,
    epsilon: f64,
    max_iters: usize,
) -> Result<Solution> {
    check_problem(problem, &start.y)?;
    check_gamma(gamma)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid(
            "cutoff",
            format!("must be positive and finite, got {c}"),
        ));
    }
    let mask = problem.mask();
    let mut current = start.clone();
    let mut trace = vec![objective_g_with(
        problem,
        &current.y,
        gamma,
        c,
        current.nuclear_norm,
    )?];
    let mut converged = false;
    let mut iterations = 0;
    let mut rank = 0;

    while iterations < max_iters {
        let z = pseudo_data(problem.values(), &current.y, mask, c)?;
        let filled = merge_on_mask(&z, &current.y, mask);
        let shrunk = shrink_spectrum(&filled, gamma)?;
        iterations += 1;
        rank = shrunk.rank();
        let change = relative_change(&shrunk.matrix, &current.y);
        current = WarmStart::from_shrinkage(shrunk);
        trace.push(objective_g_with(
            problem,
            &current.y,
            gamma,
            c,
            current.nuclear_norm,
        )?);
        if change < epsilon {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        y_hat: current.y,
        gamma,
        cutoff: Some(c),
        iterations,
        svd_count: iterations,
        objective_trace: trace,
        final_rank: rank,
        nuclear_norm: current.nuclear_norm,
        converged,
    })
}

/// Robust-Impute over `config.gamma_path`.
///
/// The path starts from `S_{gamma_1}(P(X))`; that initial shrinkage is
/// charged to the first solution's `svd_count`.
pub fn robust_impute(problem: &Problem, config: &SolverConfig) -> Result<PathSolution> {
    config.validate()?;
    let (n1, n2) = problem.shape();
    check_problem(problem, &DenseMatrix::zeros(n1, n2))?;

    let first = shrink_spectrum(problem.values(), config.gamma_path[0])?;
    let mut start = WarmStart::from_shrinkage(first);
    let mut solutions = Vec::with_capacity(config.gamma_path.len());
    for (k, &gamma) in config.gamma_path.iter().enumerate() {
        let c = config.cutoff_for(gamma, problem)?;
        let mut sol = robust_impute_stage(
            problem,
            gamma,
            c,
            &start,
            config.epsilon,
            config.max_inner_iters,
        )?;
        if k == 0 {
            sol.svd_count += 1;
        }
        start = sol.warm_start();
        solutions.push(sol);
    }
    Ok(PathSolution { solutions })
}

/// `count` log-spaced values from `hi` down to `lo`.
pub fn log_spaced_path(hi: f64, lo: f64, count: usize) -> Result<Vec<f64>> {
    if !(hi > 0.0 && lo > 0.0 && hi.is_finite()) || lo > hi {
        return Err(invalid(
            "gamma_path",
            format!("need hi >= lo > 0, got {hi}, {lo}"),
        ));
    }
    match count {
        0 => Err(invalid("gamma_count", "must be positive")),
        1 => Ok(vec![hi]),
        _ => {
            if lo == hi {
                return Err(invalid("gamma_path", "endpoints coincide"));
            }
            let (a, b) = (hi.ln(), lo.ln());
            Ok((0..count)
                .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
                .collect())
        }
    }
}

/// Default path: `count` values log-spaced from `0.95 sigma_1` to `0.01 sigma_1`,
/// where `sigma_1` is the largest singular value of the observed data.
pub fn default_gamma_path(problem: &Problem, count: usize) -> Result<Vec<f64>> {
    let sigma1 = spectral_norm(problem.values())?;
    if sigma1 == 0.0 {
        return Err(Error::Degenerate(
            "observed values are all zero; no default regularization path exists".into(),
        ));
    }
    log_spaced_path(
        PATH_START_FRACTION * sigma1,
        PATH_END_FRACTION * sigma1,
        count,
    )
}

/// First-order optimality check for the Huber objective at `y_hat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub rank: usize,
    /// `||P_T(W/gamma) - U Vᵀ||_F`.
    pub tangent_residual: f64,
    /// Spectral norm of `P_T⊥(W/gamma)`.
    pub normal_spectral_norm: f64,
}

impl Certificate {
    /// Tangent residual within `tol * sqrt(rank)` and normal part within `1 + tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.tangent_residual <= tol * (self.rank as f64).sqrt()
            && self.normal_spectral_norm <= 1.0 + tol
    }
}

/// Builds `W = psi_c(P(X) - P(Y))/2` and checks `W/gamma` against the
/// subdifferential of the nuclear norm at `y_hat`.
pub fn stationarity_certificate(
    problem: &Problem,
    y_hat: &DenseMatrix,
    gamma: f64,
    c: f64,
) -> Result<Certificate> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "certificate needs gamma > 0"));
    }
    let resid = observed_residual(problem, y_hat)?;
    let w = resid.map(|e| 0.5 * psi(e, c) / gamma);
    let w = project(&w, problem.mask())?;

    let factors = svd(y_hat)?;
    let r = factors.numerical_rank(RANK_TOLERANCE);
    let f = factors.truncate(r);
    let (u, v) = (&f.u, &f.v);

    let ut = u.transpose();
    let vt = v.transpose();
    let uut_w = u.matmul(&ut.matmul(&w)?)?;
    let w_vvt = w.matmul(v)?.matmul(&vt)?;
    let uut_w_vvt = uut_w.matmul(v)?.matmul(&vt)?;
    let tangent = &(&uut_w + &w_vvt) - &uut_w_vvt;
    let normal = &w - &tangent;
    let uvt = u.matmul(&vt)?;

    Ok(Certificate {
        rank: r,
        tangent_residual: frobenius_norm_sq(&(&tangent - &uvt)).sqrt(),
        normal_spectral_norm: spectral_norm(&normal)?,
    })
}
