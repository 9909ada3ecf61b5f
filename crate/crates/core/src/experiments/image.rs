//! Image degradation and inpainting benchmarks.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::{summarize_ranks, Method, RankSummary, Stat};
use super::synthetic::{
    add_gaussian, bernoulli_mask, test_error, training_error, GroundTruthInstance,
};
use super::{population_variance, replicate_seed, rng_from_seed};
use crate::error::{invalid, Error, Result};
use crate::matrix::{DenseMatrix, ObservationMask, Problem};
use crate::solvers::{
    default_gamma_path, robust_impute_stage, soft_impute_warm, PathSolution, Solution,
    SolverConfig, WarmStart, DEFAULT_EPSILON, DEFAULT_MAX_INNER_ITERS,
};

pub const DEFAULT_PATCH_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MissingSpec {
    None,
    /// Each pixel missing independently with this probability.
    Independent {
        fraction: f64,
    },
    /// Square patches at random positions until at least `fraction` is missing.
    Clustered {
        fraction: f64,
        patch_size: usize,
    },
}

impl MissingSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MissingSpec::None => "none",
            MissingSpec::Independent { .. } => "independent",
            MissingSpec::Clustered { .. } => "clustered",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    /// SNR of the noise added to every pixel; `inf` adds none.
    pub snr: f64,
    /// Fraction of pixels that receive extra outlier noise.
    pub outlier_frac: f64,
    /// SNR of the extra outlier noise.
    pub outlier_snr: f64,
    pub missing: MissingSpec,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            snr: 3.0,
            outlier_frac: 0.1,
            outlier_snr: 0.75,
            missing: MissingSpec::Independent { fraction: 0.4 },
        }
    }
}

/// Union of randomly placed `patch_size`-square holes covering at least
/// `missing_frac` of the grid; the returned mask marks the rest as observed.
pub fn clustered_mask(
    n_rows: usize,
    n_cols: usize,
    missing_frac: f64,
    patch_size: usize,
    seed: u64,
) -> Result<ObservationMask> {
    clustered_mask_with(
        &mut rng_from_seed(seed),
        n_rows,
        n_cols,
        missing_frac,
        patch_size,
    )
}

fn clustered_mask_with(
    rng: &mut ChaCha8Rng,
    n_rows: usize,
    n_cols: usize,
    missing_frac: f64,
    patch_size: usize,
) -> Result<ObservationMask> {
    let total = n_rows * n_cols;
    if patch_size == 0 || patch_size > n_rows.min(n_cols) {
        return Err(invalid(
            "patch_size",
            format!("must lie in 1..={}, got {patch_size}", n_rows.min(n_cols)),
        ));
    }
    if !(missing_frac > 0.0 && missing_frac < 1.0) {
        return Err(invalid(
            "missing_frac",
            format!("must lie in (0, 1), got {missing_frac}"),
        ));
    }
    if missing_frac * (total as f64) < (patch_size * patch_size) as f64 {
        return Err(invalid(
            "missing_frac",
            format!("{missing_frac} of {n_rows}x{n_cols} is smaller than one {patch_size}x{patch_size} patch"),
        ));
    }
    let target = (missing_frac * total as f64).ceil() as usize;
    let mut missing = vec![false; total];
    let mut count = 0;
    while count < target {
        let top = rng.gen_range(0..=n_rows - patch_size);
        let left = rng.gen_range(0..=n_cols - patch_size);
        for i in top..top + patch_size {
            for j in left..left + patch_size {
                let slot = &mut missing[i * n_cols + j];
                if !*slot {
                    *slot = true;
                    count += 1;
                }
            }
        }
    }
    Ok(ObservationMask::from_fn(n_rows, n_cols, |i, j| {
        !missing[i * n_cols + j]
    }))
}

/// Adds noise, outliers and missingness to a clean image.
///
/// Noise levels are relative to the empirical standard deviation of the
/// image. Exactly `round(outlier_frac * pixels)` pixels, chosen uniformly,
/// get the extra outlier noise.
pub fn degrade_image(
    img: &DenseMatrix,
    spec: &DegradeSpec,
    seed: u64,
) -> Result<GroundTruthInstance> {
    if !(spec.snr > 0.0) || !(spec.outlier_snr > 0.0) {
        return Err(invalid("snr", "signal-to-noise ratios must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.outlier_frac) {
        return Err(invalid(
            "outlier_frac",
            format!("must lie in [0, 1], got {}", spec.outlier_frac),
        ));
    }
    let var = population_variance(img);
    if !(var > 0.0) {
        return Err(Error::Degenerate("image has zero variance".into()));
    }
    let sd = var.sqrt();
    let sd_of = |snr: f64| if snr.is_infinite() { 0.0 } else { sd / snr };
    let (n1, n2) = img.shape();
    let mut rng = rng_from_seed(seed);

    let mut x = img.clone();
    let sigma = sd_of(spec.snr);
    add_gaussian(&mut rng, &mut x, sigma);

    let n_out = (spec.outlier_frac * (n1 * n2) as f64).round() as usize;
    let outlier_sd = sd_of(spec.outlier_snr);
    let mut flags = vec![false; n1 * n2];
    let mut chosen: Vec<usize> = sample(&mut rng, n1 * n2, n_out).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        flags[k] = true;
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        x[(k / n2, k % n2)] += outlier_sd * z;
    }

    let mask = match spec.missing {
        MissingSpec::None => ObservationMask::full(n1, n2),
        MissingSpec::Independent { fraction } => {
            if !(0.0..1.0).contains(&fraction) {
                return Err(invalid(
                    "missing_frac",
                    format!("must lie in [0, 1), got {fraction}"),
                ));
            }
            bernoulli_mask(&mut rng, n1, n2, fraction)?
        }
        MissingSpec::Clustered {
            fraction,
            patch_size,
        } => clustered_mask_with(&mut rng, n1, n2, fraction, patch_size)?,
    };
    Ok(GroundTruthInstance::assemble(
        img.clone(),
        x,
        mask,
        &flags,
        sigma,
    ))
}

/// Search settings for fits at prescribed ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSearch {
    pub gamma_count: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Bisection steps allowed per target rank.
    pub max_refinements: usize,
    /// Extra geometric steps allowed below the end of the path while the
    /// largest target rank is still out of reach.
    pub max_extensions: usize,
}

impl Default for RankSearch {
    fn default() -> Self {
        Self {
            gamma_count: 20,
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_INNER_ITERS,
            max_refinements: 30,
            max_extensions: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankedFits {
    pub path: PathSolution,
    /// One entry per requested rank, `None` when no fit of that rank was found.
    pub fits: Vec<(usize, Option<Solution>)>,
    /// Decompositions spent on the path plus the refinements.
    pub svd_count: usize,
}

fn solve_stage(
    problem: &Problem,
    method: Method,
    gamma: f64,
    start: &WarmStart,
    search: &RankSearch,
) -> Result<Solution> {
    match method {
        Method::Soft => soft_impute_warm(problem, gamma, start, search.epsilon, search.max_iters),
        Method::Robust => {
            let c = SolverConfig::single(gamma).cutoff_for(gamma, problem)?;
            robust_impute_stage(problem, gamma, c, start, search.epsilon, search.max_iters)
        }
    }
}

/// Runs `method` along `gamma_path`, continues past its end with the same
/// geometric ratio while the largest target rank is unreached, and then, for
/// every target rank the path skipped over, bisects `log gamma` between the bracketing path points
/// (warm-starting from the larger-gamma path point) until a fit of exactly that
/// rank appears or the refinement budget runs out.
///
/// When several fits share a rank, the one with the smallest gamma is kept.
pub fn fit_target_ranks(
    problem: &Problem,
    method: Method,
    gamma_path: &[f64],
    targets: &[usize],
    search: &RankSearch,
) -> Result<RankedFits> {
    let config = SolverConfig::new(gamma_path.to_vec())
        .with_epsilon(search.epsilon)
        .with_max_inner_iters(search.max_iters);
    let mut path = method.run(problem, &config)?;
    let max_target = targets.iter().copied().max().unwrap_or(0);
    let ratio = match gamma_path {
        [a, b, ..] => b / a,
        _ => 0.8,
    };
    for _ in 0..search.max_extensions {
        let last = path.last();
        if last.final_rank >= max_target || last.gamma == 0.0 {
            break;
        }
        let next = solve_stage(
            problem,
            method,
            last.gamma * ratio,
            &last.warm_start(),
            search,
        )?;
        path.solutions.push(next);
    }
    let mut svd_count = path.total_svd_count();
    let sols = &path.solutions;

    let mut fits = Vec::with_capacity(targets.len());
    for &target in targets {
        if let Some(hit) = sols.iter().rev().find(|s| s.final_rank == target) {
            fits.push((target, Some(hit.clone())));
            continue;
        }
        let bracket = sols
            .windows(2)
            .find(|w| w[0].final_rank < target && w[1].final_rank > target);
        let Some(pair) = bracket else {
            fits.push((target, None));
            continue;
        };
        // A fixed warm start keeps the fitted rank monotone in gamma.
        let start = pair[0].warm_start();
        let (mut lo_gamma, mut hi_gamma) = (pair[0].gamma, pair[1].gamma);
        let mut found = None;
        for _ in 0..search.max_refinements {
            let mid = (lo_gamma * hi_gamma).sqrt();
            let sol = solve_stage(problem, method, mid, &start, search)?;
            svd_count += sol.svd_count;
            if sol.final_rank == target {
                found = Some(sol);
                break;
            }
            if sol.final_rank < target {
                lo_gamma = mid;
            } else {
                hi_gamma = mid;
            }
        }
        fits.push((target, found));
    }
    Ok(RankedFits {
        path,
        fits,
        svd_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintConfig {
    pub degrade: DegradeSpec,
    pub ranks: Vec<usize>,
    pub search: RankSearch,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            degrade: DegradeSpec::default(),
            ranks: vec![50, 75, 100, 125],
            search: RankSearch::default(),
        }
    }
}

/// Per-rank errors of one method on one degraded image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankErrors {
    pub rank: usize,
    pub gamma: f64,
    pub training_error: f64,
    pub test_error: f64,
    pub svd_count: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintMethodRun {
    pub method: Method,
    pub ranks: Vec<RankErrors>,
    pub best_test_error: f64,
    pub svd_count: usize,
}

/// Everything produced for one degraded copy of the image.
#[derive(Clone, Debug)]
pub struct InpaintReplicate {
    pub instance: GroundTruthInstance,
    pub runs: Vec<InpaintMethodRun>,
    /// Fitted matrices keyed like `runs`, one per requested rank.
    pub fitted: Vec<Vec<(usize, Option<DenseMatrix>)>>,
}

pub fn inpaint_replicate(
    img: &DenseMatrix,
    config: &InpaintConfig,
    methods: &[Method],
    seed: u64,
) -> Result<InpaintReplicate> {
    let instance = degrade_image(img, &config.degrade, seed)?;
    let problem = instance.problem()?;
    let gamma_path = default_gamma_path(&problem, config.search.gamma_count)?;
    let mut runs = Vec::new();
    let mut fitted = Vec::new();
    for &method in methods {
        let fits = fit_target_ranks(&problem, method, &gamma_path, &config.ranks, &config.search)?;
        let mut best = f64::INFINITY;
        for s in &fits.path.solutions {
            best = best.min(test_error(&instance, &s.y_hat)?);
        }
        let mut ranks = Vec::new();
        let mut mats = Vec::new();
        for (rank, fit) in &fits.fits {
            if let Some(sol) = fit {
                let test = test_error(&instance, &sol.y_hat)?;
                best = best.min(test);
                ranks.push(RankErrors {
                    rank: *rank,
                    gamma: sol.gamma,
                    training_error: training_error(&instance, &sol.y_hat)?,
                    test_error: test,
                    svd_count: sol.svd_count,
                    converged: sol.converged,
                });
            }
            mats.push((*rank, fit.as_ref().map(|s| s.y_hat.clone())));
        }
        runs.push(InpaintMethodRun {
            method,
            ranks,
            best_test_error: best,
            svd_count: fits.svd_count,
        });
        fitted.push(mats);
    }
    Ok(InpaintReplicate {
        instance,
        runs,
        fitted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintResult {
    pub mechanism: String,
    pub method: Method,
    pub replicates: usize,
    pub failures: Vec<String>,
    /// Rank fits produced across all replicates.
    pub fits: usize,
    /// Rank fits that stopped at the iteration cap.
    pub unconverged: usize,
    pub by_rank: Vec<RankSummary>,
    pub best_test_error: Stat,
}

impl InpaintResult {
    pub fn at_rank(&self, rank: usize) -> Option<&RankSummary> {
        self.by_rank.iter().find(|r| r.rank == rank)
    }
}

#[derive(Clone, Debug)]
pub struct InpaintReport {
    /// One entry per method, in the order requested.
    pub results: Vec<InpaintResult>,
    /// The first replicate in full, for writing images; `None` if it failed.
    pub first: Option<InpaintReplicate>,
}

/// Repeats [`inpaint_replicate`] over independently degraded copies and
/// averages per-rank errors over the replicates that reached each rank.
pub fn run_inpainting(
    img: &DenseMatrix,
    config: &InpaintConfig,
    methods: &[Method],
    replicates: usize,
    master_seed: u64,
) -> Result<InpaintReport> {
    if replicates == 0 {
        return Err(invalid("replicates", "must be at least 1"));
    }
    let mut outcomes: Vec<Result<InpaintReplicate>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(master_seed, 0, rep as u64);
            inpaint_replicate(img, config, methods, seed).map(|mut r| {
                if rep > 0 {
                    r.fitted.clear();
                }
                r
            })
        })
        .collect();

    let mut results = Vec::new();
    for (m, &method) in methods.iter().enumerate() {
        let mut failures = Vec::new();
        let mut per_rep = Vec::new();
        let mut best = Vec::new();
        let (mut fits, mut unconverged) = (0, 0);
        for (rep, outcome) in outcomes.iter().enumerate() {
            match outcome {
                Ok(replicate) => {
                    let run = &replicate.runs[m];
                    fits += run.ranks.len();
                    unconverged += run.ranks.iter().filter(|r| !r.converged).count();
                    best.push(run.best_test_error);
                    per_rep.push(
                        run.ranks
                            .iter()
                            .map(|r| (r.rank, r.training_error, r.test_error, r.svd_count as f64))
                            .collect::<Vec<_>>(),
                    );
                }
                Err(e) => failures.push(format!("replicate {rep}: {e}")),
            }
        }
        results.push(InpaintResult {
            mechanism: config.degrade.missing.name().to_string(),
            method,
            replicates,
            failures,
            fits,
            unconverged,
            by_rank: summarize_ranks(&per_rep),
            best_test_error: Stat::of(&best),
        });
    }
    let first = outcomes.swap_remove(0).ok();
    Ok(InpaintReport { results, first })
}
