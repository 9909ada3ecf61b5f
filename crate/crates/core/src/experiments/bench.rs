//! Replicated benchmark over synthetic settings.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replicate_seed;
use super::synthetic::{generate_synthetic, test_error, training_error, SyntheticSpec};
use crate::error::{invalid, Result};
use crate::matrix::Problem;
use crate::solvers::{
    default_gamma_path, robust_impute, soft_impute_path, PathSolution, SolverConfig,
    DEFAULT_EPSILON, DEFAULT_MAX_INNER_ITERS, DEFAULT_PATH_LENGTH,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Robust,
    Soft,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Robust => "robust",
            Method::Soft => "soft",
        }
    }

    pub fn run(self, problem: &Problem, config: &SolverConfig) -> Result<PathSolution> {
        match self {
            Method::Robust => robust_impute(problem, config),
            Method::Soft => soft_impute_path(problem, config),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robust" => Ok(Method::Robust),
            "soft" => Ok(Method::Soft),
            other => Err(invalid("method", format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub gamma_count: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Fixed Huber cutoff for the robust method; `None` picks it per gamma.
    pub cutoff: Option<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            gamma_count: DEFAULT_PATH_LENGTH,
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_INNER_ITERS,
            cutoff: None,
        }
    }
}

/// One solution on the gamma path of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub gamma_index: usize,
    pub gamma: f64,
    pub fitted_rank: usize,
    pub training_error: f64,
    pub test_error: f64,
    /// Decompositions spent on this gamma alone.
    pub svd_count: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    /// Empty when the replicate failed.
    pub points: Vec<PathPoint>,
    pub failure: Option<String>,
}

impl ReplicateRecord {
    pub fn best_test_error(&self) -> Option<f64> {
        self.points.iter().map(|p| p.test_error).reduce(f64::min)
    }

    /// Point with the given fitted rank; among ties, the smallest gamma.
    pub fn at_rank(&self, rank: usize) -> Option<&PathPoint> {
        self.points.iter().rev().find(|p| p.fitted_rank == rank)
    }
}

/// Mean and standard error over contributing replicates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero when `n < 2`.
    pub se: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Self { mean, se, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    pub training_error: Stat,
    pub test_error: Stat,
    pub svd_count: Stat,
}

/// Averages per-rank `(rank, training, test, svd_count)` tuples across
/// replicates; a replicate only contributes to ranks it reached.
pub(crate) fn summarize_ranks(per_replicate: &[Vec<(usize, f64, f64, f64)>]) -> Vec<RankSummary> {
    let mut ranks: Vec<usize> = per_replicate.iter().flatten().map(|t| t.0).collect();
    ranks.sort_unstable();
    ranks.dedup();
    ranks
        .into_iter()
        .map(|rank| {
            let hits: Vec<_> = per_replicate
                .iter()
                .filter_map(|rep| rep.iter().find(|t| t.0 == rank))
                .collect();
            let col = |k: fn(&(usize, f64, f64, f64)) -> f64| {
                Stat::of(&hits.iter().map(|t| k(t)).collect::<Vec<_>>())
            };
            RankSummary {
                rank,
                training_error: col(|t| t.1),
                test_error: col(|t| t.2),
                svd_count: col(|t| t.3),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub setting_id: usize,
    pub spec: SyntheticSpec,
    pub method: Method,
    pub replicates: usize,
    pub failures: usize,
    /// Per replicate, the smallest test error anywhere on the path.
    pub best_test_error: Stat,
    pub by_rank: Vec<RankSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub setting_id: usize,
    /// Setting as given; replicate seeds come from the master seed instead
    /// of `spec.seed`.
    pub spec: SyntheticSpec,
    pub method: Method,
    pub records: Vec<ReplicateRecord>,
}

impl BenchResult {
    pub fn summary(&self) -> BenchSummary {
        let ok: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.failure.is_none())
            .collect();
        let best: Vec<f64> = ok.iter().filter_map(|r| r.best_test_error()).collect();
        let per_rep: Vec<Vec<_>> = ok
            .iter()
            .map(|r| {
                let mut ranks: Vec<usize> = r.points.iter().map(|p| p.fitted_rank).collect();
                ranks.sort_unstable();
                ranks.dedup();
                ranks
                    .into_iter()
                    .filter_map(|k| r.at_rank(k))
                    .map(|p| {
                        (
                            p.fitted_rank,
                            p.training_error,
                            p.test_error,
                            p.svd_count as f64,
                        )
                    })
                    .collect()
            })
            .collect();
        BenchSummary {
            setting_id: self.setting_id,
            spec: self.spec.clone(),
            method: self.method,
            replicates: self.records.len(),
            failures: self.records.len() - ok.len(),
            best_test_error: Stat::of(&best),
            by_rank: summarize_ranks(&per_rep),
        }
    }
}

fn run_replicate(
    spec: &SyntheticSpec,
    methods: &[Method],
    seed: u64,
    opts: &BenchOptions,
) -> Result<Vec<Vec<PathPoint>>> {
    let instance = generate_synthetic(&spec.clone().with_seed(seed))?;
    let problem = instance.problem()?;
    let gammas = default_gamma_path(&problem, opts.gamma_count)?;
    let mut config = SolverConfig::new(gammas)
        .with_epsilon(opts.epsilon)
        .with_max_inner_iters(opts.max_iters);
    config.cutoff = opts.cutoff;
    methods
        .iter()
        .map(|&method| {
            let path = method.run(&problem, &config)?;
            path.solutions
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    Ok(PathPoint {
                        gamma_index: k,
                        gamma: s.gamma,
                        fitted_rank: s.final_rank,
                        training_error: training_error(&instance, &s.y_hat)?,
                        test_error: test_error(&instance, &s.y_hat)?,
                        svd_count: s.svd_count,
                        converged: s.converged,
                    })
                })
                .collect()
        })
        .collect()
}

/// Runs every method on `replicates` fresh instances of every setting.
///
/// Each replicate draws one instance from a seed derived from
/// `(master_seed, setting index, replicate index)` and shares it across
/// methods. Replicates run in parallel; results are gathered in index order,
/// so the output does not depend on the thread count. A failing replicate
/// is recorded and the run continues.
pub fn run_benchmark(
    settings: &[SyntheticSpec],
    methods: &[Method],
    replicates: usize,
    master_seed: u64,
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    if replicates == 0 {
        return Err(invalid("replicates", "must be at least 1"));
    }
    if methods.is_empty() {
        return Err(invalid("methods", "at least one method is required"));
    }
    for spec in settings {
        spec.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..replicates).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<(u64, Result<Vec<Vec<PathPoint>>>)> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let seed = replicate_seed(master_seed, s as u64, r as u64);
            (seed, run_replicate(&settings[s], methods, seed, opts))
        })
        .collect();

    let mut results = Vec::with_capacity(settings.len() * methods.len());
    for (s, spec) in settings.iter().enumerate() {
        let block = &outcomes[s * replicates..(s + 1) * replicates];
        for (m, &method) in methods.iter().enumerate() {
            let records = block
                .iter()
                .enumerate()
                .map(|(r, (seed, outcome))| match outcome {
                    Ok(per_method) => ReplicateRecord {
                        replicate: r,
                        seed: *seed,
                        points: per_method[m].clone(),
                        failure: None,
                    },
                    Err(e) => ReplicateRecord {
                        replicate: r,
                        seed: *seed,
                        points: Vec::new(),
                        failure: Some(e.to_string()),
                    },
                })
                .collect();
            results.push(BenchResult {
                setting_id: s,
                spec: spec.clone(),
                method,
                records,
            });
        }
    }
    Ok(results)
}

pub const BENCH_CSV_HEADER: [&str; 8] = [
    "setting_id",
    "replicate",
    "method",
    "gamma_index",
    "fitted_rank",
    "training_error",
    "test_error",
    "svd_count",
];

/// One row per path point. Floats use Rust's shortest round-trip formatting.
pub fn write_bench_csv<W: Write>(results: &[BenchResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_CSV_HEADER)?;
    for res in results {
        for rec in &res.records {
            for p in &rec.points {
                w.write_record([
                    res.setting_id.to_string(),
                    rec.replicate.to_string(),
                    res.method.to_string(),
                    p.gamma_index.to_string(),
                    p.fitted_rank.to_string(),
                    p.training_error.to_string(),
                    p.test_error.to_string(),
                    p.svd_count.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench_json<W: Write>(results: &[BenchResult], out: W) -> Result<()> {
    let summaries: Vec<BenchSummary> = results.iter().map(BenchResult::summary).collect();
    serde_json::to_writer_pretty(out, &summaries)?;
    Ok(())
}
