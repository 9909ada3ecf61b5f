use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use robimpute::experiments::{
    run_benchmark, run_inpainting, write_bench_csv, write_bench_json, BenchOptions, DegradeSpec,
    InpaintConfig, Method, MissingSpec, RankSearch, SyntheticSpec, DEFAULT_OUTLIER_SD_FACTOR,
};
use robimpute::io::{read_matrix_csv, read_pgm, write_matrix_csv, write_pgm};
use robimpute::pcp::extract_sparse;
use robimpute::solvers::default_gamma_path;
use robimpute::{DenseMatrix, PathSolution, Problem, SolverConfig};

use crate::manifest::{InputDigest, RunManifest, MANIFEST_FILE};
use crate::output::OutDir;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NONCONVERGED: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: Self::DATA,
            message: message.into(),
        }
    }
}

impl From<robimpute::Error> for Failure {
    fn from(e: robimpute::Error) -> Self {
        match e {
            robimpute::Error::InvalidParameter { .. } => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::data(format!("{e:#}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "robimpute",
    version,
    about = "Robust low-rank matrix completion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    /// Fill in the missing entries of a matrix CSV file
    Complete(CompleteArgs),
    /// Locate gross outliers among the observed entries of a matrix CSV file
    Outliers(OutliersArgs),
    /// Benchmark the methods on simulated low-rank data
    Simulate(SimulateArgs),
    /// Degrade a grayscale image and recover it at prescribed ranks
    Inpaint(InpaintArgs),
    /// Repeat a run recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Robust,
    Soft,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Robust => vec![Method::Robust],
            MethodChoice::Soft => vec![Method::Soft],
            MethodChoice::Both => vec![Method::Robust, Method::Soft],
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMode {
    None,
    Independent,
    Clustered,
}

/// Regularization path and stopping rule.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct PathArgs {
    /// Single regularization value
    #[arg(long, conflicts_with = "gamma_path")]
    pub gamma: Option<f64>,
    /// Comma-separated decreasing regularization values
    #[arg(long, value_delimiter = ',')]
    pub gamma_path: Option<Vec<f64>>,
    /// Length of the automatic path (log-spaced from the top singular value of the data)
    #[arg(long, default_value_t = 20)]
    pub gamma_count: usize,
    /// Fixed Huber cutoff; chosen per regularization value when omitted
    #[arg(long)]
    pub c: Option<f64>,
    /// Stop when the squared relative change falls below this
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Iteration cap per regularization value
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
}

impl PathArgs {
    fn config(&self, problem: &Problem) -> Result<SolverConfig, Failure> {
        let gammas = match (&self.gamma, &self.gamma_path) {
            (Some(g), _) => vec![*g],
            (None, Some(path)) => path.clone(),
            (None, None) => default_gamma_path(problem, self.gamma_count)?,
        };
        let mut config = SolverConfig::new(gammas)
            .with_epsilon(self.tol)
            .with_max_inner_iters(self.max_iters);
        config.cutoff = self.c;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CompleteArgs {
    /// Matrix CSV; empty fields and NA mark missing entries
    pub input: PathBuf,
    /// Skip the first line of the input
    #[arg(long)]
    pub header: bool,
    #[command(flatten)]
    pub path: PathArgs,
    #[arg(long, value_enum, default_value_t = MethodChoice::Robust)]
    pub method: MethodChoice,
    /// Use squared loss (same as --method soft)
    #[arg(long, conflicts_with = "method")]
    pub no_robust: bool,
    /// Recorded for reproducibility; completion itself is deterministic
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "robimpute-out")]
    pub out_dir: PathBuf,
    /// Exit successfully even if some regularization value hit the iteration cap
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct OutliersArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[command(flatten)]
    pub path: PathArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "robimpute-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Rows and columns of the simulated matrices
    #[arg(short = 'n', long, default_value_t = 100)]
    pub n: usize,
    /// True ranks (comma-separated for a grid)
    #[arg(short = 'r', long, value_delimiter = ',', default_value = "10")]
    pub rank: Vec<usize>,
    /// Signal-to-noise ratios
    #[arg(short = 's', long, value_delimiter = ',', default_value = "1")]
    pub snr: Vec<f64>,
    /// Outlier probabilities
    #[arg(short = 'p', long, value_delimiter = ',', default_value = "0.1")]
    pub outlier_prob: Vec<f64>,
    /// Missing probabilities
    #[arg(short = 'q', long, value_delimiter = ',', default_value = "0.5")]
    pub missing_prob: Vec<f64>,
    /// Outlier noise standard deviation in units of the base noise
    #[arg(long, default_value_t = DEFAULT_OUTLIER_SD_FACTOR)]
    pub outlier_sd_factor: f64,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 20)]
    pub gamma_count: usize,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value = "robimpute-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct InpaintArgs {
    /// Grayscale PGM image (P2 or P5, 8-bit)
    pub image: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub snr: f64,
    /// Fraction of pixels given extra outlier noise
    #[arg(long, default_value_t = 0.1)]
    pub outlier_frac: f64,
    #[arg(long, default_value_t = 0.75)]
    pub outlier_snr: f64,
    #[arg(long, value_enum, default_value_t = MissingMode::Independent)]
    pub missing: MissingMode,
    #[arg(long, default_value_t = 0.4)]
    pub missing_frac: f64,
    /// Side of the square holes for clustered missingness
    #[arg(long, default_value_t = 16)]
    pub patch_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,75,100,125")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 20)]
    pub gamma_count: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Bisection steps per target rank
    #[arg(long, default_value_t = 30)]
    pub max_refinements: usize,
    #[arg(long, default_value = "robimpute-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to write; defaults to the recorded output directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Command {
    fn label(&self) -> &'static str {
        match self {
            Command::Complete(_) => "complete",
            Command::Outliers(_) => "outliers",
            Command::Simulate(_) => "simulate",
            Command::Inpaint(_) => "inpaint",
            Command::Replay(_) => "replay",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::Complete(a) => a.seed,
            Command::Outliers(a) => a.seed,
            Command::Simulate(a) => a.seed,
            Command::Inpaint(a) => a.seed,
            Command::Replay(_) => 0,
        }
    }

    fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Complete(a) => a.out_dir = dir,
            Command::Outliers(a) => a.out_dir = dir,
            Command::Simulate(a) => a.out_dir = dir,
            Command::Inpaint(a) => a.out_dir = dir,
            Command::Replay(a) => a.out_dir = Some(dir),
        }
    }

    fn input_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Complete(a) => Some(&mut a.input),
            Command::Outliers(a) => Some(&mut a.input),
            Command::Inpaint(a) => Some(&mut a.image),
            _ => None,
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::Complete(a) => &a.out_dir,
            Command::Outliers(a) => &a.out_dir,
            Command::Simulate(a) => &a.out_dir,
            Command::Inpaint(a) => &a.out_dir,
            Command::Replay(a) => a.out_dir.as_deref().unwrap_or(Path::new(".")),
        }
    }
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Replay(args) => replay(&args),
        other => execute(other),
    }
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let manifest = RunManifest::load(&args.manifest)?;
    let mut command = manifest.config.clone();
    if matches!(command, Command::Replay(_)) {
        return Err(Failure::data("a manifest cannot record a replay"));
    }
    let version = env!("CARGO_PKG_VERSION");
    if manifest.tool_version != version {
        eprintln!(
            "robimpute: warning: manifest written by version {}, running {version}",
            manifest.tool_version
        );
    }
    manifest.verify_inputs()?;
    if let Some(dir) = &args.out_dir {
        command.set_out_dir(dir.clone());
    }
    execute(command)
}

struct Outcome {
    unconverged: usize,
    total: usize,
}

fn execute(mut command: Command) -> Result<(), Failure> {
    let started_at = Utc::now();
    let mut inputs = Vec::new();
    if let Some(input) = command.input_mut() {
        let resolved = fs::canonicalize(&*input).unwrap_or_else(|_| input.clone());
        *input = resolved;
    }
    let mut out = OutDir::create(command.out_dir())?;
    let resolved = fs::canonicalize(out.path()).unwrap_or_else(|_| out.path().to_path_buf());
    command.set_out_dir(resolved);

    let outcome = match &command {
        Command::Complete(a) => complete(a, &mut out, &mut inputs)?,
        Command::Outliers(a) => outliers(a, &mut out, &mut inputs)?,
        Command::Simulate(a) => simulate(a, &mut out)?,
        Command::Inpaint(a) => inpaint(a, &mut out, &mut inputs)?,
        Command::Replay(_) => unreachable!("replays are resolved before execution"),
    };

    let manifest = RunManifest {
        command: command.label().to_string(),
        seed: command.seed(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        outputs: out.written().to_vec(),
        config: command,
        started_at,
        finished_at: Utc::now(),
    };
    out.write_json(MANIFEST_FILE, &manifest)?;

    let allow = match &manifest.config {
        Command::Complete(a) => a.allow_nonconverged,
        Command::Outliers(a) => a.allow_nonconverged,
        Command::Simulate(a) => a.allow_nonconverged,
        Command::Inpaint(a) => a.allow_nonconverged,
        Command::Replay(_) => false,
    };
    if outcome.unconverged > 0 && !allow {
        return Err(Failure {
            code: Failure::NONCONVERGED,
            message: format!(
                "{} of {} fits stopped at the iteration cap; outputs were written, \
                 rerun with a larger --max-iters or pass --allow-nonconverged",
                outcome.unconverged, outcome.total
            ),
        });
    }
    Ok(())
}

fn read_input(path: &Path, inputs: &mut Vec<InputDigest>) -> Result<Vec<u8>, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    inputs.push(InputDigest::of(path, &bytes));
    Ok(bytes)
}

fn load_problem(
    path: &Path,
    header: bool,
    inputs: &mut Vec<InputDigest>,
) -> Result<Problem, Failure> {
    let bytes = read_input(path, inputs)?;
    let problem = read_matrix_csv(bytes.as_slice(), header)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if problem.mask().is_empty() {
        return Err(Failure::data(format!(
            "{}: no observed entries",
            path.display()
        )));
    }
    Ok(problem)
}

#[derive(Serialize)]
struct DiagnosticEntry {
    method: Method,
    gamma: f64,
    c: Option<f64>,
    iterations: usize,
    svd_count: usize,
    final_rank: usize,
    objective_final: f64,
    converged: bool,
    objective_trace: Vec<f64>,
}

fn diagnostics(method: Method, path: &PathSolution) -> Vec<DiagnosticEntry> {
    path.solutions
        .iter()
        .map(|s| DiagnosticEntry {
            method,
            gamma: s.gamma,
            c: s.cutoff,
            iterations: s.iterations,
            svd_count: s.svd_count,
            final_rank: s.final_rank,
            objective_final: s.objective_final(),
            converged: s.converged,
            objective_trace: s.objective_trace.clone(),
        })
        .collect()
}

fn count_unconverged(paths: &[(Method, PathSolution)]) -> Outcome {
    let all = paths.iter().flat_map(|(_, p)| &p.solutions);
    Outcome {
        unconverged: all.clone().filter(|s| !s.converged).count(),
        total: all.count(),
    }
}

fn write_matrix(out: &mut OutDir, name: &str, m: &DenseMatrix) -> Result<(), Failure> {
    out.write_with(name, |w| Ok(write_matrix_csv(m, None, w)?))?;
    Ok(())
}

fn complete(
    args: &CompleteArgs,
    out: &mut OutDir,
    inputs: &mut Vec<InputDigest>,
) -> Result<Outcome, Failure> {
    let problem = load_problem(&args.input, args.header, inputs)?;
    let config = args.path.config(&problem)?;
    let choice = if args.no_robust {
        MethodChoice::Soft
    } else {
        args.method
    };
    let mut paths = Vec::new();
    for method in choice.methods() {
        paths.push((method, method.run(&problem, &config)?));
    }
    let single = paths.len() == 1;
    let mut diag = Vec::new();
    for (method, path) in &paths {
        let name = if single {
            "completed.csv".to_string()
        } else {
            format!("completed_{method}.csv")
        };
        write_matrix(out, &name, &path.last().y_hat)?;
        diag.extend(diagnostics(*method, path));
    }
    out.write_json("diagnostics.json", &diag)?;
    Ok(count_unconverged(&paths))
}

#[derive(Serialize)]
struct OutlierLocation {
    row: usize,
    col: usize,
    value: f64,
}

fn outliers(
    args: &OutliersArgs,
    out: &mut OutDir,
    inputs: &mut Vec<InputDigest>,
) -> Result<Outcome, Failure> {
    let problem = load_problem(&args.input, args.header, inputs)?;
    let config = args.path.config(&problem)?;
    let path = Method::Robust.run(&problem, &config)?;
    let fit = path.last();
    let c = fit.cutoff.expect("robust fits record their cutoff");
    let sparse = extract_sparse(&problem, &fit.y_hat, c)?;

    let mut locations: Vec<OutlierLocation> = problem
        .mask()
        .iter()
        .filter(|&(i, j)| sparse[(i, j)] != 0.0)
        .map(|(row, col)| OutlierLocation {
            row,
            col,
            value: sparse[(row, col)],
        })
        .collect();
    locations.sort_by(|a, b| {
        b.value
            .abs()
            .total_cmp(&a.value.abs())
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });

    write_matrix(out, "sparse.csv", &sparse)?;
    out.write_with("outliers.csv", |w| {
        writeln!(w, "row,col,value")?;
        for loc in &locations {
            writeln!(w, "{},{},{}", loc.row, loc.col, loc.value)?;
        }
        Ok(())
    })?;
    write_matrix(out, "completed.csv", &fit.y_hat)?;
    out.write_json("diagnostics.json", &diagnostics(Method::Robust, &path))?;
    let paths = [(Method::Robust, path)];
    Ok(count_unconverged(&paths))
}

fn simulate(args: &SimulateArgs, out: &mut OutDir) -> Result<Outcome, Failure> {
    let mut grid = Vec::new();
    for &rank in &args.rank {
        for &snr in &args.snr {
            for &p in &args.outlier_prob {
                for &q in &args.missing_prob {
                    let mut spec = SyntheticSpec::new(args.n, rank, snr, p, q);
                    spec.outlier_sd_factor = args.outlier_sd_factor;
                    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
                    grid.push(spec);
                }
            }
        }
    }
    let opts = BenchOptions {
        gamma_count: args.gamma_count,
        epsilon: args.tol,
        max_iters: args.max_iters,
        cutoff: args.c,
    };
    let results = run_benchmark(
        &grid,
        &args.method.methods(),
        args.replicates,
        args.seed,
        &opts,
    )?;
    out.write_with("results.csv", |w| Ok(write_bench_csv(&results, w)?))?;
    out.write_with("summary.json", |w| {
        write_bench_json(&results, &mut *w)?;
        writeln!(w)?;
        Ok(())
    })?;

    let points = results
        .iter()
        .flat_map(|r| &r.records)
        .flat_map(|rec| &rec.points);
    let failures: Vec<String> = results
        .iter()
        .flat_map(|r| &r.records)
        .filter_map(|rec| rec.failure.clone())
        .collect();
    for f in &failures {
        eprintln!("robimpute: replicate failed: {f}");
    }
    Ok(Outcome {
        unconverged: points.clone().filter(|p| !p.converged).count(),
        total: points.count(),
    })
}

#[derive(Serialize)]
struct InpaintSummary<'a> {
    degrade: DegradeSpec,
    replicates: usize,
    results: &'a [robimpute::experiments::InpaintResult],
    first_replicate: Option<&'a [robimpute::experiments::InpaintMethodRun]>,
}

fn inpaint(
    args: &InpaintArgs,
    out: &mut OutDir,
    inputs: &mut Vec<InputDigest>,
) -> Result<Outcome, Failure> {
    let bytes = fs::read(&args.image)
        .map_err(|e| Failure::usage(format!("cannot read image {}: {e}", args.image.display())))?;
    inputs.push(InputDigest::of(&args.image, &bytes));
    let img = read_pgm(&bytes).map_err(|e| {
        Failure::usage(format!(
            "{} is not a readable PGM image: {e}",
            args.image.display()
        ))
    })?;

    let missing = match args.missing {
        MissingMode::None => MissingSpec::None,
        MissingMode::Independent => MissingSpec::Independent {
            fraction: args.missing_frac,
        },
        MissingMode::Clustered => MissingSpec::Clustered {
            fraction: args.missing_frac,
            patch_size: args.patch_size,
        },
    };
    let config = InpaintConfig {
        degrade: DegradeSpec {
            snr: args.snr,
            outlier_frac: args.outlier_frac,
            outlier_snr: args.outlier_snr,
            missing,
        },
        ranks: args.ranks.clone(),
        search: RankSearch {
            gamma_count: args.gamma_count,
            epsilon: args.tol,
            max_iters: args.max_iters,
            max_refinements: args.max_refinements,
            ..RankSearch::default()
        },
    };
    let methods = args.method.methods();
    let report = run_inpainting(&img, &config, &methods, args.replicates, args.seed)?;

    if let Some(first) = &report.first {
        let inst = &first.instance;
        let degraded = DenseMatrix::from_fn(img.n_rows(), img.n_cols(), |i, j| {
            if inst.mask.contains(i, j) {
                inst.x[(i, j)]
            } else {
                0.0
            }
        });
        write_image(out, "degraded.pgm", &degraded)?;
        for (run, fitted) in first.runs.iter().zip(&first.fitted) {
            for (rank, m) in fitted {
                if let Some(m) = m {
                    write_image(out, &format!("recovered_{}_rank{rank}.pgm", run.method), m)?;
                }
            }
        }
    }
    let summary = InpaintSummary {
        degrade: config.degrade,
        replicates: args.replicates,
        results: &report.results,
        first_replicate: report.first.as_ref().map(|f| f.runs.as_slice()),
    };
    out.write_json("errors.json", &summary)?;

    let mut failures = 0;
    for res in &report.results {
        for f in &res.failures {
            eprintln!("robimpute: {} {f}", res.method);
            failures += 1;
        }
    }
    if failures == report.results.len() * args.replicates {
        return Err(Failure::data("every replicate failed"));
    }
    Ok(Outcome {
        unconverged: report.results.iter().map(|r| r.unconverged).sum(),
        total: report.results.iter().map(|r| r.fits).sum(),
    })
}

fn write_image(out: &mut OutDir, name: &str, m: &DenseMatrix) -> Result<(), Failure> {
    out.write_with(name, |w| Ok(write_pgm(m, true, w)?))?;
    Ok(())
}
