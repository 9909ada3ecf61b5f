use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{population_variance, rng_from_seed};
use crate::error::{invalid, Error, Result};
use crate::matrix::{DenseMatrix, ObservationMask, Problem};

const MASK_RETRIES: usize = 100;

/// Outlier noise is this many times the base noise standard deviation.
pub const DEFAULT_OUTLIER_SD_FACTOR: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rank: usize,
    /// Signal-to-noise ratio `sqrt(Var(X0)) / sigma`; `inf` gives noiseless data.
    pub snr: f64,
    pub outlier_prob: f64,
    pub missing_prob: f64,
    /// Outlier noise standard deviation in units of `sigma`.
    pub outlier_sd_factor: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, rank: usize, snr: f64, outlier_prob: f64, missing_prob: f64) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            rank,
            snr,
            outlier_prob,
            missing_prob,
            outlier_sd_factor: DEFAULT_OUTLIER_SD_FACTOR,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(invalid("n", "dimensions must be positive"));
        }
        if self.rank == 0 || self.rank > self.n_rows.min(self.n_cols) {
            return Err(invalid(
                "rank",
                format!(
                    "must lie in 1..={}, got {}",
                    self.n_rows.min(self.n_cols),
                    self.rank
                ),
            ));
        }
        if !(self.snr > 0.0) {
            return Err(invalid(
                "snr",
                format!("must be positive, got {}", self.snr),
            ));
        }
        if !(0.0..1.0).contains(&self.outlier_prob) {
            return Err(invalid(
                "outlier_prob",
                format!("must lie in [0, 1), got {}", self.outlier_prob),
            ));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(invalid(
                "missing_prob",
                format!("must lie in [0, 1), got {}", self.missing_prob),
            ));
        }
        if !(self.outlier_sd_factor >= 0.0) || !self.outlier_sd_factor.is_finite() {
            return Err(invalid("outlier_sd_factor", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A contaminated observation of a known target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    /// Clean target.
    pub x0: DenseMatrix,
    /// Contaminated data, defined everywhere.
    pub x: DenseMatrix,
    pub mask: ObservationMask,
    /// Observed positions carrying gross outliers.
    pub outliers: ObservationMask,
    /// Observed positions carrying only regular noise.
    pub clean_observed: ObservationMask,
    pub sigma: f64,
}

impl GroundTruthInstance {
    pub(crate) fn assemble(
        x0: DenseMatrix,
        x: DenseMatrix,
        mask: ObservationMask,
        outlier_flags: &[bool],
        sigma: f64,
    ) -> Self {
        let (n1, n2) = x0.shape();
        let bits = mask.as_bits();
        let outliers = ObservationMask::from_fn(n1, n2, |i, j| {
            let k = i * n2 + j;
            bits[k] && outlier_flags[k]
        });
        let clean_observed = ObservationMask::from_fn(n1, n2, |i, j| {
            let k = i * n2 + j;
            bits[k] && !outlier_flags[k]
        });
        Self {
            x0,
            x,
            mask,
            outliers,
            clean_observed,
            sigma,
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::solvable(&self.x, self.mask.clone())
    }
}

pub(crate) fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Adds `N(0, sd²)` to every entry; a zero `sd` leaves `m` untouched but still
/// consumes the same random draws so later streams stay aligned.
pub(crate) fn add_gaussian(rng: &mut ChaCha8Rng, m: &mut DenseMatrix, sd: f64) {
    let (n1, n2) = m.shape();
    for i in 0..n1 {
        for j in 0..n2 {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] += sd * z;
        }
    }
}

pub(crate) fn bernoulli_mask(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    missing_prob: f64,
) -> Result<ObservationMask> {
    for _ in 0..MASK_RETRIES {
        let mask = ObservationMask::from_fn(rows, cols, |_, _| !rng.gen_bool(missing_prob));
        if !mask.is_empty() {
            return Ok(mask);
        }
    }
    Err(Error::Degenerate(format!(
        "no observed entries after {MASK_RETRIES} draws with missing probability {missing_prob}"
    )))
}

/// Draws `X0 = U Vᵀ` with standard normal factors, adds Gaussian noise at the
/// requested SNR, marks each entry an outlier with probability `outlier_prob`
/// (extra noise of sd `outlier_sd_factor * sigma`) and hides each entry with
/// probability `missing_prob`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroundTruthInstance> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let (n1, n2, r) = (spec.n_rows, spec.n_cols, spec.rank);

    let u = normal_matrix(&mut rng, n1, r);
    let v = normal_matrix(&mut rng, n2, r);
    let x0 = u.matmul(&v.transpose())?;
    let var = population_variance(&x0);
    let sigma = if spec.snr.is_infinite() {
        0.0
    } else {
        var.sqrt() / spec.snr
    };

    let mut x = x0.clone();
    add_gaussian(&mut rng, &mut x, sigma);

    let outlier_sd = spec.outlier_sd_factor * sigma;
    let mut flags = vec![false; n1 * n2];
    for (k, flag) in flags.iter_mut().enumerate() {
        if spec.outlier_prob > 0.0 && rng.gen_bool(spec.outlier_prob) {
            *flag = true;
            let z: f64 = StandardNormal.sample(&mut rng);
            let (i, j) = (k / n2, k % n2);
            x[(i, j)] += outlier_sd * z;
        }
    }

    let mask = bernoulli_mask(&mut rng, n1, n2, spec.missing_prob)?;
    Ok(GroundTruthInstance::assemble(x0, x, mask, &flags, sigma))
}

/// `||P_Γ(X - Ŷ)||² / ||P_Γ X||²` over the clean observed entries `Γ`.
pub fn training_error(instance: &GroundTruthInstance, y_hat: &DenseMatrix) -> Result<f64> {
    instance.x.check_same_shape(y_hat)?;
    let set = &instance.clean_observed;
    if set.is_empty() {
        return Err(Error::Degenerate("no clean observed entries".into()));
    }
    ratio_over(set, &instance.x, y_hat)
}

/// `||P⊥(X0 - Ŷ)||² / ||P⊥ X0||²` over the unobserved entries.
pub fn test_error(instance: &GroundTruthInstance, y_hat: &DenseMatrix) -> Result<f64> {
    instance.x0.check_same_shape(y_hat)?;
    let hidden = instance.mask.complement();
    if hidden.is_empty() {
        return Err(Error::Degenerate("no unobserved entries".into()));
    }
    ratio_over(&hidden, &instance.x0, y_hat)
}

fn ratio_over(set: &ObservationMask, truth: &DenseMatrix, y_hat: &DenseMatrix) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, j) in set.iter() {
        let t = truth[(i, j)];
        num += (t - y_hat[(i, j)]).powi(2);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference entries are all zero".into()));
    }
    Ok(num / den)
}

/// Empirical SNR `sqrt(Var(X0) / mean(noise²))` over the clean observed entries.
pub fn empirical_snr(instance: &GroundTruthInstance) -> f64 {
    let noise: Vec<f64> = instance
        .clean_observed
        .iter()
        .map(|(i, j)| instance.x[(i, j)] - instance.x0[(i, j)])
        .collect();
    let noise_var = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    (population_variance(&instance.x0) / noise_var).sqrt()
}
