//! Synthetic and image experiments with their error metrics.

pub mod bench;
pub mod image;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::DenseMatrix;

pub use bench::{
    run_benchmark, write_bench_csv, write_bench_json, BenchOptions, BenchResult, BenchSummary,
    Method, PathPoint, RankSummary, ReplicateRecord, Stat,
};
pub use image::{
    clustered_mask, degrade_image, fit_target_ranks, inpaint_replicate, run_inpainting,
    DegradeSpec, InpaintConfig, InpaintMethodRun, InpaintReplicate, InpaintReport, InpaintResult,
    MissingSpec, RankErrors, RankSearch,
};
pub use synthetic::{
    empirical_snr, generate_synthetic, test_error, training_error, GroundTruthInstance,
    SyntheticSpec, DEFAULT_OUTLIER_SD_FACTOR,
};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one replicate of one setting. Stable across versions and
/// platforms: three chained splitmix64 rounds.
pub fn replicate_seed(master: u64, setting: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ setting) ^ replicate)
}

/// Mean squared deviation over all entries (divides by the entry count).
pub fn population_variance(m: &DenseMatrix) -> f64 {
    let v = m.as_slice();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}
