//! Helpers shared by the integration tests and the acceptance runner.
//! Nothing here calls into the SVD code under test.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robimpute::{DenseMatrix, ObservationMask, Problem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.n_rows(), m.n_cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn frob(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    frob(&(a - b)) / frob(b).max(f64::MIN_POSITIVE)
}

/// Singular values from the eigenvalues of `mᵀm`, largest first.
pub fn singular_values_by_eig(m: &DenseMatrix) -> Vec<f64> {
    let a = to_na(m);
    let gram = if a.nrows() >= a.ncols() {
        a.transpose() * &a
    } else {
        &a * a.transpose()
    };
    let mut s: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn nuclear_by_eig(m: &DenseMatrix) -> f64 {
    singular_values_by_eig(m).iter().sum()
}

/// Minimizes `||m - A Bᵀ||²/2 + gamma (||A||² + ||B||²)/2` by alternating
/// ridge regressions. With `k >= rank` the product `A Bᵀ` equals the
/// minimizer of `||m - Y||²/2 + gamma ||Y||_*`.
pub fn factored_prox(m: &DenseMatrix, gamma: f64, seed: u64, max_sweeps: usize) -> DenseMatrix {
    let x = to_na(m);
    let k = m.n_rows().min(m.n_cols());
    let mut r = rng(seed);
    let mut a = DMatrix::from_fn(m.n_rows(), k, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut b = DMatrix::from_fn(m.n_cols(), k, |_, _| r.sample::<f64, _>(StandardNormal));
    let eye = DMatrix::<f64>::identity(k, k);
    let mut prev = &a * b.transpose();
    for sweep in 0..max_sweeps {
        let gb = b.transpose() * &b + &eye * gamma;
        a = (&x * &b) * gb.try_inverse().expect("ridge system is positive definite");
        let ga = a.transpose() * &a + &eye * gamma;
        b = (x.transpose() * &a) * ga.try_inverse().expect("ridge system is positive definite");
        if sweep % 64 == 63 {
            let y = &a * b.transpose();
            let moved = (&y - &prev).norm();
            if moved <= 1e-14 * y.norm().max(1.0) {
                break;
            }
            prev = y;
        }
    }
    from_na(&(&a * b.transpose()))
}

/// Same factored objective with squared loss only over `mask`; each row of
/// `A` (and of `B`) is its own ridge regression on the observed entries.
pub fn factored_completion(
    problem: &Problem,
    gamma: f64,
    k: usize,
    seed: u64,
    sweeps: usize,
) -> DenseMatrix {
    let (n1, n2) = problem.shape();
    let x = problem.values();
    let mask = problem.mask();
    let mut r = rng(seed);
    let mut a = DMatrix::from_fn(n1, k, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut b = DMatrix::from_fn(n2, k, |_, _| r.sample::<f64, _>(StandardNormal));
    let solve_rows =
        |fixed: &DMatrix<f64>, rows: usize, obs: &dyn Fn(usize) -> Vec<(usize, f64)>| {
            let mut out = DMatrix::zeros(rows, k);
            for i in 0..rows {
                let mut gram = DMatrix::<f64>::identity(k, k) * gamma;
                let mut rhs = nalgebra::DVector::<f64>::zeros(k);
                for (j, v) in obs(i) {
                    let f = fixed.row(j).transpose();
                    gram += &f * f.transpose();
                    rhs += f * v;
                }
                let sol = gram.cholesky().expect("positive definite").solve(&rhs);
                out.set_row(i, &sol.transpose());
            }
            out
        };
    for _ in 0..sweeps {
        a = solve_rows(&b, n1, &|i| {
            (0..n2)
                .filter(|&j| mask.contains(i, j))
                .map(|j| (j, x[(i, j)]))
                .collect()
        });
        b = solve_rows(&a, n2, &|j| {
            (0..n1)
                .filter(|&i| mask.contains(i, j))
                .map(|i| (i, x[(i, j)]))
                .collect()
        });
    }
    from_na(&(&a * b.transpose()))
}

pub struct Planted {
    pub clean: DenseMatrix,
    pub problem: Problem,
}

/// Rank-`r` target plus small noise, a few gross spikes on observed cells
/// and roughly `missing` of the entries hidden.
pub fn planted_instance(
    seed: u64,
    n1: usize,
    n2: usize,
    r: usize,
    missing: f64,
    spikes: usize,
) -> Planted {
    let mut g = rng(seed);
    let u = gaussian_matrix(&mut g, n1, r);
    let v = gaussian_matrix(&mut g, n2, r);
    let clean = u.matmul(&v.transpose()).unwrap();
    let mut x = clean.clone();
    for i in 0..n1 {
        for j in 0..n2 {
            let noise: f64 = g.sample(StandardNormal);
            x[(i, j)] += 0.1 * noise;
        }
    }
    let mask = loop {
        let m = ObservationMask::from_fn(n1, n2, |_, _| !g.gen_bool(missing));
        if m.len() > (n1 + n2) * r {
            break m;
        }
    };
    let cells: Vec<(usize, usize)> = mask.iter().collect();
    for _ in 0..spikes {
        let (i, j) = cells[g.gen_range(0..cells.len())];
        let sign = if g.gen_bool(0.5) { 1.0 } else { -1.0 };
        x[(i, j)] += sign * 15.0 * (r as f64).sqrt();
    }
    let problem = Problem::new(&x, mask).unwrap();
    Planted { clean, problem }
}
