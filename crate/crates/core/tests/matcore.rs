mod common;

use common::*;
use proptest::prelude::*;
use robimpute::matrix::{
    frobenius_norm_sq, nuclear_norm, project, project_complement, spectral_norm, svd,
    svd_soft_threshold,
};
use robimpute::{DenseMatrix, ObservationMask};

fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |v| DenseMatrix::from_row_major(r, c, v).unwrap())
    })
}

fn matrix_and_mask(max_dim: usize) -> impl Strategy<Value = (DenseMatrix, ObservationMask)> {
    matrix_strategy(max_dim).prop_flat_map(|m| {
        let (r, c) = m.shape();
        prop::collection::vec(any::<bool>(), r * c).prop_map(move |bits| {
            (
                m.clone(),
                ObservationMask::from_fn(r, c, |i, j| bits[i * c + j]),
            )
        })
    })
}

#[test]
fn singular_values_match_eigen_oracle() {
    let mut g = rng(17);
    for (r, c) in [(3, 3), (7, 4), (4, 9), (12, 8), (1, 5)] {
        let m = gaussian_matrix(&mut g, r, c);
        let f = svd(&m).unwrap();
        let oracle = singular_values_by_eig(&m);
        for (a, b) in f.singular_values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * oracle[0], "{a} vs {b}");
        }
        assert!(rel_diff(&f.reconstruct(), &m) < 1e-12);
    }
}

#[test]
fn svt_matches_factored_minimizer() {
    let mut g = rng(5);
    for seed in 0..4 {
        let m = gaussian_matrix(&mut g, 6, 4);
        let s = singular_values_by_eig(&m);
        let gamma = (s[1] * s[2]).sqrt();
        let oracle = factored_prox(&m, gamma, seed, 200_000);
        let y = svd_soft_threshold(&m, gamma).unwrap();
        assert!(
            rel_diff(&y, &oracle) < 1e-6,
            "seed {seed}: {}",
            rel_diff(&y, &oracle)
        );
    }
}

#[test]
fn nuclear_norm_matches_eigen_oracle() {
    let mut g = rng(23);
    let m = gaussian_matrix(&mut g, 9, 6);
    assert!((nuclear_norm(&m).unwrap() - nuclear_by_eig(&m)).abs() < 1e-9);
    let diag = DenseMatrix::from_diagonal(3, 3, &[3.0, -2.0, 0.5]);
    assert!((nuclear_norm(&diag).unwrap() - 5.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent((m, mask) in matrix_and_mask(7)) {
        let once = project(&m, &mask).unwrap();
        prop_assert_eq!(project(&once, &mask).unwrap(), once.clone());
        let off = project_complement(&m, &mask).unwrap();
        prop_assert_eq!(project_complement(&off, &mask).unwrap(), off.clone());
        prop_assert_eq!(&once + &off, m);
    }

    #[test]
    fn projection_splits_energy((m, mask) in matrix_and_mask(7)) {
        let on = frobenius_norm_sq(&project(&m, &mask).unwrap());
        let off = frobenius_norm_sq(&project_complement(&m, &mask).unwrap());
        prop_assert!((on + off - frobenius_norm_sq(&m)).abs() <= 1e-12 * frobenius_norm_sq(&m).max(1.0));
    }

    #[test]
    fn svt_is_non_expansive(
        (a, b) in (1usize..7, 1usize..7).prop_flat_map(|(r, c)| (
            prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| DenseMatrix::from_row_major(r, c, v).unwrap()),
            prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| DenseMatrix::from_row_major(r, c, v).unwrap()),
        )),
        gamma in 0.0f64..4.0,
    ) {
        let sa = svd_soft_threshold(&a, gamma).unwrap();
        let sb = svd_soft_threshold(&b, gamma).unwrap();
        prop_assert!(frob(&(&sa - &sb)) <= frob(&(&a - &b)) * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn svt_shrinks_nuclear_and_spectral_norms(m in matrix_strategy(7), gamma in 0.0f64..4.0) {
        let y = svd_soft_threshold(&m, gamma).unwrap();
        let (ny, nm) = (nuclear_norm(&y).unwrap(), nuclear_norm(&m).unwrap());
        prop_assert!(ny <= nm + 1e-10);
        prop_assert!(ny >= nm - gamma * m.n_rows().min(m.n_cols()) as f64 - 1e-9);
        let resid = spectral_norm(&(&m - &y)).unwrap();
        prop_assert!(resid <= gamma + 1e-9);
    }

    #[test]
    fn svt_beats_arbitrary_candidates(m in matrix_strategy(5), gamma in 0.05f64..3.0, seed in any::<u64>()) {
        let y = svd_soft_threshold(&m, gamma).unwrap();
        let obj = |z: &DenseMatrix| 0.5 * frobenius_norm_sq(&(&m - z)) + gamma * nuclear_by_eig(z);
        let best = obj(&y);
        let mut g = rng(seed);
        for k in 0..100 {
            let scale = 0.01 * (1 + k % 10) as f64;
            let cand = &y + &gaussian_matrix(&mut g, m.n_rows(), m.n_cols()).scale(scale);
            prop_assert!(best <= obj(&cand) + 1e-9, "candidate {k} improves");
        }
    }

    #[test]
    fn svt_with_zero_gamma_is_identity(m in matrix_strategy(6)) {
        prop_assert_eq!(svd_soft_threshold(&m, 0.0).unwrap(), m);
    }
}
