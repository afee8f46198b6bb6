use mbnf_core::analysis::sharpness;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `H = A A^T / n + shift I`, positive semi-definite for `shift >= 0`.
fn random_hessian(n: usize, shift: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * shift
}

fn dominant(h: &DMatrix<f64>) -> f64 {
    let eig = h.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(0.0, |best: f64, v| if v.abs() > best.abs() { v } else { best })
}

fn estimate(h: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let grad = |p: &[f64]| Ok((h * DVector::from_column_slice(p)).as_slice().to_vec());
    let r = sharpness(&grad, theta, 1e-10, 20_000).unwrap();
    r.lambda_max
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn matches_dense_eigendecomposition(n in 1usize..=50, shift in 0.0f64..1.0, seed in any::<u64>()) {
        let h = random_hessian(n, shift, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = dominant(&h);
        let got = estimate(&h, &theta);
        prop_assert!((got - want).abs() <= 1e-3 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn diagonal_fixture() {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
    assert!((estimate(&h, &[0.5, -1.0]) - 3.0).abs() < 1e-6);
}

#[test]
fn indefinite_keeps_sign_of_dominant() {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-5.0, 2.0, 1.0]));
    assert!((estimate(&h, &[0.1, 0.2, 0.3]) + 5.0).abs() < 1e-6);
}
