use dpgmg::krylov::{direct_solve, pcg, DenseCholesky, IdentityOperator, PcgOptions};
use dpgmg::sparse::{dot, Csr};
use faer::Mat;
use proptest::prelude::*;

/// `Q^T Q + shift I` for a pseudo-random `Q`.
fn spd(n: usize, seed: u64, shift: f64) -> Mat<f64> {
    let mut s = seed | 1;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 2001) as f64 / 1000.0 - 1.0
    };
    let q = Mat::<f64>::from_fn(n, n, |_, _| next());
    Mat::<f64>::from_fn(n, n, |i, j| {
        (0..n).map(|r| q[(r, i)] * q[(r, j)]).sum::<f64>() + if i == j { shift } else { 0.0 }
    })
}

fn to_csr(a: &Mat<f64>) -> Csr {
    let rows = (0..a.nrows())
        .map(|i| (0..a.ncols()).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])).collect())
        .collect();
    Csr::from_rows(a.ncols(), rows)
}

fn a_norm(a: &Csr, e: &[f64]) -> f64 {
    dot(e, &a.mul_vec(e)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cg_error_decreases_in_energy(seed in any::<u64>(), n in 5usize..40) {
        let dense = spd(n, seed, 0.5);
        let a = to_csr(&dense);
        let b: Vec<f64> = (0..n).map(|i| ((i * 31 + 7) % 11) as f64 - 5.0).collect();
        let exact = direct_solve(&dense, &b).unwrap();
        let mut prev = f64::INFINITY;
        for it in 1..=n {
            let opts = PcgOptions { tol: 1e-300, max_iter: Some(it) };
            let (x, _) = pcg(&a, &b, &IdentityOperator(n), None, opts).unwrap();
            let e: Vec<f64> = x.iter().zip(&exact).map(|(u, v)| u - v).collect();
            let err = a_norm(&a, &e);
            prop_assert!(err <= prev * (1.0 + 1e-8) + 1e-12, "iteration {}: {} > {}", it, err, prev);
            prev = err;
        }
    }

    #[test]
    fn pcg_matches_direct_and_is_deterministic(seed in any::<u64>()) {
        let n = 50;
        let dense = spd(n, seed, 1.0);
        let a = to_csr(&dense);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let exact = direct_solve(&dense, &b).unwrap();
        let jacobi = DenseCholesky::new(&Mat::from_fn(n, n, |i, j| if i == j { dense[(i, i)] } else { 0.0 })).unwrap();
        let opts = PcgOptions { tol: 1e-12, max_iter: None };
        let (x, rep) = pcg(&a, &b, &jacobi, None, opts).unwrap();
        prop_assert!(rep.converged);
        let err: f64 = x.iter().zip(&exact).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * norm);
        let (y, rep2) = pcg(&a, &b, &jacobi, None, opts).unwrap();
        prop_assert_eq!(x, y);
        prop_assert_eq!(rep.residual_history, rep2.residual_history);
    }
}

#[test]
fn warm_start_at_solution_takes_no_iterations() {
    let dense = spd(20, 42, 1.0);
    let a = to_csr(&dense);
    let b = vec![1.0; 20];
    let exact = direct_solve(&dense, &b).unwrap();
    let (_, rep) = pcg(&a, &b, &IdentityOperator(20), Some(&exact), PcgOptions::default()).unwrap();
    assert_eq!(rep.iterations, 0);
    assert!(pcg(&a, &b, &IdentityOperator(20), Some(&exact[..5]), PcgOptions::default()).is_err());
}

#[test]
fn iteration_cap_is_reported() {
    let dense = spd(30, 9, 1e-3);
    let a = to_csr(&dense);
    let b = vec![1.0; 30];
    let opts = PcgOptions { tol: 1e-14, max_iter: Some(3) };
    let (_, rep) = pcg(&a, &b, &IdentityOperator(30), None, opts).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iterations, 3);
    assert_eq!(rep.residual_history.len(), 4);
}
