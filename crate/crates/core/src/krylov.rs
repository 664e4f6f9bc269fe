//! Preconditioned conjugate gradients and direct SPD solves.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, Csr};

/// A linear map on `R^n`.
pub trait LinearOperator {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for Csr {
    fn size(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }
}

pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn size(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x)
    }
}

impl LinearOperator for Mat<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..self.ncols()).map(|j| self[(i, j)] * x[j]).sum();
        }
    }
}

/// Dense Cholesky factorization of an SPD matrix.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    l: Mat<f64>,
}

impl DenseCholesky {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(DenseCholesky { l: llt.L().to_owned() })
    }

    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        let mut m = faer::MatMut::from_column_major_slice_mut(x, n, 1);
        solve_lower_triangular_in_place(self.l.as_ref(), m.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.l.as_ref().transpose(), m.as_mut(), Par::Seq);
    }
}

impl LinearOperator for DenseCholesky {
    fn size(&self) -> usize {
        self.l.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.solve_in_place(y);
    }
}

/// Sparse Cholesky factorization (faer, supernodal/simplicial as it sees fit).
pub struct SparseCholesky {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn new(a: &Csr) -> Result<Self> {
        let trips: Vec<Triplet<usize, usize, f64>> = (0..a.nrows)
            .flat_map(|i| {
                let (c, v) = a.row(i);
                c.iter().zip(v).map(move |(&j, &x)| Triplet::new(i, j, x)).collect::<Vec<_>>()
            })
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows, a.ncols, &trips)
            .map_err(|e| Error::Constraint(format!("sparse matrix: {e:?}")))?;
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(SparseCholesky { n: a.nrows, llt })
    }
}

impl LinearOperator for SparseCholesky {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| x[i]);
        let sol = self.llt.solve(&rhs);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = sol[(i, 0)];
        }
    }
}

/// Dense SPD solve of `A x = b`.
pub fn direct_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let f = DenseCholesky::new(a)?;
    let mut x = b.to_vec();
    f.solve_in_place(&mut x);
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residuals, starting with the initial one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub final_residual: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct PcgOptions {
    pub tol: f64,
    /// Defaults to `min(10 n, 10000)`.
    pub max_iter: Option<usize>,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

const TRUE_RESIDUAL_EVERY: usize = 50;

fn true_residual(a: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Preconditioned conjugate gradients, stopping at `||b - Ax|| / ||b|| <= tol`.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn LinearOperator,
    x0: Option<&[f64]>,
    opts: PcgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = a.size();
    if b.len() != n || m.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if b.len() != n { b.len() } else { m.size() },
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let max_iter = opts.max_iter.unwrap_or((10 * n).min(10000));
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual_history: vec![0.0],
                converged: true,
                final_residual: 0.0,
                wall_time: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x0.len(),
            })
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    true_residual(a, b, &x, &mut r);
    let mut rel = norm2(&r) / bnorm;
    let mut history = vec![rel];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut rz = 0.0;
    let mut iterations = 0;
    let mut converged = rel <= opts.tol;
    while !converged && iterations < max_iter {
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            return Err(Error::Indefinite {
                iteration: iterations,
                what: "r^T M r",
                value: rz_new,
            });
        }
        if iterations == 0 {
            p.copy_from_slice(&z);
        } else {
            let beta = rz_new / rz;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        rz = rz_new;
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Indefinite {
                iteration: iterations,
                what: "p^T A p",
                value: pq,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iterations += 1;
        if iterations % TRUE_RESIDUAL_EVERY == 0 {
            true_residual(a, b, &x, &mut r);
        }
        rel = norm2(&r) / bnorm;
        if rel <= opts.tol {
            true_residual(a, b, &x, &mut r);
            rel = norm2(&r) / bnorm;
            converged = rel <= opts.tol;
        }
        history.push(rel);
    }
    Ok((
        x,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            final_residual: rel,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Mat<f64> {
        let mut s = seed;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let r = Mat::<f64>::from_fn(n, n, |_, _| rnd());
        r.transpose() * &r + Mat::<f64>::identity(n, n)
    }

    #[test]
    fn identity_converges_in_one_step() {
        let a = Csr::identity(5);
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (x, rep) = pcg(&a, &b, &IdentityOperator(5), None, PcgOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(x, b.to_vec());
        assert_eq!(rep.residual_history.len(), 2);
    }

    #[test]
    fn exact_preconditioner_one_step() {
        let a = spd(20, 3);
        let m = DenseCholesky::new(&a).unwrap();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let (_, rep) = pcg(&a, &b, &m, None, PcgOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = Csr::identity(3);
        let (x, rep) = pcg(&a, &[0.0; 3], &IdentityOperator(3), None, PcgOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn indefinite_is_detected() {
        let a = Csr::from_rows(2, vec![vec![(0, 1.0)], vec![(1, -1.0)]]);
        let err = pcg(&a, &[0.0, 1.0], &IdentityOperator(2), None, PcgOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Indefinite { .. }));
    }

    #[test]
    fn direct_examples() {
        let a = Mat::<f64>::identity(3, 3) * faer::Scale(2.0);
        let close = |x: Vec<f64>, want: &[f64]| x.len() == want.len() && x.iter().zip(want).all(|(u, v)| (u - v).abs() <= 1e-15);
        assert!(close(direct_solve(&a, &[1.0; 3]).unwrap(), &[0.5; 3]));
        let a = Mat::<f64>::from_fn(1, 1, |_, _| 4.0);
        assert!(close(direct_solve(&a, &[2.0]).unwrap(), &[0.5]));
        let a = spd(50, 9);
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let x = direct_solve(&a, &b).unwrap();
        let mut r = vec![0.0; 50];
        a.apply(&x, &mut r);
        let err: f64 = r.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * norm2(&b));
        let neg = Mat::<f64>::identity(2, 2) * faer::Scale(-1.0);
        assert!(direct_solve(&neg, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sparse_cholesky_matches_dense() {
        let a = Csr::from_rows(
            3,
            vec![vec![(0, 4.0), (1, -1.0)], vec![(0, -1.0), (1, 4.0), (2, -1.0)], vec![(1, -1.0), (2, 4.0)]],
        );
        let s = SparseCholesky::new(&a).unwrap();
        let d = DenseCholesky::new(&a.to_dense()).unwrap();
        let b = [1.0, 2.0, 3.0];
        let (mut y1, mut y2) = (vec![0.0; 3], vec![0.0; 3]);
        s.apply(&b, &mut y1);
        d.apply(&b, &mut y2);
        for i in 0..3 {
            assert!((y1[i] - y2[i]).abs() < 1e-14);
        }
    }
}
