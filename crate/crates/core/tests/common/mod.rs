#![allow(dead_code)]

use dpgmg::assembly::{AssemblyOptions, Solution};
use dpgmg::formulation::FormDescriptor;
use dpgmg::geometry::Point;
use dpgmg::harness::{run, ExperimentConfig, ProblemTag, TwoGridMode};
use dpgmg::krylov::{direct_solve, LinearOperator};
use dpgmg::mesh::MeshTopology;
use dpgmg::multigrid::{Level, SchwarzSmoother};
use dpgmg::sparse::{dot, Csr};
use faer::{Mat, Side};

pub fn config(problem: ProblemTag, dim: usize, k: usize, width: usize) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        dim,
        k,
        width,
        ..Default::default()
    }
}

pub fn two_grid(problem: ProblemTag, dim: usize, k: usize, width: usize, mode: TwoGridMode) -> usize {
    let mut c = config(problem, dim, k, width);
    c.two_grid = mode;
    let rep = run(&c).unwrap();
    assert!(rep.rows[0].converged, "{problem} k={k} width={width} did not converge");
    rep.rows[0].iterations
}

pub fn level<F>(mesh: MeshTopology, form: &FormDescriptor, bc: F, pin: Option<Point>, condensed: bool) -> Level
where
    F: Fn(usize, &Point) -> f64,
{
    let mut opts = AssemblyOptions::new(form.dim);
    opts.condensed = condensed;
    Level::new(mesh, form.clone(), bc, pin, &opts).unwrap()
}

/// Dense direct solve of a level's system, returned as a full solution.
pub fn direct_solution(l: &Level) -> (Vec<f64>, Solution) {
    let x = direct_solve(&l.system.matrix.to_dense(), &l.system.rhs).unwrap();
    let sol = l.system.solution(&l.dofmap, &x).unwrap();
    (x, sol)
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    num / den
}

pub fn residual(a: &Csr, b: &[f64], x: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `S A` by power iteration in the `A` inner product.
pub fn lambda_max_power(a: &Csr, s: &dyn LinearOperator, iters: usize) -> f64 {
    let n = a.nrows;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut lambda = 0.0;
    let mut ax = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..iters {
        a.apply(&x, &mut ax);
        let xax = dot(&x, &ax);
        s.apply(&ax, &mut y);
        a.apply(&y, &mut ax);
        lambda = dot(&x, &ax) / xax;
        let norm = dot(&y, &ax).sqrt();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
    }
    lambda
}

/// Largest eigenvalue of `S A` from the dense symmetric form `L^T S L`, `A = L L^T`.
pub fn lambda_max_dense(a: &Csr, s: &SchwarzSmoother) -> f64 {
    let n = a.nrows;
    let ad = a.to_dense();
    let l = ad.llt(Side::Lower).unwrap().L().to_owned();
    let mut sl = Mat::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = l[(i, j)];
        }
        s.apply(&col, &mut out);
        for i in 0..n {
            sl[(i, j)] = out[i];
        }
    }
    let m = l.transpose() * &sl;
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    *sym.self_adjoint_eigenvalues(Side::Lower).unwrap().last().unwrap()
}
