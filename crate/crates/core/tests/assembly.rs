mod common;

use common::*;
use dpgmg::assembly::field_l2_error;
use dpgmg::formulation::poisson_form;
use dpgmg::geometry::Point;
use dpgmg::harness::ProblemTag;
use dpgmg::mesh::MeshTopology;
use faer::Side;

fn poisson_meshes(dim: usize, k: usize) -> Vec<MeshTopology> {
    let base = MeshTopology::unit(dim, 2, k).unwrap();
    let hanging = base.refine_cells(&[0]).unwrap();
    let twice = hanging.refine_cells(&[hanging.active_ids()[0]]).unwrap();
    vec![base.refine_uniformly(1).unwrap(), hanging, twice]
}

/// A solution inside the trial space is reproduced exactly, on conforming
/// and hanging-node meshes, with and without condensation.
#[test]
fn poisson_reproduces_quadratics() {
    // 2D: u = x^2 + y^2 + x y, -lap u = -4.
    let u2 = |x: &Point| x[0] * x[0] + x[1] * x[1] + x[0] * x[1];
    let grad2 = |x: &Point| [2.0 * x[0] + x[1], 2.0 * x[1] + x[0]];
    // 1D: u = x (1 - x) + 0.5, -u'' = 2.
    let u1 = |x: &Point| x[0] * (1.0 - x[0]) + 0.5;
    let grad1 = |x: &Point| [1.0 - 2.0 * x[0], 0.0];
    for dim in [1, 2] {
        let (load, u, grad): (f64, &dyn Fn(&Point) -> f64, &dyn Fn(&Point) -> [f64; 2]) =
            if dim == 1 { (2.0, &u1, &grad1) } else { (-4.0, &u2, &grad2) };
        let form = poisson_form(dim).unwrap().with_constant_load(&[(0, load)]);
        for mesh in poisson_meshes(dim, 2) {
            for condensed in [true, false] {
                let l = level(mesh.clone(), &form, |_, x| u(x), None, condensed);
                let (_, sol) = direct_solution(&l);
                let eu = field_l2_error(&l.mesh, &l.dofmap, &sol, &[0], |_, x| u(x)).unwrap();
                let es = field_l2_error(&l.mesh, &l.dofmap, &sol, &(1..=dim).collect::<Vec<_>>(), |c, x| grad(x)[c - 1])
                    .unwrap();
                assert!(eu < 1e-10 && es < 1e-9, "dim {dim} condensed {condensed}: {eu:e} {es:e}");
            }
        }
    }
}

#[test]
fn global_matrices_are_symmetric_positive_definite() {
    let stokes = config(ProblemTag::Stokes, 2, 1, 2).problem_spec().unwrap();
    let mut cases = Vec::new();
    for mesh in poisson_meshes(2, 2) {
        cases.push(level(mesh, &poisson_form(2).unwrap(), |_, _| 0.0, None, true));
    }
    let smesh = MeshTopology::uniform(2, stokes.domain, [2, 2], 2).unwrap().refine_cells(&[0]).unwrap();
    for condensed in [true, false] {
        cases.push(level(smesh.clone(), &stokes.form, |c, x| stokes.boundary_value(c, x), stokes.pin, condensed));
    }
    for l in cases {
        let a = &l.system.matrix;
        let maxdiag = a.diagonal().iter().cloned().fold(0.0, f64::max);
        assert!(a.asymmetry() <= 1e-12 * maxdiag, "asymmetry {:e}", a.asymmetry());
        let eig = a.to_dense().self_adjoint_eigenvalues(Side::Lower).unwrap();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 1e-10 * maxdiag, "min eigenvalue {min:e}");
    }
}

#[test]
fn stokes_velocity_error_decreases_under_refinement() {
    let spec = config(ProblemTag::Stokes, 2, 1, 2).problem_spec().unwrap();
    let mut errors = Vec::new();
    for w in [2, 4, 8] {
        let mesh = MeshTopology::uniform(2, spec.domain, [w, w], 2).unwrap();
        let l = level(mesh, &spec.form, |c, x| spec.boundary_value(c, x), spec.pin, true);
        let (_, sol) = direct_solution(&l);
        errors.push(field_l2_error(&l.mesh, &l.dofmap, &sol, &[0, 1], |c, x| spec.exact_field(c, x).unwrap()).unwrap());
    }
    assert!(errors.windows(2).all(|w| w[1] < 0.5 * w[0]), "{errors:?}");
}

#[test]
fn condensed_and_full_solutions_agree() {
    let spec = config(ProblemTag::Stokes, 2, 1, 2).problem_spec().unwrap();
    let mesh = MeshTopology::uniform(2, spec.domain, [2, 2], 2).unwrap().refine_cells(&[3]).unwrap();
    let sols: Vec<_> = [true, false]
        .into_iter()
        .map(|c| {
            let l = level(mesh.clone(), &spec.form, |c, x| spec.boundary_value(c, x), spec.pin, c);
            direct_solution(&l).1
        })
        .collect();
    assert!(rel_diff(&sols[0].traces, &sols[1].traces) < 1e-10);
    for (a, b) in sols[0].fields.iter().zip(&sols[1].fields) {
        if !a.is_empty() {
            assert!(rel_diff(a, b) < 1e-9);
        }
    }
}
