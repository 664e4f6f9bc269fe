mod common;

use common::*;
use dpgmg::assembly::Entity;
use dpgmg::formulation::{poisson_form, FormDescriptor};
use dpgmg::geometry::Point;
use dpgmg::harness::ProblemTag;
use dpgmg::krylov::{pcg, LinearOperator, PcgOptions};
use dpgmg::mesh::{build_hierarchy, MeshTopology};
use dpgmg::multigrid::{
    build_prolongation, schwarz_blocks, sigma_weight, transfer_solution, Level, RowSource, SchwarzSmoother,
    SigmaMode, SmootherOptions, VCycle,
};
use dpgmg::sparse::dot;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn poisson(dim: usize, width: usize, k: usize) -> Level {
    level(MeshTopology::unit(dim, width, k).unwrap(), &poisson_form(dim).unwrap(), |_, _| 0.0, None, true)
}

fn hierarchy_levels(fine: &MeshTopology, form: &FormDescriptor, bc: impl Fn(usize, &Point) -> f64 + Copy, pin: Option<Point>, skip: bool) -> Vec<Level> {
    build_hierarchy(fine, 1, skip)
        .unwrap()
        .levels
        .into_iter()
        .map(|m| level(m, form, bc, pin, true))
        .collect()
}

fn poisson_hierarchy() -> Vec<Level> {
    let fine = MeshTopology::unit(2, 2, 2).unwrap().refine_uniformly(1).unwrap();
    hierarchy_levels(&fine, &poisson_form(2).unwrap(), |_, _| 0.0, None, false)
}

fn stokes_hierarchy() -> Vec<Level> {
    let spec = config(ProblemTag::Stokes, 2, 2, 4).problem_spec().unwrap();
    let fine = MeshTopology::uniform(2, spec.domain, [2, 2], 2).unwrap().refine_uniformly(1).unwrap().refine_cells(&[5]).unwrap();
    build_hierarchy(&fine, 1, false)
        .unwrap()
        .levels
        .into_iter()
        .map(|m| level(m, &spec.form, |c, x| spec.boundary_value(c, x), spec.pin, true))
        .collect()
}

fn cyclic(v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| v[i % v.len()] + 1e-3 * (i as f64).sin()).collect()
}

fn apply(op: &dyn LinearOperator, r: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; op.size()];
    op.apply(r, &mut y);
    y
}

#[test]
fn one_d_two_cells_overlap_one_blocks_are_everything() {
    let l = poisson(1, 2, 2);
    let blocks = schwarz_blocks(&l.mesh, &l.dofmap, 1).unwrap();
    let all: Vec<usize> = (0..l.dofmap.n_free()).collect();
    assert_eq!(blocks.len(), 2);
    for b in blocks {
        let mut b = b;
        b.sort_unstable();
        assert_eq!(b, all);
    }
}

/// Free dofs referenced by a cell's local traces.
fn cell_dofs(l: &Level, id: usize) -> BTreeSet<usize> {
    let cd = l.dofmap.cells[id].as_ref().unwrap();
    cd.traces.iter().flatten().filter_map(|&(g, _)| l.dofmap.free_index[g]).collect()
}

#[test]
fn interior_overlap_block_is_five_cells() {
    let l = poisson(2, 4, 1);
    let blocks = schwarz_blocks(&l.mesh, &l.dofmap, 1).unwrap();
    let ids = l.mesh.active_ids();
    // Cell (1, 1) of the 4x4 grid and its four neighbors, found by geometry.
    let at = |i: usize, j: usize| {
        *ids.iter()
            .find(|&&c| {
                let g = l.mesh.cell(c).unwrap().geom;
                (g.lo[0] - i as f64 * 0.25).abs() < 1e-12 && (g.lo[1] - j as f64 * 0.25).abs() < 1e-12
            })
            .unwrap()
    };
    let centre = at(1, 1);
    let mut want = BTreeSet::new();
    for (i, j) in [(1, 1), (0, 1), (2, 1), (1, 0), (1, 2)] {
        want.extend(cell_dofs(&l, at(i, j)));
    }
    let pos = ids.iter().position(|&c| c == centre).unwrap();
    let got: BTreeSet<usize> = blocks[pos].iter().copied().collect();
    assert_eq!(got, want);
}

#[test]
fn blocks_cover_all_unknowns() {
    for l in stokes_hierarchy() {
        for overlap in [0, 1] {
            let blocks = schwarz_blocks(&l.mesh, &l.dofmap, overlap).unwrap();
            let covered: BTreeSet<usize> = blocks.iter().flatten().copied().collect();
            assert_eq!(covered.len(), l.dofmap.n_free());
        }
    }
}

#[test]
fn aggressive_sigma_is_at_least_conservative() {
    let mut meshes = Vec::new();
    for dim in [1, 2] {
        for w in [1, 2, 4, 8, 16] {
            meshes.push(MeshTopology::unit(dim, w, 1).unwrap());
        }
    }
    meshes.push(MeshTopology::unit(2, 4, 1).unwrap().refine_cells(&[0, 5]).unwrap());
    for m in meshes {
        let dim = m.dim();
        let l = level(m, &poisson_form(dim).unwrap(), |_, _| 0.0, None, true);
        for overlap in [0, 1] {
            let a = sigma_weight(&l.mesh, &l.dofmap, overlap, SigmaMode::Aggressive).unwrap();
            let c = sigma_weight(&l.mesh, &l.dofmap, overlap, SigmaMode::Conservative).unwrap();
            assert!(a >= c, "dim {dim} overlap {overlap}: {a} < {c}");
        }
    }
}

#[test]
fn exact_smoother_inverts() {
    let l = poisson(2, 4, 2);
    let a = &l.system.matrix;
    let all: Vec<usize> = (0..l.system.n()).collect();
    let s = SchwarzSmoother::new(a, vec![all], 1.0, 0).unwrap();
    let r: Vec<f64> = (0..a.nrows).map(|i| (i as f64 * 0.7).cos()).collect();
    let z = apply(&s, &r);
    assert!(residual(a, &r, &z) < 1e-12);
}

#[test]
fn single_level_vcycle_is_direct() {
    let l = poisson(2, 4, 2);
    let vc = VCycle::new(std::slice::from_ref(&l), SmootherOptions::default()).unwrap();
    let (_, rep) = pcg(&l.system.matrix, &l.system.rhs, &vc, None, PcgOptions::default()).unwrap();
    assert_eq!(rep.iterations, 1);
}

#[test]
fn p_prolongation_injects_linear_traces() {
    let form = poisson_form(2).unwrap().with_constant_load(&[]);
    let exact = |c: usize, x: &Point| if c == 0 { 1.0 + x[0] - 3.0 * x[1] } else { 0.0 };
    let fine_mesh = MeshTopology::unit(2, 2, 2).unwrap();
    let mut coarse_mesh = fine_mesh.clone();
    coarse_mesh.set_all_orders(1);
    let coarse = level(coarse_mesh, &form, exact, None, true);
    let fine = level(fine_mesh, &form, exact, None, true);
    let (_, cs) = direct_solution(&coarse);
    let t = transfer_solution(&coarse.mesh, &coarse.form, &coarse.dofmap, &cs, &fine.mesh, &fine.dofmap).unwrap();
    let mut checked = 0;
    for (g, info) in fine.dofmap.dofs.iter().enumerate() {
        if info.comp == 0 {
            assert!((t.traces[g] - exact(0, &info.position)).abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 0);
    let p = build_prolongation(&coarse, &fine).unwrap();
    assert!(p.sources.iter().all(|s| matches!(s, RowSource::Reconciled { .. })));
}

#[test]
fn h_prolongation_uses_gamma_only_strictly_inside() {
    let levels = poisson_hierarchy();
    let (c, f) = (&levels[0], &levels[1]);
    let p = build_prolongation(c, f).unwrap();
    assert_eq!(p.sources.len(), f.system.n());
    for (row, src) in p.sources.iter().enumerate() {
        let g = f.dofmap.free_dofs[row];
        // Midpoint of the supporting edge, or the vertex itself.
        let x = match f.dofmap.dofs[g].entity {
            Entity::Vertex(v) => f.mesh.lattice_to_physical(v),
            Entity::Edge(e) => {
                let end = |s: i64| {
                    let mut q = [0; 2];
                    q[e.axis] = e.fixed;
                    q[1 - e.axis] = s;
                    f.mesh.lattice_to_physical(q)
                };
                let (a, b) = (end(e.lo), end(e.hi));
                [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
            }
        };
        let owner = c.mesh.locate(&x).unwrap();
        let inside = c.mesh.cell(owner).unwrap().geom.strictly_contains(2, &x, 1e-12);
        match src {
            RowSource::Gamma { cell } => {
                assert_eq!(*cell, owner);
                assert!(inside, "gamma row at {x:?} on a coarse face");
            }
            RowSource::Reconciled { .. } => assert!(!inside, "reconciled row at {x:?} inside a coarse cell"),
        }
    }
    let gammas = p.sources.iter().filter(|s| matches!(s, RowSource::Gamma { .. })).count();
    assert!(gammas > 0);
    let json = p.to_json().unwrap();
    assert!(json.contains("\"sources\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schwarz_is_order_independent(seed in prop::collection::vec(-1.0f64..1.0, 8..32), overlap in 0usize..=1, perm_seed in any::<u64>()) {
        let l = poisson(2, 4, 1);
        let a = &l.system.matrix;
        let blocks = schwarz_blocks(&l.mesh, &l.dofmap, overlap).unwrap();
        let nb = blocks.len();
        let s = SchwarzSmoother::new(a, blocks, 0.1, overlap).unwrap();
        let r = cyclic(&seed, a.nrows);
        let natural = apply(&s, &r);
        let mut order: Vec<usize> = (0..nb).collect();
        let mut state = perm_seed | 1;
        for i in (1..nb).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let mut permuted = vec![0.0; a.nrows];
        s.apply_ordered(&order, &r, &mut permuted);
        prop_assert!(rel_diff(&natural, &permuted) <= 1e-12);
    }

    #[test]
    fn vcycle_is_symmetric_positive(u in prop::collection::vec(-1.0f64..1.0, 8..32), v in prop::collection::vec(-1.0f64..1.0, 8..32), stokes in any::<bool>()) {
        let levels = if stokes { stokes_hierarchy() } else { poisson_hierarchy() };
        let vc = VCycle::new(&levels, SmootherOptions::default()).unwrap();
        let n = vc.size();
        let (r1, r2) = (cyclic(&u, n), cyclic(&v, n));
        let (m1, m2) = (apply(&vc, &r1), apply(&vc, &r2));
        let (a, b) = (dot(&m1, &r2), dot(&r1, &m2));
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300));
        prop_assert!(dot(&m1, &r1) > 0.0);
    }
}

#[test]
fn multilevel_pcg_matches_direct() {
    for levels in [poisson_hierarchy(), stokes_hierarchy()] {
        let fine = levels.last().unwrap();
        let vc = VCycle::new(&levels, SmootherOptions::default()).unwrap();
        let (x, rep) = pcg(&fine.system.matrix, &fine.system.rhs, &vc, None, PcgOptions::default()).unwrap();
        assert!(rep.converged);
        let (xd, _) = direct_solution(fine);
        assert!(rel_diff(&x, &xd) < 1e-8);
    }
}
