//! Geometric multigrid for condensed DPG trace systems: prolongation between
//! nested levels, weighted additive Schwarz smoothing and the multiplicative
//! V-cycle.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::assembly::{assemble_global, AssemblyOptions, DofMap, Entity, GlobalSystem, Solution};
use crate::basis::Lagrange1d;
use crate::error::{Error, Result};
use crate::formulation::{FormDescriptor, TraceKind};
use crate::geometry::{Face, Point};
use crate::krylov::{DenseCholesky, LinearOperator, SparseCholesky};
use crate::mesh::{MeshTopology, Transition};
use crate::sparse::Csr;

/// Coarse problems up to this size are factored densely.
pub const DENSE_COARSE_LIMIT: usize = 1500;

/// One mesh of a hierarchy with its numbering and assembled condensed system.
#[derive(Clone, Debug)]
pub struct Level {
    pub mesh: MeshTopology,
    pub form: FormDescriptor,
    pub dofmap: DofMap,
    pub system: GlobalSystem,
}

impl Level {
    pub fn new<F>(
        mesh: MeshTopology,
        form: FormDescriptor,
        boundary: F,
        pin: Option<Point>,
        opts: &AssemblyOptions,
    ) -> Result<Self>
    where
        F: Fn(usize, &Point) -> f64,
    {
        let dofmap = DofMap::new(&mesh, &form, boundary, pin)?;
        Self::from_dofmap(mesh, form, dofmap, opts)
    }

    /// Level over an existing numbering (e.g. one with modified boundary data).
    pub fn from_dofmap(mesh: MeshTopology, form: FormDescriptor, dofmap: DofMap, opts: &AssemblyOptions) -> Result<Self> {
        let system = assemble_global(&mesh, &form, &dofmap, opts)?;
        Ok(Level {
            mesh,
            form,
            dofmap,
            system,
        })
    }
}

/// Where the value of a fine trace unknown comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RowSource {
    /// Coarse trace of `cell` on `face`, evaluated at face parameter `t`.
    Reconciled { cell: usize, face: usize, t: f64 },
    /// Trace of the coarse fields of `cell`, which strictly contains the
    /// unknown.
    Gamma { cell: usize },
}

#[derive(Clone, Debug)]
pub struct Prolongation {
    /// Fine free unknowns x coarse free unknowns.
    pub matrix: Csr,
    /// One per fine free unknown.
    pub sources: Vec<RowSource>,
}

#[derive(Serialize)]
struct ProlongationDump<'a> {
    nrows: usize,
    ncols: usize,
    indptr: &'a [usize],
    indices: &'a [usize],
    data: &'a [f64],
    sources: &'a [RowSource],
}

impl Prolongation {
    pub fn to_json(&self) -> Result<String> {
        let d = ProlongationDump {
            nrows: self.matrix.nrows,
            ncols: self.matrix.ncols,
            indptr: &self.matrix.indptr,
            indices: &self.matrix.indices,
            data: &self.matrix.data,
            sources: &self.sources,
        };
        Ok(serde_json::to_string(&d)?)
    }
}

/// Fine cells whose local traces reference each fine global unknown.
fn referencing_cells(dofmap: &DofMap) -> Vec<Vec<usize>> {
    let mut refs = vec![Vec::new(); dofmap.n_dofs()];
    for id in dofmap.active_cells() {
        for row in &dofmap.cells[id].as_ref().expect("active").traces {
            for &(g, _) in row {
                if refs[g].last() != Some(&id) {
                    refs[g].push(id);
                }
            }
        }
    }
    refs
}

/// Face of the lattice box `b` containing the entity, and the face
/// parameter of a point with tangent lattice coordinate `s`.
fn face_on_box(dim: usize, entity: &Entity, s: f64, b: &[[i64; 2]; 2]) -> Option<(Face, f64)> {
    let param = |face: Face| {
        if dim == 1 {
            0.0
        } else {
            let t = face.tangent_axis();
            2.0 * (s - b[t][0] as f64) / (b[t][1] - b[t][0]) as f64 - 1.0
        }
    };
    match entity {
        Entity::Edge(e) => {
            let ta = 1 - e.axis;
            if e.lo < b[ta][0] || e.hi > b[ta][1] {
                return None;
            }
            let side = if e.fixed == b[e.axis][0] {
                0
            } else if e.fixed == b[e.axis][1] {
                1
            } else {
                return None;
            };
            let face = Face { axis: e.axis, side };
            Some((face, param(face)))
        }
        Entity::Vertex(p) => {
            for face in Face::all(dim) {
                if p[face.axis] != b[face.axis][face.side] {
                    continue;
                }
                if dim == 2 {
                    let t = face.tangent_axis();
                    if p[t] < b[t][0] || p[t] > b[t][1] {
                        continue;
                    }
                }
                return Some((face, param(face)));
            }
            None
        }
    }
}

/// Tangent lattice coordinate of a trace node.
fn tangent_coordinate(entity: &Entity, param: f64) -> f64 {
    match entity {
        Entity::Edge(e) => e.lo as f64 + 0.5 * (param + 1.0) * (e.hi - e.lo) as f64,
        Entity::Vertex(p) => p[1] as f64,
    }
}

/// Provenance of the given fine unknowns with respect to a coarser mesh.
fn row_sources(coarse: &MeshTopology, fine: &MeshTopology, fine_dm: &DofMap, dofs: &[usize]) -> Result<Vec<RowSource>> {
    let dim = fine.dim();
    let refs = referencing_cells(fine_dm);
    let mut out = Vec::with_capacity(dofs.len());
    for &g in dofs {
        let info = &fine_dm.dofs[g];
        let mut ancestors = Vec::new();
        for &f in &refs[g] {
            let c = coarse
                .active_ancestor(f)
                .ok_or_else(|| Error::NonNested(format!("fine cell {f} has no active coarse ancestor")))?;
            if !ancestors.contains(&c) {
                ancestors.push(c);
            }
        }
        if ancestors.is_empty() {
            return Err(Error::Constraint(format!("fine unknown {g} is not referenced by any cell")));
        }
        let mut source = None;
        for &c in &ancestors {
            if info.entity.strictly_inside(dim, &coarse.int_box(c)) {
                source = Some(RowSource::Gamma { cell: c });
                break;
            }
        }
        if source.is_none() {
            let s = tangent_coordinate(&info.entity, info.param);
            // vertex tangent coordinate depends on the face axis
            for &c in &ancestors {
                let b = coarse.int_box(c);
                let found = match info.entity {
                    Entity::Vertex(p) => face_on_box(dim, &info.entity, 0.0, &b).map(|(face, _)| {
                        let t = if dim == 1 {
                            0.0
                        } else {
                            let ta = face.tangent_axis();
                            2.0 * (p[ta] - b[ta][0]) as f64 / (b[ta][1] - b[ta][0]) as f64 - 1.0
                        };
                        (face, t)
                    }),
                    Entity::Edge(_) => face_on_box(dim, &info.entity, s, &b),
                };
                if let Some((face, t)) = found {
                    source = Some(RowSource::Reconciled {
                        cell: c,
                        face: face.index(),
                        t,
                    });
                    break;
                }
            }
        }
        out.push(source.ok_or_else(|| Error::NonNested(format!("fine unknown {g} has no coarse source")))?);
    }
    Ok(out)
}

/// Tensor Lagrange values of order `order` at reference point `xi`.
fn field_values(dim: usize, order: usize, xi: &Point) -> Vec<f64> {
    let line = Lagrange1d::new(order);
    let vx = line.values(xi[0]);
    if dim == 1 {
        return vx;
    }
    let vy = line.values(xi[1]);
    let mut out = Vec::with_capacity(vx.len() * vy.len());
    for b in &vy {
        for a in &vx {
            out.push(a * b);
        }
    }
    out
}

/// Weights of the full field vector of a coarse cell giving the trace
/// component `comp` at `x` across a face of normal `axis`.
fn gamma_field_weights(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    cell: usize,
    comp: usize,
    axis: Option<usize>,
    x: &Point,
) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    let c = mesh.cell(cell)?;
    let phi = field_values(dim, c.order, &c.geom.to_reference(dim, x));
    let nf = phi.len();
    let mut w = vec![0.0; form.n_field_comps() * nf];
    for term in form.gamma_of(comp) {
        if let Some(j) = term.normal {
            match axis {
                Some(a) if a == j => {}
                Some(_) => continue,
                None => {
                    return Err(Error::Constraint(format!(
                        "normal trace component {comp} at a vertex"
                    )))
                }
            }
        }
        for (n, p) in phi.iter().enumerate() {
            w[term.field * nf + n] += term.coef * p;
        }
    }
    Ok(w)
}

fn normal_axis(dim: usize, entity: &Entity) -> Option<usize> {
    match entity {
        Entity::Edge(e) => Some(e.axis),
        Entity::Vertex(_) if dim == 1 => Some(0),
        Entity::Vertex(_) => None,
    }
}

/// Prolongation from `coarse` to `fine` (nested: every fine cell has an
/// active coarse ancestor).
pub fn build_prolongation(coarse: &Level, fine: &Level) -> Result<Prolongation> {
    if !coarse.system.condensed {
        return Err(Error::InvalidHierarchy("coarse level must be condensed".into()));
    }
    let dim = fine.mesh.dim();
    let sources = row_sources(&coarse.mesh, &fine.mesh, &fine.dofmap, &fine.dofmap.free_dofs)?;
    let cdm = &coarse.dofmap;
    let mut rows = Vec::with_capacity(sources.len());
    for (&g, src) in fine.dofmap.free_dofs.iter().zip(&sources) {
        let info = &fine.dofmap.dofs[g];
        let globals = match *src {
            RowSource::Reconciled { cell, face, t } => cdm.face_trace_weights(cell, face, info.comp, t)?,
            RowSource::Gamma { cell } => {
                let fw = gamma_field_weights(
                    &coarse.mesh,
                    &coarse.form,
                    cell,
                    info.comp,
                    normal_axis(dim, &info.entity),
                    &info.position,
                )?;
                let cond = &coarse.system.cell(cell)?.condensed;
                let n_tr = cond.trace_idx.len();
                let mut tw = vec![0.0; n_tr];
                for (i, &fi) in cond.field_idx.iter().enumerate() {
                    let a = fw[fi];
                    if a == 0.0 {
                        continue;
                    }
                    for (j, t) in tw.iter_mut().enumerate() {
                        *t += a * cond.recovery[(i, j)];
                    }
                }
                let mut acc = Vec::new();
                for (j, &w) in tw.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for &(cg, cw) in &cdm.cells[cell].as_ref().expect("active").traces[j] {
                        acc.push((cg, w * cw));
                    }
                }
                acc
            }
        };
        let row: Vec<(usize, f64)> = globals
            .into_iter()
            .filter_map(|(cg, w)| cdm.free_index[cg].map(|f| (f, w)))
            .filter(|e| e.1.abs() > 1e-15)
            .collect();
        rows.push(row);
    }
    Ok(Prolongation {
        matrix: Csr::from_rows(cdm.n_free(), rows),
        sources,
    })
}

/// Interpolates a coarse solution onto a finer nested mesh: fine fields by
/// nodal interpolation, fine traces by the same provenance rules as the
/// prolongation but with the actual coarse fields (load part included).
pub fn transfer_solution(
    coarse_mesh: &MeshTopology,
    coarse_form: &FormDescriptor,
    coarse_dm: &DofMap,
    coarse: &Solution,
    fine_mesh: &MeshTopology,
    fine_dm: &DofMap,
) -> Result<Solution> {
    let dim = fine_mesh.dim();
    let all: Vec<usize> = (0..fine_dm.n_dofs()).collect();
    let sources = row_sources(coarse_mesh, fine_mesh, fine_dm, &all)?;
    let mut traces = vec![0.0; fine_dm.n_dofs()];
    for (g, src) in sources.iter().enumerate() {
        let info = &fine_dm.dofs[g];
        traces[g] = match *src {
            RowSource::Reconciled { cell, face, t } => coarse_dm
                .face_trace_weights(cell, face, info.comp, t)?
                .iter()
                .map(|&(cg, w)| w * coarse.traces[cg])
                .sum(),
            RowSource::Gamma { cell } => {
                let fw = gamma_field_weights(
                    coarse_mesh,
                    coarse_form,
                    cell,
                    info.comp,
                    normal_axis(dim, &info.entity),
                    &info.position,
                )?;
                fw.iter().zip(&coarse.fields[cell]).map(|(a, b)| a * b).sum()
            }
        };
    }
    let n_fc = coarse_form.n_field_comps();
    let mut fields = vec![Vec::new(); fine_mesh.arena_len()];
    for id in fine_dm.active_cells() {
        let c = coarse_mesh
            .active_ancestor(id)
            .ok_or_else(|| Error::NonNested(format!("fine cell {id} has no active coarse ancestor")))?;
        let cc = coarse_mesh.cell(c)?;
        let fc = fine_mesh.cell(id)?;
        let line = Lagrange1d::new(fc.order);
        let n1 = line.len();
        let nf = n1.pow(dim as u32);
        let ncf = (cc.order + 1).pow(dim as u32);
        let mut v = vec![0.0; n_fc * nf];
        for n in 0..nf {
            let xi = [line.nodes()[n % n1], if dim == 1 { 0.0 } else { line.nodes()[n / n1] }];
            let x = fc.geom.to_physical(dim, &xi);
            let phi = field_values(dim, cc.order, &cc.geom.to_reference(dim, &x));
            for f in 0..n_fc {
                v[f * nf + n] = phi
                    .iter()
                    .zip(&coarse.fields[c][f * ncf..(f + 1) * ncf])
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        fields[id] = v;
    }
    Ok(Solution { traces, fields })
}

/// Cells forming the Schwarz domain of `id`.
fn domain_cells(mesh: &MeshTopology, id: usize, overlap: usize) -> Result<Vec<usize>> {
    let mut cells = vec![id];
    if overlap >= 1 {
        cells.extend(mesh.face_neighbors(id)?);
    }
    cells.sort_unstable();
    cells.dedup();
    Ok(cells)
}

fn cell_free_dofs(dofmap: &DofMap, id: usize) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    for row in &dofmap.cell(id)?.traces {
        for &(g, _) in row {
            if let Some(f) = dofmap.free_index[g] {
                set.insert(f);
            }
        }
    }
    Ok(set)
}

/// One block of free unknowns per active cell: the unknowns seen by the
/// cell (overlap 0) or by the cell and its face neighbors (overlap 1).
pub fn schwarz_blocks(mesh: &MeshTopology, dofmap: &DofMap, overlap: usize) -> Result<Vec<Vec<usize>>> {
    if overlap > 1 {
        return Err(Error::InvalidParameter(format!("overlap {overlap} not supported")));
    }
    let per_cell: Vec<(usize, BTreeSet<usize>)> = dofmap
        .active_cells()
        .map(|id| Ok((id, cell_free_dofs(dofmap, id)?)))
        .collect::<Result<_>>()?;
    let mut index = vec![usize::MAX; mesh.arena_len()];
    for (i, (id, _)) in per_cell.iter().enumerate() {
        index[*id] = i;
    }
    let mut blocks = Vec::with_capacity(per_cell.len());
    for (id, _) in &per_cell {
        let mut set = BTreeSet::new();
        for c in domain_cells(mesh, *id, overlap)? {
            set.extend(per_cell[index[c]].1.iter().copied());
        }
        blocks.push(set.into_iter().collect());
    }
    Ok(blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    Aggressive,
    Conservative,
}

/// Schwarz weight of a mesh. Aggressive: `1 / (N + 1)` with `N` the largest
/// number of distinct cells in a domain together with their face neighbors.
/// Conservative: `1 / (N_max + 2)` with `N_max` the largest number of blocks
/// sharing one unknown.
pub fn sigma_weight(mesh: &MeshTopology, dofmap: &DofMap, overlap: usize, mode: SigmaMode) -> Result<f64> {
    match mode {
        SigmaMode::Aggressive => {
            let mut n_max = 0;
            for id in mesh.active_ids() {
                let mut set = BTreeSet::new();
                for c in domain_cells(mesh, id, overlap)? {
                    set.insert(c);
                    set.extend(mesh.face_neighbors(c)?);
                }
                n_max = n_max.max(set.len());
            }
            Ok(1.0 / (n_max as f64 + 1.0))
        }
        SigmaMode::Conservative => {
            let blocks = schwarz_blocks(mesh, dofmap, overlap)?;
            let mut count = vec![0usize; dofmap.n_free()];
            for b in &blocks {
                for &d in b {
                    count[d] += 1;
                }
            }
            let n_max = count.into_iter().max().unwrap_or(0);
            Ok(1.0 / (n_max as f64 + 2.0))
        }
    }
}

/// Weighted additive Schwarz operator `sigma * sum_i R_i^T A_i^-1 R_i`.
pub struct SchwarzSmoother {
    pub blocks: Vec<Vec<usize>>,
    factors: Vec<DenseCholesky>,
    pub sigma: f64,
    pub overlap: usize,
    n: usize,
}

impl SchwarzSmoother {
    pub fn new(a: &Csr, blocks: Vec<Vec<usize>>, sigma: f64, overlap: usize) -> Result<Self> {
        let mut marker = vec![usize::MAX; a.ncols];
        let blocks: Vec<Vec<usize>> = blocks.into_iter().filter(|b| !b.is_empty()).collect();
        let factors = blocks
            .iter()
            .map(|b| DenseCholesky::new(&a.principal_block(b, &mut marker)))
            .collect::<Result<_>>()?;
        Ok(SchwarzSmoother {
            blocks,
            factors,
            sigma,
            overlap,
            n: a.nrows,
        })
    }

    /// Applies the blocks in the given order (the result does not depend on
    /// it up to roundoff).
    pub fn apply_ordered(&self, order: &[usize], r: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = Vec::new();
        for &i in order {
            let b = &self.blocks[i];
            buf.clear();
            buf.extend(b.iter().map(|&d| r[d]));
            self.factors[i].solve_in_place(&mut buf);
            for (&d, v) in b.iter().zip(&buf) {
                y[d] += self.sigma * v;
            }
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.blocks)?)
    }
}

impl LinearOperator for SchwarzSmoother {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &[f64], y: &mut [f64]) {
        let order: Vec<usize> = (0..self.blocks.len()).collect();
        self.apply_ordered(&order, r, y)
    }
}

pub enum CoarseSolver {
    Dense(DenseCholesky),
    Sparse(SparseCholesky),
}

impl CoarseSolver {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.nrows <= DENSE_COARSE_LIMIT {
            Ok(CoarseSolver::Dense(DenseCholesky::new(&a.to_dense())?))
        } else {
            Ok(CoarseSolver::Sparse(SparseCholesky::new(a)?))
        }
    }

    pub fn apply(&self, r: &[f64], y: &mut [f64]) {
        match self {
            CoarseSolver::Dense(f) => f.apply(r, y),
            CoarseSolver::Sparse(f) => f.apply(r, y),
        }
    }
}

/// One smoothed level of a V-cycle.
pub struct MgLevel {
    pub a: Csr,
    pub smoother: SchwarzSmoother,
    /// From the next coarser level to this one.
    pub p: Csr,
    pub pt: Csr,
    pub transition: Transition,
}

/// Multiplicative V-cycle with Galerkin coarse operators.
pub struct VCycle {
    /// Ordered from the first level above the coarsest to the finest.
    pub levels: Vec<MgLevel>,
    pub coarse: CoarseSolver,
    pub coarse_size: usize,
}

/// Per-level smoother choices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmootherOptions {
    pub overlap_h: usize,
    pub overlap_p: usize,
    pub sigma_mode: SigmaMode,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        SmootherOptions {
            overlap_h: 1,
            overlap_p: 0,
            sigma_mode: SigmaMode::Aggressive,
        }
    }
}

impl VCycle {
    /// Builds the V-cycle for `levels` (coarsest first). The finest
    /// level's matrix is the operator; coarser operators are `P^T A P`.
    pub fn new(levels: &[Level], opts: SmootherOptions) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidHierarchy("no levels".into()));
        }
        let top = levels.len() - 1;
        let mut a = levels[top].system.matrix.clone();
        let mut mg = Vec::with_capacity(top);
        for l in (1..=top).rev() {
            let fine = &levels[l];
            let coarse = &levels[l - 1];
            let transition = if coarse.mesh.same_geometry(&fine.mesh) {
                Transition::P
            } else {
                Transition::H
            };
            let overlap = match transition {
                Transition::H => opts.overlap_h,
                Transition::P => opts.overlap_p,
            };
            let blocks = schwarz_blocks(&fine.mesh, &fine.dofmap, overlap)?;
            let sigma = sigma_weight(&fine.mesh, &fine.dofmap, overlap, opts.sigma_mode)?;
            let smoother = SchwarzSmoother::new(&a, blocks, sigma, overlap)?;
            let p = build_prolongation(coarse, fine)?.matrix;
            let pt = p.transpose();
            let ac = pt.matmul(&a.matmul(&p));
            mg.push(MgLevel {
                a,
                smoother,
                p,
                pt,
                transition,
            });
            a = ac;
        }
        mg.reverse();
        let coarse = CoarseSolver::new(&a)?;
        Ok(VCycle {
            levels: mg,
            coarse,
            coarse_size: a.nrows,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn cycle(&self, l: usize, r: &[f64], x: &mut [f64]) {
        if l == 0 {
            self.coarse.apply(r, x);
            return;
        }
        let lv = &self.levels[l - 1];
        let n = r.len();
        let mut t = vec![0.0; n];
        // pre-smoothing
        lv.smoother.apply(r, x);
        lv.a.mul_vec_into(x, &mut t);
        for i in 0..n {
            t[i] = r[i] - t[i];
        }
        // coarse correction
        let rc = lv.pt.mul_vec(&t);
        let mut xc = vec![0.0; rc.len()];
        self.cycle(l - 1, &rc, &mut xc);
        let corr = lv.p.mul_vec(&xc);
        for i in 0..n {
            x[i] += corr[i];
        }
        // post-smoothing
        lv.a.mul_vec_into(x, &mut t);
        for i in 0..n {
            t[i] = r[i] - t[i];
        }
        let mut s = vec![0.0; n];
        lv.smoother.apply(&t, &mut s);
        for i in 0..n {
            x[i] += s[i];
        }
    }
}

impl LinearOperator for VCycle {
    fn size(&self) -> usize {
        match self.levels.last() {
            Some(l) => l.a.nrows,
            None => self.coarse_size,
        }
    }

    fn apply(&self, r: &[f64], y: &mut [f64]) {
        self.cycle(self.levels.len(), r, y)
    }
}

/// True if every trace component of the form is of the given kind.
pub fn all_traces(form: &FormDescriptor, kind: TraceKind) -> bool {
    (0..form.n_trace_comps()).all(|c| form.trace_kind(c) == kind)
}
