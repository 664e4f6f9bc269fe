//! Global scatter of element systems, solution recovery and error
//! indicators.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::formulation::FormDescriptor;
use crate::mesh::MeshTopology;
use crate::sparse::Csr;

use super::dofmap::DofMap;
use super::local::{condense, local_system, CellLayout, Condensed, LocalSystem};

/// Per-cell data kept after assembly.
#[derive(Clone, Debug)]
pub struct CellSystem {
    /// Kept for constant-coefficient forms (shared between congruent cells)
    /// or on request.
    pub local: Option<Arc<LocalSystem>>,
    pub condensed: Arc<Condensed>,
}

#[derive(Clone, Debug)]
pub struct AssemblyOptions<'a> {
    pub delta_k: usize,
    /// Assemble the trace Schur complement (true) or the full system.
    pub condensed: bool,
    /// Background trial solution subtracted from the load (Newton increments).
    pub shift: Option<&'a Solution>,
    /// Keep every local system even when it cannot be shared.
    pub retain_local: bool,
}

impl AssemblyOptions<'_> {
    pub fn new(delta_k: usize) -> Self {
        AssemblyOptions {
            delta_k,
            condensed: true,
            shift: None,
            retain_local: false,
        }
    }
}

/// Assembled global matrix and right-hand side on free unknowns.
#[derive(Clone, Debug)]
pub struct GlobalSystem {
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    pub condensed: bool,
    /// Indexed by arena cell id.
    pub cells: Vec<Option<CellSystem>>,
    /// Uncondensed systems only: first global index of each cell's fields.
    pub field_offsets: Vec<Option<usize>>,
    pub delta_k: usize,
}

/// Trace values (all global unknowns, fixed ones included) and per-cell
/// field coefficients (full layout, pinned entry zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub traces: Vec<f64>,
    /// Indexed by arena cell id; empty for inactive cells.
    pub fields: Vec<Vec<f64>>,
}

impl Solution {
    pub fn zeros(mesh: &MeshTopology, dofmap: &DofMap) -> Self {
        let mut fields = vec![Vec::new(); mesh.arena_len()];
        for id in dofmap.active_cells() {
            fields[id] = vec![0.0; dofmap.cells[id].as_ref().expect("active").layout.n_fields];
        }
        Solution {
            traces: vec![0.0; dofmap.n_dofs()],
            fields,
        }
    }

    /// Local trial vector (fields then traces) of cell `id`.
    pub fn local(&self, dofmap: &DofMap, id: usize) -> Result<Vec<f64>> {
        let mut x = self.fields[id].clone();
        x.extend(dofmap.gather(id, &self.traces)?);
        Ok(x)
    }

    pub fn axpy(&mut self, a: f64, other: &Solution) {
        for (x, y) in self.traces.iter_mut().zip(&other.traces) {
            *x += a * y;
        }
        for (fx, fy) in self.fields.iter_mut().zip(&other.fields) {
            for (x, y) in fx.iter_mut().zip(fy) {
                *x += a * y;
            }
        }
    }
}

type CacheKey = (u64, u64, usize, Vec<usize>, Option<usize>);

fn field_and_trace_indices(layout: &CellLayout, pin: Option<usize>) -> (Vec<usize>, Vec<usize>) {
    let fields = (0..layout.n_fields).filter(|&i| Some(i) != pin).collect();
    (fields, layout.trace_indices())
}

/// Computes (or fetches from the cache) the local and condensed systems of
/// every active cell.
fn cell_systems(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    dofmap: &DofMap,
    opts: &AssemblyOptions,
) -> Result<Vec<Option<CellSystem>>> {
    let cacheable = !form.needs_background() && opts.shift.is_none();
    let mut cache: HashMap<CacheKey, CellSystem> = HashMap::new();
    let mut out = vec![None; mesh.arena_len()];
    for id in dofmap.active_cells() {
        let layout = dofmap.layout(id)?;
        let geom = mesh.cell(id)?.geom;
        let pin = dofmap.pinned_field(id);
        let key: CacheKey = (
            geom.width(0).to_bits(),
            geom.width(1).to_bits(),
            layout.order,
            layout.face_orders.clone(),
            pin,
        );
        if cacheable {
            if let Some(cs) = cache.get(&key) {
                out[id] = Some(cs.clone());
                continue;
            }
        }
        let shift = match opts.shift {
            Some(s) => Some(s.local(dofmap, id)?),
            None => None,
        };
        let ls = local_system(&geom, id, layout, form, opts.delta_k, shift.as_deref())?;
        let (fi, ti) = field_and_trace_indices(layout, pin);
        let cond = Arc::new(condense(&ls.k, &ls.f, &fi, &ti)?);
        let keep = cacheable || opts.retain_local || !opts.condensed;
        let cs = CellSystem {
            local: keep.then(|| Arc::new(ls)),
            condensed: cond,
        };
        if cacheable {
            cache.insert(key, cs.clone());
        }
        out[id] = Some(cs);
    }
    Ok(out)
}

/// Free-unknown map of a cell: sorted free indices `u`, dense expansion `t`
/// (local traces x |u|) and the local trace values of the fixed data.
struct CellMap {
    u: Vec<usize>,
    t: Mat<f64>,
    fixed: Vec<f64>,
}

fn cell_map(dofmap: &DofMap, id: usize, fixed_values: &[f64]) -> Result<CellMap> {
    let rows = &dofmap.cell(id)?.traces;
    let mut set = BTreeSet::new();
    for row in rows {
        for &(g, _) in row {
            if let Some(f) = dofmap.free_index[g] {
                set.insert(f);
            }
        }
    }
    let u: Vec<usize> = set.into_iter().collect();
    let mut t = Mat::<f64>::zeros(rows.len(), u.len());
    let mut fixed = vec![0.0; rows.len()];
    for (i, row) in rows.iter().enumerate() {
        for &(g, w) in row {
            match dofmap.free_index[g] {
                Some(f) => {
                    let c = u.binary_search(&f).expect("collected above");
                    t[(i, c)] += w;
                }
                None => fixed[i] += w * fixed_values[g],
            }
        }
    }
    Ok(CellMap { u, t, fixed })
}

/// Assembles the global system on the free unknowns of `dofmap`.
pub fn assemble_global(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    dofmap: &DofMap,
    opts: &AssemblyOptions,
) -> Result<GlobalSystem> {
    let cells = cell_systems(mesh, form, dofmap, opts)?;
    if opts.condensed {
        assemble_condensed(dofmap, cells, opts.delta_k)
    } else {
        assemble_full(dofmap, cells, opts.delta_k)
    }
}

fn assemble_condensed(dofmap: &DofMap, cells: Vec<Option<CellSystem>>, delta_k: usize) -> Result<GlobalSystem> {
    let n = dofmap.n_free();
    let ids: Vec<usize> = dofmap.active_cells().collect();
    let maps: Vec<CellMap> = ids
        .iter()
        .map(|&id| cell_map(dofmap, id, &dofmap.fixed_values))
        .collect::<Result<_>>()?;
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for m in &maps {
        for &r in &m.u {
            pattern[r].extend_from_slice(&m.u);
        }
    }
    for row in pattern.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    let mut matrix = Csr::from_pattern(n, pattern);
    let mut rhs = vec![0.0; n];
    for (&id, m) in ids.iter().zip(&maps) {
        let c = &cells[id].as_ref().expect("active").condensed;
        scatter(&mut matrix, &mut rhs, &c.s, &c.g, m)?;
    }
    Ok(GlobalSystem {
        matrix,
        rhs,
        condensed: true,
        cells,
        field_offsets: Vec::new(),
        delta_k,
    })
}

fn scatter(matrix: &mut Csr, rhs: &mut [f64], s: &Mat<f64>, g: &[f64], m: &CellMap) -> Result<()> {
    let st = s * &m.t;
    let me = m.t.transpose() * &st;
    let nl = m.fixed.len();
    for (a, &ra) in m.u.iter().enumerate() {
        let (start, end) = (matrix.indptr[ra], matrix.indptr[ra + 1]);
        let cols = &matrix.indices[start..end];
        let mut p = 0;
        for (b, &cb) in m.u.iter().enumerate() {
            // columns of u are sorted, so advance monotonically
            while cols[p] != cb {
                p += 1;
                if p == cols.len() {
                    return Err(Error::Constraint(format!("entry ({ra}, {cb}) outside pattern")));
                }
            }
            matrix.data[start + p] += me[(a, b)];
        }
        let mut r = 0.0;
        for i in 0..nl {
            let mut sx = 0.0;
            for j in 0..nl {
                sx += s[(i, j)] * m.fixed[j];
            }
            r += m.t[(i, a)] * (g[i] - sx);
        }
        rhs[ra] += r;
    }
    Ok(())
}

fn assemble_full(dofmap: &DofMap, cells: Vec<Option<CellSystem>>, delta_k: usize) -> Result<GlobalSystem> {
    let nt = dofmap.n_free();
    let mut field_offsets = vec![None; cells.len()];
    let mut next = nt;
    for id in dofmap.active_cells() {
        field_offsets[id] = Some(next);
        next += cells[id].as_ref().expect("active").condensed.field_idx.len();
    }
    let n = next;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    for id in dofmap.active_cells() {
        let cs = cells[id].as_ref().expect("active");
        let ls = cs.local.as_ref().expect("full assembly keeps local systems");
        let c = &cs.condensed;
        let m = cell_map(dofmap, id, &dofmap.fixed_values)?;
        let nf = c.field_idx.len();
        let off = field_offsets[id].expect("active");
        // local unknown -> list of (global, weight); fixed parts enter rhs
        let mut map: Vec<Vec<(usize, f64)>> = (0..nf).map(|i| vec![(off + i, 1.0)]).collect();
        for i in 0..m.fixed.len() {
            map.push((0..m.u.len()).filter(|&b| m.t[(i, b)] != 0.0).map(|b| (m.u[b], m.t[(i, b)])).collect());
        }
        let mut local_idx = c.field_idx.clone();
        local_idx.extend(&c.trace_idx);
        let fixed_local: Vec<f64> = std::iter::repeat_n(0.0, nf).chain(m.fixed.iter().copied()).collect();
        for (a, &la) in local_idx.iter().enumerate() {
            let mut kx = 0.0;
            for (b, &lb) in local_idx.iter().enumerate() {
                kx += ls.k[(la, lb)] * fixed_local[b];
            }
            let ra = ls.f[la] - kx;
            for &(ga, wa) in &map[a] {
                rhs[ga] += wa * ra;
                for (b, &lb) in local_idx.iter().enumerate() {
                    let kab = ls.k[(la, lb)];
                    for &(gb, wb) in &map[b] {
                        rows[ga].push((gb, wa * kab * wb));
                    }
                }
            }
        }
    }
    Ok(GlobalSystem {
        matrix: Csr::from_rows(n, rows),
        rhs,
        condensed: false,
        cells,
        field_offsets,
        delta_k,
    })
}

impl GlobalSystem {
    pub fn n(&self) -> usize {
        self.rhs.len()
    }

    pub fn cell(&self, id: usize) -> Result<&CellSystem> {
        self.cells.get(id).and_then(|c| c.as_ref()).ok_or(Error::InactiveCell(id))
    }

    /// Builds the full solution from the solution vector of this system.
    pub fn solution(&self, dofmap: &DofMap, x: &[f64]) -> Result<Solution> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        let traces = dofmap.expand_free(&x[..dofmap.n_free()]);
        let mut fields = vec![Vec::new(); self.cells.len()];
        for id in dofmap.active_cells() {
            let c = &self.cell(id)?.condensed;
            let n_fields = dofmap.layout(id)?.n_fields;
            let reduced = if self.condensed {
                c.recover_fields(&dofmap.gather(id, &traces)?)?
            } else {
                let off = self.field_offsets[id].expect("active");
                x[off..off + c.field_idx.len()].to_vec()
            };
            let mut full = vec![0.0; n_fields];
            for (&i, v) in c.field_idx.iter().zip(reduced) {
                full[i] = v;
            }
            fields[id] = full;
        }
        Ok(Solution { traces, fields })
    }

    pub fn write_matrix_market(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.matrix.write_matrix_market(std::io::BufWriter::new(f))
    }
}

/// Local systems of every active cell, recomputed where they were not kept.
fn local_of(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    dofmap: &DofMap,
    sys: &GlobalSystem,
    shift: Option<&Solution>,
    id: usize,
) -> Result<Arc<LocalSystem>> {
    if let Some(ls) = &sys.cell(id)?.local {
        return Ok(ls.clone());
    }
    let shift = match shift {
        Some(s) => Some(s.local(dofmap, id)?),
        None => None,
    };
    let geom = mesh.cell(id)?.geom;
    Ok(Arc::new(local_system(&geom, id, dofmap.layout(id)?, form, sys.delta_k, shift.as_deref())?))
}

/// Per-cell energy errors `(id, eta_e)` of `x` (a solution of the system as
/// assembled, i.e. an increment when a shift was used).
pub fn energy_errors(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    dofmap: &DofMap,
    sys: &GlobalSystem,
    x: &Solution,
    shift: Option<&Solution>,
) -> Result<Vec<(usize, f64)>> {
    dofmap
        .active_cells()
        .map(|id| {
            let ls = local_of(mesh, form, dofmap, sys, shift, id)?;
            Ok((id, super::local::energy_error(&ls, &x.local(dofmap, id)?)))
        })
        .collect()
}

/// `||B x||` summed over cells, the energy norm of a trial solution.
pub fn energy_norm(
    mesh: &MeshTopology,
    form: &FormDescriptor,
    dofmap: &DofMap,
    sys: &GlobalSystem,
    x: &Solution,
) -> Result<f64> {
    let mut s = 0.0;
    for id in dofmap.active_cells() {
        let ls = local_of(mesh, form, dofmap, sys, None, id)?;
        s += super::local::operator_norm(&ls, &x.local(dofmap, id)?).powi(2);
    }
    Ok(s.sqrt())
}

/// L2 error of the given field components against `exact`, using a Gauss
/// rule with `order + 3` points per axis on each cell.
pub fn field_l2_error<F>(mesh: &MeshTopology, dofmap: &DofMap, sol: &Solution, comps: &[usize], exact: F) -> Result<f64>
where
    F: Fn(usize, &crate::geometry::Point) -> f64,
{
    let dim = mesh.dim();
    let mut total = 0.0;
    for id in dofmap.active_cells() {
        let cell = mesh.cell(id)?;
        let line = crate::basis::Lagrange1d::new(cell.order);
        let n1 = line.len();
        let nf = n1.pow(dim as u32);
        let (gp, gw) = crate::basis::quadrature::gauss_legendre(cell.order + 3);
        let jac = cell.geom.measure(dim) / (1u32 << dim) as f64;
        let ny = if dim == 1 { 1 } else { gp.len() };
        for qy in 0..ny {
            for (qx, wx) in gw.iter().enumerate() {
                let xi = [gp[qx], if dim == 1 { 0.0 } else { gp[qy] }];
                let w = wx * if dim == 1 { 1.0 } else { gw[qy] } * jac;
                let vx = line.values(xi[0]);
                let vy = if dim == 1 { vec![1.0] } else { line.values(xi[1]) };
                let x = cell.geom.to_physical(dim, &xi);
                for &c in comps {
                    let coefs = &sol.fields[id][c * nf..(c + 1) * nf];
                    let mut u = 0.0;
                    for (jy, by) in vy.iter().enumerate() {
                        for (jx, bx) in vx.iter().enumerate() {
                            u += coefs[jy * n1 + jx] * bx * by;
                        }
                    }
                    total += w * (u - exact(c, &x)).powi(2);
                }
            }
        }
    }
    Ok(total.sqrt())
}

pub fn total_error(errors: &[(usize, f64)]) -> f64 {
    errors.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::poisson_form;

    #[test]
    fn single_cell_global_equals_local() {
        let mesh = MeshTopology::unit(1, 1, 1).unwrap();
        let form = poisson_form(1).unwrap();
        let dm = DofMap::new(&mesh, &form, |_, _| 0.0, None).unwrap();
        let sys = assemble_global(&mesh, &form, &dm, &AssemblyOptions::new(1)).unwrap();
        let c = &sys.cell(0).unwrap().condensed;
        // free: the two flux unknowns; local trace order is [u_L, s_L, u_R, s_R]
        assert_eq!(sys.n(), 2);
        assert!((sys.matrix.get(0, 0) - c.s[(1, 1)]).abs() < 1e-14);
        assert!((sys.matrix.get(1, 1) - c.s[(3, 3)]).abs() < 1e-14);
        assert!((sys.matrix.get(0, 1) - c.s[(1, 3)]).abs() < 1e-14);
    }

    #[test]
    fn condensed_matrix_symmetric() {
        let mesh = MeshTopology::unit(2, 2, 2).unwrap().refine_cells(&[3]).unwrap();
        let form = poisson_form(2).unwrap();
        let dm = DofMap::new(&mesh, &form, |_, _| 0.0, None).unwrap();
        let sys = assemble_global(&mesh, &form, &dm, &AssemblyOptions::new(2)).unwrap();
        let maxdiag = sys.matrix.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sys.matrix.asymmetry() <= 1e-12 * maxdiag);
    }
}
