//! Element-level DPG computations: trial layout, Gram and trial-to-test
//! matrices, optimal-test stiffness, static condensation and the residual
//! energy error.

use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};

use crate::basis::quadrature::gauss_legendre;
use crate::basis::Lagrange1d;
use crate::error::{Error, Result};
use crate::formulation::{Coef, FaceFactor, FormDescriptor, Source, TestOp};
use crate::geometry::{BoxGeom, Face, Point};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceBlock {
    pub face: usize,
    /// Flattened trace component.
    pub comp: usize,
    pub order: usize,
    pub offset: usize,
    pub len: usize,
}

/// Ordering of the local trial unknowns: all field components (component
/// major, nodal within), then for each face and trace component the face
/// nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellLayout {
    pub dim: usize,
    pub order: usize,
    /// Polynomial order governing the traces on each face (the largest
    /// order of the cells meeting there).
    pub face_orders: Vec<usize>,
    pub n_field_comps: usize,
    pub field_nodes: usize,
    pub trace_blocks: Vec<TraceBlock>,
    pub n_fields: usize,
    pub n_trial: usize,
}

impl CellLayout {
    pub fn new(form: &FormDescriptor, order: usize, face_orders: &[usize]) -> Self {
        let dim = form.dim;
        let field_nodes = (order + 1).pow(dim as u32);
        let n_field_comps = form.n_field_comps();
        let n_fields = n_field_comps * field_nodes;
        let mut offset = n_fields;
        let mut trace_blocks = Vec::new();
        for (face, &kf) in face_orders.iter().enumerate().take(2 * dim) {
            for comp in 0..form.n_trace_comps() {
                let o = form.trace_order(comp, kf);
                let len = if dim == 1 { 1 } else { o + 1 };
                trace_blocks.push(TraceBlock {
                    face,
                    comp,
                    order: o,
                    offset,
                    len,
                });
                offset += len;
            }
        }
        CellLayout {
            dim,
            order,
            face_orders: face_orders.to_vec(),
            n_field_comps,
            field_nodes,
            trace_blocks,
            n_fields,
            n_trial: offset,
        }
    }

    pub fn uniform(form: &FormDescriptor, order: usize) -> Self {
        Self::new(form, order, &vec![order; 2 * form.dim])
    }

    pub fn n_traces(&self) -> usize {
        self.n_trial - self.n_fields
    }

    pub fn block(&self, face: usize, comp: usize) -> &TraceBlock {
        let n = self.trace_blocks.len() / (2 * self.dim);
        &self.trace_blocks[face * n + comp]
    }

    pub fn field_indices(&self) -> Vec<usize> {
        (0..self.n_fields).collect()
    }

    pub fn trace_indices(&self) -> Vec<usize> {
        (self.n_fields..self.n_trial).collect()
    }
}

/// Tensor-product evaluation tables of a nodal basis at tensor points.
struct Tables {
    n: usize,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

fn tabulate(dim: usize, order: usize, pts: &[f64], geom: &BoxGeom) -> Tables {
    let line = Lagrange1d::new(order);
    let n1 = line.len();
    let v1: Vec<Vec<f64>> = pts.iter().map(|&x| line.values(x)).collect();
    let d1: Vec<Vec<f64>> = pts.iter().map(|&x| line.derivatives(x)).collect();
    let np = pts.len();
    if dim == 1 {
        let sx = 2.0 / geom.width(0);
        let mut values = Vec::with_capacity(np * n1);
        let mut grads = Vec::with_capacity(np * n1);
        for q in 0..np {
            for j in 0..n1 {
                values.push(v1[q][j]);
                grads.push([d1[q][j] * sx, 0.0]);
            }
        }
        return Tables { n: n1, values, grads };
    }
    let (sx, sy) = (2.0 / geom.width(0), 2.0 / geom.width(1));
    let n = n1 * n1;
    let mut values = Vec::with_capacity(np * np * n);
    let mut grads = Vec::with_capacity(np * np * n);
    for qy in 0..np {
        for qx in 0..np {
            for jy in 0..n1 {
                for jx in 0..n1 {
                    values.push(v1[qx][jx] * v1[qy][jy]);
                    grads.push([d1[qx][jx] * v1[qy][jy] * sx, v1[qx][jx] * d1[qy][jy] * sy]);
                }
            }
        }
    }
    Tables { n, values, grads }
}

fn eval_tensor(dim: usize, line: &Lagrange1d, xi: &Point) -> Vec<f64> {
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

/// Element matrices of the practical DPG method.
#[derive(Clone, Debug)]
pub struct LocalSystem {
    /// Test Gram matrix.
    pub g: Mat<f64>,
    /// Trial-to-test matrix (rows: tests, columns: trial layout).
    pub b: Mat<f64>,
    /// Test load vector (with any shift already subtracted).
    pub l: Vec<f64>,
    /// Lower Cholesky factor of `g`.
    pub g_chol: Mat<f64>,
    pub k: Mat<f64>,
    pub f: Vec<f64>,
}

/// Builds G, B and l on one cell and forms `K = B^T G^-1 B`, `F = B^T G^-1 l`.
/// `shift` (a local trial vector) is subtracted from the load as `l - B shift`.
pub fn local_system(
    geom: &BoxGeom,
    cell_id: usize,
    layout: &CellLayout,
    form: &FormDescriptor,
    delta_k: usize,
    shift: Option<&[f64]>,
) -> Result<LocalSystem> {
    if delta_k < 1 {
        return Err(Error::InvalidParameter("test enrichment must be at least 1".into()));
    }
    let dim = form.dim;
    let kt = layout.order + 1 + delta_k;
    let (gp, gw) = gauss_legendre(kt + 2);
    let test = tabulate(dim, kt, &gp, geom);
    let field = tabulate(dim, layout.order, &gp, geom);
    let nt = test.n;
    let nf = field.n;
    let nq = test.values.len() / nt;
    let jac = geom.measure(dim) / (1u32 << dim) as f64;
    let mut weights = Vec::with_capacity(nq);
    let mut points = Vec::with_capacity(nq);
    if dim == 1 {
        for (x, w) in gp.iter().zip(&gw) {
            weights.push(w * jac);
            points.push(geom.to_physical(1, &[*x, 0.0]));
        }
    } else {
        for (y, wy) in gp.iter().zip(&gw) {
            for (x, wx) in gp.iter().zip(&gw) {
                weights.push(wx * wy * jac);
                points.push(geom.to_physical(2, &[*x, *y]));
            }
        }
    }
    let n_fc = form.n_field_comps();
    let n_tc = form.n_test_comps();
    let n_test = n_tc * nt;

    let background: Option<Vec<Vec<f64>>> = match (&form.background, form.needs_background()) {
        (Some(bg), true) => Some(points.iter().map(|x| bg.eval(cell_id, x)).collect()),
        (None, true) => return Err(Error::InvalidParameter("form needs a background flow".into())),
        _ => None,
    };
    let coef_at = |c: &Coef, q: usize| -> f64 {
        match *c {
            Coef::Const(v) => v,
            Coef::Background { comp, scale } => scale * background.as_ref().expect("background values")[q][comp],
        }
    };

    // Blocks A[f][t] = sqrt(w) L*_f restricted to test component t; only
    // the pairs coupled by some volume term are stored.
    let mut blocks: Vec<Vec<Option<Mat<f64>>>> = vec![vec![None; n_tc]; n_fc];
    for term in &form.volume_terms {
        let a = blocks[term.field][term.test].get_or_insert_with(|| Mat::<f64>::zeros(nq, nt));
        for q in 0..nq {
            let c = coef_at(&term.coef, q) * weights[q].sqrt();
            if c == 0.0 {
                continue;
            }
            for j in 0..nt {
                let v = match term.op {
                    TestOp::Value => test.values[q * nt + j],
                    TestOp::Deriv(d) => test.grads[q * nt + j][d],
                };
                a[(q, j)] += c * v;
            }
        }
    }
    let mut g = Mat::<f64>::zeros(n_test, n_test);
    let phi_t = Mat::<f64>::from_fn(nq, nt, |q, j| weights[q].sqrt() * test.values[q * nt + j]);
    let mut mass = Mat::<f64>::zeros(nt, nt);
    matmul(mass.as_mut(), Accum::Replace, phi_t.as_ref().transpose(), phi_t.as_ref(), form.beta, Par::Seq);
    for t in 0..n_tc {
        g.as_mut().submatrix_mut(t * nt, t * nt, nt, nt).copy_from(mass.as_ref());
    }
    for row in &blocks {
        for (t1, a1) in row.iter().enumerate() {
            let Some(a1) = a1 else { continue };
            for (t2, a2) in row.iter().enumerate().skip(t1) {
                let Some(a2) = a2 else { continue };
                matmul(
                    g.as_mut().submatrix_mut(t1 * nt, t2 * nt, nt, nt),
                    Accum::Add,
                    a1.as_ref().transpose(),
                    a2.as_ref(),
                    1.0,
                    Par::Seq,
                );
            }
        }
    }
    // mirror the upper block triangle
    for i in 0..n_test {
        for j in 0..i {
            if i / nt != j / nt {
                g[(i, j)] = g[(j, i)];
            }
        }
    }
    for t in 0..n_tc {
        for i in 0..nt {
            for j in 0..i {
                let v = 0.5 * (g[(t * nt + i, t * nt + j)] + g[(t * nt + j, t * nt + i)]);
                g[(t * nt + i, t * nt + j)] = v;
                g[(t * nt + j, t * nt + i)] = v;
            }
        }
    }

    let mut b = Mat::<f64>::zeros(n_test, layout.n_trial);
    let phi_w = Mat::<f64>::from_fn(nq, nf, |q, n| weights[q].sqrt() * field.values[q * nf + n]);
    for (f, row) in blocks.iter().enumerate() {
        for (t, a) in row.iter().enumerate() {
            let Some(a) = a else { continue };
            matmul(
                b.as_mut().submatrix_mut(t * nt, f * nf, nt, nf),
                Accum::Replace,
                a.as_ref().transpose(),
                phi_w.as_ref(),
                1.0,
                Par::Seq,
            );
        }
    }

    // face terms
    let test_line = Lagrange1d::new(kt);
    for face in Face::all(dim) {
        let sign = face.outward_sign();
        let (fpts, fw, jf): (Vec<f64>, Vec<f64>, f64) = if dim == 1 {
            (vec![0.0], vec![1.0], 1.0)
        } else {
            (gp.clone(), gw.clone(), 0.5 * geom.width(face.tangent_axis()))
        };
        let test_vals: Vec<Vec<f64>> = fpts
            .iter()
            .map(|&t| eval_tensor(dim, &test_line, &face.to_cell_ref(dim, t)))
            .collect();
        for term in &form.face_terms {
            let factor = match term.factor {
                FaceFactor::TraceSign => sign,
                FaceFactor::Normal(j) if j == face.axis => sign,
                FaceFactor::Normal(_) => continue,
            };
            let block = layout.block(face.index(), term.trace);
            let trace_vals: Vec<Vec<f64>> = if dim == 1 {
                vec![vec![1.0]]
            } else {
                let line = Lagrange1d::new(block.order);
                fpts.iter().map(|&t| line.values(t)).collect()
            };
            let c = term.coef * factor * jf;
            for (gi, w) in fw.iter().enumerate() {
                for j in 0..nt {
                    let tv = test_vals[gi][j];
                    if tv == 0.0 {
                        continue;
                    }
                    for m in 0..block.len {
                        b[(term.test * nt + j, block.offset + m)] += c * w * tv * trace_vals[gi][m];
                    }
                }
            }
        }
    }

    let mut l = vec![0.0; n_test];
    for term in &form.load_terms {
        for q in 0..nq {
            let s = match term.source {
                Source::Const(c) => c,
                Source::BackgroundProduct { a, b: bb, scale } => {
                    let v = &background.as_ref().expect("background values")[q];
                    scale * v[a] * v[bb]
                }
            };
            if s == 0.0 {
                continue;
            }
            for j in 0..nt {
                l[term.test * nt + j] += weights[q] * s * test.values[q * nt + j];
            }
        }
    }
    if let Some(x) = shift {
        if x.len() != layout.n_trial {
            return Err(Error::DimensionMismatch {
                expected: layout.n_trial,
                got: x.len(),
            });
        }
        for i in 0..n_test {
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate() {
                s += b[(i, j)] * xj;
            }
            l[i] -= s;
        }
    }
    finish_local_system(g, b, l)
}

/// Completes a local system from G, B and l.
pub fn finish_local_system(g: Mat<f64>, b: Mat<f64>, l: Vec<f64>) -> Result<LocalSystem> {
    let llt = g
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("Gram matrix: {e:?}")))?;
    let g_chol = llt.L().to_owned();
    let mut w = b.clone();
    solve_lower_triangular_in_place(g_chol.as_ref(), w.as_mut(), Par::Seq);
    let mut y = Mat::<f64>::from_fn(l.len(), 1, |i, _| l[i]);
    solve_lower_triangular_in_place(g_chol.as_ref(), y.as_mut(), Par::Seq);
    let n = b.ncols();
    let mut k = Mat::<f64>::zeros(n, n);
    matmul(k.as_mut(), Accum::Replace, w.as_ref().transpose(), w.as_ref(), 1.0, Par::Seq);
    // enforce exact symmetry of the product
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = s;
            k[(j, i)] = s;
        }
    }
    let fm = w.as_ref().transpose() * y.as_ref();
    let f = (0..n).map(|i| fm[(i, 0)]).collect();
    Ok(LocalSystem { g, b, l, g_chol, k, f })
}

/// Local energy error `sqrt((l - Bx)^T G^-1 (l - Bx))`.
pub fn energy_error(local: &LocalSystem, x: &[f64]) -> f64 {
    let r = residual_representation(local, x);
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `L_G^{-1} (l - B x)`; its squared norm is the local energy error.
pub fn residual_representation(local: &LocalSystem, x: &[f64]) -> Vec<f64> {
    let n = local.b.nrows();
    let mut r = Mat::<f64>::from_fn(n, 1, |i, _| local.l[i]);
    for i in 0..n {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += local.b[(i, j)] * xj;
        }
        r[(i, 0)] -= s;
    }
    solve_lower_triangular_in_place(local.g_chol.as_ref(), r.as_mut(), Par::Seq);
    (0..n).map(|i| r[(i, 0)]).collect()
}

/// `sqrt((Bx)^T G^-1 (Bx))`, the dual norm of `b(x, .)`.
pub fn operator_norm(local: &LocalSystem, x: &[f64]) -> f64 {
    let n = local.b.nrows();
    let mut r = Mat::<f64>::zeros(n, 1);
    for i in 0..n {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += local.b[(i, j)] * xj;
        }
        r[(i, 0)] = s;
    }
    solve_lower_triangular_in_place(local.g_chol.as_ref(), r.as_mut(), Par::Seq);
    (0..n).map(|i| r[(i, 0)] * r[(i, 0)]).sum::<f64>().sqrt()
}

/// Per-element Schur complement onto the trace unknowns.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub s: Mat<f64>,
    pub g: Vec<f64>,
    /// `-K11^-1 K12`: fields from traces.
    pub recovery: Mat<f64>,
    /// `K11^-1 F1`.
    pub r0: Vec<f64>,
    pub field_idx: Vec<usize>,
    pub trace_idx: Vec<usize>,
}

pub fn condense(k: &Mat<f64>, f: &[f64], field_idx: &[usize], trace_idx: &[usize]) -> Result<Condensed> {
    let n1 = field_idx.len();
    let n2 = trace_idx.len();
    let k11 = Mat::<f64>::from_fn(n1, n1, |i, j| k[(field_idx[i], field_idx[j])]);
    let k12 = Mat::<f64>::from_fn(n1, n2, |i, j| k[(field_idx[i], trace_idx[j])]);
    let mut s = Mat::<f64>::from_fn(n2, n2, |i, j| k[(trace_idx[i], trace_idx[j])]);
    let f1 = Mat::<f64>::from_fn(n1, 1, |i, _| f[field_idx[i]]);
    let mut g: Vec<f64> = trace_idx.iter().map(|&i| f[i]).collect();
    if n1 == 0 {
        return Ok(Condensed {
            s,
            g,
            recovery: Mat::zeros(0, n2),
            r0: vec![],
            field_idx: field_idx.to_vec(),
            trace_idx: trace_idx.to_vec(),
        });
    }
    let llt = k11
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("field block: {e:?}")))?;
    let l = llt.L();
    // Y = L^-1 K12, z = L^-1 F1
    let mut y = k12.clone();
    solve_lower_triangular_in_place(l, y.as_mut(), Par::Seq);
    let mut z = f1.clone();
    solve_lower_triangular_in_place(l, z.as_mut(), Par::Seq);
    matmul(s.as_mut(), Accum::Add, y.as_ref().transpose(), y.as_ref(), -1.0, Par::Seq);
    for i in 0..n2 {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let ytz = y.as_ref().transpose() * z.as_ref();
    for (i, gi) in g.iter_mut().enumerate() {
        *gi -= ytz[(i, 0)];
    }
    let recovery = llt.solve(k12.as_ref()) * faer::Scale(-1.0);
    let r0m = llt.solve(f1.as_ref());
    Ok(Condensed {
        s,
        g,
        recovery,
        r0: (0..n1).map(|i| r0m[(i, 0)]).collect(),
        field_idx: field_idx.to_vec(),
        trace_idx: trace_idx.to_vec(),
    })
}

impl Condensed {
    /// Field values (in `field_idx` order) from local trace values.
    pub fn recover_fields(&self, traces: &[f64]) -> Result<Vec<f64>> {
        if traces.len() != self.trace_idx.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trace_idx.len(),
                got: traces.len(),
            });
        }
        let mut u = self.r0.clone();
        for (i, ui) in u.iter_mut().enumerate() {
            for (j, t) in traces.iter().enumerate() {
                *ui += self.recovery[(i, j)] * t;
            }
        }
        Ok(u)
    }
}
