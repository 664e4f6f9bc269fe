//! Ultraweak first-order systems: variables, bilinear-form terms, graph-norm
//! adjoint, boundary data and closed-form reference solutions.
//!
//! All indices into fields, traces and tests are flattened component
//! indices (e.g. for Stokes in 2D the fields are `u1 u2 s11 s12 s21 s22 p`).
//! The volume terms are stored grouped by trial field component, so that the
//! adjoint applied to a test function is read off directly: for field
//! component `f`, `L*_f v = sum_t coef_t * op_t(v_{test_t})` over the terms
//! with `field == f`, and `b(u, v) = sum_f (u_f, L*_f v) + face terms`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, CellShape, SpaceKind};
use crate::error::{Error, Result};
use crate::geometry::{BoxGeom, Point};
use crate::mesh::MeshTopology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    /// Trace of an H1 function; order k+1, continuous across vertices.
    H1,
    /// Normal flux; order k, stored against the face's `+axis` normal.
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub comps: usize,
}

/// One summand of the field-to-trace map: `coef * field`, times the normal
/// component `n_axis` when `normal` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTerm {
    pub field: usize,
    pub normal: Option<usize>,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceVar {
    pub name: String,
    pub kind: TraceKind,
    pub comps: usize,
    /// Whether boundary data is imposed on this trace.
    pub dirichlet: bool,
    /// Per component: the trace in terms of field components.
    pub gamma: Vec<Vec<GammaTerm>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coef {
    Const(f64),
    /// `scale` times a field component of the background flow.
    Background { comp: usize, scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestOp {
    Value,
    Deriv(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeTerm {
    pub field: usize,
    pub test: usize,
    pub op: TestOp,
    pub coef: Coef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceFactor {
    /// Outward sign of the face (normal traces are stored against `+axis`).
    TraceSign,
    /// Component `j` of the outward unit normal.
    Normal(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceTerm {
    pub trace: usize,
    pub test: usize,
    pub factor: FaceFactor,
    pub coef: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Const(f64),
    /// `scale * a * b` for two background field components.
    BackgroundProduct { a: usize, b: usize, scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadTerm {
    pub test: usize,
    pub source: Source,
}

/// Field coefficients of a flow over a mesh, used as the linearization point.
#[derive(Clone, Debug)]
pub struct BackgroundFlow {
    pub mesh: MeshTopology,
    /// Per arena cell id; empty for inactive cells. Layout: field component
    /// major, nodal coefficients of order `mesh.order(id)`.
    pub fields: Vec<Vec<f64>>,
    pub n_field_comps: usize,
}

impl BackgroundFlow {
    /// Values of all field components at physical point `x` inside cell `id`
    /// of any mesh sharing the arena of `self.mesh`.
    pub fn eval(&self, id: usize, x: &Point) -> Vec<f64> {
        let mesh = &self.mesh;
        let dim = mesh.dim();
        let mut cur = mesh.active_ancestor(id).unwrap_or(id);
        while !mesh.is_active(cur) {
            let cell = mesh.cell(cur).expect("cell in arena");
            let next = cell
                .children
                .iter()
                .copied()
                .find(|&c| mesh.cell(c).expect("child").geom.contains(dim, x, 1e-12));
            match next {
                Some(c) => cur = c,
                None => return vec![0.0; self.n_field_comps],
            }
        }
        let cell = mesh.cell(cur).expect("active cell");
        let shape = if dim == 1 { CellShape::Interval } else { CellShape::Quad };
        let basis = build_basis(cell.order, shape, SpaceKind::ScalarL2).expect("volume basis");
        let vals = basis.eval_scalar(&cell.geom.to_reference(dim, x));
        let n = vals.len();
        let coefs = &self.fields[cur];
        (0..self.n_field_comps)
            .map(|f| vals.iter().zip(&coefs[f * n..(f + 1) * n]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct FormDescriptor {
    pub dim: usize,
    pub fields: Vec<Var>,
    pub traces: Vec<TraceVar>,
    pub tests: Vec<Var>,
    pub volume_terms: Vec<VolumeTerm>,
    pub face_terms: Vec<FaceTerm>,
    pub load_terms: Vec<LoadTerm>,
    pub beta: f64,
    pub background: Option<Arc<BackgroundFlow>>,
}

impl FormDescriptor {
    pub fn n_field_comps(&self) -> usize {
        self.fields.iter().map(|v| v.comps).sum()
    }

    pub fn n_trace_comps(&self) -> usize {
        self.traces.iter().map(|v| v.comps).sum()
    }

    pub fn n_test_comps(&self) -> usize {
        self.tests.iter().map(|v| v.comps).sum()
    }

    pub fn field_offset(&self, var: usize) -> usize {
        self.fields[..var].iter().map(|v| v.comps).sum()
    }

    pub fn test_offset(&self, var: usize) -> usize {
        self.tests[..var].iter().map(|v| v.comps).sum()
    }

    pub fn trace_offset(&self, var: usize) -> usize {
        self.traces[..var].iter().map(|v| v.comps).sum()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|v| v.name == name)
    }

    /// Variable and kind of a flattened trace component.
    pub fn trace_comp(&self, flat: usize) -> (usize, usize, TraceKind) {
        let mut off = 0;
        for (i, t) in self.traces.iter().enumerate() {
            if flat < off + t.comps {
                return (i, flat - off, t.kind);
            }
            off += t.comps;
        }
        panic!("trace component {flat} out of range")
    }

    pub fn trace_kind(&self, flat: usize) -> TraceKind {
        self.trace_comp(flat).2
    }

    pub fn gamma_of(&self, flat: usize) -> &[GammaTerm] {
        let (v, c, _) = self.trace_comp(flat);
        &self.traces[v].gamma[c]
    }

    pub fn is_dirichlet(&self, flat: usize) -> bool {
        self.traces[self.trace_comp(flat).0].dirichlet
    }

    /// Polynomial order of a trace component on a face of a cell of order `k`.
    pub fn trace_order(&self, flat: usize, k: usize) -> usize {
        match self.trace_kind(flat) {
            TraceKind::H1 => k + 1,
            TraceKind::Normal => k,
        }
    }

    pub fn needs_background(&self) -> bool {
        self.volume_terms.iter().any(|t| matches!(t.coef, Coef::Background { .. }))
            || self
                .load_terms
                .iter()
                .any(|t| matches!(t.source, Source::BackgroundProduct { .. }))
    }

    /// Replaces the load by a constant source on the given test components.
    pub fn with_constant_load(mut self, values: &[(usize, f64)]) -> Self {
        self.load_terms.retain(|t| !matches!(t.source, Source::Const(_)));
        for &(test, c) in values {
            if c != 0.0 {
                self.load_terms.push(LoadTerm {
                    test,
                    source: Source::Const(c),
                });
            }
        }
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

fn var(name: &str, comps: usize) -> Var {
    Var {
        name: name.to_string(),
        comps,
    }
}

fn vterm(field: usize, test: usize, op: TestOp, c: f64) -> VolumeTerm {
    VolumeTerm {
        field,
        test,
        op,
        coef: Coef::Const(c),
    }
}

/// `(s, grad v) - <s_n, v> + (s, tau) + (u, div tau) - <u_hat, tau.n> = (f, v)`
/// with unit forcing.
pub fn poisson_form(dim: usize) -> Result<FormDescriptor> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidParameter(format!("dimension {dim} not supported")));
    }
    // fields: u, s_0..s_{d-1}; tests: v, tau_0..tau_{d-1}
    let u = 0;
    let s = |j: usize| 1 + j;
    let v = 0;
    let tau = |j: usize| 1 + j;
    let mut volume_terms = Vec::new();
    for j in 0..dim {
        volume_terms.push(vterm(s(j), v, TestOp::Deriv(j), 1.0));
        volume_terms.push(vterm(s(j), tau(j), TestOp::Value, 1.0));
    }
    for j in 0..dim {
        volume_terms.push(vterm(u, tau(j), TestOp::Deriv(j), 1.0));
    }
    let mut face_terms = vec![FaceTerm {
        trace: 1,
        test: v,
        factor: FaceFactor::TraceSign,
        coef: -1.0,
    }];
    for j in 0..dim {
        face_terms.push(FaceTerm {
            trace: 0,
            test: tau(j),
            factor: FaceFactor::Normal(j),
            coef: -1.0,
        });
    }
    let traces = vec![
        TraceVar {
            name: "u_hat".into(),
            kind: TraceKind::H1,
            comps: 1,
            dirichlet: true,
            gamma: vec![vec![GammaTerm {
                field: u,
                normal: None,
                coef: 1.0,
            }]],
        },
        TraceVar {
            name: "s_n".into(),
            kind: TraceKind::Normal,
            comps: 1,
            dirichlet: false,
            gamma: vec![(0..dim)
                .map(|j| GammaTerm {
                    field: s(j),
                    normal: Some(j),
                    coef: 1.0,
                })
                .collect()],
        },
    ];
    Ok(FormDescriptor {
        dim,
        fields: vec![var("u", 1), var("sigma", dim)],
        traces,
        tests: vec![var("v", 1), var("tau", dim)],
        volume_terms,
        face_terms,
        load_terms: vec![LoadTerm {
            test: v,
            source: Source::Const(1.0),
        }],
        beta: 1.0,
        background: None,
    })
}

/// Velocity-gradient-pressure Stokes system in 2D:
/// `(s - pI, grad v) - <t_n, v> + (u, grad q) - <u_hat.n, q>
///  + (s, tau) + (mu u, div tau) - mu <u_hat, tau n> = (f, v)`.
pub fn stokes_vgp_form(mu: f64) -> Result<FormDescriptor> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("viscosity {mu} must be positive")));
    }
    let d = 2;
    // fields: u_i (0..2), s_ij (2 + 2i + j), p (6)
    // tests: v_i (0..2), tau_ij (2 + 2i + j), q (6)
    let u = |i: usize| i;
    let s = |i: usize, j: usize| 2 + d * i + j;
    let p = 6;
    let v = |i: usize| i;
    let tau = |i: usize, j: usize| 2 + d * i + j;
    let q = 6;
    let mut volume_terms = Vec::new();
    for i in 0..d {
        volume_terms.push(vterm(u(i), q, TestOp::Deriv(i), 1.0));
        for j in 0..d {
            volume_terms.push(vterm(u(i), tau(i, j), TestOp::Deriv(j), mu));
        }
    }
    for i in 0..d {
        for j in 0..d {
            volume_terms.push(vterm(s(i, j), v(i), TestOp::Deriv(j), 1.0));
            volume_terms.push(vterm(s(i, j), tau(i, j), TestOp::Value, 1.0));
        }
    }
    for i in 0..d {
        volume_terms.push(vterm(p, v(i), TestOp::Deriv(i), -1.0));
    }
    // traces: u_hat_i (0..2), t_n_i (2..4)
    let mut face_terms = Vec::new();
    for i in 0..d {
        face_terms.push(FaceTerm {
            trace: 2 + i,
            test: v(i),
            factor: FaceFactor::TraceSign,
            coef: -1.0,
        });
        face_terms.push(FaceTerm {
            trace: i,
            test: q,
            factor: FaceFactor::Normal(i),
            coef: -1.0,
        });
        for j in 0..d {
            face_terms.push(FaceTerm {
                trace: i,
                test: tau(i, j),
                factor: FaceFactor::Normal(j),
                coef: -mu,
            });
        }
    }
    let traces = vec![
        TraceVar {
            name: "u_hat".into(),
            kind: TraceKind::H1,
            comps: d,
            dirichlet: true,
            gamma: (0..d)
                .map(|i| {
                    vec![GammaTerm {
                        field: u(i),
                        normal: None,
                        coef: 1.0,
                    }]
                })
                .collect(),
        },
        TraceVar {
            name: "t_n".into(),
            kind: TraceKind::Normal,
            comps: d,
            dirichlet: false,
            gamma: (0..d)
                .map(|i| {
                    let mut g: Vec<GammaTerm> = (0..d)
                        .map(|j| GammaTerm {
                            field: s(i, j),
                            normal: Some(j),
                            coef: 1.0,
                        })
                        .collect();
                    g.push(GammaTerm {
                        field: p,
                        normal: Some(i),
                        coef: -1.0,
                    });
                    g
                })
                .collect(),
        },
    ];
    Ok(FormDescriptor {
        dim: d,
        fields: vec![var("u", d), var("sigma", d * d), var("p", 1)],
        traces,
        tests: vec![var("v", d), var("tau", d * d), var("q", 1)],
        volume_terms,
        face_terms,
        load_terms: vec![],
        beta: 1.0,
        background: None,
    })
}

/// Newton linearization of steady Navier-Stokes about `background`, with
/// `mu = 1/Re`. The trial unknown is the increment; the load carries the
/// background part of the convective term, and the assembly subtracts the
/// background's own residual.
pub fn navier_stokes_linearized_form(re: f64, background: Option<Arc<BackgroundFlow>>) -> Result<FormDescriptor> {
    if !(re > 0.0) {
        return Err(Error::InvalidParameter(format!("Reynolds number {re} must be positive")));
    }
    let background = background.ok_or_else(|| Error::InvalidParameter("missing background flow".into()))?;
    let mut form = stokes_vgp_form(1.0 / re)?;
    let d = 2;
    let u = |i: usize| i;
    let s = |i: usize, j: usize| 2 + d * i + j;
    for i in 0..d {
        for j in 0..d {
            // Re (ds_ij u_j + s_ij du_j, v_i)
            form.volume_terms.push(VolumeTerm {
                field: s(i, j),
                test: i,
                op: TestOp::Value,
                coef: Coef::Background { comp: u(j), scale: re },
            });
            form.volume_terms.push(VolumeTerm {
                field: u(j),
                test: i,
                op: TestOp::Value,
                coef: Coef::Background { comp: s(i, j), scale: re },
            });
            form.load_terms.push(LoadTerm {
                test: i,
                source: Source::BackgroundProduct {
                    a: s(i, j),
                    b: u(j),
                    scale: re,
                },
            });
        }
    }
    form.background = Some(background);
    Ok(form)
}

/// Value and physical gradient of every test component at one point.
pub type TestValue = (f64, [f64; 2]);

/// The graph-norm test inner product `(L* v, L* w) + beta (v, w)`.
pub struct GramIntegrand<'a> {
    form: &'a FormDescriptor,
}

pub fn graph_gram_integrand(form: &FormDescriptor) -> Result<GramIntegrand<'_>> {
    if !(form.beta > 0.0) {
        return Err(Error::InvalidParameter(format!("graph norm scaling {} must be positive", form.beta)));
    }
    let covered: Vec<bool> = (0..form.n_test_comps())
        .map(|t| form.volume_terms.iter().any(|vt| vt.test == t))
        .collect();
    if covered.iter().any(|c| !c) {
        return Err(Error::InvalidParameter("adjoint does not cover every test component".into()));
    }
    Ok(GramIntegrand { form })
}

impl GramIntegrand<'_> {
    /// `L*_f v` for every field component; `coef_values[t]` is the value of
    /// volume term `t`'s coefficient at the point.
    pub fn adjoint(&self, coef_values: &[f64], v: &[TestValue]) -> Vec<f64> {
        let mut out = vec![0.0; self.form.n_field_comps()];
        for (t, term) in self.form.volume_terms.iter().enumerate() {
            let (val, grad) = v[term.test];
            let x = match term.op {
                TestOp::Value => val,
                TestOp::Deriv(j) => grad[j],
            };
            out[term.field] += coef_values[t] * x;
        }
        out
    }

    pub fn eval(&self, coef_values: &[f64], v: &[TestValue], w: &[TestValue]) -> f64 {
        let a = self.adjoint(coef_values, v);
        let b = self.adjoint(coef_values, w);
        let mass: f64 = v.iter().zip(w).map(|(x, y)| x.0 * y.0).sum();
        a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() + self.form.beta * mass
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    Poisson,
    Stokes,
    Kovasznay,
    Cavity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub dim: usize,
    /// Reynolds number; `None` gives Stokes flow with unit viscosity.
    pub re: Option<f64>,
    /// Width of the linear velocity transition at the cavity lid corners.
    pub lid_eps: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            dim: 2,
            re: None,
            lid_eps: 1.0 / 64.0,
        }
    }
}

/// A complete boundary value problem: form, domain, data, reference solution.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub params: ProblemParams,
    pub form: FormDescriptor,
    pub domain: BoxGeom,
    /// Point where the pressure field is pinned to zero.
    pub pin: Option<Point>,
}

pub fn kovasznay_lambda(re: f64) -> f64 {
    re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt()
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn is_nonlinear(&self) -> bool {
        self.params.re.is_some()
    }

    pub fn mu(&self) -> f64 {
        self.params.re.map_or(1.0, |re| 1.0 / re)
    }

    /// Form for the given background; Stokes and Poisson ignore it.
    pub fn form_for(&self, background: Option<Arc<BackgroundFlow>>) -> Result<FormDescriptor> {
        match self.params.re {
            Some(re) => {
                let bg = background.ok_or_else(|| Error::InvalidParameter("missing background flow".into()))?;
                let mut f = navier_stokes_linearized_form(re, Some(bg))?;
                f.beta = self.form.beta;
                Ok(f)
            }
            None => Ok(self.form.clone()),
        }
    }

    /// Exact velocity, velocity gradient (row i = grad u_i) and pressure.
    fn exact_flow(&self, x: &Point) -> Option<([f64; 2], [[f64; 2]; 2], f64)> {
        let (x, y) = (x[0], x[1]);
        match self.kind {
            ProblemKind::Stokes => {
                let ex = x.exp();
                let (s, c) = y.sin_cos();
                let u = [-ex * (y * c + s), ex * y * s];
                let g = [
                    [-ex * (y * c + s), -ex * (2.0 * c - y * s)],
                    [ex * y * s, ex * (s + y * c)],
                ];
                Some((u, g, 2.0 * ex * s))
            }
            ProblemKind::Kovasznay => {
                let re = self.params.re.unwrap_or(40.0);
                let l = kovasznay_lambda(re);
                let e = (l * x).exp();
                let (s, c) = (2.0 * PI * y).sin_cos();
                let u = [1.0 - e * c, l / (2.0 * PI) * e * s];
                let g = [[-l * e * c, 2.0 * PI * e * s], [l * l / (2.0 * PI) * e * s, l * e * c]];
                let p = -0.5 * (2.0 * l * x).exp() + 0.5 * l.exp();
                Some((u, g, p))
            }
            _ => None,
        }
    }

    /// Exact value of a flattened field component, when known.
    pub fn exact_field(&self, comp: usize, x: &Point) -> Option<f64> {
        let (u, g, p) = self.exact_flow(x)?;
        let mu = self.mu();
        Some(match comp {
            0 | 1 => u[comp],
            2..=5 => mu * g[(comp - 2) / 2][(comp - 2) % 2],
            6 => p,
            _ => return None,
        })
    }

    /// Boundary data for a Dirichlet trace component at a boundary point.
    pub fn boundary_value(&self, trace_comp: usize, x: &Point) -> f64 {
        match self.kind {
            ProblemKind::Poisson => 0.0,
            ProblemKind::Stokes | ProblemKind::Kovasznay => {
                self.exact_flow(x).map_or(0.0, |(u, _, _)| u[trace_comp])
            }
            ProblemKind::Cavity => {
                let top = self.domain.hi[1];
                if trace_comp == 0 && (x[1] - top).abs() < 1e-12 {
                    let eps = self.params.lid_eps;
                    let (lo, hi) = (self.domain.lo[0], self.domain.hi[0]);
                    ((x[0] - lo) / eps).min(1.0).min((hi - x[0]) / eps).max(0.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact trace value (traces stored against the `+axis` normal).
    pub fn exact_trace(&self, trace_comp: usize, x: &Point, axis: usize) -> Option<f64> {
        let mut vals = Vec::with_capacity(self.form.n_field_comps());
        for f in 0..self.form.n_field_comps() {
            vals.push(self.exact_field(f, x)?);
        }
        Some(
            self.form
                .gamma_of(trace_comp)
                .iter()
                .map(|g| match g.normal {
                    Some(j) if j != axis => 0.0,
                    _ => g.coef * vals[g.field],
                })
                .sum(),
        )
    }
}

pub fn manufactured_solution(kind: ProblemKind, params: ProblemParams) -> Result<ProblemSpec> {
    let unit = |dim: usize| BoxGeom {
        lo: [0.0, 0.0],
        hi: [1.0, if dim == 1 { 0.0 } else { 1.0 }],
    };
    let flow_form = |re: Option<f64>| -> Result<FormDescriptor> { stokes_vgp_form(re.map_or(1.0, |r| 1.0 / r)) };
    let (form, domain, pin) = match kind {
        ProblemKind::Poisson => (poisson_form(params.dim)?, unit(params.dim), None),
        ProblemKind::Stokes => {
            if params.re.is_some() {
                return Err(Error::InvalidParameter("the Stokes solution is not a Navier-Stokes solution".into()));
            }
            let domain = BoxGeom {
                lo: [-1.0, -1.0],
                hi: [1.0, 1.0],
            };
            (stokes_vgp_form(1.0)?, domain, Some([0.0, 0.0]))
        }
        ProblemKind::Kovasznay => {
            let re = params.re.unwrap_or(40.0);
            let domain = BoxGeom {
                lo: [-0.5, 0.0],
                hi: [1.5, 2.0],
            };
            (flow_form(Some(re))?, domain, Some([0.5, 1.0]))
        }
        ProblemKind::Cavity => (flow_form(params.re)?, unit(2), Some([0.5, 0.5])),
    };
    if kind != ProblemKind::Poisson && params.dim != 2 {
        return Err(Error::InvalidParameter(format!("{kind:?} is two-dimensional")));
    }
    let mut params = params;
    if kind == ProblemKind::Kovasznay && params.re.is_none() {
        params.re = Some(40.0);
    }
    Ok(ProblemSpec {
        kind,
        params,
        form,
        domain,
        pin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn poisson_term_counts() {
        let f = poisson_form(1).unwrap();
        assert_eq!(f.volume_terms.len() + f.face_terms.len(), 5);
        assert_eq!(f.load_terms.len(), 1);
        let f = poisson_form(2).unwrap();
        assert_eq!(f.fields[1].comps, 2);
        assert_eq!(f.tests[1].comps, 2);
    }

    #[test]
    fn stokes_components() {
        let f = stokes_vgp_form(1.0).unwrap();
        assert_eq!(f.fields.iter().map(|v| v.comps).collect::<Vec<_>>(), vec![2, 4, 1]);
        assert!(stokes_vgp_form(0.0).is_err());
    }

    #[test]
    fn ns_requires_background() {
        assert!(navier_stokes_linearized_form(40.0, None).is_err());
    }

    #[test]
    fn gram_integrand_poisson_fragment() {
        let f = poisson_form(2).unwrap();
        let g = graph_gram_integrand(&f).unwrap();
        let coefs: Vec<f64> = f
            .volume_terms
            .iter()
            .map(|t| match t.coef {
                Coef::Const(c) => c,
                _ => unreachable!(),
            })
            .collect();
        // v only: |grad v|^2 + v^2
        let v = [(2.0, [3.0, -1.0]), (0.0, [0.0, 0.0]), (0.0, [0.0, 0.0])];
        assert!((g.eval(&coefs, &v, &v) - (9.0 + 1.0 + 4.0)).abs() < 1e-14);
        let z = [(0.0, [0.0, 0.0]); 3];
        assert_eq!(g.eval(&coefs, &z, &z), 0.0);
        assert!(graph_gram_integrand(&f.clone().with_beta(0.0)).is_err());
    }

    #[test]
    fn kovasznay_lambda_value() {
        let l = kovasznay_lambda(40.0);
        assert!(l < 0.0);
        assert!((l + 0.963_740_544_195_769).abs() < 1e-12, "{l}");
    }

    // Hand-derived second derivatives of the reference flows; the library
    // only provides values and first derivatives.
    fn stokes_laplacian(x: f64, y: f64) -> [f64; 2] {
        let ex = x.exp();
        [2.0 * ex * y.sin(), 2.0 * ex * y.cos()]
    }

    #[test]
    fn stokes_reference_satisfies_strong_equations() {
        let spec = manufactured_solution(ProblemKind::Stokes, ProblemParams::default()).unwrap();
        let mut seed = 3;
        let h = 1e-5;
        for _ in 0..20 {
            let x = [2.0 * lcg(&mut seed) - 1.0, 2.0 * lcg(&mut seed) - 1.0];
            let (u, g, _) = spec.exact_flow(&x).unwrap();
            // gradient against central differences
            for i in 0..2 {
                for a in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += h;
                    xm[a] -= h;
                    let fd = (spec.exact_flow(&xp).unwrap().0[i] - spec.exact_flow(&xm).unwrap().0[i]) / (2.0 * h);
                    assert!((fd - g[i][a]).abs() < 1e-7);
                }
            }
            let _ = u;
            assert!((g[0][0] + g[1][1]).abs() < 1e-12);
            let lap = stokes_laplacian(x[0], x[1]);
            let dp = [
                2.0 * x[0].exp() * x[1].sin(),
                2.0 * x[0].exp() * x[1].cos(),
            ];
            let p = spec.exact_field(6, &x).unwrap();
            assert!((p - 2.0 * x[0].exp() * x[1].sin()).abs() < 1e-14);
            for i in 0..2 {
                assert!((-lap[i] + dp[i]).abs() < 1e-12);
            }
        }
        assert!(spec.exact_field(6, &[0.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kovasznay_reference_satisfies_navier_stokes() {
        let spec = manufactured_solution(
            ProblemKind::Kovasznay,
            ProblemParams {
                re: Some(40.0),
                ..Default::default()
            },
        )
        .unwrap();
        let re = 40.0;
        let l = kovasznay_lambda(re);
        let k = 2.0 * PI;
        let mut seed = 11;
        for _ in 0..20 {
            let x = [-0.5 + 2.0 * lcg(&mut seed), 2.0 * lcg(&mut seed)];
            let e = (l * x[0]).exp();
            let (s, c) = (k * x[1]).sin_cos();
            let (u, g, _) = spec.exact_flow(&x).unwrap();
            // Laplacians: u1 = 1 - e c, u2 = l/k e s
            let lap = [-(l * l - k * k) * e * c, l / k * (l * l - k * k) * e * s];
            let dp = [-l * (2.0 * l * x[0]).exp(), 0.0];
            for i in 0..2 {
                let conv = u[0] * g[i][0] + u[1] * g[i][1];
                let r = conv + dp[i] - lap[i] / re;
                assert!(r.abs() < 1e-10, "momentum residual {r}");
            }
            assert!((g[0][0] + g[1][1]).abs() < 1e-12);
        }
        assert!(spec.exact_field(6, &[0.5, 1.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kovasznay_positive_pressure_sign_is_not_a_solution() {
        let spec = manufactured_solution(ProblemKind::Kovasznay, ProblemParams::default()).unwrap();
        let re = 40.0;
        let l = kovasznay_lambda(re);
        let k = 2.0 * PI;
        let x = [0.3, 0.7];
        let e = (l * x[0]).exp();
        let (u, g, _) = spec.exact_flow(&x).unwrap();
        let lap0 = -(l * l - k * k) * e * (k * x[1]).cos();
        let conv0 = u[0] * g[0][0] + u[1] * g[0][1];
        let dp_plus = l * (2.0 * l * x[0]).exp();
        assert!((conv0 + dp_plus - lap0 / re).abs() > 1e-2);
    }

    #[test]
    fn cavity_lid_ramp() {
        let spec = manufactured_solution(ProblemKind::Cavity, ProblemParams::default()).unwrap();
        assert_eq!(spec.boundary_value(0, &[0.0, 1.0]), 0.0);
        assert!((spec.boundary_value(0, &[1.0 / 128.0, 1.0]) - 0.5).abs() < 1e-12);
        assert_eq!(spec.boundary_value(0, &[0.5, 1.0]), 1.0);
        assert_eq!(spec.boundary_value(1, &[0.5, 1.0]), 0.0);
        assert_eq!(spec.boundary_value(0, &[0.5, 0.0]), 0.0);
    }
}
