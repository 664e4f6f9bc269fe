//! Nodal tensor-product Lagrange bases at Lobatto points, coarse-in-fine
//! reconciliation and the field-to-trace map used by prolongation.

mod lagrange;
pub mod quadrature;

pub use lagrange::Lagrange1d;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Face, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellShape {
    Interval,
    Quad,
    /// An edge of a quadrilateral (one-dimensional).
    QuadFace,
    /// An endpoint of an interval (zero-dimensional).
    IntervalFace,
}

impl CellShape {
    pub fn dim(self) -> usize {
        match self {
            CellShape::Interval | CellShape::QuadFace => 1,
            CellShape::Quad => 2,
            CellShape::IntervalFace => 0,
        }
    }

    fn is_face(self) -> bool {
        matches!(self, CellShape::QuadFace | CellShape::IntervalFace)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    ScalarL2,
    ScalarH1,
    VectorL2,
    NormalTrace,
    H1Trace,
}

impl SpaceKind {
    fn is_trace(self) -> bool {
        matches!(self, SpaceKind::NormalTrace | SpaceKind::H1Trace)
    }
}

/// A nodal tensor-product basis. Vector bases are stored component-major:
/// function `c * n + i` is `e_c` times scalar function `i`.
#[derive(Clone, Debug)]
pub struct Basis {
    order: usize,
    shape: CellShape,
    kind: SpaceKind,
    line: Lagrange1d,
}

pub fn build_basis(order: usize, shape: CellShape, kind: SpaceKind) -> Result<Basis> {
    if shape.is_face() != kind.is_trace() {
        return Err(Error::UnsupportedBasis(format!("{kind:?} on {shape:?}")));
    }
    Ok(Basis {
        order,
        shape,
        kind,
        line: Lagrange1d::new(order),
    })
}

impl Basis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn shape(&self) -> CellShape {
        self.shape
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn components(&self) -> usize {
        match self.kind {
            SpaceKind::VectorL2 => self.dim(),
            _ => 1,
        }
    }

    pub fn scalar_cardinality(&self) -> usize {
        self.line.len().pow(self.dim() as u32)
    }

    pub fn cardinality(&self) -> usize {
        self.components() * self.scalar_cardinality()
    }

    /// Reference coordinates of the scalar nodes (x index fastest).
    pub fn nodes(&self) -> Vec<Point> {
        let n1 = self.line.nodes();
        match self.dim() {
            0 => vec![[0.0, 0.0]],
            1 => n1.iter().map(|&x| [x, 0.0]).collect(),
            _ => {
                let mut out = Vec::with_capacity(n1.len() * n1.len());
                for &y in n1 {
                    for &x in n1 {
                        out.push([x, y]);
                    }
                }
                out
            }
        }
    }

    pub fn eval_scalar(&self, xi: &Point) -> Vec<f64> {
        match self.dim() {
            0 => vec![1.0],
            1 => self.line.values(xi[0]),
            _ => {
                let vx = self.line.values(xi[0]);
                let vy = self.line.values(xi[1]);
                let mut out = Vec::with_capacity(vx.len() * vy.len());
                for &b in &vy {
                    for &a in &vx {
                        out.push(a * b);
                    }
                }
                out
            }
        }
    }

    /// Reference gradients of the scalar functions.
    pub fn grad_scalar(&self, xi: &Point) -> Vec<Point> {
        match self.dim() {
            0 => vec![[0.0, 0.0]],
            1 => self.line.derivatives(xi[0]).into_iter().map(|d| [d, 0.0]).collect(),
            _ => {
                let vx = self.line.values(xi[0]);
                let vy = self.line.values(xi[1]);
                let dx = self.line.derivatives(xi[0]);
                let dy = self.line.derivatives(xi[1]);
                let mut out = Vec::with_capacity(vx.len() * vy.len());
                for j in 0..vy.len() {
                    for i in 0..vx.len() {
                        out.push([dx[i] * vy[j], vx[i] * dy[j]]);
                    }
                }
                out
            }
        }
    }
}

/// Sequence of child indices leading from an ancestor reference cell down to
/// a descendant. Child `c` of a `dim`-cube takes bit `a` of `c` as its side
/// along axis `a`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RefinementBranch {
    pub dim: usize,
    pub steps: Vec<u8>,
}

impl RefinementBranch {
    pub fn new(dim: usize, steps: Vec<u8>) -> Self {
        Self { dim, steps }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, steps: vec![] }
    }

    /// Maps descendant reference coordinates into the ancestor's.
    pub fn map_to_ancestor(&self, xi: &Point) -> Point {
        let mut p = *xi;
        for &child in self.steps.iter().rev() {
            for (a, x) in p.iter_mut().enumerate().take(self.dim) {
                let bit = ((child >> a) & 1) as f64;
                *x = 0.5 * (*x + 2.0 * bit - 1.0);
            }
        }
        p
    }
}

type ReconcileKey = (usize, usize, CellShape, SpaceKind, RefinementBranch);

fn reconcile_cache() -> &'static RwLock<HashMap<ReconcileKey, Arc<Mat<f64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<ReconcileKey, Arc<Mat<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Expresses each coarse basis function in the fine nodal basis: entry
/// `(i, j)` is coarse function `i` evaluated at fine node `j` mapped through
/// `branch`. Fine coefficients of a coarse function `c` are `M^T c`.
pub fn reconcile(coarse: &Basis, fine: &Basis, branch: &RefinementBranch) -> Result<Arc<Mat<f64>>> {
    if coarse.shape != fine.shape || coarse.kind != fine.kind {
        return Err(Error::NonNested(format!(
            "{:?}/{:?} vs {:?}/{:?}",
            coarse.shape, coarse.kind, fine.shape, fine.kind
        )));
    }
    if fine.order < coarse.order && fine.dim() > 0 {
        return Err(Error::NonNested(format!(
            "fine order {} below coarse order {}",
            fine.order, coarse.order
        )));
    }
    if branch.dim != coarse.dim() && !branch.steps.is_empty() {
        return Err(Error::NonNested("branch dimension differs from basis".into()));
    }
    let key = (coarse.order, fine.order, coarse.shape, coarse.kind, branch.clone());
    if let Some(m) = reconcile_cache().read().expect("cache poisoned").get(&key) {
        return Ok(m.clone());
    }
    let nodes = fine.nodes();
    let nc = coarse.scalar_cardinality();
    let nf = fine.scalar_cardinality();
    let comps = coarse.components();
    let mut m = Mat::<f64>::zeros(comps * nc, comps * nf);
    for (j, node) in nodes.iter().enumerate() {
        let vals = coarse.eval_scalar(&branch.map_to_ancestor(node));
        for (i, v) in vals.into_iter().enumerate() {
            let v = if v.abs() < 1e-15 { 0.0 } else { v };
            for c in 0..comps {
                m[(c * nc + i, c * nf + j)] = v;
            }
        }
    }
    let m = Arc::new(m);
    // entry() keeps the first writer's value if two threads race
    let mut guard = reconcile_cache().write().expect("cache poisoned");
    Ok(guard.entry(key).or_insert(m).clone())
}

/// Nodal trace coefficients on `face` of the field represented in
/// `field_basis`. Rows are the `trace_order` face nodes, columns the field
/// functions. For `NormalTrace` the field basis must be vector valued and the
/// rows hold `(field . normal)` at the face nodes.
pub fn trace_gamma(
    field_basis: &Basis,
    face: Face,
    trace_order: usize,
    kind: SpaceKind,
    normal: &[f64],
) -> Result<Mat<f64>> {
    let dim = field_basis.dim();
    if field_basis.shape.is_face() || face.axis >= dim {
        return Err(Error::UnsupportedBasis("face does not belong to the field cell".into()));
    }
    if dim > 1 && trace_order < field_basis.order {
        return Err(Error::DegreeMismatch {
            field: field_basis.order,
            trace: trace_order,
        });
    }
    let face_shape = if dim == 1 {
        CellShape::IntervalFace
    } else {
        CellShape::QuadFace
    };
    let face_basis = build_basis(trace_order, face_shape, kind)?;
    let nodes = face_basis.nodes();
    let ns = field_basis.scalar_cardinality();
    let mut m = Mat::<f64>::zeros(nodes.len(), field_basis.cardinality());
    for (r, t) in nodes.iter().enumerate() {
        let xi = face.to_cell_ref(dim, t[0]);
        let vals = field_basis.eval_scalar(&xi);
        match (kind, field_basis.kind) {
            (SpaceKind::H1Trace, SpaceKind::ScalarL2 | SpaceKind::ScalarH1) => {
                for (i, v) in vals.iter().enumerate() {
                    m[(r, i)] = *v;
                }
            }
            (SpaceKind::NormalTrace, SpaceKind::VectorL2) => {
                for c in 0..dim {
                    for (i, v) in vals.iter().enumerate() {
                        m[(r, c * ns + i)] = normal[c] * v;
                    }
                }
            }
            _ => {
                return Err(Error::UnsupportedBasis(format!(
                    "trace {kind:?} of {:?}",
                    field_basis.kind
                )))
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn linear_interval_hats_are_nodal() {
        let b = build_basis(1, CellShape::Interval, SpaceKind::ScalarH1).unwrap();
        assert_eq!(b.cardinality(), 2);
        assert_eq!(b.eval_scalar(&[-1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(b.eval_scalar(&[1.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn constant_quad_basis() {
        let b = build_basis(0, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        assert_eq!(b.cardinality(), 1);
        assert_eq!(b.eval_scalar(&[0.3, -0.7]), vec![1.0]);
    }

    #[test]
    fn quadratic_nodes_are_lobatto() {
        let b = build_basis(2, CellShape::Interval, SpaceKind::ScalarH1).unwrap();
        let xs: Vec<f64> = b.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn cardinalities() {
        let b = build_basis(3, CellShape::Quad, SpaceKind::VectorL2).unwrap();
        assert_eq!(b.cardinality(), 2 * 16);
        let f = build_basis(3, CellShape::QuadFace, SpaceKind::H1Trace).unwrap();
        assert_eq!(f.cardinality(), 4);
        let p = build_basis(5, CellShape::IntervalFace, SpaceKind::NormalTrace).unwrap();
        assert_eq!(p.cardinality(), 1);
        assert!(build_basis(1, CellShape::Quad, SpaceKind::H1Trace).is_err());
        assert!(build_basis(1, CellShape::QuadFace, SpaceKind::ScalarL2).is_err());
    }

    #[test]
    fn nodal_property_holds() {
        for order in 0..9 {
            let b = build_basis(order, CellShape::Quad, SpaceKind::ScalarH1).unwrap();
            for (i, node) in b.nodes().iter().enumerate() {
                let v = b.eval_scalar(node);
                for (j, vj) in v.iter().enumerate() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((vj - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut seed = 7;
        for order in 1..7 {
            let b = build_basis(order, CellShape::Quad, SpaceKind::ScalarH1).unwrap();
            for _ in 0..5 {
                let p = [0.9 * lcg(&mut seed), 0.9 * lcg(&mut seed)];
                let g = b.grad_scalar(&p);
                let h = 1e-6;
                for a in 0..2 {
                    let mut pp = p;
                    let mut pm = p;
                    pp[a] += h;
                    pm[a] -= h;
                    let vp = b.eval_scalar(&pp);
                    let vm = b.eval_scalar(&pm);
                    for i in 0..g.len() {
                        let fd = (vp[i] - vm[i]) / (2.0 * h);
                        assert!((fd - g[i][a]).abs() < 1e-6, "order {order}: {fd} vs {}", g[i][a]);
                    }
                }
            }
        }
    }

    #[test]
    fn reconcile_identity_for_same_basis() {
        let b = build_basis(3, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        let m = reconcile(&b, &b, &RefinementBranch::identity(2)).unwrap();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((m[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reconcile_linear_into_left_child() {
        let b = build_basis(1, CellShape::Interval, SpaceKind::ScalarH1).unwrap();
        let m = reconcile(&b, &b, &RefinementBranch::new(1, vec![0])).unwrap();
        // coarse hat at -1 seen at the child's nodes (-1 and 0 in the parent)
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reconcile_reproduces_coarse_polynomials() {
        let mut seed = 42;
        let coarse = build_basis(2, CellShape::Interval, SpaceKind::ScalarL2).unwrap();
        let fine = build_basis(4, CellShape::Interval, SpaceKind::ScalarL2).unwrap();
        let branch = RefinementBranch::new(1, vec![1, 0]);
        let m = reconcile(&coarse, &fine, &branch).unwrap();
        let c: Vec<f64> = (0..3).map(|_| lcg(&mut seed)).collect();
        let f: Vec<f64> = (0..5).map(|j| (0..3).map(|i| m[(i, j)] * c[i]).sum()).collect();
        for _ in 0..10 {
            let x = [lcg(&mut seed), 0.0];
            let fine_val: f64 = fine.eval_scalar(&x).iter().zip(&f).map(|(a, b)| a * b).sum();
            let xc = branch.map_to_ancestor(&x);
            let coarse_val: f64 = coarse.eval_scalar(&xc).iter().zip(&c).map(|(a, b)| a * b).sum();
            assert!((fine_val - coarse_val).abs() < 1e-12);
        }
    }

    #[test]
    fn reconcile_rejects_non_nested() {
        let coarse = build_basis(3, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        let fine = build_basis(2, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        assert!(reconcile(&coarse, &fine, &RefinementBranch::identity(2)).is_err());
    }

    #[test]
    fn gamma_of_constant_and_normal_trace() {
        let u = build_basis(2, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        let m = trace_gamma(&u, Face::from_index(1), 3, SpaceKind::H1Trace, &[1.0, 0.0]).unwrap();
        for r in 0..m.nrows() {
            let s: f64 = (0..m.ncols()).map(|c| m[(r, c)]).sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
        let sigma = build_basis(1, CellShape::Quad, SpaceKind::VectorL2).unwrap();
        let m = trace_gamma(&sigma, Face::from_index(2), 1, SpaceKind::NormalTrace, &[0.0, 1.0]).unwrap();
        // sigma = (1, 0): all x-component coefficients one
        for r in 0..m.nrows() {
            let s: f64 = (0..4).map(|c| m[(r, c)]).sum();
            assert!(s.abs() < 1e-14);
        }
        assert!(trace_gamma(&u, Face::from_index(0), 1, SpaceKind::H1Trace, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn gamma_of_x_squared_on_bottom_face() {
        let u = build_basis(2, CellShape::Quad, SpaceKind::ScalarL2).unwrap();
        let coeffs: Vec<f64> = u.nodes().iter().map(|p| p[0] * p[0]).collect();
        let m = trace_gamma(&u, Face::from_index(2), 2, SpaceKind::H1Trace, &[0.0, -1.0]).unwrap();
        let face_nodes = quadrature::lobatto_nodes(2);
        for (r, t) in face_nodes.iter().enumerate() {
            let v: f64 = (0..m.ncols()).map(|c| m[(r, c)] * coeffs[c]).sum();
            assert!((v - t * t).abs() < 1e-13);
        }
    }
}
