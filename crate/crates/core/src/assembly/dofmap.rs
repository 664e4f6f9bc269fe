//! Global numbering of trace unknowns on a (possibly 1-irregular) mesh.
//!
//! Trace unknowns live on geometric entities of the skeleton. In 2D an H1
//! trace has one node per vertex plus interior edge nodes, while a normal
//! trace owns all its nodes on the edge. Faces of a cell whose neighbor is
//! coarser are slaved to the coarse neighbor's face (the master edge), and
//! vertices hanging in the middle of a master edge are expanded through the
//! master edge basis. Each local trace unknown therefore maps to a short
//! weighted list of global unknowns.

use std::collections::HashMap;

use crate::basis::Lagrange1d;
use crate::error::{Error, Result};
use crate::formulation::{FormDescriptor, TraceKind};
use crate::geometry::{Face, Point};
use crate::mesh::{MeshTopology, Neighbor};

use super::local::CellLayout;

/// Drop expansion weights below this magnitude.
const WEIGHT_EPS: f64 = 1e-14;

/// A face of the skeleton in lattice coordinates: normal `axis`, position
/// `fixed` along it, and tangent span `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey {
    pub axis: usize,
    pub fixed: i64,
    pub lo: i64,
    pub hi: i64,
}

impl EdgeKey {
    fn of_face(mesh: &MeshTopology, id: usize, face: Face) -> Self {
        let b = mesh.int_box(id);
        let t = face.tangent_axis();
        EdgeKey {
            axis: face.axis,
            fixed: b[face.axis][face.side],
            lo: b[t][0],
            hi: b[t][1],
        }
    }

    fn lattice_point(&self, s: i64) -> [i64; 2] {
        let mut p = [0; 2];
        p[self.axis] = self.fixed;
        p[1 - self.axis] = s;
        p
    }

    /// Face parameter in [-1, 1] of tangent lattice coordinate `s`.
    fn param(&self, s: f64) -> f64 {
        2.0 * (s - self.lo as f64) / (self.hi - self.lo) as f64 - 1.0
    }

    fn position(&self, mesh: &MeshTopology, t: f64) -> Point {
        let a = mesh.lattice_to_physical(self.lattice_point(self.lo));
        let b = mesh.lattice_to_physical(self.lattice_point(self.hi));
        let s = 0.5 * (t + 1.0);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    Vertex([i64; 2]),
    Edge(EdgeKey),
}

impl Entity {
    /// True if the entity (its open interior for an edge) lies strictly
    /// inside the lattice box `b` of a cell.
    pub fn strictly_inside(&self, dim: usize, b: &[[i64; 2]; 2]) -> bool {
        match self {
            Entity::Vertex(p) => (0..dim).all(|a| p[a] > b[a][0] && p[a] < b[a][1]),
            Entity::Edge(e) => {
                let t = 1 - e.axis;
                e.fixed > b[e.axis][0] && e.fixed < b[e.axis][1] && e.lo >= b[t][0] && e.hi <= b[t][1]
            }
        }
    }

    /// True if the entity lies on the closed boundary of the lattice box `b`
    /// (and not in its interior).
    pub fn on_box_boundary(&self, dim: usize, b: &[[i64; 2]; 2]) -> bool {
        match self {
            Entity::Vertex(p) => {
                (0..dim).all(|a| p[a] >= b[a][0] && p[a] <= b[a][1]) && !self.strictly_inside(dim, b)
            }
            Entity::Edge(e) => {
                let t = 1 - e.axis;
                (e.fixed == b[e.axis][0] || e.fixed == b[e.axis][1]) && e.lo >= b[t][0] && e.hi <= b[t][1]
            }
        }
    }
}

/// Description of one global trace unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct DofInfo {
    pub comp: usize,
    pub entity: Entity,
    /// Node number along the edge (0 for vertices).
    pub node: usize,
    pub position: Point,
    /// Parameter along the edge in [-1, 1]; 0 for vertices.
    pub param: f64,
}

/// How a cell face sees its master edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceMaster {
    pub key: EdgeKey,
    /// `t_master = scale * t_local + shift`.
    pub scale: f64,
    pub shift: f64,
}

#[derive(Clone, Debug)]
pub struct CellDofs {
    pub layout: CellLayout,
    /// Per local trace unknown (index relative to the first trace unknown).
    pub traces: Vec<Vec<(usize, f64)>>,
    pub masters: Vec<FaceMaster>,
}

#[derive(Clone, Debug)]
pub struct DofMap {
    pub dim: usize,
    pub n_trace_comps: usize,
    pub dofs: Vec<DofInfo>,
    /// Free index of every global unknown, `None` for Dirichlet unknowns.
    pub free_index: Vec<Option<usize>>,
    pub free_dofs: Vec<usize>,
    /// Boundary data of fixed unknowns (zero for free ones).
    pub fixed_values: Vec<f64>,
    /// Indexed by arena cell id; `None` for inactive cells.
    pub cells: Vec<Option<CellDofs>>,
    /// Cell and local field index of the pinned pressure unknown.
    pub pin: Option<(usize, usize)>,
    trace_kinds: Vec<TraceKind>,
    edge_orders: HashMap<EdgeKey, usize>,
    hanging: HashMap<[i64; 2], EdgeKey>,
    index: HashMap<(Entity, usize, usize), usize>,
}

impl DofMap {
    /// Builds the numbering for `mesh` and `form`. `boundary` gives Dirichlet
    /// data for a trace component at a boundary point; `pin` is the point at
    /// which pressure (the last field component) is pinned to zero.
    pub fn new<F>(mesh: &MeshTopology, form: &FormDescriptor, boundary: F, pin: Option<Point>) -> Result<Self>
    where
        F: Fn(usize, &Point) -> f64,
    {
        let dim = mesh.dim();
        if dim != form.dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: form.dim,
            });
        }
        let n_tc = form.n_trace_comps();
        let trace_kinds: Vec<TraceKind> = (0..n_tc).map(|c| form.trace_kind(c)).collect();
        let active = mesh.active_ids();
        let mut map = DofMap {
            dim,
            n_trace_comps: n_tc,
            dofs: Vec::new(),
            free_index: Vec::new(),
            free_dofs: Vec::new(),
            fixed_values: Vec::new(),
            cells: vec![None; mesh.arena_len()],
            pin: None,
            trace_kinds,
            edge_orders: HashMap::new(),
            hanging: HashMap::new(),
            index: HashMap::new(),
        };

        // Neighbors, master edges, their orders and the hanging vertices.
        let mut neighbors: HashMap<usize, Vec<Neighbor>> = HashMap::new();
        for &id in &active {
            let nb: Vec<Neighbor> = Face::all(dim).map(|f| mesh.face_neighbor(id, f)).collect::<Result<_>>()?;
            if dim == 2 {
                for (fi, n) in nb.iter().enumerate() {
                    let face = Face::from_index(fi);
                    let k = mesh.order(id);
                    let order = match n {
                        Neighbor::Coarser(_) => continue,
                        Neighbor::Boundary => k,
                        Neighbor::Same(o) => k.max(mesh.order(*o)),
                        Neighbor::Finer(list) => list.iter().fold(k, |m, &o| m.max(mesh.order(o))),
                    };
                    let key = EdgeKey::of_face(mesh, id, face);
                    map.edge_orders.insert(key, order);
                    if let Neighbor::Finer(list) = n {
                        for &o in list {
                            let sub = EdgeKey::of_face(mesh, o, face.opposite());
                            for s in [sub.lo, sub.hi] {
                                if s > key.lo && s < key.hi {
                                    map.hanging.insert(key.lattice_point(s), key);
                                }
                            }
                        }
                    }
                }
            }
            neighbors.insert(id, nb);
        }

        // Face masters and layouts.
        let mut masters_of: HashMap<usize, Vec<FaceMaster>> = HashMap::new();
        for &id in &active {
            let nb = &neighbors[&id];
            let mut masters = Vec::with_capacity(2 * dim);
            let mut face_orders = Vec::with_capacity(2 * dim);
            for (fi, n) in nb.iter().enumerate() {
                let face = Face::from_index(fi);
                if dim == 1 {
                    let x = mesh.int_box(id)[0][face.side];
                    let key = EdgeKey {
                        axis: 0,
                        fixed: x,
                        lo: 0,
                        hi: 0,
                    };
                    let k = match n {
                        Neighbor::Boundary => mesh.order(id),
                        Neighbor::Same(o) | Neighbor::Coarser(o) => mesh.order(id).max(mesh.order(*o)),
                        Neighbor::Finer(list) => list.iter().fold(mesh.order(id), |m, &o| m.max(mesh.order(o))),
                    };
                    masters.push(FaceMaster {
                        key,
                        scale: 1.0,
                        shift: 0.0,
                    });
                    face_orders.push(k);
                    continue;
                }
                let own = EdgeKey::of_face(mesh, id, face);
                let m = match n {
                    Neighbor::Coarser(o) => {
                        let key = EdgeKey::of_face(mesh, *o, face.opposite());
                        let lo = key.param(own.lo as f64);
                        let hi = key.param(own.hi as f64);
                        FaceMaster {
                            key,
                            scale: 0.5 * (hi - lo),
                            shift: 0.5 * (hi + lo),
                        }
                    }
                    _ => FaceMaster {
                        key: own,
                        scale: 1.0,
                        shift: 0.0,
                    },
                };
                let k = *map
                    .edge_orders
                    .get(&m.key)
                    .ok_or_else(|| Error::Constraint(format!("cell {id}: master edge of face {fi} not found")))?;
                masters.push(m);
                face_orders.push(k);
            }
            let layout = CellLayout::new(form, mesh.order(id), &face_orders);
            map.cells[id] = Some(CellDofs {
                layout,
                traces: Vec::new(),
                masters: masters.clone(),
            });
            masters_of.insert(id, masters);
        }

        // Number the unknowns in cell, face, component, node order.
        let extent = mesh.lattice_extent();
        for &id in &active {
            let masters = masters_of[&id].clone();
            for (fi, m) in masters.iter().enumerate() {
                for comp in 0..n_tc {
                    if dim == 1 {
                        let p = [m.key.fixed, 0];
                        map.register(mesh, Entity::Vertex(p), comp, 0, 0.0, mesh.lattice_to_physical(p));
                        continue;
                    }
                    let order = form.trace_order(comp, map.edge_orders[&m.key]);
                    let nodes = Lagrange1d::new(order).nodes().to_vec();
                    for (j, &t) in nodes.iter().enumerate() {
                        let is_end = map.trace_kinds[comp] == TraceKind::H1 && (j == 0 || j == order);
                        if is_end {
                            let p = m.key.lattice_point(if j == 0 { m.key.lo } else { m.key.hi });
                            if !map.hanging.contains_key(&p) {
                                map.register(mesh, Entity::Vertex(p), comp, 0, 0.0, mesh.lattice_to_physical(p));
                            }
                        } else {
                            let pos = m.key.position(mesh, t);
                            map.register(mesh, Entity::Edge(m.key), comp, j, t, pos);
                        }
                    }
                }
                let _ = fi;
            }
        }

        // Local-to-global expansions.
        for &id in &active {
            let masters = masters_of[&id].clone();
            let mut traces = Vec::new();
            let layout = map.cells[id].as_ref().expect("active cell").layout.clone();
            for block in &layout.trace_blocks {
                let m = masters[block.face];
                if dim == 1 {
                    let p = [m.key.fixed, 0];
                    traces.push(vec![(map.index[&(Entity::Vertex(p), block.comp, 0)], 1.0)]);
                    continue;
                }
                let line = Lagrange1d::new(block.order);
                let identity = m.scale == 1.0 && m.shift == 0.0;
                for &t in line.nodes() {
                    let row = if identity {
                        let j = line.nodes().iter().position(|&s| s == t).expect("node");
                        map.expand_master_node(m.key, block.comp, block.order, j)?
                    } else {
                        let tm = m.scale * t + m.shift;
                        let w = line.values(tm);
                        let mut acc = Vec::new();
                        for (j, wj) in w.iter().enumerate() {
                            if wj.abs() < WEIGHT_EPS {
                                continue;
                            }
                            for (g, v) in map.expand_master_node(m.key, block.comp, block.order, j)? {
                                acc.push((g, wj * v));
                            }
                        }
                        merge(acc)
                    };
                    traces.push(row);
                }
            }
            map.cells[id].as_mut().expect("active cell").traces = traces;
        }

        // Dirichlet data.
        let n = map.dofs.len();
        map.free_index = vec![None; n];
        map.fixed_values = vec![0.0; n];
        for g in 0..n {
            let d = &map.dofs[g];
            let on_boundary = match d.entity {
                Entity::Vertex(p) => (0..dim).any(|a| p[a] == 0 || p[a] == extent[a]),
                Entity::Edge(e) => e.fixed == 0 || e.fixed == extent[e.axis],
            };
            if on_boundary && form.is_dirichlet(d.comp) {
                map.fixed_values[g] = boundary(d.comp, &d.position);
            } else {
                map.free_index[g] = Some(map.free_dofs.len());
                map.free_dofs.push(g);
            }
        }

        if let Some(x) = pin {
            map.pin = Some(pin_location(mesh, form, x)?);
        }
        Ok(map)
    }

    fn register(&mut self, _mesh: &MeshTopology, entity: Entity, comp: usize, node: usize, param: f64, position: Point) {
        let key = (entity, comp, node);
        if self.index.contains_key(&key) {
            return;
        }
        self.index.insert(key, self.dofs.len());
        self.dofs.push(DofInfo {
            comp,
            entity,
            node,
            position,
            param,
        });
    }

    /// Global expansion of node `j` of the basis of order `order` on master
    /// edge `key`.
    fn expand_master_node(&self, key: EdgeKey, comp: usize, order: usize, j: usize) -> Result<Vec<(usize, f64)>> {
        if self.trace_kinds[comp] == TraceKind::H1 && (j == 0 || j == order) {
            let p = key.lattice_point(if j == 0 { key.lo } else { key.hi });
            return self.expand_vertex(p, comp, 0);
        }
        self.index
            .get(&(Entity::Edge(key), comp, j))
            .map(|&g| vec![(g, 1.0)])
            .ok_or_else(|| Error::Constraint(format!("unnumbered edge node {key:?} comp {comp} node {j}")))
    }

    fn expand_vertex(&self, p: [i64; 2], comp: usize, depth: usize) -> Result<Vec<(usize, f64)>> {
        if depth > 64 {
            return Err(Error::Constraint(format!("hanging vertex {p:?} does not resolve")));
        }
        let Some(&key) = self.hanging.get(&p) else {
            return self
                .index
                .get(&(Entity::Vertex(p), comp, 0))
                .map(|&g| vec![(g, 1.0)])
                .ok_or_else(|| Error::Constraint(format!("unconstrained vertex {p:?} comp {comp}")));
        };
        let order = self.h1_order(&key);
        let line = Lagrange1d::new(order);
        let w = line.values(key.param(p[1 - key.axis] as f64));
        let mut acc = Vec::new();
        for (j, wj) in w.iter().enumerate() {
            if wj.abs() < WEIGHT_EPS {
                continue;
            }
            let part = if j == 0 || j == order {
                let q = key.lattice_point(if j == 0 { key.lo } else { key.hi });
                self.expand_vertex(q, comp, depth + 1)?
            } else {
                self.expand_master_node(key, comp, order, j)?
            };
            for (g, v) in part {
                acc.push((g, wj * v));
            }
        }
        Ok(merge(acc))
    }

    fn h1_order(&self, key: &EdgeKey) -> usize {
        self.edge_orders[key] + 1
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn cell(&self, id: usize) -> Result<&CellDofs> {
        self.cells
            .get(id)
            .and_then(|c| c.as_ref())
            .ok_or(Error::InactiveCell(id))
    }

    pub fn layout(&self, id: usize) -> Result<&CellLayout> {
        Ok(&self.cell(id)?.layout)
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, c)| c.is_some()).map(|(i, _)| i)
    }

    /// Local pinned field index of cell `id`, if the pin lies there.
    pub fn pinned_field(&self, id: usize) -> Option<usize> {
        self.pin.filter(|p| p.0 == id).map(|p| p.1)
    }

    /// Local trace values of a cell from a full global trace vector.
    pub fn gather(&self, id: usize, global: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .cell(id)?
            .traces
            .iter()
            .map(|row| row.iter().map(|&(g, w)| w * global[g]).sum())
            .collect())
    }

    /// Full global vector (fixed entries from the boundary data) from free values.
    pub fn expand_free(&self, free: &[f64]) -> Vec<f64> {
        let mut x = self.fixed_values.clone();
        for (i, &g) in self.free_dofs.iter().enumerate() {
            x[g] = free[i];
        }
        x
    }

    pub fn restrict_free(&self, global: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&g| global[g]).collect()
    }

    /// Global weights giving the value of trace component `comp` of cell
    /// `id` at face parameter `t` on face `face`.
    pub fn face_trace_weights(&self, id: usize, face: usize, comp: usize, t: f64) -> Result<Vec<(usize, f64)>> {
        let cell = self.cell(id)?;
        let block = cell.layout.block(face, comp);
        let base = block.offset - cell.layout.n_fields;
        let vals = if self.dim == 1 {
            vec![1.0]
        } else {
            Lagrange1d::new(block.order).values(t)
        };
        let mut acc = Vec::new();
        for (m, v) in vals.iter().enumerate() {
            if v.abs() < WEIGHT_EPS {
                continue;
            }
            for &(g, w) in &cell.traces[base + m] {
                acc.push((g, v * w));
            }
        }
        Ok(merge(acc))
    }

    pub fn trace_kind(&self, comp: usize) -> TraceKind {
        self.trace_kinds[comp]
    }
}

/// Sums duplicate global indices and sorts by index.
fn merge(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (g, w) in v {
        match out.last_mut() {
            Some(last) if last.0 == g => last.1 += w,
            _ => out.push((g, w)),
        }
    }
    out.retain(|e| e.1.abs() >= WEIGHT_EPS);
    out
}

/// Lowest-id active cell containing `x` and the local index of the pressure
/// node (last field component) nearest to it.
fn pin_location(mesh: &MeshTopology, form: &FormDescriptor, x: Point) -> Result<(usize, usize)> {
    let dim = mesh.dim();
    let id = mesh
        .active_ids()
        .into_iter()
        .find(|&i| mesh.cells()[i].geom.contains(dim, &x, 1e-12))
        .ok_or_else(|| Error::InvalidParameter(format!("pin point {x:?} outside the mesh")))?;
    let cell = &mesh.cells()[id];
    let line = Lagrange1d::new(cell.order);
    let xi = cell.geom.to_reference(dim, &x);
    let nearest = |v: f64| {
        let mut best = 0;
        for (i, n) in line.nodes().iter().enumerate() {
            if (n - v).abs() < (line.nodes()[best] - v).abs() - 1e-14 {
                best = i;
            }
        }
        best
    };
    let n1 = line.len();
    let node = if dim == 1 { nearest(xi[0]) } else { nearest(xi[0]) + n1 * nearest(xi[1]) };
    let nf = n1.pow(dim as u32);
    let p = form.n_field_comps() - 1;
    Ok((id, p * nf + node))
}
