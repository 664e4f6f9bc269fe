//! Hierarchical axis-aligned meshes of intervals (1D) and quadrilaterals (2D).
//!
//! All cells ever created live in one arena; a `MeshTopology` value selects
//! the active leaves and carries per-cell polynomial orders. The levels of a
//! multigrid hierarchy are clones of the fine mesh with truncated active sets,
//! so a coarse cell and the fine cells below it share ids and the refinement
//! tree.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxGeom, Face, Point};

/// Depth of the integer coordinate lattice; cells deeper than this are
/// rejected.
pub const MAX_LEVEL: u32 = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub level: u32,
    /// Position among the cells of the same level, per axis.
    pub index: [i64; 2],
    pub order: usize,
    pub geom: BoxGeom,
}

/// What lies across one face of an active cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Boundary,
    Same(usize),
    /// This cell is the fine side of a hanging face.
    Coarser(usize),
    /// Active cells subdividing the face, ordered along the face.
    Finer(Vec<usize>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshTopology {
    dim: usize,
    domain: BoxGeom,
    root_counts: [usize; 2],
    cells: Vec<Cell>,
    root_cells: Vec<usize>,
    active: Vec<bool>,
    #[serde(skip)]
    keys: HashMap<(u32, i64, i64), usize>,
}

impl MeshTopology {
    /// Tensor-product mesh of `counts` cells per axis, all of order `order`.
    pub fn uniform(dim: usize, domain: BoxGeom, counts: [usize; 2], order: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim} not supported")));
        }
        let counts = if dim == 1 { [counts[0], 1] } else { counts };
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::Empty("mesh needs at least one cell per axis"));
        }
        let mut mesh = MeshTopology {
            dim,
            domain,
            root_counts: counts,
            cells: Vec::new(),
            root_cells: Vec::new(),
            active: Vec::new(),
            keys: HashMap::new(),
        };
        for iy in 0..counts[1] {
            for ix in 0..counts[0] {
                let id = mesh.cells.len();
                let geom = mesh.geom_of(0, [ix as i64, iy as i64]);
                mesh.cells.push(Cell {
                    id,
                    parent: None,
                    children: vec![],
                    level: 0,
                    index: [ix as i64, iy as i64],
                    order,
                    geom,
                });
                mesh.active.push(true);
                mesh.root_cells.push(id);
                mesh.keys.insert((0, ix as i64, iy as i64), id);
            }
        }
        Ok(mesh)
    }

    /// Unit-box mesh of `width` cells per axis.
    pub fn unit(dim: usize, width: usize, order: usize) -> Result<Self> {
        let domain = BoxGeom {
            lo: [0.0, 0.0],
            hi: [1.0, if dim == 1 { 0.0 } else { 1.0 }],
        };
        Self::uniform(dim, domain, [width, width], order)
    }

    /// Uniformly refines every active cell `times` times.
    pub fn refine_uniformly(&self, times: usize) -> Result<Self> {
        let mut mesh = self.clone();
        for _ in 0..times {
            let ids = mesh.active_ids();
            for id in ids {
                mesh.split(id)?;
            }
        }
        Ok(mesh)
    }

    fn geom_of(&self, level: u32, index: [i64; 2]) -> BoxGeom {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for a in 0..self.dim {
            let n = (self.root_counts[a] as f64) * (1u64 << level) as f64;
            let w = self.domain.width(a) / n;
            lo[a] = self.domain.lo[a] + w * index[a] as f64;
            hi[a] = if index[a] as f64 + 1.0 == n {
                self.domain.hi[a]
            } else {
                self.domain.lo[a] + w * (index[a] + 1) as f64
            };
        }
        BoxGeom { lo, hi }
    }

    fn rebuild_keys(&mut self) {
        self.keys = self
            .cells
            .iter()
            .map(|c| ((c.level, c.index[0], c.index[1]), c.id))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &BoxGeom {
        &self.domain
    }

    pub fn root_counts(&self) -> [usize; 2] {
        self.root_counts
    }

    pub fn root_cells(&self) -> &[usize] {
        &self.root_cells
    }

    /// Number of cells in the arena (active or not).
    pub fn arena_len(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, id: usize) -> Result<&Cell> {
        self.cells.get(id).ok_or(Error::UnknownCell(id))
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active.get(id).copied().unwrap_or(false)
    }

    fn require_active(&self, id: usize) -> Result<&Cell> {
        let c = self.cell(id)?;
        if !self.active[id] {
            return Err(Error::InactiveCell(id));
        }
        Ok(c)
    }

    /// Active cell ids in increasing order.
    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn order(&self, id: usize) -> usize {
        self.cells[id].order
    }

    pub fn set_order(&mut self, id: usize, order: usize) {
        self.cells[id].order = order;
    }

    /// Sets the order of every cell in the arena.
    pub fn set_all_orders(&mut self, order: usize) {
        for c in &mut self.cells {
            c.order = order;
        }
    }

    pub fn min_active_order(&self) -> usize {
        self.active_ids().iter().map(|&i| self.cells[i].order).min().unwrap_or(0)
    }

    pub fn max_active_order(&self) -> usize {
        self.active_ids().iter().map(|&i| self.cells[i].order).max().unwrap_or(0)
    }

    /// Integer lattice box of a cell: per axis `[lo, hi)` at depth `MAX_LEVEL`.
    pub fn int_box(&self, id: usize) -> [[i64; 2]; 2] {
        let c = &self.cells[id];
        let s = MAX_LEVEL - c.level;
        let mut b = [[0; 2]; 2];
        for a in 0..self.dim {
            b[a] = [c.index[a] << s, (c.index[a] + 1) << s];
        }
        b
    }

    /// Physical coordinates of a lattice point.
    pub fn lattice_to_physical(&self, p: [i64; 2]) -> Point {
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            let n = self.root_counts[a] as f64 * (1u64 << MAX_LEVEL) as f64;
            x[a] = self.domain.lo[a] + self.domain.width(a) * (p[a] as f64 / n);
        }
        x
    }

    /// Lattice extent of the whole domain per axis.
    pub fn lattice_extent(&self) -> [i64; 2] {
        let mut e = [0; 2];
        for a in 0..self.dim {
            e[a] = (self.root_counts[a] as i64) << MAX_LEVEL;
        }
        e
    }

    /// Finds the cell with the given level and index, if it exists in the arena.
    pub fn lookup(&self, level: u32, index: [i64; 2]) -> Option<usize> {
        self.keys.get(&(level, index[0], index[1])).copied()
    }

    /// Ancestor-or-self of `id` that is active in this mesh, if any.
    pub fn active_ancestor(&self, id: usize) -> Option<usize> {
        if id >= self.cells.len() {
            return None;
        }
        let mut cur = Some(id);
        while let Some(c) = cur {
            if self.active[c] {
                return Some(c);
            }
            cur = self.cells[c].parent;
        }
        None
    }

    /// Sequence of child indices from `ancestor` down to `id`.
    pub fn branch_from(&self, ancestor: usize, id: usize) -> Option<Vec<u8>> {
        let mut steps = Vec::new();
        let mut cur = id;
        while cur != ancestor {
            let p = self.cells[cur].parent?;
            let pos = self.cells[p].children.iter().position(|&c| c == cur)? as u8;
            steps.push(pos);
            cur = p;
        }
        steps.reverse();
        Some(steps)
    }

    pub fn face_neighbor(&self, id: usize, face: Face) -> Result<Neighbor> {
        let c = self.require_active(id)?;
        if face.axis >= self.dim {
            return Err(Error::InvalidParameter(format!("face {face:?} in {}D", self.dim)));
        }
        let level = c.level;
        let mut n = c.index;
        n[face.axis] += if face.side == 1 { 1 } else { -1 };
        let limit = (self.root_counts[face.axis] as i64) << level;
        if n[face.axis] < 0 || n[face.axis] >= limit {
            return Ok(Neighbor::Boundary);
        }
        for l in (0..=level).rev() {
            let s = level - l;
            if let Some(nid) = self.lookup(l, [n[0] >> s, n[1] >> s]) {
                if self.active[nid] {
                    return Ok(if l == level {
                        Neighbor::Same(nid)
                    } else {
                        Neighbor::Coarser(nid)
                    });
                }
            }
        }
        let nid = self
            .lookup(level, n)
            .ok_or_else(|| Error::Constraint(format!("cell {id}: nothing across face {}", face.index())))?;
        let mut out = Vec::new();
        self.collect_face_descendants(nid, face.opposite(), &mut out);
        Ok(Neighbor::Finer(out))
    }

    fn collect_face_descendants(&self, id: usize, face: Face, out: &mut Vec<usize>) {
        if self.active[id] {
            out.push(id);
            return;
        }
        for (b, &child) in self.cells[id].children.iter().enumerate() {
            if (b >> face.axis) & 1 == face.side {
                self.collect_face_descendants(child, face, out);
            }
        }
    }

    /// All active cells sharing a face with `id`, sorted.
    pub fn face_neighbors(&self, id: usize) -> Result<Vec<usize>> {
        let mut set = BTreeSet::new();
        for face in Face::all(self.dim) {
            match self.face_neighbor(id, face)? {
                Neighbor::Boundary => {}
                Neighbor::Same(n) | Neighbor::Coarser(n) => {
                    set.insert(n);
                }
                Neighbor::Finer(v) => set.extend(v),
            }
        }
        Ok(set.into_iter().collect())
    }

    /// Replaces an active cell by its children, reusing arena cells if they
    /// already exist. No closure refinement is performed.
    fn split(&mut self, id: usize) -> Result<Vec<usize>> {
        self.require_active(id)?;
        let level = self.cells[id].level + 1;
        if level > MAX_LEVEL {
            return Err(Error::InvalidParameter("refinement depth exceeded".into()));
        }
        let order = self.cells[id].order;
        let parent_index = self.cells[id].index;
        let n_children = 1usize << self.dim;
        let mut kids = Vec::with_capacity(n_children);
        for b in 0..n_children {
            let bits = [(b & 1) as i64, ((b >> 1) & 1) as i64];
            let mut index = [2 * parent_index[0] + bits[0], 0];
            if self.dim == 2 {
                index[1] = 2 * parent_index[1] + bits[1];
            }
            let cid = match self.lookup(level, index) {
                Some(cid) => cid,
                None => {
                    let cid = self.cells.len();
                    let geom = self.geom_of(level, index);
                    self.cells.push(Cell {
                        id: cid,
                        parent: Some(id),
                        children: vec![],
                        level,
                        index,
                        order,
                        geom,
                    });
                    self.active.push(false);
                    self.keys.insert((level, index[0], index[1]), cid);
                    cid
                }
            };
            self.cells[cid].order = order;
            self.active[cid] = true;
            kids.push(cid);
        }
        self.cells[id].children = kids.clone();
        self.active[id] = false;
        Ok(kids)
    }

    fn refine_with_closure(&mut self, id: usize) -> Result<()> {
        if !self.active[id] {
            return Ok(());
        }
        for face in Face::all(self.dim) {
            if let Neighbor::Coarser(n) = self.face_neighbor(id, face)? {
                self.refine_with_closure(n)?;
            }
        }
        self.split(id)?;
        Ok(())
    }

    /// Refines the listed active cells isotropically, refining further cells
    /// where needed so that no face is shared across more than one level.
    pub fn refine_cells(&self, ids: &[usize]) -> Result<MeshTopology> {
        for &id in ids {
            self.require_active(id)?;
        }
        let mut mesh = self.clone();
        let mut sorted: Vec<usize> = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for id in sorted {
            mesh.refine_with_closure(id)?;
        }
        Ok(mesh)
    }

    /// This mesh (active set and orders) expressed in the arena of `fine`,
    /// which must have been derived from it by refinement.
    pub fn embed_in(&self, fine: &MeshTopology) -> Result<MeshTopology> {
        let n = self.cells.len();
        if fine.cells.len() < n
            || fine.dim != self.dim
            || fine.root_counts != self.root_counts
            || (0..n).any(|i| fine.cells[i].level != self.cells[i].level || fine.cells[i].index != self.cells[i].index)
        {
            return Err(Error::NonNested("meshes do not share a refinement arena".into()));
        }
        let mut out = fine.clone();
        for i in 0..fine.cells.len() {
            let own = i < n;
            out.active[i] = own && self.active[i];
            if own {
                out.cells[i].order = self.cells[i].order;
            }
        }
        Ok(out)
    }

    /// Lowest-id active cell containing `x` (closed boxes).
    pub fn locate(&self, x: &Point) -> Option<usize> {
        self.active_ids()
            .into_iter()
            .find(|&id| self.cells[id].geom.contains(self.dim, x, 1e-12))
    }

    /// Largest and smallest active cell widths (along axis 0).
    pub fn h_range(&self) -> (f64, f64) {
        let ws: Vec<f64> = self.active_ids().iter().map(|&i| self.cells[i].geom.width(0)).collect();
        let hmax = ws.iter().cloned().fold(0.0, f64::max);
        let hmin = ws.iter().cloned().fold(f64::INFINITY, f64::min);
        (hmax, hmin)
    }

    /// Total measure of the active cells.
    pub fn active_measure(&self) -> f64 {
        self.active_ids().iter().map(|&i| self.cells[i].geom.measure(self.dim)).sum()
    }

    /// Checks that every active face neighbor is at most one level apart.
    pub fn is_one_irregular(&self) -> bool {
        self.active_ids().iter().all(|&id| {
            let l = self.cells[id].level;
            Face::all(self.dim).all(|f| match self.face_neighbor(id, f) {
                Ok(Neighbor::Finer(v)) => v.iter().all(|&n| self.cells[n].level == l + 1),
                Ok(Neighbor::Coarser(n)) => self.cells[n].level + 1 == l,
                Ok(_) => true,
                Err(_) => false,
            })
        })
    }

    /// True when both meshes activate the same cells of a shared arena.
    pub fn same_geometry(&self, other: &MeshTopology) -> bool {
        self.active_ids() == other.active_ids()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut mesh: MeshTopology = serde_json::from_str(s)?;
        if mesh.active.len() != mesh.cells.len() {
            return Err(Error::DimensionMismatch {
                expected: mesh.cells.len(),
                got: mesh.active.len(),
            });
        }
        mesh.rebuild_keys();
        Ok(mesh)
    }
}

/// Ids whose error is strictly above `fraction` times the maximum; the
/// argmax is always included.
pub fn greedy_select(errors: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if errors.is_empty() {
        return Err(Error::Empty("error vector"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut arg = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e > errors[arg] {
            arg = i;
        }
    }
    let threshold = fraction * errors[arg];
    let mut out: Vec<usize> = (0..errors.len()).filter(|&i| errors[i] > threshold).collect();
    if !out.contains(&arg) {
        out.push(arg);
        out.sort_unstable();
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    H,
    P,
}

#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub levels: Vec<MeshTopology>,
    pub skip_intermediate_p: bool,
    pub k_coarse: usize,
}

impl MeshHierarchy {
    /// Kind of change between level `i` and level `i + 1`.
    pub fn transition(&self, i: usize) -> Transition {
        if self.levels[i].same_geometry(&self.levels[i + 1]) {
            Transition::P
        } else {
            Transition::H
        }
    }

    pub fn transitions(&self) -> Vec<Transition> {
        (0..self.levels.len().saturating_sub(1)).map(|i| self.transition(i)).collect()
    }

    pub fn finest(&self) -> &MeshTopology {
        self.levels.last().expect("hierarchy has at least one level")
    }

    pub fn h_levels(&self) -> usize {
        self.transitions().iter().filter(|&&t| t == Transition::H).count()
    }

    pub fn p_levels(&self) -> usize {
        self.transitions().iter().filter(|&&t| t == Transition::P).count()
    }

    /// Builds an explicit hierarchy from given levels (used for two-grid runs).
    pub fn from_levels(levels: Vec<MeshTopology>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("hierarchy levels"));
        }
        let k_coarse = levels[0].min_active_order();
        for w in levels.windows(2) {
            for id in w[1].active_ids() {
                let anc = w[0]
                    .active_ancestor(id)
                    .ok_or_else(|| Error::InvalidHierarchy(format!("cell {id} has no coarse ancestor")))?;
                if w[0].order(anc) > w[1].order(id) {
                    return Err(Error::InvalidHierarchy(format!("order decreases at cell {id}")));
                }
            }
        }
        Ok(MeshHierarchy {
            levels,
            skip_intermediate_p: false,
            k_coarse,
        })
    }
}

/// Coarse-to-fine stack: root cells at `k_coarse`, then single h-refinement
/// passes until the fine geometry is reached, then either the fine mesh
/// directly or p-doubling steps up to the fine orders.
pub fn build_hierarchy(fine: &MeshTopology, k_coarse: usize, skip_intermediate_p: bool) -> Result<MeshHierarchy> {
    let fine_ids = fine.active_ids();
    if let Some(&bad) = fine_ids.iter().find(|&&i| fine.order(i) < k_coarse) {
        return Err(Error::InvalidParameter(format!(
            "k_coarse {k_coarse} exceeds order {} of cell {bad}",
            fine.order(bad)
        )));
    }
    let mut current = fine.clone();
    for a in current.active.iter_mut() {
        *a = false;
    }
    for &r in &fine.root_cells {
        current.active[r] = true;
    }
    current.set_all_orders(k_coarse);
    let mut levels = vec![current.clone()];
    loop {
        let to_split: Vec<usize> = current.active_ids().into_iter().filter(|&i| !fine.active[i]).collect();
        if to_split.is_empty() {
            break;
        }
        for id in to_split {
            current.split(id)?;
        }
        levels.push(current.clone());
    }
    let orders_match = |m: &MeshTopology| fine_ids.iter().all(|&i| m.order(i) == fine.order(i));
    if !orders_match(&current) {
        if !skip_intermediate_p {
            loop {
                for &i in &fine_ids {
                    let k = current.order(i);
                    current.set_order(i, (2 * k).max(1).min(fine.order(i)));
                }
                if orders_match(&current) {
                    break;
                }
                levels.push(current.clone());
            }
        }
        levels.push(fine.clone());
    } else {
        *levels.last_mut().expect("nonempty") = fine.clone();
    }
    Ok(MeshHierarchy {
        levels,
        skip_intermediate_p,
        k_coarse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(mesh: &MeshTopology) -> Vec<u32> {
        mesh.active_ids().iter().map(|&i| mesh.cell(i).unwrap().level).collect()
    }

    #[test]
    fn one_d_single_bisection() {
        let m = MeshTopology::unit(1, 2, 1).unwrap();
        let r = m.refine_cells(&[0]).unwrap();
        assert_eq!(r.num_active(), 3);
        let mut levels = counts(&r);
        levels.sort_unstable();
        assert_eq!(levels, vec![0, 1, 1]);
        assert_eq!(m.num_active(), 2);
    }

    #[test]
    fn quad_split() {
        let m = MeshTopology::unit(2, 2, 1).unwrap();
        let r = m.refine_cells(&[0]).unwrap();
        assert_eq!(r.num_active(), 7);
    }

    #[test]
    fn closure_keeps_one_irregularity() {
        let m = MeshTopology::unit(2, 2, 1).unwrap();
        let r = m.refine_cells(&[0]).unwrap();
        // the child of cell 0 touching cells 1 and 2 is the last child
        let corner = r.cell(0).unwrap().children[3];
        let r2 = r.refine_cells(&[corner]).unwrap();
        assert!(r2.is_one_irregular());
        // brute force over all face pairs
        for id in r2.active_ids() {
            for f in Face::all(2) {
                if let Neighbor::Finer(v) = r2.face_neighbor(id, f).unwrap() {
                    for n in v {
                        assert_eq!(r2.cell(n).unwrap().level, r2.cell(id).unwrap().level + 1);
                    }
                }
            }
        }
        assert!(!r2.is_active(1) && !r2.is_active(2));
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_select(&[1.0, 0.3, 0.1], 0.2).unwrap(), vec![0, 1]);
        assert_eq!(greedy_select(&[0.5, 0.5, 0.5], 0.2).unwrap(), vec![0, 1, 2]);
        assert_eq!(greedy_select(&[0.0, 0.0, 5.0], 0.2).unwrap(), vec![2]);
        assert_eq!(greedy_select(&[0.0, 0.0], 0.2).unwrap(), vec![0]);
        assert!(greedy_select(&[], 0.2).is_err());
    }

    #[test]
    fn neighbor_counts() {
        let m = MeshTopology::unit(2, 4, 1).unwrap();
        assert_eq!(m.face_neighbors(5).unwrap().len(), 4);
        let m = MeshTopology::unit(2, 2, 1).unwrap();
        assert_eq!(m.face_neighbors(0).unwrap(), vec![1, 2]);
        let r = m.refine_cells(&[1]).unwrap();
        let n = r.face_neighbors(0).unwrap();
        let kids = &r.cell(1).unwrap().children;
        assert!(n.contains(&kids[0]) && n.contains(&kids[2]));
        assert_eq!(n.len(), 3);
        match r.face_neighbor(kids[0], Face::from_index(0)).unwrap() {
            Neighbor::Coarser(c) => assert_eq!(c, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hierarchy_examples() {
        let fine = MeshTopology::unit(2, 2, 4).unwrap().refine_uniformly(1).unwrap();
        let h = build_hierarchy(&fine, 1, true).unwrap();
        assert_eq!(h.levels.len(), 3);
        assert_eq!(h.levels[0].num_active(), 4);
        assert_eq!(h.levels[1].num_active(), 16);
        assert_eq!(h.levels[1].max_active_order(), 1);
        assert_eq!(h.levels[2].min_active_order(), 4);
        assert_eq!(h.transitions(), vec![Transition::H, Transition::P]);

        let fine = MeshTopology::unit(2, 2, 16).unwrap();
        let h = build_hierarchy(&fine, 1, false).unwrap();
        let orders: Vec<usize> = h.levels.iter().map(|l| l.max_active_order()).collect();
        assert_eq!(orders, vec![1, 2, 4, 8, 16]);

        let fine = MeshTopology::unit(2, 2, 1).unwrap();
        assert_eq!(build_hierarchy(&fine, 1, false).unwrap().levels.len(), 1);
        assert!(build_hierarchy(&fine, 2, false).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = MeshTopology::unit(2, 2, 2).unwrap().refine_cells(&[3]).unwrap();
        let s = m.to_json().unwrap();
        let back = MeshTopology::from_json(&s).unwrap();
        assert_eq!(back.active_ids(), m.active_ids());
        assert_eq!(back.face_neighbors(0).unwrap(), m.face_neighbors(0).unwrap());
    }

    #[test]
    fn refine_errors() {
        let m = MeshTopology::unit(2, 2, 1).unwrap();
        assert!(matches!(m.refine_cells(&[99]), Err(Error::UnknownCell(99))));
        let r = m.refine_cells(&[0]).unwrap();
        assert!(matches!(r.refine_cells(&[0]), Err(Error::InactiveCell(0))));
    }
}
