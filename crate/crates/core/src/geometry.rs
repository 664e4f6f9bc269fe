//! Reference-cell conventions shared by the mesh, basis and assembly code.
//!
//! Cells are axis-aligned boxes mapped affinely from `[-1, 1]^dim`. Faces are
//! numbered `2 * axis + side` where side 0 is the low end of the axis. Every
//! face carries a canonical normal pointing in the `+axis` direction; normal
//! traces are stored relative to that normal, so a cell's outward flux on a
//! low-side face is the negated stored value.

use serde::{Deserialize, Serialize};

/// Physical or reference point; the second coordinate is unused in 1D.
pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: usize,
}

impl Face {
    pub fn from_index(index: usize) -> Self {
        Face {
            axis: index / 2,
            side: index % 2,
        }
    }

    pub fn index(self) -> usize {
        2 * self.axis + self.side
    }

    pub fn opposite(self) -> Self {
        Face {
            axis: self.axis,
            side: 1 - self.side,
        }
    }

    /// Sign of the outward normal relative to the canonical `+axis` normal.
    pub fn outward_sign(self) -> f64 {
        if self.side == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn all(dim: usize) -> impl Iterator<Item = Face> {
        (0..2 * dim).map(Face::from_index)
    }

    /// Axis parameterizing the face in 2D (the one the face runs along).
    pub fn tangent_axis(self) -> usize {
        1 - self.axis
    }

    /// Maps a face parameter in [-1, 1] to cell reference coordinates.
    pub fn to_cell_ref(self, dim: usize, t: f64) -> Point {
        let fixed = if self.side == 1 { 1.0 } else { -1.0 };
        if dim == 1 {
            [fixed, 0.0]
        } else if self.axis == 0 {
            [fixed, t]
        } else {
            [t, fixed]
        }
    }
}

/// Affine map of an axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGeom {
    pub lo: Point,
    pub hi: Point,
}

impl BoxGeom {
    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn to_physical(&self, dim: usize, xi: &Point) -> Point {
        let mut x = [0.0; 2];
        for a in 0..dim {
            x[a] = self.lo[a] + 0.5 * (xi[a] + 1.0) * self.width(a);
        }
        x
    }

    pub fn to_reference(&self, dim: usize, x: &Point) -> Point {
        let mut xi = [0.0; 2];
        for a in 0..dim {
            xi[a] = 2.0 * (x[a] - self.lo[a]) / self.width(a) - 1.0;
        }
        xi
    }

    pub fn measure(&self, dim: usize) -> f64 {
        (0..dim).map(|a| self.width(a)).product()
    }

    pub fn contains(&self, dim: usize, x: &Point, tol: f64) -> bool {
        (0..dim).all(|a| x[a] >= self.lo[a] - tol && x[a] <= self.hi[a] + tol)
    }

    pub fn strictly_contains(&self, dim: usize, x: &Point, tol: f64) -> bool {
        (0..dim).all(|a| x[a] > self.lo[a] + tol && x[a] < self.hi[a] - tol)
    }

    pub fn center(&self, dim: usize) -> Point {
        self.to_physical(dim, &[0.0, 0.0])
    }
}
