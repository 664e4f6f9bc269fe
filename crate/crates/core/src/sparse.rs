//! Compressed sparse row matrices with the handful of kernels the solver
//! needs: products, transposes, Galerkin triple products and block
//! extraction.

use std::io::Write;

use faer::Mat;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: vec![],
            data: vec![],
        }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Builds from per-row (column, value) lists; duplicates are summed in
    /// the order given, which keeps the result deterministic.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                debug_assert!(c < ncols);
                if last == Some(c) {
                    *data.last_mut().expect("entry exists") += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Empty-valued matrix with the given sorted sparsity pattern.
    pub fn from_pattern(ncols: usize, pattern: Vec<Vec<usize>>) -> Self {
        let nrows = pattern.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for row in pattern {
            indices.extend(row);
            indptr.push(indices.len());
        }
        let data = vec![0.0; indices.len()];
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    /// Position of entry (i, j) in the storage, if present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.indptr[i];
        let cols = &self.indices[start..self.indptr[i + 1]];
        cols.binary_search(&j).ok().map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.data[p])
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        let p = self
            .position(i, j)
            .ok_or_else(|| Error::Constraint(format!("entry ({i}, {j}) outside sparsity pattern")))?;
        self.data[p] += v;
        Ok(())
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// y = A^T x
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.data[p] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let c = self.indices[p];
                let q = next[c];
                indices[q] = i;
                data[q] = self.data[p];
                next[c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            data,
        }
    }

    /// Sparse product `self * other` (Gustavson's algorithm).
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows, "inner dimensions differ");
        let n = other.ncols;
        let mut marker = vec![usize::MAX; n];
        let mut acc = vec![0.0; n];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for p in self.indptr[i]..self.indptr[i + 1] {
                let k = self.indices[p];
                let a = self.data[p];
                for q in other.indptr[k]..other.indptr[k + 1] {
                    let j = other.indices[q];
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * other.data[q];
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            data,
        }
    }

    /// Galerkin product `P^T A P`.
    pub fn galerkin(a: &Csr, p: &Csr) -> Csr {
        let ap = a.matmul(p);
        p.transpose().matmul(&ap)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[p])] += self.data[p];
            }
        }
        m
    }

    /// Dense principal submatrix on `dofs`; `marker` must have length
    /// `ncols` and be filled with `usize::MAX`; it is restored on return.
    pub fn principal_block(&self, dofs: &[usize], marker: &mut [usize]) -> Mat<f64> {
        for (l, &d) in dofs.iter().enumerate() {
            marker[d] = l;
        }
        let n = dofs.len();
        let mut m = Mat::<f64>::zeros(n, n);
        for (l, &d) in dofs.iter().enumerate() {
            for p in self.indptr[d]..self.indptr[d + 1] {
                let c = marker[self.indices[p]];
                if c != usize::MAX {
                    m[(l, c)] = self.data[p];
                }
            }
        }
        for &d in dofs {
            marker[d] = usize::MAX;
        }
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest |A_ij - A_ji|.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            let (ci, vi) = self.row(i);
            for (c, v) in ci.iter().zip(vi) {
                worst = worst.max((v - t.get(i, *c)).abs());
            }
            let (ct, vt) = t.row(i);
            for (c, v) in ct.iter().zip(vt) {
                if self.position(i, *c).is_none() {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    /// Writes Matrix Market coordinate format.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                writeln!(w, "{} {} {:.17e}", i + 1, self.indices[p] + 1, self.data[p])?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csr {
        Csr::from_rows(3, vec![vec![(0, 2.0), (2, 1.0)], vec![(1, 3.0)], vec![(0, 1.0), (2, 4.0), (0, 1.0)]])
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.get(2, 0), 2.0);
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn products_match_dense() {
        let a = sample();
        let b = a.transpose();
        let c = a.matmul(&b);
        let (ad, bd) = (a.to_dense(), b.to_dense());
        let cd = &ad * &bd;
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.get(i, j) - cd[(i, j)]).abs() < 1e-14);
            }
        }
        let x = [1.0, -2.0, 0.5];
        let y = a.mul_vec(&x);
        let yt = b.mul_t_vec(&x);
        assert_eq!(y, yt);
    }

    #[test]
    fn galerkin_of_identity_prolongation() {
        let a = sample();
        let g = Csr::galerkin(&a, &Csr::identity(3));
        assert_eq!(g.to_dense(), a.to_dense());
    }

    #[test]
    fn principal_block_extraction() {
        let a = sample();
        let mut marker = vec![usize::MAX; 3];
        let m = a.principal_block(&[2, 0], &mut marker);
        assert_eq!(m[(0, 0)], 4.0);
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], 1.0);
        assert!(marker.iter().all(|&x| x == usize::MAX));
    }

    #[test]
    fn matrix_market_header() {
        let mut out = Vec::new();
        Csr::identity(2).write_matrix_market(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("%%MatrixMarket"));
        assert!(s.contains("2 2 2"));
    }
}
