//! Symmetric sparse matrices in compressed sparse row form.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A structurally symmetric sparse matrix.
///
/// Both triangles are stored in CSR form so that rows double as adjacency
/// lists for graph traversals. Explicit zeros are dropped on construction and
/// duplicate coordinates are rejected.
#[derive(Debug, Clone)]
pub struct SymSparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    /// Builds a symmetric matrix from coordinate triplets.
    ///
    /// Entries may be given for either triangle (or both). When both `(i, j)`
    /// and `(j, i)` are present their values must agree; a lone off-diagonal
    /// entry is mirrored.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        // Upper-triangle map keyed by (min, max).
        let mut upper: Vec<(usize, usize, f64, bool)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i}, {j}) out of range for dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonfiniteValue(format!("matrix entry ({i}, {j})")));
            }
            let lower = i > j;
            let (r, c) = if lower { (j, i) } else { (i, j) };
            upper.push((r, c, v, lower));
        }
        upper.sort_by_key(|&(r, c, _, _)| (r, c));

        // Collapse mirrored pairs, rejecting duplicates and asymmetric values.
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        let mut k = 0;
        while k < upper.len() {
            let (r, c, v, lower) = upper[k];
            let mut value = v;
            let mut seen_lower = lower;
            let mut seen_upper = !lower;
            let mut k2 = k + 1;
            while k2 < upper.len() && upper[k2].0 == r && upper[k2].1 == c {
                let (_, _, v2, lower2) = upper[k2];
                if (lower2 && seen_lower) || (!lower2 && seen_upper) || r == c {
                    let (di, dj) = if lower2 { (c, r) } else { (r, c) };
                    return Err(Error::DuplicateEntry { row: di, col: dj });
                }
                if v2 != value {
                    return Err(Error::AsymmetricEntry { row: c, col: r });
                }
                seen_lower |= lower2;
                seen_upper |= !lower2;
                value = v2;
                k2 += 1;
            }
            if value != 0.0 {
                entries.push((r, c, value));
            }
            k = k2;
        }

        // Expand to full CSR.
        let mut counts = vec![0usize; dim];
        for &(r, c, _) in &entries {
            counts[r] += 1;
            if r != c {
                counts[c] += 1;
            }
        }
        let mut row_ptr = vec![0usize; dim + 1];
        for i in 0..dim {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[dim];
        let mut col_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = row_ptr.clone();
        for &(r, c, v) in &entries {
            col_idx[next[r]] = c;
            values[next[r]] = v;
            next[r] += 1;
            if r != c {
                col_idx[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        // Rows are sorted by construction within the upper pass only for the
        // upper part; sort each row to keep neighbor iteration ordered.
        let mut mat = Self {
            dim,
            row_ptr,
            col_idx,
            values,
        };
        mat.sort_rows();
        Ok(mat)
    }

    fn sort_rows(&mut self) {
        for i in 0..self.dim {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut row: Vec<(usize, f64)> = self.col_idx[lo..hi]
                .iter()
                .copied()
                .zip(self.values[lo..hi].iter().copied())
                .collect();
            row.sort_by_key(|&(c, _)| c);
            for (k, (c, v)) in row.into_iter().enumerate() {
                self.col_idx[lo + k] = c;
                self.values[lo + k] = v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored entries counting both triangles.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Number of off-diagonal neighbors of vertex `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).filter(|&(j, _)| j != i).count()
    }

    /// Iterates `(column, value)` pairs of row `i` in ascending column order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.neighbors(i)
            .find(|&(c, _)| c == j)
            .map_or(0.0, |(_, v)| v)
    }

    /// Maximum `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for i in 0..self.dim {
            for (j, _) in self.neighbors(i) {
                b = b.max(i.abs_diff(j));
            }
        }
        b
    }

    /// `y = A v`.
    pub fn spmv(&self, v: &[f64], y: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for i in 0..self.dim {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Upper-triangle triplets `(i, j, v)` with `i <= j`, sorted.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz() / 2 + self.dim);
        for i in 0..self.dim {
            for (j, v) in self.neighbors(i) {
                if j >= i {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.neighbors(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrors_single_triangle() {
        let m = SymSparseMatrix::from_triplets(3, &[(0, 1, 2.0), (2, 1, 3.0)]).unwrap();
        assert_eq!(m.entry(1, 0), 2.0);
        assert_eq!(m.entry(0, 1), 2.0);
        assert_eq!(m.entry(1, 2), 3.0);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn rejects_asymmetric_pair() {
        let err = SymSparseMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::AsymmetricEntry { .. }));
    }

    #[test]
    fn rejects_duplicates() {
        let err = SymSparseMatrix::from_triplets(2, &[(0, 1, 1.0), (0, 1, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { .. }));
        let err = SymSparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { .. }));
    }

    #[test]
    fn drops_explicit_zeros() {
        let m = SymSparseMatrix::from_triplets(2, &[(0, 1, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn accepts_matching_pair_and_diagonal() {
        let m =
            SymSparseMatrix::from_triplets(2, &[(0, 1, 1.5), (1, 0, 1.5), (1, 1, 4.0)]).unwrap();
        assert_eq!(m.entry(0, 1), 1.5);
        assert_eq!(m.entry(1, 1), 4.0);
    }

    #[test]
    fn spmv_matches_dense() {
        let m = SymSparseMatrix::from_triplets(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 0, 2.0)])
            .unwrap();
        let v = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.spmv(&v, &mut y);
        assert_eq!(y, [4.0, 4.0, 2.0]);
    }
}
