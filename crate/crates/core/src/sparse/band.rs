//! Symmetric banded matrices with dense-in-band storage.
//!
//! The band is stored dense: column `j` holds the `bandwidth + 1` entries
//! `(j, j), (j+1, j), ..., (j+b, j)` contiguously, so the hot kernels reduce
//! to contiguous dot products and axpy updates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::{Permutation, SymSparseMatrix};

/// Relative tolerance for the symmetry check in [`band_product`].
const PRODUCT_SYMMETRY_TOL: f64 = 1e-10;

/// A symmetric banded matrix storing the lower band densely.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymMatrix {
    dim: usize,
    bandwidth: usize,
    /// Column-major lower band; column `j` starts at `j * (bandwidth + 1)`.
    data: Vec<f64>,
}

impl BandedSymMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        let bw = if dim == 0 { 0 } else { bandwidth.min(dim - 1) };
        Self {
            dim,
            bandwidth: bw,
            data: vec![0.0; dim * (bw + 1)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, 0);
        for j in 0..dim {
            m.data[j] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn into_raw(self) -> (usize, usize, Vec<f64>) {
        (self.dim, self.bandwidth, self.data)
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
        let off = hi - lo;
        if off > self.bandwidth {
            0.0
        } else {
            self.data[lo * (self.bandwidth + 1) + off]
        }
    }

    /// Sets the symmetric pair `(i, j)`/`(j, i)`; `|i - j|` must fit the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
        let off = hi - lo;
        assert!(off <= self.bandwidth, "entry outside band");
        self.data[lo * (self.bandwidth + 1) + off] = v;
    }

    /// Shrinks the stored bandwidth so the outermost diagonal is nonzero.
    pub fn tighten(self) -> Self {
        let mut tight = 0usize;
        let stride = self.bandwidth + 1;
        for j in 0..self.dim {
            let col = &self.data[j * stride..j * stride + stride.min(self.dim - j)];
            for (off, &v) in col.iter().enumerate().rev() {
                if v != 0.0 {
                    tight = tight.max(off);
                    break;
                }
            }
            if tight == self.bandwidth {
                return self;
            }
        }
        let mut out = Self::zeros(self.dim, tight);
        for j in 0..self.dim {
            let m = tight.min(self.dim - 1 - j);
            out.data[j * (tight + 1)..j * (tight + 1) + m + 1]
                .copy_from_slice(&self.data[j * stride..j * stride + m + 1]);
        }
        out
    }

    /// `out = alpha * I + beta * self`, preserving the band layout.
    pub fn affine(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= beta;
        }
        let stride = self.bandwidth + 1;
        for j in 0..self.dim {
            out.data[j * stride] += alpha;
        }
        out
    }

    /// `y = A v`.
    pub fn spmv(&self, v: &[f64], y: &mut [f64]) -> Result<()> {
        if v.len() != self.dim || y.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but vectors have lengths {} and {}",
                self.dim,
                self.dim,
                v.len(),
                y.len()
            )));
        }
        y.fill(0.0);
        let stride = self.bandwidth + 1;
        for j in 0..self.dim {
            let m = self.bandwidth.min(self.dim - 1 - j);
            let col = &self.data[j * stride..j * stride + m + 1];
            let vj = v[j];
            // Diagonal plus the column below it ...
            let mut acc = col[0] * vj;
            let below = &col[1..];
            let vseg = &v[j + 1..j + 1 + m];
            let yseg = &mut y[j + 1..j + 1 + m];
            for ((yk, &a), &vk) in yseg.iter_mut().zip(below).zip(vseg) {
                *yk += a * vj;
                acc += a * vk;
            }
            // ... and the mirrored row above it.
            y[j] += acc;
        }
        Ok(())
    }

    /// Principal submatrix on the contiguous index range `[start, start+len)`.
    pub fn principal_submatrix(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.dim);
        let bw = self.bandwidth.min(len.saturating_sub(1));
        let mut out = Self::zeros(len, bw);
        for j in 0..len {
            let m = bw.min(len - 1 - j);
            for off in 0..=m {
                let v = self.entry(start + j + off, start + j);
                out.data[j * (bw + 1) + off] = v;
            }
        }
        out.tighten()
    }

    /// Upper-triangle triplets `(i, j, v)` with `i <= j` of nonzero entries.
    pub fn nonzero_upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let stride = self.bandwidth + 1;
        let mut out = Vec::new();
        for j in 0..self.dim {
            let m = self.bandwidth.min(self.dim - 1 - j);
            for off in 0..=m {
                let v = self.data[j * stride + off];
                if v != 0.0 {
                    out.push((j, j + off, v));
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            let w = self.bandwidth.min(self.dim - 1 - j);
            for off in 0..=w {
                let v = self.data[j * (self.bandwidth + 1) + off];
                m[(j + off, j)] = v;
                m[(j, j + off)] = v;
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch("dense matrix is not square".into()));
        }
        let mut bw = 0usize;
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::AsymmetricEntry { row: i, col: j });
                }
                if m[(i, j)] != 0.0 {
                    bw = bw.max(i - j);
                }
            }
        }
        let mut out = Self::zeros(n, bw);
        for j in 0..n {
            let w = bw.min(n - 1 - j);
            for off in 0..=w {
                out.data[j * (bw + 1) + off] = m[(j + off, j)];
            }
        }
        Ok(out)
    }

    /// Frobenius-norm of the full symmetric matrix.
    pub fn frobenius_norm(&self) -> f64 {
        let stride = self.bandwidth + 1;
        let mut acc = 0.0;
        for j in 0..self.dim {
            let m = self.bandwidth.min(self.dim - 1 - j);
            let col = &self.data[j * stride..j * stride + m + 1];
            acc += col[0] * col[0];
            for &v in &col[1..] {
                acc += 2.0 * v * v;
            }
        }
        acc.sqrt()
    }
}

/// Applies a symmetric permutation to a sparse matrix and records the tight
/// bandwidth of the result: `out[i][j] = w[p.forward[i]][p.forward[j]]`.
pub fn apply_permutation(w: &SymSparseMatrix, p: &Permutation) -> Result<BandedSymMatrix> {
    if p.len() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "permutation length {} does not match matrix dimension {}",
            p.len(),
            w.dim()
        )));
    }
    let mut bw = 0usize;
    let triplets = w.upper_triplets();
    let mut permuted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
    for (r, c, v) in triplets {
        let (pi, pj) = (p.new_index(r), p.new_index(c));
        let (lo, hi) = if pi <= pj { (pi, pj) } else { (pj, pi) };
        bw = bw.max(hi - lo);
        permuted.push((lo, hi, v));
    }
    let mut out = BandedSymMatrix::zeros(w.dim(), bw);
    for (lo, hi, v) in permuted {
        out.data[lo * (bw + 1) + (hi - lo)] = v;
    }
    Ok(out)
}

/// Full band of a symmetric banded matrix: column `j` holds entries
/// `(j - b ... j + b, j)` at stride `2b + 1`, zero-padded at the edges.
fn full_band(a: &BandedSymMatrix) -> Vec<f64> {
    let n = a.dim;
    let b = a.bandwidth;
    let stride = 2 * b + 1;
    let mut full = vec![0.0; n * stride];
    for j in 0..n {
        let m = b.min(n - 1 - j);
        for off in 0..=m {
            let v = a.data[j * (b + 1) + off];
            full[j * stride + b + off] = v; // (j + off, j)
            full[(j + off) * stride + b - off] = v; // (j, j + off)
        }
    }
    full
}

/// Exact product of two symmetric banded matrices.
///
/// The result must itself be symmetric, which holds whenever the inputs
/// commute (all operator matrices here are polynomials in the same weight
/// matrix). A violation beyond tolerance reports the offending coordinate.
pub fn band_product(a: &BandedSymMatrix, b: &BandedSymMatrix) -> Result<BandedSymMatrix> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!(
            "band product of {}x{} and {}x{}",
            a.dim, a.dim, b.dim, b.dim
        )));
    }
    let n = a.dim;
    if n == 0 {
        return Ok(BandedSymMatrix::zeros(0, 0));
    }
    let ba = a.bandwidth;
    let bb = b.bandwidth;
    let bc = (ba + bb).min(n - 1);
    let full_a = full_band(a);
    let stride_a = 2 * ba + 1;
    let mut out = BandedSymMatrix::zeros(n, bc);
    // Full column of the product, indexed relative to j - bc.
    let mut scratch = vec![0.0; 2 * bc + 1];
    let mut max_abs = 0.0f64;
    for j in 0..n {
        scratch.fill(0.0);
        let klo = j.saturating_sub(bb);
        let khi = (j + bb).min(n - 1);
        for k in klo..=khi {
            let coef = b.entry(k, j);
            if coef == 0.0 {
                continue;
            }
            // Rows i in [k - ba, k + ba] of column k of A, clamped to [0, n).
            let ilo = k.saturating_sub(ba);
            let ihi = (k + ba).min(n - 1);
            let acol = &full_a[k * stride_a..(k + 1) * stride_a];
            let asrc = &acol[(ba + ilo) - k..=(ba + ihi) - k];
            let dst = &mut scratch[(bc + ilo) - j..=(bc + ihi) - j];
            for (d, &av) in dst.iter_mut().zip(asrc) {
                *d += coef * av;
            }
        }
        // Lower part is stored; upper part is checked against the mirrored
        // entries that earlier columns already produced.
        let m = bc.min(n - 1 - j);
        for off in 0..=m {
            let v = scratch[bc + off];
            out.data[j * (bc + 1) + off] = v;
            max_abs = max_abs.max(v.abs());
        }
        let up = bc.min(j);
        for off in 1..=up {
            let i = j - off;
            let upper = scratch[bc - off]; // C[i][j]
            let lower = out.data[i * (bc + 1) + off]; // C[j][i]
            let scale = 1.0f64.max(upper.abs()).max(lower.abs());
            if (upper - lower).abs() > PRODUCT_SYMMETRY_TOL * scale {
                return Err(Error::SymmetryViolation {
                    row: i,
                    col: j,
                    lhs: upper,
                    rhs: lower,
                });
            }
        }
    }
    Ok(out.tighten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::rcm_order;

    /// First-order (rook) grid adjacency in row-major vertex order.
    pub(crate) fn grid_sparse(n_side: usize) -> SymSparseMatrix {
        let mut trips = Vec::new();
        let id = |r: usize, c: usize| r * n_side + c;
        for r in 0..n_side {
            for c in 0..n_side {
                if c + 1 < n_side {
                    trips.push((id(r, c), id(r, c + 1), 1.0));
                }
                if r + 1 < n_side {
                    trips.push((id(r, c), id(r + 1, c), 1.0));
                }
            }
        }
        SymSparseMatrix::from_triplets(n_side * n_side, &trips).unwrap()
    }

    fn chain(n: usize) -> BandedSymMatrix {
        let trips: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        let sp = SymSparseMatrix::from_triplets(n, &trips).unwrap();
        apply_permutation(&sp, &Permutation::identity(n)).unwrap()
    }

    #[test]
    fn identity_permutation_preserves_entries() {
        let sp = grid_sparse(4);
        let b = apply_permutation(&sp, &Permutation::identity(16)).unwrap();
        assert_eq!(b.bandwidth(), 4);
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(b.entry(i, j), sp.entry(i, j));
            }
        }
    }

    #[test]
    fn two_cycle_swap_moves_offdiagonal_pair() {
        // [[0, 5], [5, 0]] with rows/cols swapped stays the same matrix.
        let sp = SymSparseMatrix::from_triplets(2, &[(0, 1, 5.0)]).unwrap();
        let p = Permutation::new(vec![1, 0]).unwrap();
        let b = apply_permutation(&sp, &p).unwrap();
        assert_eq!(b.entry(0, 1), 5.0);
        assert_eq!(b.entry(1, 0), 5.0);
        assert_eq!(b.entry(0, 0), 0.0);
        // An asymmetric placement check: a diagonal entry follows its vertex.
        let sp = SymSparseMatrix::from_triplets(2, &[(0, 0, 3.0), (0, 1, 5.0)]).unwrap();
        let b = apply_permutation(&sp, &p).unwrap();
        assert_eq!(b.entry(1, 1), 3.0);
        assert_eq!(b.entry(0, 0), 0.0);
    }

    #[test]
    fn shuffled_grid_with_rcm_has_small_bandwidth() {
        let sp = grid_sparse(30);
        // Deterministic shuffle of vertex labels.
        let n = 900;
        let mut fwd: Vec<usize> = (0..n).collect();
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            fwd.swap(i, j);
        }
        let shuffle = Permutation::new(fwd).unwrap();
        let trips: Vec<_> = sp
            .upper_triplets()
            .into_iter()
            .map(|(i, j, v)| (shuffle.new_index(i), shuffle.new_index(j), v))
            .collect();
        let shuffled = SymSparseMatrix::from_triplets(n, &trips).unwrap();
        let p = rcm_order(&shuffled);
        let banded = apply_permutation(&shuffled, &p).unwrap();
        assert!(banded.bandwidth() <= 60, "bandwidth {}", banded.bandwidth());
    }

    #[test]
    fn spmv_identity_is_identity() {
        let eye = BandedSymMatrix::identity(5);
        let v = [1.0, -2.0, 3.0, 0.5, 4.0];
        let mut y = [0.0; 5];
        eye.spmv(&v, &mut y).unwrap();
        assert_eq!(y, v);
    }

    #[test]
    fn spmv_chain_gives_degree_vector() {
        let a = chain(4);
        let mut y = [0.0; 4];
        a.spmv(&[1.0, 1.0, 1.0, 1.0], &mut y).unwrap();
        assert_eq!(y, [1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn spmv_matches_dense_on_random_band() {
        let n = 50;
        let mut a = BandedSymMatrix::zeros(n, 4);
        let mut state = 1u64;
        let mut rng = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for j in 0..n {
            for off in 0..=4.min(n - 1 - j) {
                a.set(j + off, j, rng());
            }
        }
        let v: Vec<f64> = (0..n).map(|_| rng()).collect();
        let mut y = vec![0.0; n];
        a.spmv(&v, &mut y).unwrap();
        let dense = a.to_dense() * nalgebra::DVector::from_column_slice(&v);
        for i in 0..n {
            let rel = (y[i] - dense[i]).abs() / dense[i].abs().max(1.0);
            assert!(rel < 1e-12);
        }
    }

    #[test]
    fn spmv_dimension_mismatch_errors() {
        let eye = BandedSymMatrix::identity(3);
        let mut y = [0.0; 3];
        assert!(eye.spmv(&[1.0, 2.0], &mut y).is_err());
    }

    #[test]
    fn product_with_identity_is_identity_map() {
        let a = chain(6);
        let prod = band_product(&a, &BandedSymMatrix::identity(6)).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn squared_filter_matches_dense() {
        let sp = grid_sparse(3);
        let w = apply_permutation(&sp, &Permutation::identity(9)).unwrap();
        let s = w.affine(1.0, -0.1); // I - 0.1 W
        let prod = band_product(&s, &s).unwrap();
        let dense = s.to_dense() * s.to_dense();
        for i in 0..9 {
            for j in 0..9 {
                assert!((prod.entry(i, j) - dense[(i, j)]).abs() < 1e-12);
            }
        }
        assert!(prod.bandwidth() <= 2 * s.bandwidth());
    }

    #[test]
    fn chain_square_counts_two_step_walks() {
        let w = chain(3);
        let w2 = band_product(&w, &w).unwrap();
        assert_eq!(w2.entry(0, 0), 1.0);
        assert_eq!(w2.entry(1, 1), 2.0);
        assert_eq!(w2.entry(2, 2), 1.0);
        assert_eq!(w2.entry(0, 2), 1.0);
        assert_eq!(w2.entry(2, 0), 1.0);
        assert_eq!(w2.entry(0, 1), 0.0);
    }

    #[test]
    fn product_of_noncommuting_inputs_is_rejected() {
        let mut a = BandedSymMatrix::zeros(3, 1);
        a.set(0, 0, 1.0);
        a.set(1, 0, 2.0);
        a.set(2, 2, 3.0);
        let mut b = BandedSymMatrix::zeros(3, 1);
        b.set(1, 1, 1.0);
        b.set(2, 1, 4.0);
        let err = band_product(&a, &b).unwrap_err();
        assert!(matches!(err, Error::SymmetryViolation { .. }));
    }

    #[test]
    fn tighten_trims_zero_diagonals() {
        let mut a = BandedSymMatrix::zeros(5, 3);
        a.set(1, 0, 2.0);
        let t = a.tighten();
        assert_eq!(t.bandwidth(), 1);
        assert_eq!(t.entry(1, 0), 2.0);
    }
}
