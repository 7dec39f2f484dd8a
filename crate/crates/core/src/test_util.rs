//! Shared helpers for unit tests.

use crate::model::{PanelData, SpatialWeights};
use crate::sparse::SymSparseMatrix;

/// First-order (rook) grid adjacency in row-major vertex order.
pub fn grid_sparse(n_side: usize) -> SymSparseMatrix {
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

pub fn grid_weights(n_side: usize) -> SpatialWeights {
    SpatialWeights::from_sparse(&grid_sparse(n_side)).unwrap()
}

/// Random panel with an intercept and one noise covariate (k = 2).
pub fn toy_panel(w: &SpatialWeights, t_len: usize, seed: u64) -> PanelData {
    let n = w.n();
    let k = 2;
    let mut state = seed;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    };
    let mut y = Vec::with_capacity(n * t_len);
    let mut x = Vec::with_capacity(n * t_len * k);
    for _ in 0..n * t_len {
        y.push(next());
    }
    for _ in 0..t_len {
        for _ in 0..n {
            x.push(1.0);
        }
        for _ in 0..n {
            x.push(next());
        }
    }
    PanelData::new(n, t_len, k, y, x).unwrap()
}
