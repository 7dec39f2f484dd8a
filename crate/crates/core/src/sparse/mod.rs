//! Symmetric sparse and banded matrix kernels: ordering, products,
//! factorization, log-determinants, and extreme eigenvalues.

mod band;
mod cholesky;
mod lanczos;
mod market;
mod perm;
mod rcm;
mod sym;

pub use band::{apply_permutation, band_product, BandedSymMatrix};
pub use cholesky::{banded_cholesky, banded_cholesky_into, CholeskyFactor};
pub use lanczos::{extreme_eigenvalues, EigenExtremes};
pub use market::{read_matrix_market, write_matrix_market};
pub use perm::Permutation;
pub use rcm::rcm_order;
pub use sym::SymSparseMatrix;
