//! Scalable quasi-maximum-likelihood estimation for spatio-temporal
//! autoregressive regression on large panels.
//!
//! The model couples a linear regression mean with an error process that
//! mixes contemporaneous spatial interaction, a temporal lag, and spatial
//! diffusion over time on a fixed symmetric neighborhood graph. Likelihood
//! evaluation runs in time linear in the panel size for a fixed graph
//! bandwidth: the weight matrix is reordered by reverse Cuthill-McKee, all
//! operator matrices become banded, and log-determinants come from banded
//! Cholesky factorizations.
//!
//! Crate layout:
//! - [`sparse`]: banded/sparse kernels (RCM, products, Cholesky, Lanczos)
//! - [`model`]: parameters, operator matrices, and the feasible region
//! - [`likelihood`]: quasi log-likelihood, profiling, and gradients
//! - [`optimizer`]: constrained quasi-Newton fit
//! - [`inference`]: plug-in covariance, confidence intervals, subsampling
//! - [`simulate`]: panel simulator and Monte Carlo driver
//! - [`oracle`]: dense reference implementations for validation
//! - [`io`]: panel CSV codec
//! - [`alloc_track`]: allocation accounting used by tests and benchmarks

pub mod alloc_track;
pub mod error;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod simulate;
pub mod sparse;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use model::{DependenceParams, ModelParams, PanelData, SpatialWeights};
