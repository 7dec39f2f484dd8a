//! Model parameters, operator matrices, and the feasible dependence region.
//!
//! The error process on the neighborhood graph `W` is driven by three
//! dependence parameters: `lambda` (contemporaneous spatial interaction),
//! `gamma` (temporal lag), and `rho` (spatial diffusion over time). The
//! operator matrices are `S(lambda) = I - lambda W` (the spatial filter),
//! `R(theta) = rho W + gamma I` (the temporal-lag operator), and the
//! stationary initial-slice precision `G = S^2 - R^2`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::{
    apply_permutation, band_product, extreme_eigenvalues, rcm_order, BandedSymMatrix,
    Permutation, SymSparseMatrix,
};

/// Margin applied to every strict inequality of the feasible region; keeps
/// the optimizer's feasible set closed and the factorizations strictly
/// positive definite.
pub const EPS_FEAS: f64 = 1e-6;

/// Schema version of the weights cache sidecar.
pub const WEIGHTS_CACHE_SCHEMA: u32 = 1;

/// The three spatio-temporal dependence parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceParams {
    /// Contemporaneous spatial interaction.
    pub lambda: f64,
    /// Temporal lag.
    pub gamma: f64,
    /// Spatial diffusion over time.
    pub rho: f64,
}

impl DependenceParams {
    pub fn new(lambda: f64, gamma: f64, rho: f64) -> Self {
        Self { lambda, gamma, rho }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda, self.gamma, self.rho]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Full parameter vector: regression coefficients, dependence parameters,
/// and innovation variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub theta: DependenceParams,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, theta: DependenceParams, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "innovation variance must be positive, got {sigma2}"
            )));
        }
        Ok(Self { beta, theta, sigma2 })
    }
}

/// Cache sidecar for a preprocessed weight matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsCache {
    pub schema_version: u32,
    pub n: usize,
    pub bandwidth: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub permutation: Vec<usize>,
    pub checksum: String,
}

/// A preprocessed spatial weight matrix.
///
/// Holds the reverse Cuthill-McKee permutation, the permuted banded matrix,
/// and the cached extreme eigenvalues used by the O(1) feasibility check.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    band: BandedSymMatrix,
    permutation: Permutation,
    d_min: f64,
    d_max: f64,
    checksum: String,
    spectrum_warning: bool,
}

/// Checksum over the canonical triplet representation, invariant to entry
/// order in the source file.
fn weights_checksum(w: &SymSparseMatrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update((w.dim() as u64).to_le_bytes());
    for (i, j, v) in w.upper_triplets() {
        hasher.update((i as u64).to_le_bytes());
        hasher.update((j as u64).to_le_bytes());
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl SpatialWeights {
    /// Preprocesses a symmetric weight matrix: validates the zero diagonal,
    /// computes the RCM ordering and the extreme eigenvalues.
    pub fn from_sparse(w: &SymSparseMatrix) -> Result<Self> {
        Self::validate_diagonal(w)?;
        let permutation = rcm_order(w);
        let band = apply_permutation(w, &permutation)?;
        let eig = extreme_eigenvalues(w, 1e-10)?;
        Self::assemble(w, band, permutation, eig.d_min, eig.d_max, eig.degenerate_spectrum)
    }

    /// Rebuilds weights from a cache sidecar, skipping the ordering and
    /// eigenvalue computations. The checksum must match the matrix.
    pub fn from_sparse_with_cache(w: &SymSparseMatrix, cache: &WeightsCache) -> Result<Self> {
        if cache.schema_version != WEIGHTS_CACHE_SCHEMA {
            return Err(Error::InvalidParameter(format!(
                "weights cache schema {} not supported",
                cache.schema_version
            )));
        }
        if cache.n != w.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cache is for dimension {}, matrix has {}",
                cache.n,
                w.dim()
            )));
        }
        let checksum = weights_checksum(w);
        if checksum != cache.checksum {
            return Err(Error::InvalidParameter(
                "weights cache checksum does not match the matrix".into(),
            ));
        }
        Self::validate_diagonal(w)?;
        let permutation = Permutation::new(cache.permutation.clone())?;
        let band = apply_permutation(w, &permutation)?;
        Self::assemble(w, band, permutation, cache.d_min, cache.d_max, false)
    }

    fn validate_diagonal(w: &SymSparseMatrix) -> Result<()> {
        for i in 0..w.dim() {
            if w.entry(i, i) != 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "weight matrix must have a zero diagonal, found {} at ({i}, {i})",
                    w.entry(i, i)
                )));
            }
        }
        Ok(())
    }

    fn assemble(
        w: &SymSparseMatrix,
        band: BandedSymMatrix,
        permutation: Permutation,
        d_min: f64,
        d_max: f64,
        degenerate: bool,
    ) -> Result<Self> {
        if w.nnz() > 0 && !(d_min < 0.0 && d_max > 0.0) {
            // A nonzero symmetric zero-diagonal matrix has zero trace, so its
            // extreme eigenvalues must straddle zero; anything else signals a
            // numerical failure upstream.
            return Err(Error::InvalidWeights(format!(
                "extreme eigenvalues [{d_min}, {d_max}] do not straddle zero"
            )));
        }
        if degenerate {
            log::warn!(
                "weight matrix spectrum looks degenerate (at most two distinct eigenvalues); \
                 dependence parameters may not be identifiable"
            );
        }
        Ok(Self {
            checksum: weights_checksum(w),
            band,
            permutation,
            d_min,
            d_max,
            spectrum_warning: degenerate,
        })
    }

    pub fn n(&self) -> usize {
        self.band.dim()
    }

    pub fn bandwidth(&self) -> usize {
        self.band.bandwidth()
    }

    /// The RCM-permuted banded weight matrix.
    pub fn band(&self) -> &BandedSymMatrix {
        &self.band
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// True when the eigenvalue sweep suggested at most two distinct
    /// eigenvalues (identifiability of the dependence parameters fails).
    pub fn spectrum_warning(&self) -> bool {
        self.spectrum_warning
    }

    pub fn to_cache(&self) -> WeightsCache {
        WeightsCache {
            schema_version: WEIGHTS_CACHE_SCHEMA,
            n: self.n(),
            bandwidth: self.bandwidth(),
            d_min: self.d_min,
            d_max: self.d_max,
            permutation: self.permutation.forward().to_vec(),
            checksum: self.checksum.clone(),
        }
    }

    /// Restriction to a contiguous index range in the permuted ordering,
    /// re-preprocessed as a standalone weight matrix.
    pub fn restrict_to_range(&self, start: usize, len: usize) -> Result<SpatialWeights> {
        let sub = self.band.principal_submatrix(start, len);
        let trips = sub.nonzero_upper_triplets();
        let sparse = SymSparseMatrix::from_triplets(len, &trips)?;
        SpatialWeights::from_sparse(&sparse)
    }
}

/// Spatial filter `S(lambda) = I - lambda W`.
pub fn spatial_filter(w: &SpatialWeights, lambda: f64) -> BandedSymMatrix {
    w.band().affine(1.0, -lambda)
}

/// Temporal-lag operator `R(theta) = rho W + gamma I`.
pub fn lag_operator(w: &SpatialWeights, theta: &DependenceParams) -> BandedSymMatrix {
    w.band().affine(theta.gamma, theta.rho).tighten()
}

/// Stationary initial-slice precision `G = S(lambda)^2 - R(theta)^2`,
/// assembled from two banded products.
pub fn initial_precision(w: &SpatialWeights, theta: &DependenceParams) -> Result<BandedSymMatrix> {
    let s = spatial_filter(w, theta.lambda);
    let r = lag_operator(w, theta);
    let s2 = band_product(&s, &s)?;
    let r2 = band_product(&r, &r)?;
    let bw = s2.bandwidth().max(r2.bandwidth());
    let mut out = BandedSymMatrix::zeros(w.n(), bw);
    for j in 0..w.n() {
        let m = bw.min(w.n() - 1 - j);
        for off in 0..=m {
            let v = s2.entry(j + off, j) - r2.entry(j + off, j);
            if v != 0.0 {
                out.set(j + off, j, v);
            }
        }
    }
    Ok(out.tighten())
}

/// One face of the feasible region, as the half-space `a . theta < c`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HalfSpace {
    /// Coefficients on `(lambda, gamma, rho)`.
    pub a: [f64; 3],
    pub c: f64,
    pub label: &'static str,
}

impl HalfSpace {
    pub fn slack(&self, theta: &DependenceParams) -> f64 {
        let t = theta.as_array();
        self.c - (self.a[0] * t[0] + self.a[1] * t[1] + self.a[2] * t[2])
    }
}

/// The six half-spaces equivalent to the sufficient stationarity region:
/// `-1 < gamma < 1`, `(1-gamma)/d_min < lambda+rho < (1-gamma)/d_max`, and
/// `(1+gamma)/d_min < lambda-rho < (1+gamma)/d_max`, rearranged so that no
/// constraint divides by an eigenvalue.
pub fn polytope_constraints(w: &SpatialWeights) -> Vec<HalfSpace> {
    let d_min = w.d_min();
    let d_max = w.d_max();
    vec![
        HalfSpace { a: [0.0, 1.0, 0.0], c: 1.0, label: "gamma upper" },
        HalfSpace { a: [0.0, -1.0, 0.0], c: 1.0, label: "gamma lower" },
        HalfSpace { a: [d_max, 1.0, d_max], c: 1.0, label: "lambda+rho upper" },
        HalfSpace { a: [d_min, 1.0, d_min], c: 1.0, label: "lambda+rho lower" },
        HalfSpace { a: [d_max, -1.0, -d_max], c: 1.0, label: "lambda-rho upper" },
        HalfSpace { a: [d_min, -1.0, -d_min], c: 1.0, label: "lambda-rho lower" },
    ]
}

/// Outcome of the O(1) feasibility check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FeasibilityVerdict {
    Feasible,
    /// Labels of the violated constraints.
    Infeasible(Vec<&'static str>),
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityVerdict::Feasible)
    }
}

/// Checks the dependence parameters against the feasible region with margin
/// [`EPS_FEAS`] on each half-space.
pub fn feasibility_check(w: &SpatialWeights, theta: &DependenceParams) -> FeasibilityVerdict {
    let mut violated = Vec::new();
    for hs in polytope_constraints(w) {
        if hs.slack(theta) < EPS_FEAS {
            violated.push(hs.label);
        }
    }
    if violated.is_empty() {
        FeasibilityVerdict::Feasible
    } else {
        FeasibilityVerdict::Infeasible(violated)
    }
}

/// Response panel and design array, aligned to the weight ordering.
///
/// `Y` is stored one time slice at a time; `X` stores, for each time slice,
/// its `k` design columns contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n: usize,
    t_len: usize,
    k: usize,
    /// `y[t * n + i]`
    y: Vec<f64>,
    /// `x[(t * k + j) * n + i]`
    x: Vec<f64>,
}

impl PanelData {
    /// Builds a panel already aligned to the weight ordering.
    pub fn new(n: usize, t_len: usize, k: usize, y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if y.len() != n * t_len || x.len() != n * t_len * k {
            return Err(Error::DimensionMismatch(format!(
                "panel with N={n} T={t_len} k={k} needs {} responses and {} design values, \
                 got {} and {}",
                n * t_len,
                n * t_len * k,
                y.len(),
                x.len()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteValue("panel data".into()));
        }
        Ok(Self { n, t_len, k, y, x })
    }

    /// Builds a panel given in the original cell ordering, permuting rows to
    /// match the weights.
    pub fn from_original_order(
        w: &SpatialWeights,
        t_len: usize,
        k: usize,
        y: &[f64],
        x: &[f64],
    ) -> Result<Self> {
        let n = w.n();
        if y.len() != n * t_len || x.len() != n * t_len * k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} responses and {} design values, got {} and {}",
                n * t_len,
                n * t_len * k,
                y.len(),
                x.len()
            )));
        }
        let perm = w.permutation();
        let mut py = vec![0.0; n * t_len];
        let mut px = vec![0.0; n * t_len * k];
        for t in 0..t_len {
            for i in 0..n {
                let old = perm.old_index(i);
                py[t * n + i] = y[t * n + old];
                for j in 0..k {
                    px[(t * k + j) * n + i] = x[(t * k + j) * n + old];
                }
            }
        }
        Self::new(n, t_len, k, py, px)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nt(&self) -> usize {
        self.n * self.t_len
    }

    /// Response slice at time `t`.
    pub fn y_slice(&self, t: usize) -> &[f64] {
        &self.y[t * self.n..(t + 1) * self.n]
    }

    /// Design column `j` at time `t`.
    pub fn x_col(&self, t: usize, j: usize) -> &[f64] {
        let base = (t * self.k + j) * self.n;
        &self.x[base..base + self.n]
    }

    /// Residual slice `y_t - X_t beta` written into `out`.
    pub fn residual_into(&self, t: usize, beta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.y_slice(t));
        for (j, &bj) in beta.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            for (o, &xij) in out.iter_mut().zip(self.x_col(t, j)) {
                *o -= bj * xij;
            }
        }
    }

    /// Re-aligns the rows to a different weight ordering, treating the
    /// current row order as the original indexing.
    pub fn realign(&self, w: &SpatialWeights) -> Result<Self> {
        Self::from_original_order(w, self.t_len, self.k, &self.y, &self.x)
    }

    /// Restriction to a contiguous (already permuted) row range.
    pub fn restrict_rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n {
            return Err(Error::DimensionMismatch(format!(
                "row range {}..{} out of bounds for N={}",
                start,
                start + len,
                self.n
            )));
        }
        let mut y = Vec::with_capacity(len * self.t_len);
        let mut x = Vec::with_capacity(len * self.t_len * self.k);
        for t in 0..self.t_len {
            y.extend_from_slice(&self.y_slice(t)[start..start + len]);
        }
        for t in 0..self.t_len {
            for j in 0..self.k {
                x.extend_from_slice(&self.x_col(t, j)[start..start + len]);
            }
        }
        Self::new(len, self.t_len, self.k, y, x)
    }
}
