//! Standard errors and confidence intervals.
//!
//! Coefficient inference uses the plug-in asymptotic covariance
//! `sigma2_hat (X' Sigma^{-1}(theta_hat) X)^{-1}`, assembled from the same
//! banded blocks as the likelihood. Dependence-parameter dispersion comes
//! from spatial subsampling: the panel is split into contiguous blocks of
//! the reordered cells, each block is refit, and the block spread is
//! rescaled by `sqrt(block N / N)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::FitContext;
use crate::model::{DependenceParams, ModelParams, PanelData, SpatialWeights};
use crate::optimizer::{fit, FitDiagnostics, OptimizerConfig};

/// Plug-in covariance of the coefficient estimates,
/// `sigma2_hat (X' Sigma^{-1}(theta_hat) X)^{-1}`.
pub fn beta_covariance(
    data: &PanelData,
    theta_hat: &DependenceParams,
    sigma2_hat: f64,
    w: &SpatialWeights,
) -> Result<DMatrix<f64>> {
    if !(sigma2_hat > 0.0) {
        return Err(Error::InvalidParameter("sigma2 must be positive".into()));
    }
    let ctx = FitContext::new(data, w)?;
    let m = ctx.normal_matrix(theta_hat);
    let k = data.k();
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::SingularDesign { cond });
    }
    // Invert through the eigendecomposition and symmetrize.
    let mut inv = DMatrix::<f64>::zeros(k, k);
    for (idx, &e) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        inv += (&v * v.transpose()) / e;
    }
    let mut cov = inv * sigma2_hat;
    for i in 0..k {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok(cov)
}

/// Gaussian critical value `z_{1 - alpha/2}`.
pub fn gaussian_critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must lie in (0, 1], got {alpha}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Method annotations carried by a report.
#[derive(Debug, Clone, Serialize)]
pub struct MethodTags {
    pub beta_se: &'static str,
    pub theta_se: Option<&'static str>,
    /// Set when innovations were simulated from a heavy-tailed preset; the
    /// plug-in covariance is derived under symmetric innovations.
    pub gaussian_innovation_caveat: bool,
}

/// Point estimates with standard errors and confidence intervals.
#[derive(Debug, Clone, Serialize)]
pub struct InferenceReport {
    pub beta_hat: Vec<f64>,
    pub beta_se: Vec<f64>,
    /// Two-sided significance level of the intervals.
    pub alpha: f64,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub theta_hat: DependenceParams,
    pub theta_se: Option<[f64; 3]>,
    pub sigma2_hat: f64,
    pub method: MethodTags,
}

/// Symmetric Gaussian confidence intervals from a coefficient covariance.
pub fn confidence_intervals(
    params: &ModelParams,
    cov: &DMatrix<f64>,
    alpha: f64,
) -> Result<InferenceReport> {
    let k = params.beta.len();
    if cov.nrows() != k || cov.ncols() != k {
        return Err(Error::DimensionMismatch(
            "covariance does not match the coefficient vector".into(),
        ));
    }
    let z = gaussian_critical_value(alpha)?;
    let mut se = Vec::with_capacity(k);
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    for j in 0..k {
        let var = cov[(j, j)];
        if !(var >= 0.0) {
            return Err(Error::NonfiniteValue(format!(
                "negative variance for coefficient {j}"
            )));
        }
        let s = var.sqrt();
        se.push(s);
        lo.push(params.beta[j] - z * s);
        hi.push(params.beta[j] + z * s);
    }
    Ok(InferenceReport {
        beta_hat: params.beta.clone(),
        beta_se: se,
        alpha,
        ci_lower: lo,
        ci_upper: hi,
        theta_hat: params.theta,
        theta_se: None,
        sigma2_hat: params.sigma2,
        method: MethodTags {
            beta_se: "plug-in",
            theta_se: None,
            gaussian_innovation_caveat: false,
        },
    })
}

/// Spatial-block layout for the subsampling estimator.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    /// Number of contiguous blocks; `None` picks ~9 square-ish blocks
    /// (side `ceil(sqrt(N)/3)` cells per block).
    pub n_blocks: Option<usize>,
    pub min_blocks: usize,
    pub min_cells: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            n_blocks: None,
            min_blocks: 4,
            min_cells: 100,
        }
    }
}

/// Per-block refit results and the rescaled subsampling standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct SubsamplingReport {
    pub theta_se: [f64; 3],
    pub per_block: Vec<DependenceParams>,
    pub block_sizes: Vec<usize>,
    pub n_blocks: usize,
    pub n_failed: usize,
}

/// Subsampling standard errors for the dependence parameters.
///
/// Blocks are contiguous ranges of the reordered (bandwidth-minimizing)
/// cell ordering, so each block is spatially coherent and its weight
/// submatrix stays banded. Each block refits the dependence parameters and
/// the block spread is rescaled by `sqrt(block N / N)`.
pub fn theta_subsampling_se(
    data: &PanelData,
    w: &SpatialWeights,
    fit_cfg: &OptimizerConfig,
    spec: &BlockSpec,
) -> Result<SubsamplingReport> {
    let n = data.n();
    let count = match spec.n_blocks {
        Some(c) => c,
        None => {
            let side = (n as f64).sqrt().ceil() as usize;
            let block_side = side.div_ceil(3).max(1);
            (n / (block_side * block_side)).max(1)
        }
    };
    if count < spec.min_blocks {
        return Err(Error::TooFewBlocks(format!(
            "{count} blocks requested, need at least {}",
            spec.min_blocks
        )));
    }
    let base = n / count;
    let rem = n % count;
    if base < spec.min_cells {
        return Err(Error::TooFewBlocks(format!(
            "blocks of {base} cells are below the minimum of {}",
            spec.min_cells
        )));
    }
    let mut ranges = Vec::with_capacity(count);
    let mut start = 0usize;
    for b in 0..count {
        let len = base + usize::from(b < rem);
        ranges.push((start, len));
        start += len;
    }

    let fits: Vec<Result<DependenceParams>> = ranges
        .par_iter()
        .map(|&(start, len)| {
            let wb = w.restrict_to_range(start, len)?;
            let raw = data.restrict_rows(start, len)?;
            let aligned = raw.realign(&wb)?;
            let (params, _) = fit(&aligned, &wb, fit_cfg)?;
            Ok(params.theta)
        })
        .collect();

    let mut per_block = Vec::new();
    let mut n_failed = 0usize;
    for (b, res) in fits.into_iter().enumerate() {
        match res {
            Ok(theta) => per_block.push(theta),
            Err(e) => {
                n_failed += 1;
                log::warn!("subsample block {b} failed: {e}");
            }
        }
    }
    if n_failed * 5 >= count {
        return Err(Error::SubsamplingFailed(format!(
            "{n_failed} of {count} block fits failed"
        )));
    }
    if per_block.len() < 2 {
        return Err(Error::SubsamplingFailed(
            "fewer than two successful block fits".into(),
        ));
    }

    let m = per_block.len() as f64;
    let mean_block = ranges.iter().map(|&(_, l)| l as f64).sum::<f64>() / count as f64;
    let scale = mean_block / n as f64;
    let mut theta_se = [0.0; 3];
    for i in 0..3 {
        let mean = per_block.iter().map(|t| t.as_array()[i]).sum::<f64>() / m;
        let var = per_block
            .iter()
            .map(|t| {
                let d = t.as_array()[i] - mean;
                d * d
            })
            .sum::<f64>()
            / (m - 1.0);
        theta_se[i] = (scale * var).sqrt();
    }
    Ok(SubsamplingReport {
        theta_se,
        per_block,
        block_sizes: ranges.iter().map(|&(_, l)| l).collect(),
        n_blocks: count,
        n_failed,
    })
}

/// Dataset dimensions recorded alongside a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitDims {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub bandwidth: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub spectrum_warning: bool,
}

/// Wall-clock per pipeline phase, in seconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseTimings {
    pub read_secs: f64,
    pub preprocess_secs: f64,
    pub fit_secs: f64,
    pub inference_secs: f64,
    pub total_secs: f64,
}

/// Complete output of one estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub estimates: ModelParams,
    pub inference: InferenceReport,
    pub diagnostics: FitDiagnostics,
    pub timings: PhaseTimings,
    pub dims: FitDims,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::concentrated_loglik;
    use crate::oracle;
    use crate::test_util::{grid_weights, toy_panel};

    #[test]
    fn reduces_to_ols_covariance_at_zero_theta() {
        let w = grid_weights(3);
        let data = toy_panel(&w, 3, 19);
        let sigma2 = 0.7;
        let cov = beta_covariance(&data, &DependenceParams::zero(), sigma2, &w).unwrap();
        // sigma2 (X'X)^{-1}
        let x = oracle::stacked_design(&data);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap() * sigma2;
        assert!((cov - xtx_inv).norm() < 1e-10);
    }

    #[test]
    fn matches_dense_covariance() {
        let w = grid_weights(3);
        let data = toy_panel(&w, 3, 31);
        let theta = DependenceParams::new(0.04, 0.55, -0.03);
        let sigma2 = 0.4;
        let cov = beta_covariance(&data, &theta, sigma2, &w).unwrap();
        let mats = oracle::DenseModelMatrices::build(&w, &theta, 3).unwrap();
        let p = mats.precision().unwrap();
        let x = oracle::stacked_design(&data);
        let expect = (x.transpose() * p * &x).try_inverse().unwrap() * sigma2;
        assert!((&cov - &expect).norm() / expect.norm() < 1e-8);
    }

    #[test]
    fn covariance_invariant_under_relabeling() {
        use crate::model::PanelData;
        use crate::sparse::{Permutation, SymSparseMatrix};
        let n = 16;
        let sp = crate::test_util::grid_sparse(4);
        let w1 = SpatialWeights::from_sparse(&sp).unwrap();
        let mut fwd: Vec<usize> = (0..n).collect();
        let mut state = 77u64;
        for i in (1..n).rev() {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(1);
            let j = (state >> 32) as usize % (i + 1);
            fwd.swap(i, j);
        }
        let relabel = Permutation::new(fwd).unwrap();
        let trips2: Vec<_> = sp
            .upper_triplets()
            .into_iter()
            .map(|(i, j, v)| (relabel.new_index(i), relabel.new_index(j), v))
            .collect();
        let w2 = SpatialWeights::from_sparse(&SymSparseMatrix::from_triplets(n, &trips2).unwrap())
            .unwrap();

        let t_len = 2;
        let mut state = 13u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let y: Vec<f64> = (0..n * t_len).map(|_| next()).collect();
        let mut x = Vec::new();
        for _ in 0..t_len {
            for _ in 0..n {
                x.push(1.0);
            }
            for _ in 0..n {
                x.push(next());
            }
        }
        let mut y2 = vec![0.0; n * t_len];
        let mut x2 = vec![0.0; n * t_len * 2];
        for t in 0..t_len {
            for i in 0..n {
                let ni = relabel.new_index(i);
                y2[t * n + ni] = y[t * n + i];
                for j in 0..2 {
                    x2[(t * 2 + j) * n + ni] = x[(t * 2 + j) * n + i];
                }
            }
        }
        let d1 = PanelData::from_original_order(&w1, t_len, 2, &y, &x).unwrap();
        let d2 = PanelData::from_original_order(&w2, t_len, 2, &y2, &x2).unwrap();
        let theta = DependenceParams::new(0.05, 0.4, -0.02);
        let c1 = beta_covariance(&d1, &theta, 0.3, &w1).unwrap();
        let c2 = beta_covariance(&d2, &theta, 0.3, &w2).unwrap();
        assert!((&c1 - &c2).norm() / c1.norm() < 1e-10);
    }

    #[test]
    fn standard_normal_quantile_is_pinned() {
        let z = gaussian_critical_value(0.05).unwrap();
        assert!((z - 1.959964).abs() < 1e-6, "{z}");
    }

    #[test]
    fn full_alpha_gives_zero_width_intervals() {
        let w = grid_weights(3);
        let data = toy_panel(&w, 2, 3);
        let theta = DependenceParams::zero();
        let (_, beta, sigma2) = concentrated_loglik(&data, &theta, &w).unwrap();
        let params = ModelParams::new(beta, theta, sigma2).unwrap();
        let cov = beta_covariance(&data, &theta, sigma2, &w).unwrap();
        let rep = confidence_intervals(&params, &cov, 1.0).unwrap();
        for j in 0..2 {
            assert!((rep.ci_upper[j] - rep.ci_lower[j]).abs() < 1e-14);
            assert!((rep.ci_lower[j] - rep.beta_hat[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn intervals_bracket_the_estimate() {
        let w = grid_weights(3);
        let data = toy_panel(&w, 3, 7);
        let theta = DependenceParams::new(0.02, 0.3, -0.01);
        let (_, beta, sigma2) = concentrated_loglik(&data, &theta, &w).unwrap();
        let params = ModelParams::new(beta, theta, sigma2).unwrap();
        let cov = beta_covariance(&data, &theta, sigma2, &w).unwrap();
        let rep = confidence_intervals(&params, &cov, 0.05).unwrap();
        for j in 0..2 {
            assert!(rep.ci_lower[j] < rep.beta_hat[j]);
            assert!(rep.beta_hat[j] < rep.ci_upper[j]);
            assert!(rep.beta_se[j] > 0.0);
        }
    }

    #[test]
    fn single_block_layout_is_rejected() {
        let w = grid_weights(12);
        let data = toy_panel(&w, 3, 11);
        let err = theta_subsampling_se(
            &data,
            &w,
            &OptimizerConfig::default(),
            &BlockSpec {
                n_blocks: Some(1),
                ..BlockSpec::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooFewBlocks(_)));
    }

    #[test]
    fn undersized_blocks_are_rejected() {
        let w = grid_weights(10);
        let data = toy_panel(&w, 3, 13);
        // 100 cells split 10 ways gives 10-cell blocks, below the floor.
        let err = theta_subsampling_se(
            &data,
            &w,
            &OptimizerConfig::default(),
            &BlockSpec {
                n_blocks: Some(10),
                ..BlockSpec::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooFewBlocks(_)));
    }
}
