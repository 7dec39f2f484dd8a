//! Dense reference implementations for validation on small instances.
//!
//! Everything here materializes the full stacked-panel operators and is
//! guarded to small sizes. Tests compare the banded fast paths against these
//! routines; nothing in the estimation pipeline calls them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DependenceParams, ModelParams, PanelData, SpatialWeights};

/// Largest `N * T` the dense routines accept.
pub const DENSE_GUARD: usize = 2000;

/// Dense operator matrices of the stacked error process.
#[derive(Debug, Clone)]
pub struct DenseModelMatrices {
    /// Spatial filter `S = I - lambda W`.
    pub s: DMatrix<f64>,
    /// Lag operator `R = rho W + gamma I`.
    pub r: DMatrix<f64>,
    /// Transition `A = R S^{-1}`.
    pub a: DMatrix<f64>,
    /// Long-run covariance of the filtered process, `K = (I - A^2)^{-1}`.
    pub k_mat: DMatrix<f64>,
    /// Block lower-bidiagonal operator mapping stacked errors to
    /// `(S u_1, v_2, ..., v_T)`.
    pub b_op: DMatrix<f64>,
    /// Block-diagonal covariance `Diag(K, I, ..., I)` of the mapped errors.
    pub omega: DMatrix<f64>,
}

fn guard(n: usize, t_len: usize) -> Result<()> {
    let nt = n * t_len;
    if nt > DENSE_GUARD {
        return Err(Error::GuardExceeded(format!(
            "dense oracle supports N*T <= {DENSE_GUARD}, got {nt}"
        )));
    }
    Ok(())
}

impl DenseModelMatrices {
    pub fn build(w: &SpatialWeights, theta: &DependenceParams, t_len: usize) -> Result<Self> {
        guard(w.n(), t_len)?;
        let n = w.n();
        let wd = w.band().to_dense();
        let s = DMatrix::identity(n, n) - &wd * theta.lambda;
        let r = &wd * theta.rho + DMatrix::identity(n, n) * theta.gamma;
        let s_inv = s.clone().try_inverse().ok_or_else(|| {
            Error::InfeasibleTheta("spatial filter is singular at this lambda".into())
        })?;
        let a = &r * &s_inv;
        let i_minus_a2 = DMatrix::identity(n, n) - &a * &a;
        let k_mat = i_minus_a2.try_inverse().ok_or_else(|| {
            Error::InfeasibleTheta("transition operator has a unit eigenvalue".into())
        })?;

        let nt = n * t_len;
        let mut b_op = DMatrix::zeros(nt, nt);
        let mut omega = DMatrix::zeros(nt, nt);
        for t in 0..t_len {
            b_op.view_mut((t * n, t * n), (n, n)).copy_from(&s);
            if t > 0 {
                let neg_r = -&r;
                b_op.view_mut((t * n, (t - 1) * n), (n, n)).copy_from(&neg_r);
            }
            if t == 0 {
                omega.view_mut((0, 0), (n, n)).copy_from(&k_mat);
            } else {
                omega
                    .view_mut((t * n, t * n), (n, n))
                    .copy_from(&DMatrix::identity(n, n));
            }
        }
        Ok(Self { s, r, a, k_mat, b_op, omega })
    }

    /// Stacked precision matrix `B' Omega^{-1} B`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let omega_inv = self
            .omega
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InfeasibleTheta("stationary covariance is singular".into()))?;
        Ok(self.b_op.transpose() * omega_inv * &self.b_op)
    }
}

pub fn stacked_residual(data: &PanelData, beta: &[f64]) -> DVector<f64> {
    let n = data.n();
    let mut r = DVector::zeros(data.nt());
    let mut buf = vec![0.0; n];
    for t in 0..data.t_len() {
        data.residual_into(t, beta, &mut buf);
        for i in 0..n {
            r[t * n + i] = buf[i];
        }
    }
    r
}

pub fn stacked_design(data: &PanelData) -> DMatrix<f64> {
    let n = data.n();
    let mut x = DMatrix::zeros(data.nt(), data.k());
    for t in 0..data.t_len() {
        for j in 0..data.k() {
            let col = data.x_col(t, j);
            for i in 0..n {
                x[(t * n + i, j)] = col[i];
            }
        }
    }
    x
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut acc = 0.0;
    for &e in eig.eigenvalues.iter() {
        if e <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: 0 });
        }
        acc += e.ln();
    }
    Ok(acc)
}

/// Quasi log-likelihood assembled literally from the dense stacked operators.
pub fn dense_loglik(data: &PanelData, params: &ModelParams, w: &SpatialWeights) -> Result<f64> {
    guard(data.n(), data.t_len())?;
    if data.n() != w.n() {
        return Err(Error::DimensionMismatch(
            "panel and weights disagree on the number of cells".into(),
        ));
    }
    let mats = DenseModelMatrices::build(w, &params.theta, data.t_len())?;
    let nt = data.nt() as f64;
    let resid = stacked_residual(data, &params.beta);
    let precision = mats.precision()?;
    let quad = (resid.transpose() * &precision * &resid)[(0, 0)];

    let log_det_k = log_det_spd(&mats.k_mat)?;
    // |det S| through the absolute eigenvalues; S need not be definite.
    let eig_s = mats.s.clone().symmetric_eigen();
    let mut log_abs_det_s = 0.0;
    for &e in eig_s.eigenvalues.iter() {
        if e == 0.0 {
            return Err(Error::InfeasibleTheta("spatial filter is singular".into()));
        }
        log_abs_det_s += e.abs().ln();
    }

    let value = -0.5 * nt * (2.0 * std::f64::consts::PI * params.sigma2).ln()
        - 0.5 * log_det_k
        + data.t_len() as f64 * log_abs_det_s
        - quad / (2.0 * params.sigma2);
    if !value.is_finite() {
        return Err(Error::NonfiniteValue("dense quasi log-likelihood".into()));
    }
    Ok(value)
}

/// Generalized least squares coefficients with the dense stacked precision.
pub fn dense_gls(
    data: &PanelData,
    theta: &DependenceParams,
    w: &SpatialWeights,
) -> Result<Vec<f64>> {
    guard(data.n(), data.t_len())?;
    let mats = DenseModelMatrices::build(w, theta, data.t_len())?;
    let precision = mats.precision()?;
    let x = stacked_design(data);
    let y = {
        let mut v = DVector::zeros(data.nt());
        for t in 0..data.t_len() {
            let ys = data.y_slice(t);
            for i in 0..data.n() {
                v[t * data.n() + i] = ys[i];
            }
        }
        v
    };
    let xtp = x.transpose() * &precision;
    let m = &xtp * &x;
    let rhs = &xtp * &y;
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    if !(lo > 0.0) || hi / lo > 1e12 {
        return Err(Error::SingularDesign { cond: hi / lo });
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularDesign { cond: hi / lo })?;
    Ok(sol.iter().copied().collect())
}

/// Dense profiled fit at fixed dependence parameters: log-likelihood value at
/// the GLS coefficients and the profiled innovation variance.
pub fn dense_concentrated(
    data: &PanelData,
    theta: &DependenceParams,
    w: &SpatialWeights,
) -> Result<(f64, Vec<f64>, f64)> {
    let beta = dense_gls(data, theta, w)?;
    let mats = DenseModelMatrices::build(w, theta, data.t_len())?;
    let precision = mats.precision()?;
    let resid = stacked_residual(data, &beta);
    let quad = (resid.transpose() * &precision * &resid)[(0, 0)];
    let sigma2 = quad / data.nt() as f64;
    let params = ModelParams::new(beta.clone(), *theta, sigma2)?;
    let value = dense_loglik(data, &params, w)?;
    Ok((value, beta, sigma2))
}
