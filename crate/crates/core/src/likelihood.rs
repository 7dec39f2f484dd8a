//! O(NT) evaluation of the quasi log-likelihood, profiling, and gradients.
//!
//! The log-likelihood of the stacked panel decomposes into per-slice
//! quadratic forms in the banded operators `S`, `R`, and `G = S^2 - R^2`
//! plus two log-determinants, so a full evaluation costs
//! `O(b N T + k N T + b^2 N)` for graph bandwidth `b` and never builds an
//! `NT x NT` matrix. Log-determinants use the identity
//! `log det K = log det S^2 - log det G` with `G` factored through its
//! commuting split `G = (S - R)(S + R)`: inside the feasible region all of
//! `S`, `S - R`, and `S + R` are positive definite, and each factorization
//! keeps the weight bandwidth instead of doubling it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    feasibility_check, DependenceParams, FeasibilityVerdict, ModelParams, PanelData,
    SpatialWeights,
};
use crate::sparse::{banded_cholesky_into, CholeskyFactor};

/// Condition-number bound before the GLS normal equations count as singular.
const SINGULAR_COND: f64 = 1e12;

/// Cached factorizations for one value of the dependence parameters.
///
/// All cached factors correspond to the same `theta`; the spatial-filter
/// factor is shared (and reused across `theta` values with equal `lambda`).
#[derive(Clone)]
pub struct LikelihoodWorkspace<'w> {
    w: &'w SpatialWeights,
    theta: DependenceParams,
    /// Cholesky factor of `S = I - lambda W`.
    chol_filter: Arc<CholeskyFactor>,
    /// Cholesky factor of `S - R`.
    chol_diff: Arc<CholeskyFactor>,
    /// Cholesky factor of `S + R`.
    chol_sum: Arc<CholeskyFactor>,
}

impl<'w> LikelihoodWorkspace<'w> {
    pub fn new(w: &'w SpatialWeights, theta: &DependenceParams) -> Result<Self> {
        let chol_filter = Arc::new(Self::factor_filter(w, theta.lambda)?);
        Self::with_filter(w, theta, chol_filter)
    }

    fn factor_filter(w: &SpatialWeights, lambda: f64) -> Result<CholeskyFactor> {
        banded_cholesky_into(w.band().affine(1.0, -lambda).tighten())
    }

    fn with_filter(
        w: &'w SpatialWeights,
        theta: &DependenceParams,
        chol_filter: Arc<CholeskyFactor>,
    ) -> Result<Self> {
        let diff = w
            .band()
            .affine(1.0 - theta.gamma, -(theta.lambda + theta.rho))
            .tighten();
        let sum = w
            .band()
            .affine(1.0 + theta.gamma, theta.rho - theta.lambda)
            .tighten();
        Ok(Self {
            w,
            theta: *theta,
            chol_filter,
            chol_diff: Arc::new(banded_cholesky_into(diff)?),
            chol_sum: Arc::new(banded_cholesky_into(sum)?),
        })
    }

    pub fn weights(&self) -> &'w SpatialWeights {
        self.w
    }

    pub fn theta(&self) -> &DependenceParams {
        &self.theta
    }

    /// `log |det S(lambda)|`.
    pub fn log_abs_det_filter(&self) -> f64 {
        self.chol_filter.log_det()
    }

    /// `log det G` through the commuting split `(S - R)(S + R)`.
    pub fn log_det_initial_precision(&self) -> f64 {
        self.chol_diff.log_det() + self.chol_sum.log_det()
    }

    /// Factor of the spatial filter, for solves with `S^{-1}`.
    pub fn filter_factor(&self) -> &CholeskyFactor {
        &self.chol_filter
    }

    fn check_theta(&self, theta: &DependenceParams) -> Result<()> {
        if self.theta != *theta {
            return Err(Error::InvalidParameter(
                "workspace was built for different dependence parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Log-determinant of the long-run covariance `K`, via
/// `log det K = log det S^2 - log det (S^2 - R^2)`.
pub fn log_det_k(ws: &LikelihoodWorkspace) -> f64 {
    2.0 * ws.log_abs_det_filter() - ws.log_det_initial_precision()
}

/// Value of the quasi log-likelihood together with its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodValue {
    pub loglik: f64,
    /// Profiled innovation variance `H / (N T)` at the supplied coefficients.
    pub sigma2_hat: f64,
    /// The quadratic form `H(beta, theta)`.
    pub quad_form: f64,
    pub logdet_k: f64,
    pub logdet_s_abs: f64,
}

fn infeasible(verdict: FeasibilityVerdict) -> Error {
    match verdict {
        FeasibilityVerdict::Feasible => unreachable!(),
        FeasibilityVerdict::Infeasible(labels) => Error::InfeasibleTheta(labels.join(", ")),
    }
}

/// Slice transforms `s = v - lambda (W v)` and `q = gamma v + rho (W v)`.
#[inline]
fn transform_slice(
    theta: &DependenceParams,
    v: &[f64],
    wv: &[f64],
    s_out: &mut [f64],
    q_out: &mut [f64],
) {
    let (l, g, r) = (theta.lambda, theta.gamma, theta.rho);
    for i in 0..v.len() {
        let vi = v[i];
        let wvi = wv[i];
        s_out[i] = vi - l * wvi;
        q_out[i] = g * vi + r * wvi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shared skeleton of the quadratic-form decomposition. `fill(t, r, wr)`
/// writes the residual slice and its product with `W`.
fn quad_form_core<F>(n: usize, t_len: usize, theta: &DependenceParams, mut fill: F) -> f64
where
    F: FnMut(usize, &mut [f64], &mut [f64]),
{
    let mut r = vec![0.0; n];
    let mut wr = vec![0.0; n];
    let mut sr = vec![0.0; n];
    let mut qr = vec![0.0; n];
    let mut qr_prev = vec![0.0; n];

    // The four sums: the initial-slice term in G, the S^2 terms, the R^2
    // terms, and the lag-coupling cross terms.
    let mut term_initial = 0.0;
    let mut term_filter = 0.0;
    let mut term_lag = 0.0;
    let mut term_cross = 0.0;

    for t in 0..t_len {
        fill(t, &mut r, &mut wr);
        transform_slice(theta, &r, &wr, &mut sr, &mut qr);
        if t == 0 {
            term_initial = dot(&sr, &sr) - dot(&qr, &qr);
        } else {
            term_filter += dot(&sr, &sr);
            term_cross += dot(&qr_prev, &sr);
        }
        if t < t_len - 1 {
            term_lag += dot(&qr, &qr);
        }
        std::mem::swap(&mut qr, &mut qr_prev);
    }
    term_initial + term_filter + term_lag - 2.0 * term_cross
}

/// Quadratic form `(Y - X beta)' Sigma(theta)^{-1} (Y - X beta)` in
/// `O(b N T + k N T)` time.
pub fn quad_form(data: &PanelData, beta: &[f64], ws: &LikelihoodWorkspace) -> Result<f64> {
    let w = ws.w;
    if data.n() != w.n() {
        return Err(Error::DimensionMismatch(
            "panel and weights disagree on the number of cells".into(),
        ));
    }
    if beta.len() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, design has k={}",
            beta.len(),
            data.k()
        )));
    }
    Ok(quad_form_core(
        data.n(),
        data.t_len(),
        &ws.theta,
        |t, r, wr| {
            data.residual_into(t, beta, r);
            w.band().spmv(r, wr).expect("dimensions checked");
        },
    ))
}

/// Quasi log-likelihood at the full parameter vector.
pub fn quasi_loglik(
    data: &PanelData,
    params: &ModelParams,
    w: &SpatialWeights,
) -> Result<LikelihoodValue> {
    let verdict = feasibility_check(w, &params.theta);
    if !verdict.is_feasible() {
        return Err(infeasible(verdict));
    }
    if !(params.sigma2 > 0.0) {
        return Err(Error::InvalidParameter("sigma2 must be positive".into()));
    }
    let ws = LikelihoodWorkspace::new(w, &params.theta)?;
    let h = quad_form(data, &params.beta, &ws)?;
    assemble_value(data.nt(), data.t_len(), &ws, h, params.sigma2)
}

fn assemble_value(
    nt: usize,
    t_len: usize,
    ws: &LikelihoodWorkspace,
    h: f64,
    sigma2: f64,
) -> Result<LikelihoodValue> {
    let logdet_k = log_det_k(ws);
    let logdet_s_abs = ws.log_abs_det_filter();
    let ntf = nt as f64;
    let loglik = -0.5 * ntf * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * logdet_k
        + t_len as f64 * logdet_s_abs
        - h / (2.0 * sigma2);
    if !loglik.is_finite() {
        return Err(Error::NonfiniteValue(format!(
            "quasi log-likelihood (quad form {h:.6e}, sigma2 {sigma2:.6e})"
        )));
    }
    Ok(LikelihoodValue {
        loglik,
        sigma2_hat: h / ntf,
        quad_form: h,
        logdet_k,
        logdet_s_abs,
    })
}

/// Closed-form gradient of the quasi log-likelihood with respect to the
/// regression coefficients, `sigma^{-2} X' Sigma^{-1} (Y - X beta)`,
/// assembled from the same four banded blocks as the quadratic form.
pub fn gradient_beta(
    data: &PanelData,
    params: &ModelParams,
    ws: &LikelihoodWorkspace,
) -> Result<Vec<f64>> {
    ws.check_theta(&params.theta)?;
    let w = ws.w;
    let n = data.n();
    let k = data.k();
    if params.beta.len() != k || n != w.n() {
        return Err(Error::DimensionMismatch(
            "coefficient or panel dimensions do not match".into(),
        ));
    }
    let theta = &ws.theta;
    let t_len = data.t_len();

    let mut r = vec![0.0; n];
    let mut wv = vec![0.0; n];
    let mut sr = vec![0.0; n];
    let mut qr = vec![0.0; n];
    let mut qr_prev = vec![0.0; n];
    let mut sx = vec![0.0; n * k];
    let mut qx = vec![0.0; n * k];
    let mut qx_prev = vec![0.0; n * k];
    let mut g = vec![0.0; k];

    for t in 0..t_len {
        data.residual_into(t, &params.beta, &mut r);
        w.band().spmv(&r, &mut wv)?;
        transform_slice(theta, &r, &wv, &mut sr, &mut qr);
        for j in 0..k {
            let xc = data.x_col(t, j);
            w.band().spmv(xc, &mut wv)?;
            for i in 0..n {
                let vi = xc[i];
                let wvi = wv[i];
                sx[j * n + i] = vi - theta.lambda * wvi;
                qx[j * n + i] = theta.gamma * vi + theta.rho * wvi;
            }
        }
        for j in 0..k {
            let sxj = &sx[j * n..(j + 1) * n];
            let qxj = &qx[j * n..(j + 1) * n];
            if t == 0 {
                g[j] += dot(sxj, &sr) - dot(qxj, &qr);
            } else {
                g[j] += dot(sxj, &sr);
                g[j] -= dot(&qx_prev[j * n..(j + 1) * n], &sr) + dot(sxj, &qr_prev);
            }
            if t < t_len - 1 {
                g[j] += dot(qxj, &qr);
            }
        }
        std::mem::swap(&mut qr, &mut qr_prev);
        std::mem::swap(&mut qx, &mut qx_prev);
    }
    let inv_s2 = 1.0 / params.sigma2;
    for gj in g.iter_mut() {
        *gj *= inv_s2;
    }
    Ok(g)
}

/// Precomputed `W`-products of the panel, shared across likelihood
/// evaluations at different dependence parameters.
pub struct DataCache {
    /// `W y_t`, stored like the response panel.
    wy: Vec<f64>,
    /// `W x_{t,j}`, stored like the design array.
    wx: Vec<f64>,
    n: usize,
    k: usize,
}

impl DataCache {
    pub fn new(data: &PanelData, w: &SpatialWeights) -> Result<Self> {
        let n = data.n();
        if n != w.n() {
            return Err(Error::DimensionMismatch(
                "panel and weights disagree on the number of cells".into(),
            ));
        }
        let (t_len, k) = (data.t_len(), data.k());
        let mut wy = vec![0.0; n * t_len];
        let mut wx = vec![0.0; n * t_len * k];
        for t in 0..t_len {
            w.band().spmv(data.y_slice(t), &mut wy[t * n..(t + 1) * n])?;
            for j in 0..k {
                let base = (t * k + j) * n;
                w.band().spmv(data.x_col(t, j), &mut wx[base..base + n])?;
            }
        }
        Ok(Self { wy, wx, n, k })
    }

    fn wy_slice(&self, t: usize) -> &[f64] {
        &self.wy[t * self.n..(t + 1) * self.n]
    }

    fn wx_col(&self, t: usize, j: usize) -> &[f64] {
        let base = (t * self.k + j) * self.n;
        &self.wx[base..base + self.n]
    }

    /// `W (y_t - X_t beta)` from the cached products.
    fn residual_w_into(&self, t: usize, beta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.wy_slice(t));
        for (j, &bj) in beta.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            for (o, &wxij) in out.iter_mut().zip(self.wx_col(t, j)) {
                *o -= bj * wxij;
            }
        }
    }
}

/// Result of profiling the coefficients and variance at fixed dependence
/// parameters.
#[derive(Debug, Clone)]
pub struct Concentrated {
    pub value: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub loglik_parts: LikelihoodValue,
}

/// GLS normal equations `(X' Sigma^{-1} X, X' Sigma^{-1} Y)` assembled from
/// the four banded blocks in `O(k b N T)`.
fn gls_terms(
    data: &PanelData,
    cache: &DataCache,
    theta: &DependenceParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.n();
    let k = data.k();
    let t_len = data.t_len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);

    let mut sx = vec![0.0; n * k];
    let mut qx = vec![0.0; n * k];
    let mut qx_prev = vec![0.0; n * k];
    let mut sy = vec![0.0; n];
    let mut qy = vec![0.0; n];
    let mut qy_prev = vec![0.0; n];

    fn col(buf: &[f64], n: usize, j: usize) -> &[f64] {
        &buf[j * n..(j + 1) * n]
    }

    for t in 0..t_len {
        for j in 0..k {
            let xc = data.x_col(t, j);
            let wxc = cache.wx_col(t, j);
            for i in 0..n {
                sx[j * n + i] = xc[i] - theta.lambda * wxc[i];
                qx[j * n + i] = theta.gamma * xc[i] + theta.rho * wxc[i];
            }
        }
        let yc = data.y_slice(t);
        let wyc = cache.wy_slice(t);
        for i in 0..n {
            sy[i] = yc[i] - theta.lambda * wyc[i];
            qy[i] = theta.gamma * yc[i] + theta.rho * wyc[i];
        }

        for j1 in 0..k {
            let sx1 = col(&sx, n, j1);
            let qx1 = col(&qx, n, j1);
            if t == 0 {
                for j2 in j1..k {
                    let v = dot(sx1, col(&sx, n, j2)) - dot(qx1, col(&qx, n, j2));
                    m[(j1, j2)] += v;
                    if j1 != j2 {
                        m[(j2, j1)] += v;
                    }
                }
                rhs[j1] += dot(sx1, &sy) - dot(qx1, &qy);
            } else {
                for j2 in j1..k {
                    let v = dot(sx1, col(&sx, n, j2));
                    m[(j1, j2)] += v;
                    if j1 != j2 {
                        m[(j2, j1)] += v;
                    }
                }
                rhs[j1] += dot(sx1, &sy);
            }
            if t < t_len - 1 {
                for j2 in j1..k {
                    let v = dot(qx1, col(&qx, n, j2));
                    m[(j1, j2)] += v;
                    if j1 != j2 {
                        m[(j2, j1)] += v;
                    }
                }
                rhs[j1] += dot(qx1, &qy);
            }
        }
        if t > 0 {
            // Cross terms couple the previous lag block with the current
            // filter block on both sides of the normal equations.
            for j1 in 0..k {
                let qp1 = col(&qx_prev, n, j1);
                for j2 in 0..k {
                    let c = dot(qp1, col(&sx, n, j2));
                    m[(j1, j2)] -= c;
                    m[(j2, j1)] -= c;
                }
                rhs[j1] -= dot(qp1, &sy);
            }
            for j2 in 0..k {
                rhs[j2] -= dot(col(&sx, n, j2), &qy_prev);
            }
        }
        std::mem::swap(&mut qx, &mut qx_prev);
        std::mem::swap(&mut qy, &mut qy_prev);
    }
    (m, rhs)
}

fn solve_normal_equations(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Vec<f64>> {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond > SINGULAR_COND {
        return Err(Error::SingularDesign { cond });
    }
    let proj = eig.eigenvectors.transpose() * rhs;
    let mut scaled = proj;
    for (i, v) in scaled.iter_mut().enumerate() {
        *v /= eig.eigenvalues[i];
    }
    let beta = eig.eigenvectors * scaled;
    Ok(beta.iter().copied().collect())
}

/// Evaluation context for repeated likelihood work on one panel: holds the
/// cached `W`-products and reuses spatial-filter factorizations across
/// dependence parameters that share `lambda`.
pub struct FitContext<'a> {
    data: &'a PanelData,
    w: &'a SpatialWeights,
    cache: DataCache,
    filter_cache: Vec<(u64, Arc<CholeskyFactor>)>,
    pub evals: usize,
}

impl<'a> FitContext<'a> {
    pub fn new(data: &'a PanelData, w: &'a SpatialWeights) -> Result<Self> {
        Ok(Self {
            data,
            w,
            cache: DataCache::new(data, w)?,
            filter_cache: Vec::new(),
            evals: 0,
        })
    }

    pub fn data(&self) -> &'a PanelData {
        self.data
    }

    pub fn weights(&self) -> &'a SpatialWeights {
        self.w
    }

    pub fn workspace(&mut self, theta: &DependenceParams) -> Result<LikelihoodWorkspace<'a>> {
        let key = theta.lambda.to_bits();
        if let Some((_, f)) = self.filter_cache.iter().find(|(k, _)| *k == key) {
            return LikelihoodWorkspace::with_filter(self.w, theta, Arc::clone(f));
        }
        let factor = Arc::new(LikelihoodWorkspace::factor_filter(self.w, theta.lambda)?);
        if self.filter_cache.len() >= 3 {
            self.filter_cache.remove(0);
        }
        self.filter_cache.push((key, Arc::clone(&factor)));
        LikelihoodWorkspace::with_filter(self.w, theta, factor)
    }

    /// Profiled log-likelihood at fixed dependence parameters: solves the
    /// GLS normal equations for the coefficients and plugs in the profiled
    /// variance.
    pub fn concentrated(&mut self, theta: &DependenceParams) -> Result<Concentrated> {
        let verdict = feasibility_check(self.w, theta);
        if !verdict.is_feasible() {
            return Err(infeasible(verdict));
        }
        self.evals += 1;
        let ws = self.workspace(theta)?;
        let (m, rhs) = gls_terms(self.data, &self.cache, theta);
        let beta = solve_normal_equations(&m, &rhs)?;
        let h = self.quad_form_cached(theta, &beta);
        let nt = self.data.nt();
        let sigma2 = h / nt as f64;
        let parts = assemble_value(nt, self.data.t_len(), &ws, h, sigma2)?;
        Ok(Concentrated {
            value: parts.loglik,
            beta,
            sigma2,
            loglik_parts: parts,
        })
    }

    fn quad_form_cached(&self, theta: &DependenceParams, beta: &[f64]) -> f64 {
        quad_form_core(self.data.n(), self.data.t_len(), theta, |t, r, wr| {
            self.data.residual_into(t, beta, r);
            self.cache.residual_w_into(t, beta, wr);
        })
    }

    /// GLS normal-equation matrix `X' Sigma^{-1} X` at `theta`.
    pub fn normal_matrix(&self, theta: &DependenceParams) -> DMatrix<f64> {
        gls_terms(self.data, &self.cache, theta).0
    }

    /// Central finite-difference gradient of the concentrated log-likelihood
    /// in the dependence parameters. Steps shrink to stay feasible.
    pub fn gradient_theta_fd(&mut self, theta: &DependenceParams) -> Result<[f64; 3]> {
        let w = self.w;
        fd_gradient_over(w, theta, |t| self.concentrated(t).map(|c| c.value))
    }
}

/// Central finite differences of an arbitrary function over the dependence
/// parameters, with the step per component `cbrt(eps) * (1 + |theta_i|)`
/// shrinking automatically until both stencil points are feasible.
pub fn fd_gradient_over<F>(
    w: &SpatialWeights,
    theta: &DependenceParams,
    mut f: F,
) -> Result<[f64; 3]>
where
    F: FnMut(&DependenceParams) -> Result<f64>,
{
    let cbrt_eps = f64::EPSILON.cbrt();
    let mut g = [0.0; 3];
    for i in 0..3 {
        let base = theta.as_array();
        let scale = 1.0 + base[i].abs();
        let mut h = cbrt_eps * scale;
        let floor = 1e4 * f64::EPSILON * scale;
        let (tp, tm) = loop {
            let mut up = base;
            up[i] += h;
            let mut dn = base;
            dn[i] -= h;
            let tp = DependenceParams::from_array(up);
            let tm = DependenceParams::from_array(dn);
            if feasibility_check(w, &tp).is_feasible() && feasibility_check(w, &tm).is_feasible()
            {
                break (tp, tm);
            }
            h *= 0.5;
            if h < floor {
                return Err(Error::InfeasibleTheta(format!(
                    "no feasible finite-difference step in component {i}"
                )));
            }
        };
        let up = f(&tp)?;
        let dn = f(&tm)?;
        g[i] = (up - dn) / (2.0 * h);
    }
    Ok(g)
}

/// Profiled log-likelihood at fixed dependence parameters.
///
/// Returns `(value, beta_hat, sigma2_hat)`; the coefficients solve the GLS
/// normal equations assembled from the banded blocks.
pub fn concentrated_loglik(
    data: &PanelData,
    theta: &DependenceParams,
    w: &SpatialWeights,
) -> Result<(f64, Vec<f64>, f64)> {
    let mut ctx = FitContext::new(data, w)?;
    let c = ctx.concentrated(theta)?;
    Ok((c.value, c.beta, c.sigma2))
}

/// Central finite-difference gradient of the concentrated log-likelihood.
pub fn gradient_theta_fd(
    data: &PanelData,
    theta: &DependenceParams,
    w: &SpatialWeights,
) -> Result<[f64; 3]> {
    let mut ctx = FitContext::new(data, w)?;
    ctx.gradient_theta_fd(theta)
}
