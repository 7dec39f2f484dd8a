//! Panel simulator and Monte Carlo driver.
//!
//! Panels are generated on square grids by iterating the error recursion in
//! its filtered form: `S u_t = R u_{t-1} + v_t`, so each step is one banded
//! product and one banded triangular solve. Replications draw from
//! independent counter-derived substreams and run embarrassingly parallel;
//! aggregation is order-independent, so summaries are identical for any
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{beta_covariance, gaussian_critical_value};
use crate::likelihood::LikelihoodWorkspace;
use crate::model::{
    feasibility_check, DependenceParams, ModelParams, PanelData, SpatialWeights,
};
use crate::optimizer::{fit, OptimizerConfig};
use crate::sparse::SymSparseMatrix;

/// Spatial neighborhood order on the square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NeighborOrder {
    /// Four nearest cells (rook).
    First,
    /// Eight nearest cells (queen).
    Second,
}

/// Innovation distribution, standardized to the design variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Innovations {
    Gaussian,
    /// Student-t with `df > 4`, rescaled to the requested variance.
    StudentT { df: f64 },
}

/// Complete description of one simulation setting.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationDesign {
    /// Grid side; `N = n_side^2`.
    pub n_side: usize,
    pub t_len: usize,
    pub order: NeighborOrder,
    /// True parameters used to generate the data.
    pub params: ModelParams,
    pub innovations: Innovations,
    pub burn_in: usize,
    pub n_reps: usize,
    pub seed: u64,
}

impl SimulationDesign {
    /// The default preset: a first-order 10x10 grid, five time slices,
    /// `beta = (1, 0.5)`, `theta = (0.05, 0.7, -0.03)`, and unit-variance
    /// Gaussian innovations.
    pub fn default_preset() -> Self {
        Self {
            n_side: 10,
            t_len: 5,
            order: NeighborOrder::First,
            params: ModelParams::new(
                vec![1.0, 0.5],
                DependenceParams::new(0.05, 0.7, -0.03),
                1.0,
            )
            .expect("preset variance is positive"),
            innovations: Innovations::Gaussian,
            burn_in: 200,
            n_reps: 1000,
            seed: 20200510,
        }
    }

    pub fn n(&self) -> usize {
        self.n_side * self.n_side
    }

    pub fn k(&self) -> usize {
        self.params.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_side < 2 {
            return Err(Error::InvalidParameter("grid side must be at least 2".into()));
        }
        if self.t_len == 0 {
            return Err(Error::InvalidParameter("need at least one time slice".into()));
        }
        if !(self.params.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "innovation variance must be positive, got {}",
                self.params.sigma2
            )));
        }
        if let Innovations::StudentT { df } = self.innovations {
            if !(df > 4.0) {
                return Err(Error::InvalidParameter(format!(
                    "student-t innovations need df > 4 for finite fourth moments, got {df}"
                )));
            }
        }
        Ok(())
    }
}

/// Binary grid adjacency in row-major vertex order.
pub fn grid_adjacency(n_side: usize, order: NeighborOrder) -> Result<SymSparseMatrix> {
    if n_side < 2 {
        return Err(Error::InvalidParameter("grid side must be at least 2".into()));
    }
    let id = |r: usize, c: usize| r * n_side + c;
    let mut trips = Vec::new();
    for r in 0..n_side {
        for c in 0..n_side {
            if c + 1 < n_side {
                trips.push((id(r, c), id(r, c + 1), 1.0));
            }
            if r + 1 < n_side {
                trips.push((id(r, c), id(r + 1, c), 1.0));
                if order == NeighborOrder::Second {
                    if c + 1 < n_side {
                        trips.push((id(r, c), id(r + 1, c + 1), 1.0));
                    }
                    if c > 0 {
                        trips.push((id(r, c), id(r + 1, c - 1), 1.0));
                    }
                }
            }
        }
    }
    SymSparseMatrix::from_triplets(n_side * n_side, &trips)
}

/// Preprocessed weights for a square grid.
pub fn make_grid_weights(n_side: usize, order: NeighborOrder) -> Result<SpatialWeights> {
    SpatialWeights::from_sparse(&grid_adjacency(n_side, order)?)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent substream seed for `(master, domain, index)`.
fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain)) ^ index)
}

const DOMAIN_DESIGN: u64 = 1;
const DOMAIN_REP: u64 = 2;

/// Draws the fixed design: an intercept plus standard-Gaussian covariates,
/// generated once per design seed and shared by every replication.
fn fixed_design(design: &SimulationDesign, n: usize) -> Vec<f64> {
    let k = design.k();
    let t_len = design.t_len;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(design.seed, DOMAIN_DESIGN, 0));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = vec![0.0; n * t_len * k];
    for t in 0..t_len {
        for j in 0..k {
            let base = (t * k + j) * n;
            if j == 0 {
                for i in 0..n {
                    x[base + i] = 1.0;
                }
            } else {
                for i in 0..n {
                    x[base + i] = std_normal.sample(&mut rng);
                }
            }
        }
    }
    x
}

enum InnovationSampler {
    Gaussian(Normal<f64>),
    StudentT { dist: StudentT<f64>, scale: f64 },
}

impl InnovationSampler {
    fn new(family: Innovations, sigma2: f64) -> Result<Self> {
        match family {
            Innovations::Gaussian => Ok(Self::Gaussian(
                Normal::new(0.0, sigma2.sqrt())
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?,
            )),
            Innovations::StudentT { df } => {
                let dist =
                    StudentT::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                // Standardize: Var(t_df) = df / (df - 2).
                let scale = (sigma2 * (df - 2.0) / df).sqrt();
                Ok(Self::StudentT { dist, scale })
            }
        }
    }

    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Self::Gaussian(d) => {
                for v in out.iter_mut() {
                    *v = d.sample(rng);
                }
            }
            Self::StudentT { dist, scale } => {
                for v in out.iter_mut() {
                    *v = dist.sample(rng) * scale;
                }
            }
        }
    }
}

/// Simulates the error process on arbitrary preprocessed weights.
///
/// Iterates the recursion in filtered form — `S u_t = R u_{t-1} + v_t`, one
/// banded product and one banded solve per step — from a zero start,
/// discarding `burn_in` initial steps. Returns the `N x T` error panel in
/// the working (permuted) ordering.
pub fn simulate_errors(
    w: &SpatialWeights,
    theta: &DependenceParams,
    sigma2: f64,
    innovations: Innovations,
    burn_in: usize,
    t_len: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !feasibility_check(w, theta).is_feasible() {
        return Err(Error::InfeasibleTheta(
            "true dependence parameters are outside the feasible region".into(),
        ));
    }
    let n = w.n();
    let ws = LikelihoodWorkspace::new(w, theta)?;
    let sampler = InnovationSampler::new(innovations, sigma2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n * t_len];
    let mut u = vec![0.0; n];
    let mut wu = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut step = |u: &mut Vec<f64>, rng: &mut ChaCha8Rng| -> Result<()> {
        w.band().spmv(u, &mut wu)?;
        sampler.fill(rng, &mut rhs);
        for i in 0..n {
            rhs[i] += theta.gamma * u[i] + theta.rho * wu[i];
        }
        ws.filter_factor().solve_in_place(&mut rhs)?;
        std::mem::swap(u, &mut rhs);
        Ok(())
    };
    for _ in 0..burn_in {
        step(&mut u, &mut rng)?;
    }
    for t in 0..t_len {
        step(&mut u, &mut rng)?;
        out[t * n..(t + 1) * n].copy_from_slice(&u);
    }
    Ok(out)
}

/// Simulates one panel for replication `rep`, reusing preprocessed weights.
///
/// The design matrix depends only on the design seed; innovations come from
/// the replication's own substream, so panels are bitwise reproducible.
pub fn simulate_panel_rep(
    design: &SimulationDesign,
    w: &SpatialWeights,
    rep: usize,
) -> Result<PanelData> {
    design.validate()?;
    let n = w.n();
    if n != design.n() {
        return Err(Error::DimensionMismatch(
            "weights do not match the design grid".into(),
        ));
    }
    let t_len = design.t_len;
    let k = design.k();
    let x = fixed_design(design, n);
    let u = simulate_errors(
        w,
        &design.params.theta,
        design.params.sigma2,
        design.innovations,
        design.burn_in,
        t_len,
        derive_seed(design.seed, DOMAIN_REP, rep as u64),
    )?;
    let mut y = vec![0.0; n * t_len];
    for t in 0..t_len {
        for i in 0..n {
            let mut mean = 0.0;
            for (j, &bj) in design.params.beta.iter().enumerate() {
                mean += bj * x[(t * k + j) * n + i];
            }
            y[t * n + i] = mean + u[t * n + i];
        }
    }
    PanelData::new(n, t_len, k, y, x)
}

/// Simulates a single panel together with its grid weights.
pub fn simulate_panel(design: &SimulationDesign) -> Result<(SpatialWeights, PanelData)> {
    let w = make_grid_weights(design.n_side, design.order)?;
    let data = simulate_panel_rep(design, &w, 0)?;
    Ok((w, data))
}

/// One replication's estimates and interval outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct RepOutcome {
    pub rep: usize,
    /// `(beta..., lambda, gamma, rho, sigma2)`.
    pub delta: Vec<f64>,
    pub plugin_se: Vec<f64>,
    pub covered: Vec<bool>,
    pub fit_secs: f64,
    pub converged: bool,
}

/// Summary statistics for one parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub true_value: f64,
    pub bias: f64,
    pub mse: f64,
    pub sample_sd: f64,
    /// Mean plug-in standard error (coefficients only).
    pub mean_plugin_se: Option<f64>,
    /// Empirical coverage of the nominal-95% interval (coefficients only).
    pub coverage: Option<f64>,
}

/// Aggregated Monte Carlo results.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub n_reps_requested: usize,
    pub n_reps_completed: usize,
    pub n_failed: usize,
    /// Set when the design requested zero replications.
    pub empty: bool,
    /// Set when more than 1% of replications failed.
    pub excess_failures: bool,
    pub params: Vec<ParamSummary>,
    pub mean_fit_secs: f64,
}

/// Runs the full study and returns per-replication outcomes (in replication
/// order) plus failures.
pub fn run_monte_carlo_outcomes(
    design: &SimulationDesign,
    fit_cfg: &OptimizerConfig,
) -> Result<(Vec<RepOutcome>, usize)> {
    design.validate()?;
    let w = make_grid_weights(design.n_side, design.order)?;
    let theta0 = design.params.theta;
    if !feasibility_check(&w, &theta0).is_feasible() {
        return Err(Error::InfeasibleTheta(
            "true dependence parameters are outside the feasible region".into(),
        ));
    }
    let z95 = gaussian_critical_value(0.05)?;
    let beta0 = &design.params.beta;

    let results: Vec<Result<RepOutcome>> = (0..design.n_reps)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_panel_rep(design, &w, rep)?;
            let started = std::time::Instant::now();
            let (params, diag) = fit(&data, &w, fit_cfg)?;
            let fit_secs = started.elapsed().as_secs_f64();
            let cov = beta_covariance(&data, &params.theta, params.sigma2, &w)?;
            let k = params.beta.len();
            let mut plugin_se = Vec::with_capacity(k);
            let mut covered = Vec::with_capacity(k);
            for j in 0..k {
                let se = cov[(j, j)].sqrt();
                plugin_se.push(se);
                covered.push((params.beta[j] - beta0[j]).abs() <= z95 * se);
            }
            let mut delta = params.beta.clone();
            delta.extend_from_slice(&params.theta.as_array());
            delta.push(params.sigma2);
            Ok(RepOutcome {
                rep,
                delta,
                plugin_se,
                covered,
                fit_secs,
                converged: diag.converged,
            })
        })
        .collect();

    let mut outcomes = Vec::with_capacity(design.n_reps);
    let mut failed = 0usize;
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                failed += 1;
                log::warn!("replication {rep} failed: {e}");
            }
        }
    }
    Ok((outcomes, failed))
}

/// Aggregates replication outcomes into the summary table.
pub fn summarize(
    design: &SimulationDesign,
    outcomes: &[RepOutcome],
    n_failed: usize,
) -> MonteCarloSummary {
    let k = design.k();
    let mut names: Vec<String> = (0..k).map(|j| format!("beta{j}")).collect();
    names.extend(["lambda", "gamma", "rho", "sigma2"].map(String::from));
    let mut truth = design.params.beta.clone();
    truth.extend_from_slice(&design.params.theta.as_array());
    truth.push(design.params.sigma2);

    let m = outcomes.len();
    let empty = design.n_reps == 0;
    let mut params = Vec::with_capacity(names.len());
    for (p, name) in names.into_iter().enumerate() {
        if m == 0 {
            params.push(ParamSummary {
                name,
                true_value: truth[p],
                bias: f64::NAN,
                mse: f64::NAN,
                sample_sd: f64::NAN,
                mean_plugin_se: None,
                coverage: None,
            });
            continue;
        }
        let mf = m as f64;
        let mean = outcomes.iter().map(|o| o.delta[p]).sum::<f64>() / mf;
        let bias = mean - truth[p];
        let mse = outcomes
            .iter()
            .map(|o| {
                let d = o.delta[p] - truth[p];
                d * d
            })
            .sum::<f64>()
            / mf;
        let var = if m > 1 {
            outcomes
                .iter()
                .map(|o| {
                    let d = o.delta[p] - mean;
                    d * d
                })
                .sum::<f64>()
                / (mf - 1.0)
        } else {
            0.0
        };
        let (mean_plugin_se, coverage) = if p < k {
            let se = outcomes.iter().map(|o| o.plugin_se[p]).sum::<f64>() / mf;
            let cov =
                outcomes.iter().filter(|o| o.covered[p]).count() as f64 / mf;
            (Some(se), Some(cov))
        } else {
            (None, None)
        };
        params.push(ParamSummary {
            name,
            true_value: truth[p],
            bias,
            mse,
            sample_sd: var.sqrt(),
            mean_plugin_se,
            coverage,
        });
    }
    let mean_fit_secs = if m == 0 {
        f64::NAN
    } else {
        outcomes.iter().map(|o| o.fit_secs).sum::<f64>() / m as f64
    };
    MonteCarloSummary {
        n_reps_requested: design.n_reps,
        n_reps_completed: m,
        n_failed,
        empty,
        excess_failures: n_failed * 100 > design.n_reps.max(1),
        params,
        mean_fit_secs,
    }
}

/// Runs the Monte Carlo study and aggregates bias, MSE, sample dispersion,
/// plug-in standard errors, and interval coverage.
pub fn run_monte_carlo(
    design: &SimulationDesign,
    fit_cfg: &OptimizerConfig,
) -> Result<MonteCarloSummary> {
    if design.n_reps == 0 {
        design.validate()?;
        return Ok(summarize(design, &[], 0));
    }
    let (outcomes, failed) = run_monte_carlo_outcomes(design, fit_cfg)?;
    Ok(summarize(design, &outcomes, failed))
}
