//! Monte Carlo behavior of the full estimation pipeline: recovery of true
//! parameters, scale equivariance, burn-in sufficiency, and subsampling
//! dispersion.

mod util;

use starq_core::inference::{beta_covariance, theta_subsampling_se, BlockSpec};
use starq_core::likelihood::quasi_loglik;
use starq_core::model::{DependenceParams, ModelParams, PanelData, SpatialWeights};
use starq_core::optimizer::{fit, OptimizerConfig};
use starq_core::simulate::{
    grid_adjacency, make_grid_weights, run_monte_carlo_outcomes, simulate_errors,
    simulate_panel_rep, Innovations, NeighborOrder, SimulationDesign,
};
use starq_core::sparse::SymSparseMatrix;
use util::{ks_two_sample, mean, sample_sd};

fn design(n_side: usize, t_len: usize, n_reps: usize, seed: u64) -> SimulationDesign {
    let mut d = SimulationDesign::default_preset();
    d.n_side = n_side;
    d.t_len = t_len;
    d.n_reps = n_reps;
    d.seed = seed;
    d
}

#[test]
fn independent_error_design_is_recovered() {
    // True dependence parameters at the polytope center.
    let mut d = design(20, 10, 100, 5001);
    d.params.theta = DependenceParams::zero();
    let (outcomes, failed) = run_monte_carlo_outcomes(&d, &OptimizerConfig::default()).unwrap();
    assert_eq!(failed, 0);
    let truth = [1.0, 0.5, 0.0, 0.0, 0.0];
    for p in 0..5 {
        let vals: Vec<f64> = outcomes.iter().map(|o| o.delta[p]).collect();
        let sd = sample_sd(&vals);
        let err = (mean(&vals) - truth[p]).abs();
        assert!(
            err <= 3.0 * sd.max(1e-8),
            "component {p}: mean error {err:.3e} vs sd {sd:.3e}"
        );
    }
}

#[test]
fn innovation_scale_equivariance() {
    // Doubling the innovation standard deviation leaves the dependence
    // estimates' distribution unchanged and scales the variance estimate by
    // about four.
    let base = design(10, 5, 100, 6001);
    let mut wide = base.clone();
    wide.params.sigma2 = base.params.sigma2 * 4.0;
    let cfg = OptimizerConfig::default();
    let (o1, f1) = run_monte_carlo_outcomes(&base, &cfg).unwrap();
    let (o2, f2) = run_monte_carlo_outcomes(&wide, &cfg).unwrap();
    assert_eq!((f1, f2), (0, 0));
    for p in 2..5 {
        let a: Vec<f64> = o1.iter().map(|o| o.delta[p]).collect();
        let b: Vec<f64> = o2.iter().map(|o| o.delta[p]).collect();
        let (d, pval) = ks_two_sample(&a, &b);
        assert!(pval > 0.01, "component {p}: KS D={d:.3} p={pval:.4}");
    }
    let s1 = mean(&o1.iter().map(|o| o.delta[5]).collect::<Vec<_>>());
    let s2 = mean(&o2.iter().map(|o| o.delta[5]).collect::<Vec<_>>());
    let ratio = s2 / s1;
    assert!((3.8..=4.2).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn burn_in_default_is_sufficient() {
    // Doubling the burn-in changes the fitted dependence parameters by less
    // than Monte Carlo noise.
    let short = design(10, 5, 80, 7001);
    let mut long = short.clone();
    long.burn_in = short.burn_in * 2;
    let cfg = OptimizerConfig::default();
    let (o1, _) = run_monte_carlo_outcomes(&short, &cfg).unwrap();
    let (o2, _) = run_monte_carlo_outcomes(&long, &cfg).unwrap();
    for p in 2..5 {
        let a: Vec<f64> = o1.iter().map(|o| o.delta[p]).collect();
        let b: Vec<f64> = o2.iter().map(|o| o.delta[p]).collect();
        let (d, pval) = ks_two_sample(&a, &b);
        assert!(pval > 0.01, "component {p}: KS D={d:.3} p={pval:.4}");
    }
}

#[test]
fn likelihood_peaks_near_the_truth_on_average() {
    // Over replications, the likelihood at the generating parameters beats a
    // perturbed parameter vector on average.
    let d = design(3, 3, 100, 8001);
    let w = make_grid_weights(3, NeighborOrder::First).unwrap();
    let perturbed = ModelParams::new(
        vec![1.15, 0.35],
        DependenceParams::new(0.0, 0.45, 0.02),
        d.params.sigma2 * 1.4,
    )
    .unwrap();
    let mut diff = 0.0;
    for rep in 0..100 {
        let data = simulate_panel_rep(&d, &w, rep).unwrap();
        let at_truth = quasi_loglik(&data, &d.params, &w).unwrap().loglik;
        let at_perturbed = quasi_loglik(&data, &perturbed, &w).unwrap().loglik;
        diff += at_truth - at_perturbed;
    }
    assert!(diff / 100.0 > 0.0, "mean log-likelihood gap {}", diff / 100.0);
}

#[test]
fn subsampling_se_tracks_monte_carlo_dispersion() {
    // The rescaled block dispersion of gamma-hat is within a factor two of
    // the Monte Carlo standard deviation at the same size.
    let d = design(50, 20, 100, 9001);
    let cfg = OptimizerConfig::default();
    let (outcomes, failed) = run_monte_carlo_outcomes(&d, &cfg).unwrap();
    assert!(failed == 0, "{failed} replications failed");
    let gamma_hats: Vec<f64> = outcomes.iter().map(|o| o.delta[3]).collect();
    let mc_sd = sample_sd(&gamma_hats);

    // Average the subsampling estimate over a few datasets to tame the
    // block-count noise of a single draw.
    let w = make_grid_weights(50, NeighborOrder::First).unwrap();
    let spec = BlockSpec::default();
    let mut se_acc = 0.0;
    let reps = 12;
    for rep in 0..reps {
        let data = simulate_panel_rep(&d, &w, rep).unwrap();
        let report = theta_subsampling_se(&data, &w, &cfg, &spec).unwrap();
        assert!(report.n_blocks >= 4);
        se_acc += report.theta_se[1];
    }
    let se = se_acc / reps as f64;
    let ratio = se / mc_sd;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "subsampling SE {se:.4e} vs MC SD {mc_sd:.4e} (ratio {ratio:.2})"
    );
}

#[test]
fn disconnected_twin_blocks_agree_in_distribution() {
    // Two identical, independent grid components stacked block-diagonally:
    // per-block refits are draws from the same distribution.
    let grid = grid_adjacency(10, NeighborOrder::First).unwrap();
    let mut trips = grid.upper_triplets();
    let off = 100;
    trips.extend(
        grid.upper_triplets()
            .into_iter()
            .map(|(i, j, v)| (i + off, j + off, v)),
    );
    let sp = SymSparseMatrix::from_triplets(200, &trips).unwrap();
    let w = SpatialWeights::from_sparse(&sp).unwrap();
    let theta0 = DependenceParams::new(0.05, 0.7, -0.03);
    let beta0 = [1.0, 0.5];
    let cfg = OptimizerConfig::default();
    let spec = BlockSpec {
        n_blocks: Some(2),
        min_blocks: 2,
        min_cells: 100,
    };

    let n = 200;
    let t_len = 10;
    let mut first = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut second = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut state = 0xfeedu64;
    let mut gauss = move || {
        // Box-Muller on a 64-bit LCG is plenty for a fixed design.
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u1 = ((state >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u2 = (state >> 11) as f64 / (1u64 << 53) as f64;
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut x = vec![0.0; n * t_len * 2];
    for t in 0..t_len {
        for i in 0..n {
            x[(t * 2) * n + i] = 1.0;
            x[(t * 2 + 1) * n + i] = gauss();
        }
    }
    for rep in 0..50u64 {
        let u = simulate_errors(&w, &theta0, 1.0, Innovations::Gaussian, 200, t_len, 31000 + rep)
            .unwrap();
        let mut y = vec![0.0; n * t_len];
        for t in 0..t_len {
            for i in 0..n {
                y[t * n + i] =
                    beta0[0] * x[(t * 2) * n + i] + beta0[1] * x[(t * 2 + 1) * n + i]
                        + u[t * n + i];
            }
        }
        let data = PanelData::new(n, t_len, 2, y, x.clone()).unwrap();
        let report = theta_subsampling_se(&data, &w, &cfg, &spec).unwrap();
        assert_eq!(report.per_block.len(), 2);
        for c in 0..3 {
            first[c].push(report.per_block[0].as_array()[c]);
            second[c].push(report.per_block[1].as_array()[c]);
        }
    }
    for c in 0..3 {
        let (d, p) = ks_two_sample(&first[c], &second[c]);
        assert!(p > 0.01, "component {c}: KS D={d:.3} p={p:.4}");
    }
}

#[test]
fn coefficient_covariance_shrinks_at_the_sqrt_n_rate() {
    // Trace of the plug-in covariance drops by about 4x when N quadruples.
    let theta = DependenceParams::new(0.05, 0.7, -0.03);
    let mut traces = Vec::new();
    for (n_side, seed) in [(50usize, 1u64), (100, 1)] {
        let mut d = design(n_side, 5, 1, 4100 + seed);
        d.params.theta = theta;
        let w = make_grid_weights(n_side, NeighborOrder::First).unwrap();
        let data = simulate_panel_rep(&d, &w, 0).unwrap();
        let cov = beta_covariance(&data, &theta, d.params.sigma2, &w).unwrap();
        traces.push(cov[(0, 0)] + cov[(1, 1)]);
    }
    let ratio = traces[1] / traces[0];
    assert!((0.2..=0.3).contains(&ratio), "trace ratio {ratio}");
}

#[test]
fn round_trip_fit_recovers_generating_coefficients() {
    // Default preset: simulate, fit, and land within three plug-in standard
    // errors of the generating coefficients.
    let d = design(10, 5, 1, 20200510);
    let w = make_grid_weights(10, NeighborOrder::First).unwrap();
    let data = simulate_panel_rep(&d, &w, 0).unwrap();
    let (params, diag) = fit(&data, &w, &OptimizerConfig::default()).unwrap();
    assert!(diag.converged);
    let cov = beta_covariance(&data, &params.theta, params.sigma2, &w).unwrap();
    for j in 0..2 {
        let se = cov[(j, j)].sqrt();
        let err = (params.beta[j] - d.params.beta[j]).abs();
        assert!(err <= 3.0 * se, "beta{j}: error {err:.3e} vs se {se:.3e}");
    }
}
