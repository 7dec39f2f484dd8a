//! `starq mc-study`: Monte Carlo study of the estimator at a grid design.

use std::path::Path;

use starq_core::error::Result;
use starq_core::simulate::{run_monte_carlo, MonteCarloSummary};

use crate::config::{atomic_write, write_json, Manifest, RawConfig};

pub fn run(cfg: &RawConfig, out: &Path, seed: u64, threads: usize) -> Result<i32> {
    let design = crate::config::sim_design(cfg, seed)?;
    let opt_cfg = crate::config::optimizer_config(cfg, seed)?;
    let summary = run_monte_carlo(&design, &opt_cfg)?;

    write_json(&out.join("mc_summary.json"), &summary)?;
    write_summary_csv(&out.join("mc_summary.csv"), &summary)?;

    let mut manifest = Manifest::new("mc-study", seed, threads);
    crate::sim::describe(&design, &mut manifest);
    manifest.add_output("mc_summary.json");
    manifest.add_output("mc_summary.csv");
    write_json(&out.join("manifest.json"), &manifest)?;

    if summary.empty {
        log::warn!("zero replications requested: summary is flagged empty");
        return Ok(2);
    }
    if summary.excess_failures {
        log::warn!(
            "{} of {} replications failed",
            summary.n_failed,
            summary.n_reps_requested
        );
    }
    log::info!(
        "{} replications complete (mean fit {:.3}s)",
        summary.n_reps_completed,
        summary.mean_fit_secs
    );
    Ok(0)
}

fn write_summary_csv(path: &Path, summary: &MonteCarloSummary) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(
            w,
            "param,true_value,bias,mse,sample_sd,mean_plugin_se,coverage95,mean_fit_secs"
        )?;
        for p in &summary.params {
            let se = p.mean_plugin_se.map(|v| v.to_string()).unwrap_or_default();
            let cov = p.coverage.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{se},{cov},{}",
                p.name, p.true_value, p.bias, p.mse, p.sample_sd, summary.mean_fit_secs
            )?;
        }
        Ok(())
    })
}
