//! `starq simulate`: write a synthetic weights matrix and response panel.

use std::path::Path;

use starq_core::error::Result;
use starq_core::io::write_panel_csv;
use starq_core::model::SpatialWeights;
use starq_core::simulate::{grid_adjacency, simulate_panel_rep, SimulationDesign};
use starq_core::sparse::write_matrix_market;

use crate::config::{atomic_write, write_json, Manifest, RawConfig};

pub fn describe(design: &SimulationDesign, manifest: &mut Manifest) {
    manifest.set("sim.n_side", design.n_side);
    manifest.set("sim.t", design.t_len);
    manifest.set("sim.order", format!("{:?}", design.order).to_lowercase());
    manifest.set(
        "sim.beta",
        design
            .params
            .beta
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("sim.lambda", design.params.theta.lambda);
    manifest.set("sim.gamma", design.params.theta.gamma);
    manifest.set("sim.rho", design.params.theta.rho);
    manifest.set("sim.sigma2", design.params.sigma2);
    manifest.set("sim.family", format!("{:?}", design.innovations));
    manifest.set("sim.burn_in", design.burn_in);
    manifest.set("sim.reps", design.n_reps);
}

pub fn run(cfg: &RawConfig, out: &Path, seed: u64, threads: usize) -> Result<i32> {
    let design = crate::config::sim_design(cfg, seed)?;
    let adjacency = grid_adjacency(design.n_side, design.order)?;
    let weights = SpatialWeights::from_sparse(&adjacency)?;
    let panel = simulate_panel_rep(&design, &weights, 0)?;

    let weights_path = out.join("weights.mtx");
    atomic_write(&weights_path, |w| write_matrix_market(w, &adjacency))?;
    write_json(&out.join("weights.mtx.cache.json"), &weights.to_cache())?;
    atomic_write(&out.join("panel.csv"), |w| {
        write_panel_csv(w, &panel, weights.permutation())
    })?;

    let mut manifest = Manifest::new("simulate", seed, threads);
    describe(&design, &mut manifest);
    manifest.add_output("weights.mtx");
    manifest.add_output("weights.mtx.cache.json");
    manifest.add_output("panel.csv");
    write_json(&out.join("manifest.json"), &manifest)?;
    log::info!(
        "wrote N={} (bandwidth {}), T={} panel to {}",
        weights.n(),
        weights.bandwidth(),
        design.t_len,
        out.display()
    );
    Ok(0)
}
