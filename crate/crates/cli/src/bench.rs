//! `starq bench`: wall-clock and memory scaling across a ladder of sizes.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use starq_core::alloc_track;
use starq_core::error::Result;
use starq_core::likelihood::FitContext;
use starq_core::optimizer::fit;
use starq_core::simulate::{make_grid_weights, simulate_panel_rep};

use crate::config::{atomic_write, write_json, Manifest, RawConfig};

#[derive(Debug, Serialize)]
struct BenchPoint {
    n: usize,
    t: usize,
    bandwidth: usize,
    preprocess_secs: f64,
    eval_median_secs: f64,
    fit_median_secs: f64,
    fit_evals: usize,
    peak_mem_bytes: usize,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    points: Vec<BenchPoint>,
    /// Least-squares slope of log fit time against log N; absent for a
    /// single-point ladder.
    loglog_slope_fit_time: Option<f64>,
    note: Option<String>,
}

fn median(times: &mut [f64]) -> f64 {
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

pub fn run(cfg: &RawConfig, out: &Path, seed: u64, threads: usize) -> Result<i32> {
    let n_sides = cfg.get_usize_list("bench.n_sides", &[50, 100, 200])?;
    let t_len = cfg.get_usize("bench.t", 10)?;
    let fits_per_point = cfg.get_usize("bench.fits_per_point", 3)?.max(1);
    let evals_per_point = cfg.get_usize("bench.evals_per_point", 5)?.max(1);

    let mut points = Vec::new();
    for &n_side in &n_sides {
        let mut design = crate::config::sim_design(cfg, seed)?;
        design.n_side = n_side;
        design.t_len = t_len;
        design.validate()?;
        let opt_cfg = crate::config::optimizer_config(cfg, seed)?;

        alloc_track::reset_peak();
        let pre = Instant::now();
        let weights = make_grid_weights(n_side, design.order)?;
        let preprocess_secs = pre.elapsed().as_secs_f64();

        // Likelihood-evaluation timing at the design's dependence parameters.
        let data0 = simulate_panel_rep(&design, &weights, 0)?;
        let mut ctx = FitContext::new(&data0, &weights)?;
        let mut eval_times = Vec::with_capacity(evals_per_point);
        for _ in 0..evals_per_point {
            let started = Instant::now();
            let c = ctx.concentrated(&design.params.theta)?;
            eval_times.push(started.elapsed().as_secs_f64());
            assert!(c.value.is_finite());
        }
        drop(ctx);

        let mut fit_times = Vec::with_capacity(fits_per_point);
        let mut fit_evals = 0usize;
        for rep in 0..fits_per_point {
            let data = simulate_panel_rep(&design, &weights, rep)?;
            let started = Instant::now();
            let (_, diag) = fit(&data, &weights, &opt_cfg)?;
            fit_times.push(started.elapsed().as_secs_f64());
            fit_evals = diag.n_evals;
        }
        let point = BenchPoint {
            n: weights.n(),
            t: t_len,
            bandwidth: weights.bandwidth(),
            preprocess_secs,
            eval_median_secs: median(&mut eval_times),
            fit_median_secs: median(&mut fit_times),
            fit_evals,
            peak_mem_bytes: alloc_track::peak_bytes(),
        };
        log::info!(
            "N={} bandwidth={} eval {:.4}s fit {:.3}s peak {:.1} MiB",
            point.n,
            point.bandwidth,
            point.eval_median_secs,
            point.fit_median_secs,
            point.peak_mem_bytes as f64 / (1 << 20) as f64
        );
        points.push(point);
    }

    let distinct: std::collections::BTreeSet<usize> = points.iter().map(|p| p.n).collect();
    let (slope, note) = if distinct.len() >= 2 {
        let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.fit_median_secs.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        (Some(num / den), None)
    } else {
        (
            None,
            Some("slope omitted: the ladder has a single distinct size".to_string()),
        )
    };
    let report = BenchReport {
        points,
        loglog_slope_fit_time: slope,
        note,
    };

    atomic_write(&out.join("bench.csv"), |w| {
        writeln!(
            w,
            "n,t,bandwidth,preprocess_secs,eval_median_secs,fit_median_secs,fit_evals,peak_mem_bytes"
        )?;
        for p in &report.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                p.n,
                p.t,
                p.bandwidth,
                p.preprocess_secs,
                p.eval_median_secs,
                p.fit_median_secs,
                p.fit_evals,
                p.peak_mem_bytes
            )?;
        }
        Ok(())
    })?;
    write_json(&out.join("bench.json"), &report)?;

    let mut manifest = Manifest::new("bench", seed, threads);
    manifest.set(
        "bench.n_sides",
        n_sides
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("bench.t", t_len);
    manifest.set("bench.fits_per_point", fits_per_point);
    manifest.set("bench.evals_per_point", evals_per_point);
    manifest.add_output("bench.csv");
    manifest.add_output("bench.json");
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(0)
}
