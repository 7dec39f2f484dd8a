//! Flat key=value configuration files, resolved run settings, and the run
//! manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use starq_core::error::{Error, Result};
use starq_core::inference::BlockSpec;
use starq_core::model::{DependenceParams, ModelParams};
use starq_core::optimizer::{ConstraintMode, OptimizerConfig};
use starq_core::simulate::{Innovations, NeighborOrder, SimulationDesign};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Parsed key=value configuration file.
#[derive(Debug, Default)]
pub struct RawConfig {
    map: BTreeMap<String, String>,
    path: String,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

impl RawConfig {
    /// Loads a config file; a missing argument yields an empty (all-default)
    /// configuration. Lines are `key = value`; `#` starts a comment. A
    /// present file must declare `schema_version = 1`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let path_str = path.display().to_string();
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err(&path_str, idx + 1, "expected `key = value`"));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(parse_err(&path_str, idx + 1, "empty key"));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(parse_err(&path_str, idx + 1, format!("duplicate key `{key}`")));
            }
        }
        let cfg = Self { map, path: path_str.clone() };
        match cfg.map.get("schema_version") {
            None => Err(parse_err(&path_str, 1, "missing `schema_version = 1`")),
            Some(v) if v.trim() == CONFIG_SCHEMA_VERSION.to_string() => Ok(cfg),
            Some(v) => Err(parse_err(
                &path_str,
                1,
                format!("unsupported schema_version `{v}` (expected {CONFIG_SCHEMA_VERSION})"),
            )),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn bad_value(&self, key: &str, value: &str, want: &str) -> Error {
        parse_err(&self.path, 0, format!("key `{key}`: `{value}` is not {want}"))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad_value(key, v, "a number")),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad_value(key, v, "a non-negative integer")),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad_value(key, v, "a non-negative integer")),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(self.bad_value(key, v, "true or false")),
        }
    }

    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.bad_value(key, v, "a comma-separated list of numbers")),
        }
    }

    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|tok| tok.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.bad_value(key, v, "a comma-separated list of integers")),
        }
    }
}

/// Simulation design assembled from config keys over the default preset.
pub fn sim_design(cfg: &RawConfig, seed: u64) -> Result<SimulationDesign> {
    let preset = SimulationDesign::default_preset();
    let beta = cfg.get_f64_list("sim.beta", &preset.params.beta)?;
    let theta = DependenceParams::new(
        cfg.get_f64("sim.lambda", preset.params.theta.lambda)?,
        cfg.get_f64("sim.gamma", preset.params.theta.gamma)?,
        cfg.get_f64("sim.rho", preset.params.theta.rho)?,
    );
    let sigma2 = cfg.get_f64("sim.sigma2", preset.params.sigma2)?;
    let order = match cfg.get("sim.order").unwrap_or("first") {
        "first" => NeighborOrder::First,
        "second" => NeighborOrder::Second,
        other => {
            return Err(Error::InvalidParameter(format!(
                "sim.order must be `first` or `second`, got `{other}`"
            )))
        }
    };
    let innovations = match cfg.get("sim.family").unwrap_or("gaussian") {
        "gaussian" => Innovations::Gaussian,
        "student_t" => Innovations::StudentT {
            df: cfg.get_f64("sim.df", 8.0)?,
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "sim.family must be `gaussian` or `student_t`, got `{other}`"
            )))
        }
    };
    let design = SimulationDesign {
        n_side: cfg.get_usize("sim.n_side", preset.n_side)?,
        t_len: cfg.get_usize("sim.t", preset.t_len)?,
        order,
        params: ModelParams::new(beta, theta, sigma2)?,
        innovations,
        burn_in: cfg.get_usize("sim.burn_in", preset.burn_in)?,
        n_reps: cfg.get_usize("sim.reps", preset.n_reps)?,
        seed,
    };
    design.validate()?;
    Ok(design)
}

pub fn optimizer_config(cfg: &RawConfig, seed: u64) -> Result<OptimizerConfig> {
    let defaults = OptimizerConfig::default();
    let theta0 = cfg.get_f64_list("opt.initial_theta", &defaults.initial_theta.as_array())?;
    if theta0.len() != 3 {
        return Err(Error::InvalidParameter(
            "opt.initial_theta needs exactly three components".into(),
        ));
    }
    let mode = match cfg.get("opt.mode").unwrap_or("backtrack") {
        "backtrack" => ConstraintMode::Backtrack,
        "barrier" => ConstraintMode::Barrier,
        other => {
            return Err(Error::InvalidParameter(format!(
                "opt.mode must be `backtrack` or `barrier`, got `{other}`"
            )))
        }
    };
    Ok(OptimizerConfig {
        max_iters: cfg.get_usize("opt.max_iters", defaults.max_iters)?,
        grad_tol: cfg.get_f64("opt.grad_tol", defaults.grad_tol)?,
        step_tol: cfg.get_f64("opt.step_tol", defaults.step_tol)?,
        initial_theta: DependenceParams::new(theta0[0], theta0[1], theta0[2]),
        mode,
        multistart: cfg.get_bool("opt.multistart", defaults.multistart)?,
        seed,
    })
}

pub fn block_spec(cfg: &RawConfig) -> Result<BlockSpec> {
    let mut spec = BlockSpec::default();
    match cfg.get("inference.blocks") {
        None | Some("auto") => {}
        Some(v) => {
            spec.n_blocks = Some(
                v.parse()
                    .map_err(|_| Error::InvalidParameter(format!(
                        "inference.blocks must be `auto` or a count, got `{v}`"
                    )))?,
            );
        }
    }
    Ok(spec)
}

/// Run manifest: everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        self.inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }
}

/// Writes a file atomically (temp file in the same directory, then rename).
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new()?,
    };
    write(&mut tmp)?;
    tmp.persist(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Resolves the worker-thread count: CLI flag, then the environment
/// variable, then the config key, then the physical core count.
pub fn resolve_threads(flag: Option<usize>, cfg: &RawConfig) -> Result<usize> {
    let from_env = match std::env::var("STARQ_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            Error::InvalidParameter(format!("STARQ_THREADS=`{v}` is not an integer"))
        })?),
        Err(_) => None,
    };
    let configured = flag
        .or(from_env)
        .map(Ok)
        .unwrap_or_else(|| cfg.get_usize("threads", 0))?;
    Ok(if configured == 0 {
        num_cpus::get_physical()
    } else {
        configured
    })
}

/// Output directory handling.
pub fn ensure_out_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}
