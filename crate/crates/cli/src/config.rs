//! Run configuration: a flat `key = value` file (TOML subset).
//!
//! Every key is optional; omitted keys take the engine defaults. Unknown keys
//! are rejected so that typos do not silently fall back to a default.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use stmrf::infer::AblationMode;
use stmrf::refine::{Endpoint, ExemplarConfig, RefinerKind, DEFAULT_TIMEOUT};
use stmrf::{Connectivity, Params};

use crate::InputError;

/// Raw file contents. Field names are the config keys.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub theta_u: Option<f64>,
    pub theta_t: Option<f64>,
    /// Omit to let the spatial weight follow the coupling penalty.
    pub theta_s: Option<f64>,
    pub beta0: Option<f64>,
    pub beta_growth: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub inner_iterations: Option<usize>,
    pub fb_tolerance: Option<f64>,
    pub binarize_threshold: Option<f64>,
    pub dilate_radius: Option<f64>,
    pub sigma_motion: Option<f64>,
    pub sigma_uncertain: Option<f64>,
    /// 4 or 8.
    pub blob_connectivity: Option<u8>,
    pub mode: Option<String>,
    pub refiner: Option<String>,
    pub endpoint: Option<String>,
    /// Seconds to wait for each external refiner response.
    pub refiner_timeout: Option<f64>,
    pub refiner_connections: Option<usize>,
    pub exemplar_bins: Option<usize>,
    pub exemplar_lambda: Option<f64>,
    pub exemplar_radius: Option<f64>,
}

/// Resolved configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct Config {
    pub params: Params,
    pub mode: AblationMode,
    /// `None` when neither the file nor the command line picked one.
    pub refiner: Option<RefinerKind>,
    pub endpoint: Option<Endpoint>,
    pub refiner_timeout: Duration,
    pub refiner_connections: usize,
    pub exemplar: ExemplarConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: Params::default(),
            mode: AblationMode::TfAndMr,
            refiner: None,
            endpoint: None,
            refiner_timeout: DEFAULT_TIMEOUT,
            refiner_connections: 1,
            exemplar: ExemplarConfig::default(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| InputError::Config(e.message().to_owned()).into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError::Missing(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn resolve(self) -> Result<Config> {
        let mut cfg = Config::default();
        let p = &mut cfg.params;
        set(&mut p.theta_u, self.theta_u);
        set(&mut p.theta_t, self.theta_t);
        p.theta_s = self.theta_s.or(p.theta_s);
        set(&mut p.beta0, self.beta0);
        set(&mut p.beta_growth, self.beta_growth);
        set(&mut p.outer_iterations, self.outer_iterations);
        set(&mut p.inner_iterations, self.inner_iterations);
        set(&mut p.fb_tolerance, self.fb_tolerance);
        set(&mut p.binarize_threshold, self.binarize_threshold);
        set(&mut p.dilate_radius, self.dilate_radius);
        p.sigma_motion = self.sigma_motion.or(p.sigma_motion);
        p.sigma_uncertain = self.sigma_uncertain.or(p.sigma_uncertain);
        match self.blob_connectivity {
            None => {}
            Some(4) => p.blob_connectivity = Connectivity::Four,
            Some(8) => p.blob_connectivity = Connectivity::Eight,
            Some(n) => bail!(InputError::Config(format!(
                "blob_connectivity must be 4 or 8, got {n}"
            ))),
        }
        p.validate()
            .map_err(|e| InputError::Config(e.to_string()))?;
        if let Some(m) = self.mode {
            cfg.mode = parse_mode(&m)?;
        }
        if let Some(r) = self.refiner {
            cfg.refiner = Some(parse_refiner(&r)?);
        }
        if let Some(e) = self.endpoint {
            cfg.endpoint = Some(parse_endpoint(&e)?);
        }
        if let Some(t) = self.refiner_timeout {
            if !(t.is_finite() && t > 0.0) {
                bail!(InputError::Config(format!(
                    "refiner_timeout must be > 0, got {t}"
                )));
            }
            cfg.refiner_timeout = Duration::from_secs_f64(t);
        }
        set(&mut cfg.refiner_connections, self.refiner_connections);
        set(&mut cfg.exemplar.bins_per_channel, self.exemplar_bins);
        set(&mut cfg.exemplar.lambda, self.exemplar_lambda);
        set(&mut cfg.exemplar.radius, self.exemplar_radius);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn parse_mode(s: &str) -> Result<AblationMode> {
    s.parse()
        .map_err(|e: stmrf::Error| InputError::Config(e.to_string()).into())
}

pub fn parse_refiner(s: &str) -> Result<RefinerKind> {
    s.parse()
        .map_err(|e: stmrf::Error| InputError::Config(e.to_string()).into())
}

pub fn parse_endpoint(s: &str) -> Result<Endpoint> {
    s.parse()
        .map_err(|e: stmrf::Error| InputError::Config(e.to_string()).into())
}

/// Loads `path` if given, otherwise starts from the defaults.
pub fn load(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => ConfigFile::load(p)?.resolve(),
        None => ConfigFile::default().resolve(),
    }
}
