//! Flat key-value experiment configuration.
//!
//! A config file is a TOML document with top-level keys only. Every key is
//! optional; each subcommand fills in its own defaults and validates the
//! fields it uses. `--set key=value` overrides are parsed as TOML values.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ntk_core::nonlinearity::Nonlinearity;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Every key accepted in a config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub seed_count: Option<usize>,
    pub depth: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub beta: Option<f64>,
    pub nonlinearity: Option<String>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub dtype: Option<Dtype>,
    pub train_size: Option<usize>,
    pub grid_points: Option<usize>,
    pub angle_offset: Option<f64>,
    pub mnist_dir: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub synthetic_fallback: Option<bool>,
    pub sphere_points: Option<usize>,
    pub sphere_dim: Option<usize>,
    pub order: Option<usize>,
    pub threshold: Option<f64>,
    pub full: Option<bool>,
}

/// Parameter storage type for finite networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

fn bad(field: &'static str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        for (key, value) in &table {
            if value.is_table() {
                return Err(CliError::Parse(format!("key `{key}`: nested tables are not allowed")));
            }
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))
    }

    /// Reads `path` (if any) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Parse(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let parsed: toml::Table = format!("v = {}", raw.trim())
                .parse()
                .or_else(|_| format!("v = {:?}", raw.trim()).parse())
                .map_err(|e: toml::de::Error| CliError::Parse(format!("override `{item}`: {e}")))?;
            table.insert(key.to_string(), parsed["v"].clone());
        }
        Self::from_table(table)
    }

    fn nonlinearity(&self) -> Result<Nonlinearity> {
        match &self.nonlinearity {
            None => Ok(Nonlinearity::Relu),
            Some(name) => name.parse().map_err(|e| bad("nonlinearity", format!("{e}"))),
        }
    }

    fn positive(value: Option<usize>, default: usize, field: &'static str) -> Result<usize> {
        let v = value.unwrap_or(default);
        if v == 0 {
            return Err(bad(field, "must be positive"));
        }
        Ok(v)
    }

    fn beta(&self) -> Result<f64> {
        let beta = self.beta.unwrap_or(0.1);
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(bad("beta", format!("must be finite and nonnegative, got {beta}")));
        }
        Ok(beta)
    }

    fn lr(&self) -> Result<f64> {
        let lr = self.lr.unwrap_or(1.0);
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(bad("lr", format!("must be positive, got {lr}")));
        }
        Ok(lr)
    }

    fn widths(&self, default: &[usize]) -> Result<Vec<usize>> {
        let widths = self.widths.clone().unwrap_or_else(|| default.to_vec());
        if widths.is_empty() || widths.contains(&0) {
            return Err(bad("widths", format!("must be a nonempty list of positive integers, got {widths:?}")));
        }
        Ok(widths)
    }
}

/// `γ_j = −π + 2πj / count` for `j = 0..count`.
pub fn gamma_grid(count: usize) -> Vec<f64> {
    (0..count).map(|j| -PI + 2.0 * PI * j as f64 / count as f64).collect()
}

/// Settings of the NTK convergence experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NtkConvergenceSettings {
    pub seed: u64,
    pub seed_count: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub steps: usize,
    pub lr: f64,
    pub dtype: Dtype,
    /// Number of `N(0, Id_2)` training inputs.
    pub train_size: usize,
    pub grid_points: usize,
}

impl NtkConvergenceSettings {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        let full = cfg.full.unwrap_or(false);
        let default_widths: &[usize] = if full { &[500, 10_000] } else { &[500, 4000] };
        Ok(NtkConvergenceSettings {
            seed: cfg.seed.unwrap_or(0),
            seed_count: ExperimentConfig::positive(cfg.seed_count, 10, "seed_count")?,
            depth: ExperimentConfig::positive(cfg.depth, 4, "depth")?,
            widths: cfg.widths(default_widths)?,
            beta: cfg.beta()?,
            nonlinearity: cfg.nonlinearity()?,
            steps: cfg.steps.unwrap_or(200),
            lr: cfg.lr()?,
            dtype: cfg.dtype.unwrap_or(Dtype::F32),
            train_size: ExperimentConfig::positive(cfg.train_size, 16, "train_size")?,
            grid_points: ExperimentConfig::positive(cfg.grid_points, 128, "grid_points")?,
        })
    }
}

/// Settings of the kernel regression experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelRegressionSettings {
    pub seed: u64,
    pub seed_count: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub steps: usize,
    pub lr: f64,
    pub dtype: Dtype,
    pub train_size: usize,
    /// Angle of the first training point on the circle.
    pub angle_offset: f64,
    pub grid_points: usize,
}

impl KernelRegressionSettings {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(KernelRegressionSettings {
            seed: cfg.seed.unwrap_or(0),
            seed_count: ExperimentConfig::positive(cfg.seed_count, 10, "seed_count")?,
            depth: ExperimentConfig::positive(cfg.depth, 4, "depth")?,
            widths: cfg.widths(&[50, 1000])?,
            beta: cfg.beta()?,
            nonlinearity: cfg.nonlinearity()?,
            steps: cfg.steps.unwrap_or(1000),
            lr: cfg.lr()?,
            dtype: cfg.dtype.unwrap_or(Dtype::F64),
            train_size: ExperimentConfig::positive(cfg.train_size, 4, "train_size")?,
            angle_offset: cfg.angle_offset.unwrap_or(PI / 8.0),
            grid_points: ExperimentConfig::positive(cfg.grid_points, 128, "grid_points")?,
        })
    }
}

/// Settings of the principal-component convergence experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaConvergenceSettings {
    pub seed: u64,
    pub seed_count: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub steps: usize,
    pub lr: f64,
    pub dtype: Dtype,
    pub batch_size: usize,
    pub mnist_dir: PathBuf,
    /// Use `N(0, Id_784)` inputs when the MNIST files are missing.
    pub synthetic_fallback: bool,
}

/// Environment variable naming the directory with the MNIST IDX files.
pub const MNIST_DIR_ENV: &str = "NTK_MNIST_DIR";

impl PcaConvergenceSettings {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        let mnist_dir = cfg
            .mnist_dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"));
        Ok(PcaConvergenceSettings {
            seed: cfg.seed.unwrap_or(0),
            seed_count: ExperimentConfig::positive(cfg.seed_count, 1, "seed_count")?,
            depth: ExperimentConfig::positive(cfg.depth, 4, "depth")?,
            widths: cfg.widths(&[100, 1000])?,
            beta: cfg.beta()?,
            nonlinearity: cfg.nonlinearity()?,
            steps: cfg.steps.unwrap_or(1000),
            lr: cfg.lr()?,
            dtype: cfg.dtype.unwrap_or(Dtype::F64),
            batch_size: ExperimentConfig::positive(cfg.batch_size, 512, "batch_size")?,
            mnist_dir,
            synthetic_fallback: cfg.synthetic_fallback.unwrap_or(false),
        })
    }
}

/// Settings of the positive-definiteness report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdCertificateSettings {
    pub seed: u64,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub sphere_points: usize,
    pub sphere_dim: usize,
    pub order: usize,
    pub threshold: f64,
}

impl PdCertificateSettings {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        let sphere_dim = cfg.sphere_dim.unwrap_or(3);
        if sphere_dim < 2 {
            return Err(bad("sphere_dim", format!("must be at least 2, got {sphere_dim}")));
        }
        let order = cfg.order.unwrap_or(40);
        if !(8..=199).contains(&order) {
            return Err(bad("order", format!("must lie in 8..=199, got {order}")));
        }
        let threshold = cfg.threshold.unwrap_or(1e-12);
        if !(threshold >= 0.0) {
            return Err(bad("threshold", format!("must be nonnegative, got {threshold}")));
        }
        Ok(PdCertificateSettings {
            seed: cfg.seed.unwrap_or(0),
            beta: cfg.beta()?,
            nonlinearity: cfg.nonlinearity()?,
            sphere_points: ExperimentConfig::positive(cfg.sphere_points, 32, "sphere_points")?,
            sphere_dim,
            order,
            threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::load(None, &["widths=[10, 20]".into(), "nonlinearity=erf".into()]).unwrap();
        let s = NtkConvergenceSettings::resolve(&cfg).unwrap();
        assert_eq!(s.widths, vec![10, 20]);
        assert_eq!(s.nonlinearity.to_string(), "erf");
        assert_eq!(s.steps, 200);
        assert_eq!(s.grid_points, 128);
        assert_eq!(s.train_size, 16);
    }

    #[test]
    fn full_flag_switches_widths() {
        let cfg = ExperimentConfig::from_toml_str("full = true").unwrap();
        assert_eq!(NtkConvergenceSettings::resolve(&cfg).unwrap().widths, vec![500, 10_000]);
    }

    #[test]
    fn errors_name_the_field() {
        let cfg = ExperimentConfig::from_toml_str("widths = [0]").unwrap();
        let err = NtkConvergenceSettings::resolve(&cfg).unwrap_err().to_string();
        assert!(err.contains("widths"), "{err}");
        let err = ExperimentConfig::from_toml_str("widht = 3").unwrap_err().to_string();
        assert!(err.contains("widht"), "{err}");
        let err = ExperimentConfig::from_toml_str("depth = \"four\"").unwrap_err().to_string();
        assert!(err.contains("depth"), "{err}");
        let cfg = ExperimentConfig::from_toml_str("nonlinearity = \"swish\"").unwrap();
        let err = PdCertificateSettings::resolve(&cfg).unwrap_err().to_string();
        assert!(err.contains("nonlinearity"), "{err}");
        assert!(ExperimentConfig::from_toml_str("[section]\nx = 1").is_err());
    }

    #[test]
    fn grid_spans_the_circle() {
        let g = gamma_grid(4);
        assert_eq!(g[0], -PI);
        assert!((g[2]).abs() < 1e-15);
    }
}
