//! Run configuration: a JSON file or a named preset, plus flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{build_density, Density1D, DensitySpec};
use crate::flow::DEFAULT_TIMES;
use crate::planner::PlanOptions;
use crate::radial::{reduce_to_1d, RadialProfile, RadialSpec, DEFAULT_RADIAL_GRID};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown preset `{0}` (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] crate::error::Error),
}

pub const PRESETS: [&str; 4] = ["uniform-example", "stretched", "two-bump", "disk"];

/// A density given inline or as the path of a JSON file holding one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySource {
    Inline(DensitySpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n: usize,
    /// Bins of the reconstructed flux histogram.
    pub bins: usize,
    /// Largest accepted `sup_toll_gap`.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n: 200,
            bins: 60,
            tolerance: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub times: Vec<f64>,
    /// Quantile cells per snapshot.
    pub snapshot_cells: usize,
    pub flux_times: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            times: DEFAULT_TIMES.to_vec(),
            snapshot_cells: 400,
            flux_times: 601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    pub d: usize,
    pub nu0: RadialSpec,
    pub nu1: RadialSpec,
    #[serde(default = "default_radial_grid")]
    pub grid: usize,
}

fn default_radial_grid() -> usize {
    DEFAULT_RADIAL_GRID
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub rho0: Option<DensitySource>,
    #[serde(default)]
    pub rho1: Option<DensitySource>,
    #[serde(default)]
    pub x0: Option<f64>,
    pub h: f64,
    #[serde(default)]
    pub solver: PlanOptions,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub radial: Option<RadialConfig>,
    /// Directory relative density files are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A reduced radial instance together with its profiles.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub d: usize,
    pub nu0: RadialProfile,
    pub nu1: RadialProfile,
}

/// Densities, toll point and, for radial runs, the profiles behind them.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rho0: Density1D,
    pub rho1: Density1D,
    pub x0: f64,
    pub reduced: Option<Reduced>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig {
            rho0: None,
            rho1: None,
            x0: Some(1.5),
            h: 1.5,
            solver: PlanOptions::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
            out: default_out(),
            radial: None,
            base_dir: PathBuf::new(),
        };
        let uniform = |a, b| Some(DensitySource::Inline(DensitySpec::Uniform { a, b }));
        match name {
            "uniform-example" => {
                cfg.rho0 = uniform(0.0, 1.0);
                cfg.rho1 = uniform(2.0, 3.0);
            }
            "stretched" => {
                cfg.rho0 = uniform(0.0, 1.0);
                cfg.rho1 = uniform(2.0, 4.0);
                cfg.h = 1.3;
            }
            "two-bump" => {
                let nodes = vec![0.0, 0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 1.0];
                let values = vec![0.6, 0.6, 1.6, 0.6, 0.6, 1.6, 0.6, 0.6];
                cfg.rho1 = Some(DensitySource::Inline(DensitySpec::Grid {
                    nodes: nodes.iter().map(|x| x + 2.0).collect(),
                    values: values.clone(),
                }));
                cfg.rho0 = Some(DensitySource::Inline(DensitySpec::Grid { nodes, values }));
                cfg.h = 2.5;
            }
            "disk" => {
                cfg.x0 = None;
                cfg.h = 2.0;
                cfg.radial = Some(RadialConfig {
                    d: 2,
                    nu0: RadialSpec::Ball { radius: 1.0 },
                    nu1: RadialSpec::Shell {
                        inner: 1.0,
                        outer: 2.0,
                    },
                    grid: DEFAULT_RADIAL_GRID,
                });
            }
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "h = {} must be positive and finite",
                self.h
            )));
        }
        if self.oracle.n < 2 {
            return Err(ConfigError::Invalid("oracle.n must be at least 2".into()));
        }
        if self.solver.grid < 2 || self.output.snapshot_cells == 0 {
            return Err(ConfigError::Invalid("grids need at least 2 points".into()));
        }
        if self.output.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ConfigError::Invalid(
                "snapshot times must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn load_density(&self, src: &DensitySource) -> Result<Density1D, ConfigError> {
        let spec = match src {
            DensitySource::Inline(s) => s.clone(),
            DensitySource::File(p) => {
                let path = if p.is_absolute() {
                    p.clone()
                } else {
                    self.base_dir.join(p)
                };
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path, source })?
            }
        };
        Ok(build_density(&spec)?.0)
    }

    /// Builds the line instance, reducing the radial section when the
    /// densities are not given directly.
    pub fn instance(&self) -> Result<Instance, ConfigError> {
        match (&self.rho0, &self.rho1) {
            (Some(a), Some(b)) => {
                let x0 = self.x0.ok_or_else(|| {
                    ConfigError::Invalid("x0 is required with rho0 and rho1".into())
                })?;
                Ok(Instance {
                    rho0: self.load_density(a)?,
                    rho1: self.load_density(b)?,
                    x0,
                    reduced: None,
                })
            }
            (None, None) => self.radial_instance(),
            _ => Err(ConfigError::Invalid(
                "rho0 and rho1 must be given together".into(),
            )),
        }
    }

    pub fn radial_instance(&self) -> Result<Instance, ConfigError> {
        let r = self.radial.as_ref().ok_or_else(|| {
            ConfigError::Invalid("no instance: give rho0 and rho1, or a radial section".into())
        })?;
        if r.d == 0 {
            return Err(ConfigError::Invalid(
                "radial dimension d must be at least 1".into(),
            ));
        }
        let nu0 = r.nu0.profile(r.d, r.grid)?;
        let nu1 = r.nu1.profile(r.d, r.grid)?;
        let (rho0, rho1, x0) = reduce_to_1d(&nu0, &nu1)?;
        Ok(Instance {
            rho0,
            rho1,
            x0,
            reduced: Some(Reduced { d: r.d, nu0, nu1 }),
        })
    }
}
