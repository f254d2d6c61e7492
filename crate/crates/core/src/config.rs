//! Experiment configuration files (TOML).
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{solve_state, BoundaryData, ReferenceField, Scenario};
use crate::mesh::{generate_fitted_mesh, read_msh, Mesh, MeshSpec};
use crate::optimizer::{OptimizerConfig, Problem};
use crate::stochastic::ScenarioSpec;

/// Name of the node data block holding the target state.
pub const TARGET_FIELD: &str = "ybar";

/// A mesh read from file or generated from a geometry description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    File { mesh: PathBuf },
    Generate(MeshSpec),
}

impl MeshSource {
    pub fn build(&self, base: &Path) -> Result<Mesh> {
        match self {
            MeshSource::File { mesh } => Ok(read_msh(base.join(mesh))?.mesh),
            MeshSource::Generate(spec) => generate_fitted_mesh(spec),
        }
    }
}

/// The reference data `ȳ`: a stored field, or the state at fixed
/// coefficients on a mesh with the true interfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// `.msh` file with a `ybar` node data block.  Takes precedence.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub geometry: Option<MeshSource>,
    #[serde(default)]
    pub kappa: BTreeMap<String, f64>,
    #[serde(default = "default_g")]
    pub g: f64,
}

fn default_g() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Samples per average.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Use every checkpoint whose index is a multiple of this.
    #[serde(default = "default_one")]
    pub stride: usize,
    /// Number of checkpoints in the second-moment study.
    #[serde(default = "default_moment_points")]
    pub second_moment_points: usize,
}

fn default_m() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_moment_points() -> usize {
    5
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            m: default_m(),
            stride: default_one(),
            second_moment_points: default_moment_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientCheckConfig {
    #[serde(default = "default_ts")]
    pub t: Vec<f64>,
    /// Scale the direction to this maximum nodal displacement.
    #[serde(default = "default_vmax")]
    pub v_max: f64,
}

fn default_ts() -> Vec<f64> {
    vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5]
}
fn default_vmax() -> f64 {
    1.0
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            t: default_ts(),
            v_max: default_vmax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Initial shape.
    pub geometry: MeshSource,
    pub target: TargetConfig,
    pub scenario: ScenarioSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub gradient_check: GradientCheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.scenario.validate()?;
        if self.target.file.is_none() && self.target.geometry.is_none() {
            return Err(Error::Config("target needs either 'file' or 'geometry'".into()));
        }
        if self.target.file.is_none() {
            for (r, k) in &self.target.kappa {
                if !(*k > 0.0) {
                    return Err(Error::Config(format!("target kappa for '{r}' must be positive")));
                }
            }
        }
        if self.diagnostics.m == 0 {
            return Err(Error::Config("diagnostics.m must be at least 1".into()));
        }
        if self.gradient_check.t.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("gradient_check.t values must be positive".into()));
        }
        for (label, src) in [("geometry", Some(&self.geometry)), ("target.geometry", self.target.geometry.as_ref())] {
            if let Some(MeshSource::File { mesh }) = src {
                let p = self.resolve(mesh);
                if !p.exists() {
                    return Err(Error::Config(format!("{label}: mesh file {} does not exist", p.display())));
                }
            }
        }
        if let Some(f) = &self.target.file {
            let p = self.resolve(f);
            if !p.exists() {
                return Err(Error::Config(format!("target file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn initial_mesh(&self) -> Result<Mesh> {
        let m = self.geometry.build(&self.base_dir)?;
        self.scenario.check_regions(&m)?;
        Ok(m)
    }

    /// Coefficients of the target solve; missing regions fall back to the
    /// scenario location parameters.
    pub fn target_scenario(&self) -> Scenario {
        let mean = self.scenario.mean_scenario();
        let mut kappa = mean.kappa.clone();
        kappa.extend(self.target.kappa.iter().map(|(k, v)| (k.clone(), *v)));
        Scenario::new(kappa, BoundaryData::Constant(self.target.g))
    }

    /// Target mesh and state, solved from the target geometry.
    pub fn solve_target(&self) -> Result<(Mesh, crate::field::ScalarField)> {
        let geo = self
            .target
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Config("target has no geometry to solve on".into()))?;
        let mesh = geo.build(&self.base_dir)?;
        let y = solve_state(&mesh, &self.target_scenario())?.y;
        Ok((mesh, y))
    }

    pub fn target_field(&self) -> Result<ReferenceField> {
        if let Some(f) = &self.target.file {
            let contents = read_msh(self.resolve(f))?;
            let y = contents
                .field(TARGET_FIELD)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} has no '{TARGET_FIELD}' node data", f.display())))?;
            return Ok(ReferenceField::new(contents.mesh, y));
        }
        let (mesh, y) = self.solve_target()?;
        Ok(ReferenceField::new(mesh, y))
    }

    pub fn problem(&self) -> Result<Problem> {
        Ok(Problem {
            target: self.target_field()?,
            scenarios: self.scenario.clone(),
        })
    }
}
