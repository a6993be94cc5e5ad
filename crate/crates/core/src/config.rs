//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//!
//! [grid]
//! geometry = "disk"
//! radius = 1.0
//! n_cells = 512
//!
//! [motility]
//! kind = "exp"
//!
//! [model]
//! mu = 0.0
//!
//! [initial]
//! kind = "gaussian_bump"
//! amp = 1.0
//! width = 0.3
//! mass = 18.84955592153876
//!
//! [scheme]
//! dt = 1e-4
//! t_end = 10.0
//!
//! [output]
//! series_every = 100
//! snapshot_times = [0.0, 5.0]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsConfig;
use crate::dynamics::{FluxForm, SchemeConfig, Stepper};
use crate::error::{Error, Result};
use crate::grid::{Field, Geometry, RadialGrid};
use crate::initdata::{standard_profile, BlowupRecipe, Profile};
use crate::motility::Motility;

// `deny_unknown_fields` does not combine with `flatten`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::shared(self.geometry, self.n_cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub mu: f64,
}

/// Initial density. Profiles take an optional `mass` to rescale to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        c: f64,
        mass: Option<f64>,
    },
    GaussianBump {
        amp: f64,
        width: f64,
        mass: Option<f64>,
    },
    Perturbed {
        c: f64,
        eps: f64,
        mass: Option<f64>,
    },
    Blowup {
        mass: f64,
        lambda: f64,
        r: f64,
        r1: f64,
    },
}

impl InitialSpec {
    pub fn profile(&self) -> Option<(Profile, Option<f64>)> {
        match *self {
            InitialSpec::Constant { c, mass } => Some((Profile::Constant { c }, mass)),
            InitialSpec::GaussianBump { amp, width, mass } => Some((Profile::GaussianBump { amp, width }, mass)),
            InitialSpec::Perturbed { c, eps, mass } => Some((Profile::Perturbed { c, eps }, mass)),
            InitialSpec::Blowup { .. } => None,
        }
    }

    pub fn recipe(&self) -> Option<BlowupRecipe> {
        match *self {
            InitialSpec::Blowup { mass, lambda, r, r1 } => Some(BlowupRecipe { mass, lambda, r, r1 }),
            _ => None,
        }
    }

    /// Builds the profile variants. The blowup family goes through
    /// [`crate::initdata::construct_blowup`] instead.
    pub fn build_profile(&self, grid: Arc<RadialGrid>) -> Result<Field> {
        let (profile, mass) = self
            .profile()
            .ok_or_else(|| Error::Config("blowup data is not a plain profile".into()))?;
        let mut u = standard_profile(&profile, grid)?;
        if let Some(m) = mass {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("initial mass {m} must be positive")));
            }
            crate::initdata::rescale_mass(&mut u, m)?;
        }
        Ok(u)
    }
}

fn default_stepper() -> Stepper {
    Stepper::SemiImplicit
}

/// User-facing scheme settings; unset bounds follow the stepper's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default = "default_stepper")]
    pub stepper: Stepper,
    #[serde(default)]
    pub flux: FluxForm,
    pub dt: f64,
    pub t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl_safety: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overflow_cap: Option<f64>,
}

impl SchemeSpec {
    pub fn build(&self) -> Result<SchemeConfig> {
        let mut s = match self.stepper {
            Stepper::SemiImplicit => SchemeConfig::semi_implicit(self.dt, self.t_end),
            Stepper::ExplicitRk2 => SchemeConfig::explicit_rk2(self.dt, self.t_end),
        }
        .with_flux(self.flux);
        if let Some(x) = self.dt_min {
            s.dt_min = x;
        }
        if let Some(x) = self.dt_max {
            s.dt_max = x;
        }
        if let Some(x) = self.cfl_safety {
            s.cfl_safety = x;
        }
        if let Some(x) = self.overflow_cap {
            s.overflow_cap = x;
        }
        s.validate()?;
        Ok(s)
    }
}

fn default_every() -> u64 {
    1
}

fn default_alphas() -> Vec<f64> {
    vec![1.0]
}

fn default_lp() -> Vec<f64> {
    vec![2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; `--out` overrides it. Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_every")]
    pub series_every: u64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Write an intermediate checkpoint every this many steps (0: final only).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_lp")]
    pub lp: Vec<f64>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            series_every: default_every(),
            snapshot_times: Vec::new(),
            checkpoint_every: 0,
            alphas: default_alphas(),
            lp: default_lp(),
        }
    }
}

impl OutputSpec {
    pub fn diagnostics(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            every_steps: self.series_every,
            alphas: self.alphas.clone(),
            lp: self.lp.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.series_every == 0 {
            return Err(Error::Config("series_every must be at least 1".into()));
        }
        if self.snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("snapshot times must be finite and >= 0".into()));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("exp_moment exponents must be finite".into()));
        }
        if self.lp.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
            return Err(Error::Config("L^p exponents must be finite and >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Reserved; the simulator itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub motility: Motility,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types always serialise")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        self.motility.validate()?;
        if !(self.model.mu >= 0.0 && self.model.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {}", self.model.mu)));
        }
        match self.initial.recipe() {
            Some(r) => r.validate()?,
            None => {
                self.initial.profile().expect("non-blowup").0.validate()?;
            }
        }
        self.scheme.build()?;
        self.output.validate()
    }

    /// SHA-256 of the canonical serialisation, with the output directory
    /// blanked so that relocating a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output.dir = None;
        hex_digest(canon.to_toml().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Continuation sweep of stationary states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    pub grid: GridSpec,
    pub steady: SteadySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadySpec {
    pub mass_start: f64,
    pub mass_end: f64,
    pub steps: usize,
    /// Optional non-constant starting guess for `v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<InitialSpec>,
}

/// Fit of entropy, interaction and energy against `log λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsConfig {
    pub grid: GridSpec,
    pub asymptotics: AsymptoticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsSpec {
    pub mass: f64,
    pub lambdas: Vec<f64>,
    pub r: f64,
    pub r1: f64,
}

macro_rules! toml_io {
    ($t:ty) => {
        impl $t {
            pub fn parse(text: &str) -> Result<Self> {
                let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
                cfg.grid.build()?;
                cfg.output.validate()?;
                Ok(cfg)
            }

            pub fn load(path: &Path) -> Result<Self> {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::parse(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })
            }

            pub fn hash(&self) -> String {
                let mut canon = self.clone();
                canon.output.dir = None;
                hex_digest(toml::to_string(&canon).expect("config types always serialise").as_bytes())
            }
        }
    };
}

toml_io!(SteadyConfig);
toml_io!(AsymptoticsConfig);

/// Input of the `construct` command: either one initial datum (a run config)
/// or a λ-family for the asymptotics fit (a file with an `[asymptotics]` table).
#[derive(Debug, Clone, PartialEq)]
pub enum ConstructConfig {
    Initial(RunConfig),
    Asymptotics(AsymptoticsConfig),
}

impl ConstructConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if table.contains_key("asymptotics") {
            AsymptoticsConfig::parse(text).map(ConstructConfig::Asymptotics)
        } else {
            RunConfig::parse(text).map(ConstructConfig::Initial)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn output(&self) -> &OutputSpec {
        match self {
            ConstructConfig::Initial(c) => &c.output,
            ConstructConfig::Asymptotics(c) => &c.output,
        }
    }
}
