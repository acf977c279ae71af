//! Run configuration read from JSON.
//!
//! Parse errors and semantic validation errors both carry the dotted path
//! of the offending field, e.g. `physical.nu_s`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{PhysicalParams, TimeStepperConfig};
use crate::grid::Grid;
use crate::ic::InitialCondition;
use crate::monitor::BlowupThresholds;
use crate::norms::SobolevIndex;

/// Relaxation time: a positive number or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub struct Lambda(pub f64);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<LambdaRepr> for Lambda {
    type Error = String;

    fn try_from(r: LambdaRepr) -> Result<Self, String> {
        match r {
            LambdaRepr::Number(v) => Ok(Self(v)),
            LambdaRepr::Text(s) if s == "inf" => Ok(Self(f64::INFINITY)),
            LambdaRepr::Text(s) => Err(format!("expected a number or \"inf\", got {s:?}")),
        }
    }
}

impl From<Lambda> for LambdaRepr {
    fn from(l: Lambda) -> Self {
        if l.0.is_infinite() {
            Self::Text("inf".into())
        } else {
            Self::Number(l.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "two_pi")]
    pub length: f64,
}

fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub nu_s: f64,
    pub nu_p: f64,
    pub lambda: Lambda,
    #[serde(default)]
    pub kelvin_voigt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    /// Defaults to `dt`.
    #[serde(default)]
    pub dt_min: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default)]
    pub adaptive: bool,
    pub t_end: f64,
    #[serde(default)]
    pub mollify_epsilon: f64,
}

fn default_cfl() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Steps between diagnostics rows.
    #[serde(default = "one")]
    pub diagnostics_every: usize,
}

fn one() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            checkpoint_every: 0,
            diagnostics_every: 1,
        }
    }
}

/// A complete simulation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub physical: PhysicalConfig,
    pub stepper: StepperConfig,
    #[serde(default = "default_m")]
    pub sobolev_m: u32,
    pub ic: InitialCondition,
    #[serde(default)]
    pub thresholds: BlowupThresholds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_m() -> u32 {
    3
}

/// Rewrites a parameter error as a config error under `section`.
fn at(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            path: format!("{section}.{name}"),
            message: reason,
        },
        Error::BadResolution(n) => Error::Config {
            path: format!("{section}.n"),
            message: Error::BadResolution(n).to_string(),
        },
        Error::BadLength(l) => Error::Config {
            path: format!("{section}.length"),
            message: Error::BadLength(l).to_string(),
        },
        other => Error::Config {
            path: section.to_string(),
            message: other.to_string(),
        },
    }
}

impl RunConfig {
    /// Parses JSON text; errors name the field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            },
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section against its module's invariants.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.params()?;
        self.stepper()?;
        self.ic.validate(&grid).map_err(|e| at("ic", e))?;
        if self.output.diagnostics_every == 0 {
            return Err(Error::Config {
                path: "output.diagnostics_every".into(),
                message: "must be at least 1".into(),
            });
        }
        let t = &self.thresholds;
        for (name, v) in [
            ("linf_cap", t.linf_cap),
            ("dt_floor", t.dt_floor),
            ("integral_cap", t.integral_cap),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config {
                    path: format!("thresholds.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.length).map_err(|e| at("grid", e))
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        let p = &self.physical;
        PhysicalParams::new(p.nu_s, p.nu_p, p.lambda.0, p.kelvin_voigt)
            .map_err(|e| at("physical", e))
    }

    pub fn stepper(&self) -> Result<TimeStepperConfig> {
        let s = &self.stepper;
        let ts = TimeStepperConfig {
            dt: s.dt,
            dt_min: s.dt_min.unwrap_or(s.dt),
            cfl_safety: s.cfl_safety,
            adaptive: s.adaptive,
            t_end: s.t_end,
            mollify_epsilon: s.mollify_epsilon,
        };
        ts.validate().map_err(|e| at("stepper", e))?;
        Ok(ts)
    }

    pub fn sobolev_index(&self) -> SobolevIndex {
        SobolevIndex(self.sobolev_m)
    }
}
