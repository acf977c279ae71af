//! Initial stresses.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::SymTensorField;
use crate::grid::Grid;
use crate::lab::RandomFieldSpec;
use crate::norms::{hm_norm, SobolevIndex};

/// Traceless direction of the Gaussian bump, packed `[11,22,33,12,13,23]`.
pub const BUMP_DIRECTION: [f64; 6] = [1.0, -0.5, -0.5, 0.5, 0.0, 0.25];

/// The initial-condition families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `σ₁₂ = σ₂₁ = A sin(k·x)` with `k` in units of the fundamental wavenumber.
    SingleMode {
        amplitude: f64,
        #[serde(default = "default_mode")]
        mode: [i64; 3],
    },
    /// `σ = A exp(−|x−c|²/r²) D` with the fixed direction [`BUMP_DIRECTION`],
    /// `|x−c|` the periodic minimum-image distance. `center` defaults to the
    /// box center.
    GaussianBump {
        amplitude: f64,
        radius: f64,
        #[serde(default)]
        center: Option<[f64; 3]>,
    },
    /// Random band-limited stress scaled so `‖σ₀‖_m = amplitude`.
    RandomBand {
        amplitude: f64,
        seed: u64,
        band_limit: u32,
    },
}

fn default_mode() -> [i64; 3] {
    [1, 0, 0]
}

impl InitialCondition {
    /// Checks the parameters against the grid; errors name the offending field.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            Self::SingleMode { amplitude, mode } => {
                finite("amplitude", *amplitude)?;
                let half = (grid.n() / 2) as i64;
                if mode.iter().any(|k| k.abs() >= half) {
                    return Err(invalid(
                        "mode",
                        format!("{mode:?} is not below the Nyquist index {half}"),
                    ));
                }
            }
            Self::GaussianBump {
                amplitude,
                radius,
                center,
            } => {
                finite("amplitude", *amplitude)?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(invalid("radius", format!("must be positive, got {radius}")));
                }
                if let Some(c) = center {
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(invalid("center", "must be finite"));
                    }
                }
            }
            Self::RandomBand {
                amplitude,
                band_limit,
                ..
            } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(invalid(
                        "amplitude",
                        format!("target norm must be nonnegative, got {amplitude}"),
                    ));
                }
                if *band_limit == 0 || *band_limit as i64 > grid.dealias_cutoff() {
                    return Err(invalid(
                        "band_limit",
                        format!(
                            "must lie in [1, n/3 = {}], got {band_limit}",
                            grid.dealias_cutoff()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Samples the stress on `grid`; `m` sets the norm of the random family.
    pub fn build(&self, grid: &Grid, m: SobolevIndex) -> Result<SymTensorField> {
        self.validate(grid)?;
        Ok(match self {
            Self::SingleMode { amplitude, mode } => {
                let k = mode.map(|v| v as f64 * grid.fundamental());
                SymTensorField::from_fn(grid, |x| {
                    let s = amplitude * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).sin();
                    [0.0, 0.0, 0.0, s, 0.0, 0.0]
                })
            }
            Self::GaussianBump {
                amplitude,
                radius,
                center,
            } => {
                let l = grid.length();
                let c = center.unwrap_or([0.5 * l; 3]);
                SymTensorField::from_fn(grid, |x| {
                    let d2: f64 = (0..3)
                        .map(|i| {
                            let d = (x[i] - c[i]).rem_euclid(l);
                            d.min(l - d).powi(2)
                        })
                        .sum();
                    let a = amplitude * (-d2 / (radius * radius)).exp();
                    BUMP_DIRECTION.map(|v| a * v)
                })
            }
            Self::RandomBand {
                amplitude,
                seed,
                band_limit,
            } => {
                let spec = RandomFieldSpec {
                    seed: *seed,
                    band_limit: *band_limit,
                    amplitude: 1.0,
                };
                let s: SymTensorField = spec.sample(grid, 0)?;
                let norm = hm_norm(&s, m);
                s.scaled(amplitude / norm)
            }
        })
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::linf_norm;

    #[test]
    fn single_mode_matches_formula() {
        let g = Grid::periodic_2pi(16).unwrap();
        let s = InitialCondition::SingleMode {
            amplitude: 0.3,
            mode: [1, 0, 0],
        }
        .build(&g, SobolevIndex(3))
        .unwrap();
        for idx in [0, 5, 300] {
            let x = g.position(idx);
            assert_eq!(s.at(idx), [0.0, 0.0, 0.0, 0.3 * x[0].sin(), 0.0, 0.0]);
        }
        let bad = InitialCondition::SingleMode {
            amplitude: 1.0,
            mode: [8, 0, 0],
        };
        assert!(bad.build(&g, SobolevIndex(3)).is_err());
    }

    #[test]
    fn bump_peaks_at_center_and_wraps() {
        let g = Grid::periodic_2pi(16).unwrap();
        let ic = InitialCondition::GaussianBump {
            amplitude: 2.0,
            radius: 0.5,
            center: Some([0.0; 3]),
        };
        let s = ic.build(&g, SobolevIndex(3)).unwrap();
        assert_eq!(s.at(0), BUMP_DIRECTION.map(|v| 2.0 * v));
        // Neighbours across the periodic boundary are equal.
        let (a, b) = (g.index(1, 0, 0), g.index(15, 0, 0));
        for (x, y) in s.at(a).iter().zip(s.at(b)) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(InitialCondition::GaussianBump {
            amplitude: 1.0,
            radius: 0.0,
            center: None
        }
        .validate(&g)
        .is_err());
    }

    #[test]
    fn random_band_hits_target_norm() {
        let g = Grid::periodic_2pi(16).unwrap();
        let ic = InitialCondition::RandomBand {
            amplitude: 0.01,
            seed: 9,
            band_limit: 3,
        };
        let s = ic.build(&g, SobolevIndex(3)).unwrap();
        assert!((hm_norm(&s, SobolevIndex(3)) - 0.01).abs() < 1e-15);
        assert_eq!(s, ic.build(&g, SobolevIndex(3)).unwrap());
        let zero = InitialCondition::RandomBand {
            amplitude: 0.0,
            seed: 9,
            band_limit: 3,
        };
        assert_eq!(linf_norm(&zero.build(&g, SobolevIndex(3)).unwrap()), 0.0);
        let wide = InitialCondition::RandomBand {
            amplitude: 1.0,
            seed: 9,
            band_limit: 6,
        };
        assert!(wide.build(&g, SobolevIndex(3)).is_err());
    }

    #[test]
    fn parses_tagged_json() {
        let ic: InitialCondition =
            serde_json::from_str(r#"{"kind": "gaussian_bump", "amplitude": 1.0, "radius": 0.5}"#)
                .unwrap();
        assert_eq!(
            ic,
            InitialCondition::GaussianBump {
                amplitude: 1.0,
                radius: 0.5,
                center: None
            }
        );
        assert!(serde_json::from_str::<InitialCondition>(
            r#"{"kind": "vortex", "amplitude": 1.0}"#
        )
        .is_err());
    }
}
