//! Creeping-flow velocity from the polymer stress on the periodic box.
//!
//! Solves `−∇p + ν_s Δu + div σ = 0`, `div u = 0` mode by mode:
//! `û = P(k) (i k·σ̂) / (ν_s |k|²)` with the Leray projector
//! `P(k) = I − k kᵀ/|k|²`. The mean velocity is zero, and modes on the
//! Nyquist planes are dropped because their odd derivatives have no
//! real-valued representation on the lattice.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{sym_index, SymTensorField, TensorField, VectorField};
use crate::spectral::{forward_transform, inverse_transform, SpectralField};

/// Solvent viscosity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesParams {
    nu_s: f64,
}

impl StokesParams {
    pub fn new(nu_s: f64) -> Result<Self> {
        if !(nu_s.is_finite() && nu_s > 0.0) {
            return Err(invalid(
                "nu_s",
                format!("solvent viscosity must be positive, got {nu_s}"),
            ));
        }
        Ok(Self { nu_s })
    }

    pub fn nu_s(&self) -> f64 {
        self.nu_s
    }
}

/// Velocity and velocity gradient coefficients, `∇û_ij = i k_i û_j`.
pub fn solve_stokes_hat(
    sigma_hat: &SpectralField<6>,
    params: &StokesParams,
) -> (SpectralField<3>, SpectralField<9>) {
    let grid = sigma_hat.grid().clone();
    let n3 = grid.points();
    let nu = params.nu_s;
    let modes: Vec<([Complex64; 3], [Complex64; 9])> = (0..n3)
        .into_par_iter()
        .map(|idx| {
            let zero = Complex64::default();
            let k = grid.wavevector(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 || grid.on_nyquist_plane(idx) {
                return ([zero; 3], [zero; 9]);
            }
            let f: [Complex64; 3] = std::array::from_fn(|j| {
                (0..3)
                    .map(|a| Complex64::new(0.0, k[a]) * sigma_hat.component(sym_index(a, j))[idx])
                    .sum()
            });
            let kf = k[0] * f[0] + k[1] * f[1] + k[2] * f[2];
            let u: [Complex64; 3] = std::array::from_fn(|j| (f[j] - kf * (k[j] / k2)) / (nu * k2));
            let grad: [Complex64; 9] =
                std::array::from_fn(|c| Complex64::new(0.0, k[c / 3]) * u[c % 3]);
            (u, grad)
        })
        .collect();
    let mut uh = SpectralField::<3>::zeros(&grid);
    let mut gh = SpectralField::<9>::zeros(&grid);
    for (idx, (u, g)) in modes.into_iter().enumerate() {
        for j in 0..3 {
            uh.component_mut(j)[idx] = u[j];
        }
        for c in 0..9 {
            gh.component_mut(c)[idx] = g[c];
        }
    }
    (uh, gh)
}

/// Velocity `u` and gradient `(∇u)_ij = ∂_i u_j` for a symmetric stress.
pub fn solve_stokes_spectral(
    sigma: &SymTensorField,
    params: &StokesParams,
) -> (VectorField, TensorField) {
    let (uh, gh) = solve_stokes_hat(&forward_transform(sigma), params);
    (inverse_transform(&uh), inverse_transform(&gh))
}
