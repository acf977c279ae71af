//! The smoothing operator `J_ε f = φ_ε * f` with a compactly supported bump.
//!
//! `φ(x) = c · exp(−1/(1−|x|²))` for `|x| < 1`, rescaled as
//! `φ_ε(x) = ε⁻³ φ(x/ε)`. The constant `c` is fixed so that the lattice
//! quadrature of `φ_ε` is exactly one, and the convolution is applied as a
//! real Fourier multiplier built from the sampled, periodized kernel.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::spectral::{forward_transform, inverse_transform, SpectralField};

/// Unnormalized bump profile as a function of `|x|²`.
pub fn bump_profile(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// A mollifier of radius `epsilon` tied to one grid.
#[derive(Clone, Debug)]
pub struct Mollifier {
    grid: Grid,
    epsilon: f64,
    bump_normalization: f64,
    multiplier: Vec<f64>,
}

impl Mollifier {
    /// Rejects radii that the lattice cannot resolve (`ε ≤ 2h`).
    pub fn new(grid: &Grid, epsilon: f64) -> Result<Self> {
        let h = grid.spacing();
        if !(epsilon.is_finite() && epsilon > 2.0 * h) {
            return Err(Error::UnresolvedMollifier {
                epsilon,
                spacing: h,
            });
        }
        let n = grid.n();
        let len = grid.length();
        // Periodize: add every image of the bump that reaches the box.
        let images = (epsilon / len).ceil() as i64 + 1;
        let mut raw = vec![0.0; grid.points()];
        for (idx, v) in raw.iter_mut().enumerate() {
            let c = grid.coords(idx);
            let d: [f64; 3] = c.map(|i| {
                let i = if i > n / 2 {
                    i as f64 - n as f64
                } else {
                    i as f64
                };
                i * h
            });
            let mut acc = 0.0;
            for a in -images..=images {
                for b in -images..=images {
                    for e in -images..=images {
                        let y = [
                            d[0] + a as f64 * len,
                            d[1] + b as f64 * len,
                            d[2] + e as f64 * len,
                        ];
                        acc += bump_profile(
                            (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / (epsilon * epsilon),
                        );
                    }
                }
            }
            *v = acc;
        }
        let mass: f64 = raw.iter().sum::<f64>() * grid.cell_volume() / epsilon.powi(3);
        let bump_normalization = 1.0 / mass;
        let scale = bump_normalization / epsilon.powi(3);
        let kernel = Field::<1>::from_raw(grid, raw.iter().map(|v| v * scale).collect());
        let vol = grid.volume();
        let multiplier = forward_transform(&kernel)
            .component(0)
            .iter()
            .map(|c| c.re * vol)
            .collect();
        Ok(Self {
            grid: grid.clone(),
            epsilon,
            bump_normalization,
            multiplier,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The constant `c` that gives `φ_ε` unit lattice mass.
    pub fn bump_normalization(&self) -> f64 {
        self.bump_normalization
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Fourier multiplier of `J_ε` at each spectral slot.
    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    /// `J_ε` applied to Fourier coefficients.
    pub fn apply_hat<const C: usize>(&self, fh: &SpectralField<C>) -> SpectralField<C> {
        debug_assert!(fh.grid() == &self.grid);
        let mut out = fh.clone();
        let n3 = self.grid.points();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= self.multiplier[i % n3];
        }
        out
    }

    /// `J_ε f`.
    pub fn apply<const C: usize>(&self, f: &Field<C>) -> Result<Field<C>> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(inverse_transform(&self.apply_hat(&forward_transform(f))))
    }
}

/// `J_ε f` for a one-off radius.
pub fn mollify<const C: usize>(f: &Field<C>, epsilon: f64) -> Result<Field<C>> {
    Mollifier::new(f.grid(), epsilon)?.apply(f)
}
