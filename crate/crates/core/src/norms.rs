//! Sobolev, Lebesgue and supremum norms on the periodic box.
//!
//! Tensor-valued fields are measured with the pointwise Frobenius norm, so a
//! packed symmetric tensor counts each off-diagonal entry twice.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::spectral::{forward_transform, SpectralField};

/// Derivative order of a Sobolev norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SobolevIndex(pub u32);

impl Default for SobolevIndex {
    fn default() -> Self {
        Self(3)
    }
}

/// `Σ_{|α|≤m} Π_i k_i^{2α_i}` for each slot along one axis combination.
///
/// Built from the per-axis powers `k_i^{2a}`; the triple sum is evaluated per slot.
pub(crate) fn sobolev_weights(grid: &Grid, m: u32) -> Vec<f64> {
    let m = m as usize;
    let powers: Vec<Vec<f64>> = (0..grid.n())
        .map(|s| {
            let k2 = grid.wavenumber(s).powi(2);
            std::iter::successors(Some(1.0), |p| Some(p * k2))
                .take(m + 1)
                .collect()
        })
        .collect();
    (0..grid.points())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            let mut w = 0.0;
            for a in 0..=m {
                for b in 0..=m - a {
                    for c in 0..=m - a - b {
                        w += powers[i][a] * powers[j][b] * powers[k][c];
                    }
                }
            }
            w
        })
        .collect()
}

/// `‖f‖_m` from Fourier coefficients.
pub fn hm_norm_hat<const C: usize>(fh: &SpectralField<C>, m: SobolevIndex) -> f64 {
    let grid = fh.grid();
    let weights = sobolev_weights(grid, m.0);
    let mut total = 0.0;
    for c in 0..C {
        let wc = Field::<C>::component_weight(c);
        let s: f64 = fh
            .component(c)
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum();
        total += wc * s;
    }
    (total * grid.volume()).sqrt()
}

/// `‖f‖_m = (Σ_{|α|≤m} ‖D^α f‖₀²)^{1/2}`, evaluated through Parseval.
pub fn hm_norm<const C: usize>(f: &Field<C>, m: SobolevIndex) -> f64 {
    hm_norm_hat(&forward_transform(f), m)
}

/// `‖f‖₀` by lattice quadrature.
pub fn l2_norm<const C: usize>(f: &Field<C>) -> f64 {
    inner_product(f, f).sqrt()
}

/// `(Σ |f|^p h³)^{1/p}` with `|f|` the pointwise Frobenius magnitude.
pub fn lp_norm<const C: usize>(f: &Field<C>, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid(
            "p",
            format!("Lebesgue exponent must lie in [1, inf), got {p}"),
        ));
    }
    let grid = f.grid();
    let sum: f64 = (0..grid.points())
        .map(|i| f.magnitude_sq_at(i).powf(0.5 * p))
        .sum();
    Ok((sum * grid.cell_volume()).powf(1.0 / p))
}

/// Largest pointwise magnitude over the lattice samples.
///
/// Under-resolved fields can peak between lattice points and under-report.
pub fn linf_norm<const C: usize>(f: &Field<C>) -> f64 {
    (0..f.grid().points())
        .map(|i| f.magnitude_sq_at(i))
        .fold(0.0, f64::max)
        .sqrt()
}

/// Frobenius L² inner product by lattice quadrature.
pub fn inner_product<const C: usize>(f: &Field<C>, g: &Field<C>) -> f64 {
    let grid = f.grid();
    let mut total = 0.0;
    for c in 0..C {
        let s: f64 = f
            .component(c)
            .iter()
            .zip(g.component(c))
            .map(|(a, b)| a * b)
            .sum();
        total += Field::<C>::component_weight(c) * s;
    }
    total * grid.cell_volume()
}
