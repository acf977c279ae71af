//! Free-space Stokes kernels and a principal-value quadrature for the
//! velocity gradient of a compactly supported stress.
//!
//! With `r = |y|`,
//!
//! ```text
//! M1_jkl(y)   = −y_j δ_kl / r³ + 3 y_j y_k y_l / r⁵
//! M2_ijkl(y)  = δ_ij δ_kl / r³ − 3 (y_i y_j δ_kl + 2 y_j y_l δ_ki + δ_ij y_k y_l) / r⁵
//!               + 15 y_i y_j y_k y_l / r⁷
//! ```
//!
//! The velocity produced by a stress is
//! `u_j(x) = −(1/8πν_s) ∫ M1_jkl(y) σ_kl(x−y) dy`: the Oseen tensor
//! `(1/8πν_s)(δ_jk/r + y_j y_k/r³)` differentiated once gives `−M1`.
//! Its gradient is
//! `∂_i u_j(x) = −(1/5ν_s)(σ − I trσ/3)_ij + (1/8πν_s) PV∫ M2_ijkl(y) σ_kl(x−y) dy`.
//! `M2` is not symmetric in `(k, l)`; only its `(k, l)`-symmetric part acts on
//! a symmetric stress, and that part has zero mean on the unit sphere.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{SymTensorField, SYM_PAIRS};
use crate::grid::Grid;
use crate::spectral::{forward_transform, SpectralField};
use crate::stokes::StokesParams;

pub type Rank3 = [[[f64; 3]; 3]; 3];
pub type Rank4 = [[[[f64; 3]; 3]; 3]; 3];
pub type Matrix3 = [[f64; 3]; 3];

const fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

fn radius(y: [f64; 3]) -> Result<f64> {
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    if r == 0.0 {
        Err(Error::KernelAtOrigin)
    } else {
        Ok(r)
    }
}

/// `M1_jkl(y)` as written above; homogeneous of degree −2.
pub fn eval_kernel_m1(y: [f64; 3]) -> Result<Rank3> {
    let r = radius(y)?;
    let (r3, r5) = (r.powi(3), r.powi(5));
    Ok(std::array::from_fn(|j| {
        std::array::from_fn(|k| {
            std::array::from_fn(|l| -y[j] * delta(k, l) / r3 + 3.0 * y[j] * y[k] * y[l] / r5)
        })
    }))
}

/// `M2_ijkl(y)` as written above; homogeneous of degree −3.
pub fn eval_kernel_m2(y: [f64; 3]) -> Result<Rank4> {
    let r = radius(y)?;
    let (r3, r5, r7) = (r.powi(3), r.powi(5), r.powi(7));
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            std::array::from_fn(|k| {
                std::array::from_fn(|l| {
                    delta(i, j) * delta(k, l) / r3
                        - 3.0
                            * (y[i] * y[j] * delta(k, l)
                                + 2.0 * y[j] * y[l] * delta(k, i)
                                + delta(i, j) * y[k] * y[l])
                            / r5
                        + 15.0 * y[i] * y[j] * y[k] * y[l] / r7
                })
            })
        })
    }))
}

/// `(M2_ijkl + M2_ijlk)/2`: the part of `M2` that acts on symmetric tensors.
pub fn eval_kernel_m2_symmetrized(y: [f64; 3]) -> Result<Rank4> {
    let m = eval_kernel_m2(y)?;
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            std::array::from_fn(|k| std::array::from_fn(|l| 0.5 * (m[i][j][k][l] + m[i][j][l][k])))
        })
    }))
}

/// `M1_jkl(y) σ_kl` for symmetric `σ`, without the origin check.
fn m1_contract(y: [f64; 3], s: &Matrix3) -> [f64; 3] {
    let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    let r = r2.sqrt();
    let tr = s[0][0] + s[1][1] + s[2][2];
    let ysy = quad_form(s, y);
    let c = -tr / (r2 * r) + 3.0 * ysy / (r2 * r2 * r);
    [c * y[0], c * y[1], c * y[2]]
}

/// `M2_ijkl(y) σ_kl` for symmetric `σ`, without the origin check.
fn m2_contract(y: [f64; 3], s: &Matrix3) -> Matrix3 {
    let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    let r = r2.sqrt();
    let (r3, r5, r7) = (r2 * r, r2 * r2 * r, r2 * r2 * r2 * r);
    let tr = s[0][0] + s[1][1] + s[2][2];
    let ysy = quad_form(s, y);
    let sy: [f64; 3] = std::array::from_fn(|i| s[i][0] * y[0] + s[i][1] * y[1] + s[i][2] * y[2]);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            delta(i, j) * tr / r3
                - 3.0 * (y[i] * y[j] * tr + 2.0 * y[j] * sy[i] + delta(i, j) * ysy) / r5
                + 15.0 * y[i] * y[j] * ysy / r7
        })
    })
}

fn quad_form(s: &Matrix3, y: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| (0..3).map(|b| y[a] * s[a][b] * y[b]).sum::<f64>())
        .sum()
}

/// Monte-Carlo mean of one kernel component over the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereAverage {
    pub mean: f64,
    pub standard_error: f64,
    /// Largest sampled magnitude of the component.
    pub max_abs: f64,
    pub samples: usize,
}

impl SphereAverage {
    /// `|mean| ≤ 5 max_abs / √samples`.
    pub fn within_contract(&self) -> bool {
        self.mean.abs() <= 5.0 * self.max_abs / (self.samples as f64).sqrt()
    }

    /// `|mean| ≤ k` standard errors.
    pub fn within_standard_errors(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.standard_error
    }
}

/// Sphere average of the `(k, l)`-symmetrized `M2` component `(i, j, k, l)`
/// (zero-based), drawn from antipodal pairs of uniform directions.
pub fn kernel_sphere_average(
    component: [usize; 4],
    n_samples: usize,
    seed: u64,
) -> Result<SphereAverage> {
    sphere_average_with(component, n_samples, seed, eval_kernel_m2_symmetrized)
}

/// Sphere average of the unsymmetrized `M2` component.
pub fn kernel_sphere_average_unsymmetrized(
    component: [usize; 4],
    n_samples: usize,
    seed: u64,
) -> Result<SphereAverage> {
    sphere_average_with(component, n_samples, seed, eval_kernel_m2)
}

fn sphere_average_with(
    component: [usize; 4],
    n_samples: usize,
    seed: u64,
    kernel: fn([f64; 3]) -> Result<Rank4>,
) -> Result<SphereAverage> {
    if n_samples < 10_000 {
        return Err(invalid(
            "n_samples",
            format!("need at least 10^4 samples, got {n_samples}"),
        ));
    }
    if component.iter().any(|&c| c > 2) {
        return Err(invalid(
            "component",
            format!("indices must lie in 0..3, got {component:?}"),
        ));
    }
    let [i, j, k, l] = component;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = n_samples / 2;
    let (mut sum, mut sum_sq, mut max_abs) = (0.0, 0.0, 0.0f64);
    for _ in 0..pairs {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let r = radius(v)?;
        let w = [v[0] / r, v[1] / r, v[2] / r];
        let a = kernel(w)?[i][j][k][l];
        let b = kernel([-w[0], -w[1], -w[2]])?[i][j][k][l];
        let pair = 0.5 * (a + b);
        sum += pair;
        sum_sq += pair * pair;
        max_abs = max_abs.max(a.abs()).max(b.abs());
    }
    let np = pairs as f64;
    let mean = sum / np;
    let var = (sum_sq / np - mean * mean).max(0.0) * np / (np - 1.0);
    Ok(SphereAverage {
        mean,
        standard_error: (var / np).sqrt(),
        max_abs,
        samples: 2 * pairs,
    })
}

/// `∫_{S²} Σ_ijkl M2sym_ijkl(ω)² dΩ` by a product rule in `(cos θ, φ)`.
pub fn kernel_sphere_square_integral() -> f64 {
    let (nt, np) = (400, 800);
    let mut total = 0.0;
    for a in 0..nt {
        let z = -1.0 + (a as f64 + 0.5) * 2.0 / nt as f64;
        let s = (1.0 - z * z).sqrt();
        for b in 0..np {
            let phi = (b as f64 + 0.5) * 2.0 * PI / np as f64;
            let m = eval_kernel_m2_symmetrized([s * phi.cos(), s * phi.sin(), z]).unwrap();
            let sq: f64 = m.iter().flatten().flatten().flatten().map(|v| v * v).sum();
            total += sq;
        }
    }
    total * (2.0 / nt as f64) * (2.0 * PI / np as f64)
}

/// Cauchy-Schwarz bound on the far-field part `∫_{|y|>R}` of the gradient integral:
/// `(1/8πν_s) (S/3)^{1/2} ‖σ‖₀ / R^{3/2}` with `S` from [`kernel_sphere_square_integral`].
pub fn outer_tail_bound(outer_radius: f64, sigma_l2: f64, params: &StokesParams) -> f64 {
    let s = kernel_sphere_square_integral();
    (s / 3.0).sqrt() * sigma_l2 / (8.0 * PI * params.nu_s() * outer_radius.powf(1.5))
}

/// Split radii and lattice resolution of the principal-value quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvQuadratureSpec {
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Quadrature cells along each axis of the cube `[−R, R]³`; must be even.
    pub points_per_axis: usize,
}

impl PvQuadratureSpec {
    pub fn spacing(&self) -> f64 {
        2.0 * self.outer_radius / self.points_per_axis as f64
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius) {
            return Err(invalid(
                "inner_radius",
                format!(
                    "need 0 < inner {} < outer {}",
                    self.inner_radius, self.outer_radius
                ),
            ));
        }
        if self.outer_radius > 0.5 * grid.length() {
            return Err(invalid(
                "outer_radius",
                format!(
                    "{} exceeds half the box {}",
                    self.outer_radius,
                    0.5 * grid.length()
                ),
            ));
        }
        if self.points_per_axis == 0 || self.points_per_axis % 2 == 1 {
            return Err(invalid(
                "points_per_axis",
                "must be even so no node sits at the origin",
            ));
        }
        if self.inner_radius < 4.0 * self.spacing() {
            return Err(invalid(
                "inner_radius",
                format!(
                    "{} is not resolved by four quadrature cells of size {}",
                    self.inner_radius,
                    self.spacing()
                ),
            ));
        }
        Ok(())
    }
}

/// Relative threshold below which stress is treated as absent.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Radius, around the peak sample, of the region where the stress magnitude
/// exceeds [`SUPPORT_THRESHOLD`] of its peak (periodic minimum-image distance).
pub fn support_radius(sigma: &SymTensorField) -> f64 {
    let g = sigma.grid();
    let mags: Vec<f64> = (0..g.points())
        .map(|i| sigma.magnitude_sq_at(i).sqrt())
        .collect();
    let (peak_idx, peak) =
        mags.iter().enumerate().fold(
            (0, 0.0),
            |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc },
        );
    if peak == 0.0 {
        return 0.0;
    }
    let n = g.n() as i64;
    let c = g.coords(peak_idx).map(|v| v as i64);
    let h = g.spacing();
    mags.iter()
        .enumerate()
        .filter(|(_, &m)| m > SUPPORT_THRESHOLD * peak)
        .map(|(i, _)| {
            let p = g.coords(i).map(|v| v as i64);
            let d2: f64 = (0..3)
                .map(|a| {
                    let mut d = (p[a] - c[a]).rem_euclid(n);
                    if d > n / 2 {
                        d -= n;
                    }
                    (d as f64 * h).powi(2)
                })
                .sum();
            d2.sqrt()
        })
        .fold(0.0, f64::max)
}

/// Free-space evaluation of `u` and `∇u` at arbitrary points from a stress
/// sampled on the periodic grid. The stress is reconstructed between lattice
/// nodes by its trigonometric interpolant.
pub struct FreeSpaceEvaluator {
    sigma_hat: SpectralField<6>,
    params: StokesParams,
    spec: PvQuadratureSpec,
}

/// Both free-space quantities at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeSpaceSample {
    pub velocity: [f64; 3],
    pub gradient: Matrix3,
}

impl FreeSpaceEvaluator {
    /// Rejects stresses whose support radius is not below half the box.
    pub fn new(
        sigma: &SymTensorField,
        params: StokesParams,
        spec: PvQuadratureSpec,
    ) -> Result<Self> {
        let grid = sigma.grid();
        spec.validate(grid)?;
        let radius = support_radius(sigma);
        let limit = 0.5 * grid.length();
        if radius >= limit {
            return Err(Error::NotCompactlySupported {
                radius,
                limit,
                threshold: SUPPORT_THRESHOLD,
            });
        }
        let mut sigma_hat = forward_transform(sigma);
        for c in 0..6 {
            let comp = sigma_hat.component_mut(c);
            for (idx, v) in comp.iter_mut().enumerate() {
                if grid.on_nyquist_plane(idx) {
                    *v = Complex64::default();
                }
            }
        }
        Ok(Self {
            sigma_hat,
            params,
            spec,
        })
    }

    /// Stress at the tensor-product points `xs[0] × xs[1] × xs[2]`,
    /// returned per packed component with the first axis fastest.
    fn interpolate(&self, xs: &[Vec<f64>; 3]) -> Vec<Vec<f64>> {
        let grid = self.sigma_hat.grid();
        let n = grid.n();
        let basis: Vec<Vec<Complex64>> = xs
            .iter()
            .map(|pts| {
                pts.iter()
                    .flat_map(|&x| {
                        (0..n).map(move |m| Complex64::from_polar(1.0, grid.wavenumber(m) * x))
                    })
                    .collect()
            })
            .collect();
        let [p0, p1, p2] = [xs[0].len(), xs[1].len(), xs[2].len()];
        (0..6)
            .into_par_iter()
            .map(|c| {
                let coef = self.sigma_hat.component(c);
                // a[(q0 * n + m1) * n + m2]
                let mut a = vec![Complex64::default(); p0 * n * n];
                for q0 in 0..p0 {
                    let e = &basis[0][q0 * n..(q0 + 1) * n];
                    for m2 in 0..n {
                        for m1 in 0..n {
                            let base = n * (m1 + n * m2);
                            let s: Complex64 = (0..n).map(|m0| e[m0] * coef[base + m0]).sum();
                            a[(q0 * n + m1) * n + m2] = s;
                        }
                    }
                }
                // b[(q1 * p0 + q0) * n + m2]
                let mut b = vec![Complex64::default(); p1 * p0 * n];
                for q1 in 0..p1 {
                    let e = &basis[1][q1 * n..(q1 + 1) * n];
                    for q0 in 0..p0 {
                        for m2 in 0..n {
                            let s: Complex64 =
                                (0..n).map(|m1| e[m1] * a[(q0 * n + m1) * n + m2]).sum();
                            b[(q1 * p0 + q0) * n + m2] = s;
                        }
                    }
                }
                let mut out = vec![0.0; p0 * p1 * p2];
                for q2 in 0..p2 {
                    let e = &basis[2][q2 * n..(q2 + 1) * n];
                    for q1 in 0..p1 {
                        for q0 in 0..p0 {
                            let row = &b[(q1 * p0 + q0) * n..(q1 * p0 + q0 + 1) * n];
                            let s: f64 = (0..n).map(|m2| (e[m2] * row[m2]).re).sum();
                            out[q0 + p0 * (q1 + p1 * q2)] = s;
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// Velocity and velocity gradient at `x`.
    /// Midpoint-lattice quadrature with `points_per_axis` cells per axis.
    pub fn evaluate_midpoint(&self, x: [f64; 3]) -> FreeSpaceSample {
        self.evaluate_lattice(x, self.spec.points_per_axis)
    }

    /// Midpoint quadrature on the configured lattice and on one refined by
    /// 3/2, combined by Richardson extrapolation. The leading lattice error is
    /// `O(h²)`: it comes from the degree −1 part of the regularized integrand
    /// near the origin, whose lattice sum errs by exactly `c h²` by scaling.
    pub fn evaluate(&self, x: [f64; 3]) -> FreeSpaceSample {
        let p1 = self.spec.points_per_axis;
        let p2 = (3 * p1 / 2).div_ceil(2) * 2;
        let (a, b) = (self.evaluate_lattice(x, p1), self.evaluate_lattice(x, p2));
        let (h1, h2) = (1.0 / p1 as f64, 1.0 / p2 as f64);
        let (w1, w2) = (
            -h2 * h2 / (h1 * h1 - h2 * h2),
            h1 * h1 / (h1 * h1 - h2 * h2),
        );
        FreeSpaceSample {
            velocity: std::array::from_fn(|j| w1 * a.velocity[j] + w2 * b.velocity[j]),
            gradient: std::array::from_fn(|i| {
                std::array::from_fn(|j| w1 * a.gradient[i][j] + w2 * b.gradient[i][j])
            }),
        }
    }

    fn evaluate_lattice(&self, x: [f64; 3], p: usize) -> FreeSpaceSample {
        let spec = &self.spec;
        let hq = 2.0 * spec.outer_radius / p as f64;
        let r_out = spec.outer_radius;
        let r_in = spec.inner_radius;
        let offsets: Vec<f64> = (0..p).map(|j| (j as f64 + 0.5) * hq - r_out).collect();
        // Sample points x − y; y runs over the lattice.
        let xs: [Vec<f64>; 3] = std::array::from_fn(|a| offsets.iter().map(|y| x[a] - y).collect());
        let vals = self.interpolate(&xs);
        let center = {
            let single: [Vec<f64>; 3] = std::array::from_fn(|a| vec![x[a]]);
            let v = self.interpolate(&single);
            packed_to_matrix(std::array::from_fn(|c| v[c][0]))
        };
        let w = hq.powi(3);
        let partial = (0..p)
            .into_par_iter()
            .map(|q2| {
                let mut vel = [0.0; 3];
                let mut inner = [[0.0; 3]; 3];
                let mut annulus = [[0.0; 3]; 3];
                let mut moment = [[0.0; 3]; 3];
                for q1 in 0..p {
                    for q0 in 0..p {
                        let y = [offsets[q0], offsets[q1], offsets[q2]];
                        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                        if r >= r_out {
                            continue;
                        }
                        let at = q0 + p * (q1 + p * q2);
                        let s = packed_to_matrix(std::array::from_fn(|c| vals[c][at]));
                        let m1 = m1_contract(y, &s);
                        for j in 0..3 {
                            vel[j] -= m1[j];
                        }
                        if r < r_in {
                            let d: Matrix3 = std::array::from_fn(|i| {
                                std::array::from_fn(|j| s[i][j] - center[i][j])
                            });
                            add(&mut inner, &m2_contract(y, &d));
                        } else {
                            add(&mut annulus, &m2_contract(y, &s));
                            add(&mut moment, &m2_contract(y, &center));
                        }
                    }
                }
                (vel, inner, annulus, moment)
            })
            .reduce(
                || ([0.0; 3], [[0.0; 3]; 3], [[0.0; 3]; 3], [[0.0; 3]; 3]),
                |mut a, b| {
                    for j in 0..3 {
                        a.0[j] += b.0[j];
                    }
                    add(&mut a.1, &b.1);
                    add(&mut a.2, &b.2);
                    add(&mut a.3, &b.3);
                    a
                },
            );
        let (vel, inner, annulus, moment) = partial;
        let nu = self.params.nu_s();
        let k = w / (8.0 * PI * nu);
        let tr = center[0][0] + center[1][1] + center[2][2];
        // The lattice sum of M2:σ(x) over the annulus discretizes an integral
        // that vanishes exactly; removing it cancels the staircase error of the
        // discrete sphere boundaries.
        let gradient = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let local = -(center[i][j] - delta(i, j) * tr / 3.0) / (5.0 * nu);
                local + k * (inner[i][j] + annulus[i][j] - moment[i][j])
            })
        });
        FreeSpaceSample {
            velocity: vel.map(|v| k * v),
            gradient,
        }
    }
}

fn packed_to_matrix(s: [f64; 6]) -> Matrix3 {
    let mut m = [[0.0; 3]; 3];
    for (c, &(i, j)) in SYM_PAIRS.iter().enumerate() {
        m[i][j] = s[c];
        m[j][i] = s[c];
    }
    m
}

fn add(acc: &mut Matrix3, m: &Matrix3) {
    for i in 0..3 {
        for j in 0..3 {
            acc[i][j] += m[i][j];
        }
    }
}

/// `∇u(x)` from the local term plus the principal-value kernel integral.
pub fn gradvel_freespace(
    sigma: &SymTensorField,
    x: [f64; 3],
    params: &StokesParams,
    spec: &PvQuadratureSpec,
) -> Result<Matrix3> {
    Ok(FreeSpaceEvaluator::new(sigma, *params, *spec)?
        .evaluate(x)
        .gradient)
}

/// `u(x)` from the absolutely convergent first-kernel integral.
pub fn velocity_freespace(
    sigma: &SymTensorField,
    x: [f64; 3],
    params: &StokesParams,
    spec: &PvQuadratureSpec,
) -> Result<[f64; 3]> {
    Ok(FreeSpaceEvaluator::new(sigma, *params, *spec)?
        .evaluate(x)
        .velocity)
}
