//! The closed stress equation `dσ/dt = F(σ)` and its time integration.
//!
//! ```text
//! F(σ) = −(u·∇)σ + (∇u)ᵀσ + σ(∇u) − σ/λ + (ν_p/λ)(∇u + ∇uᵀ)
//! ```
//!
//! with `u` the creeping-flow velocity of `σ`. The mollified variant wraps
//! only the advection term, `−J_ε[u·∇(J_ε σ)]`. Quadratic products are
//! formed on the lattice from 2/3-truncated inputs and truncated again
//! afterwards; the linear terms act on the full spectrum.

use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{SymTensorField, TensorField, VectorField, SYM_PAIRS};
use crate::grid::Grid;
use crate::mollifier::Mollifier;
use crate::norms::linf_norm;
use crate::spectral::{forward_transform, gradient_sym_hat, inverse_transform, SpectralField};
use crate::stokes::{solve_stokes_hat, solve_stokes_spectral, StokesParams};

/// Viscosities and relaxation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    nu_s: f64,
    nu_p: f64,
    lambda: f64,
    kelvin_voigt: bool,
}

impl PhysicalParams {
    /// `lambda` may be `f64::INFINITY`, which switches off relaxation.
    ///
    /// In Kelvin-Voigt mode `lambda` must be infinite and `nu_p` is read as
    /// the ratio `ν_p/λ` held fixed in that limit, so the forcing survives.
    pub fn new(nu_s: f64, nu_p: f64, lambda: f64, kelvin_voigt: bool) -> Result<Self> {
        if !(nu_s.is_finite() && nu_s > 0.0) {
            return Err(invalid(
                "nu_s",
                format!("must be positive and finite, got {nu_s}"),
            ));
        }
        if !(nu_p.is_finite() && nu_p >= 0.0) {
            return Err(invalid(
                "nu_p",
                format!("must be nonnegative and finite, got {nu_p}"),
            ));
        }
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(invalid(
                "lambda",
                format!("must be positive or infinite, got {lambda}"),
            ));
        }
        if kelvin_voigt && lambda.is_finite() {
            return Err(invalid(
                "lambda",
                "Kelvin-Voigt mode requires an infinite relaxation time",
            ));
        }
        Ok(Self {
            nu_s,
            nu_p,
            lambda,
            kelvin_voigt,
        })
    }

    pub fn nu_s(&self) -> f64 {
        self.nu_s
    }

    pub fn nu_p(&self) -> f64 {
        self.nu_p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kelvin_voigt(&self) -> bool {
        self.kelvin_voigt
    }

    /// `1/λ`, zero when `λ = ∞`.
    pub fn relaxation_rate(&self) -> f64 {
        if self.lambda.is_finite() {
            1.0 / self.lambda
        } else {
            0.0
        }
    }

    /// Coefficient of `∇u + ∇uᵀ`: `ν_p/λ`, zero when `λ = ∞`, or the
    /// retained ratio in Kelvin-Voigt mode.
    pub fn forcing_coefficient(&self) -> f64 {
        if self.kelvin_voigt {
            self.nu_p
        } else {
            self.nu_p * self.relaxation_rate()
        }
    }

    pub fn stokes(&self) -> StokesParams {
        StokesParams::new(self.nu_s).expect("validated on construction")
    }
}

/// Step-size control and horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeStepperConfig {
    pub dt: f64,
    pub dt_min: f64,
    pub cfl_safety: f64,
    pub adaptive: bool,
    pub t_end: f64,
    /// Mollification radius of the advection term; 0 disables it.
    pub mollify_epsilon: f64,
}

impl TimeStepperConfig {
    /// Fixed steps of `dt` up to `t_end`, unmollified.
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            dt_min: dt,
            cfl_safety: 1.0,
            adaptive: false,
            t_end,
            mollify_epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt) {
            return Err(invalid(
                "dt_min",
                format!("must lie in (0, dt], got {}", self.dt_min),
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(invalid(
                "cfl_safety",
                format!("must lie in (0, 1], got {}", self.cfl_safety),
            ));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid(
                "t_end",
                format!("must be positive, got {}", self.t_end),
            ));
        }
        if !(self.mollify_epsilon.is_finite() && self.mollify_epsilon >= 0.0) {
            return Err(invalid(
                "mollify_epsilon",
                format!("must be nonnegative, got {}", self.mollify_epsilon),
            ));
        }
        Ok(())
    }
}

/// The four contributions to `F̂`, each already in spectral space.
///
/// `F̂ = −advection + stretching + relaxation + forcing`.
pub struct RhsTerms {
    /// `(u·∇)σ`, or `J_ε[u·∇(J_ε σ)]` when mollified.
    pub advection: SpectralField<6>,
    /// `(∇u)ᵀσ + σ∇u`.
    pub stretching: SpectralField<6>,
    /// `−σ/λ`.
    pub relaxation: SpectralField<6>,
    /// `(ν_p/λ)(∇u + ∇uᵀ)`.
    pub forcing: SpectralField<6>,
}

impl RhsTerms {
    pub fn total(&self) -> SpectralField<6> {
        let mut out = self.stretching.clone();
        let parts = [
            (&self.advection, -1.0),
            (&self.relaxation, 1.0),
            (&self.forcing, 1.0),
        ];
        for (part, sign) in parts {
            for (o, v) in out.data_mut().iter_mut().zip(part.data()) {
                *o += sign * v;
            }
        }
        out
    }
}

/// Selects `F` or `F_ε`, and the direction of time.
#[derive(Clone, Debug)]
pub struct Rhs {
    params: PhysicalParams,
    mollifier: Option<Mollifier>,
    sign: f64,
}

impl Rhs {
    /// `epsilon = 0` selects the unmollified right-hand side.
    pub fn new(params: PhysicalParams, grid: &Grid, epsilon: f64) -> Result<Self> {
        let mollifier = if epsilon == 0.0 {
            None
        } else {
            Some(Mollifier::new(grid, epsilon)?)
        };
        Ok(Self {
            params,
            mollifier,
            sign: 1.0,
        })
    }

    /// The same right-hand side with time reversed: `dσ/dt = −F(σ)`.
    pub fn reversed(&self) -> Self {
        Self {
            sign: -self.sign,
            ..self.clone()
        }
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn mollifier(&self) -> Option<&Mollifier> {
        self.mollifier.as_ref()
    }

    /// Term-by-term evaluation at `σ`, always in forward time.
    pub fn terms(&self, sigma: &SymTensorField) -> RhsTerms {
        let grid = sigma.grid();
        let n3 = grid.points();
        let sh = forward_transform(sigma);
        let (uh, gh) = solve_stokes_hat(&sh, &self.params.stokes());

        let mut shm = sh.clone();
        shm.dealias();
        let mut uhm = uh;
        uhm.dealias();
        let mut ghm = gh.clone();
        ghm.dealias();
        let sm = inverse_transform(&shm);
        let um = inverse_transform(&uhm);
        let gm = inverse_transform(&ghm);

        let transported = match &self.mollifier {
            Some(j) => j.apply_hat(&shm),
            None => shm,
        };
        let grad = inverse_transform(&gradient_sym_hat(&transported));
        let mut adv = vec![0.0; 6 * n3];
        for s in 0..6 {
            let out = &mut adv[s * n3..(s + 1) * n3];
            for k in 0..3 {
                let uk = um.component(k);
                let dk = grad.component(6 * k + s);
                for p in 0..n3 {
                    out[p] += uk[p] * dk[p];
                }
            }
        }
        let mut advection = forward_transform(&SymTensorField::from_raw(grid, adv));
        advection.dealias();
        if let Some(j) = &self.mollifier {
            advection = j.apply_hat(&advection);
        }

        let mut stretching = forward_transform(&stretch_product(&sm, &gm));
        stretching.dealias();

        let mut relaxation = sh;
        let rate = self.params.relaxation_rate();
        relaxation.data_mut().iter_mut().for_each(|v| *v *= -rate);

        let coef = self.params.forcing_coefficient();
        let mut forcing = SpectralField::<6>::zeros(grid);
        for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            let (a, b) = (gh.component(3 * i + j), gh.component(3 * j + i));
            let out = forcing.component_mut(s);
            for p in 0..n3 {
                out[p] = (a[p] + b[p]) * coef;
            }
        }

        RhsTerms {
            advection,
            stretching,
            relaxation,
            forcing,
        }
    }

    /// `±F(σ)` in spectral space.
    pub fn eval_hat(&self, sigma: &SymTensorField) -> SpectralField<6> {
        let mut total = self.terms(sigma).total();
        if self.sign < 0.0 {
            total.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
        total
    }

    /// `±F(σ)`.
    pub fn eval(&self, sigma: &SymTensorField) -> SymTensorField {
        inverse_transform(&self.eval_hat(sigma))
    }
}

/// Pointwise `(Gᵀσ + σG + (Gᵀσ + σG)ᵀ)/2`, packed.
fn stretch_product(sigma: &SymTensorField, grad_u: &TensorField) -> SymTensorField {
    let grid = sigma.grid();
    let n3 = grid.points();
    let mut out = vec![0.0; 6 * n3];
    for p in 0..n3 {
        let s = sigma.matrix_at(p);
        let g = grad_u.matrix_at(p);
        let prod = full_stretch(&s, &g);
        for (c, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            out[c * n3 + p] = 0.5 * (prod[i][j] + prod[j][i]);
        }
    }
    SymTensorField::from_raw(grid, out)
}

/// `(Gᵀσ + σG)_ij = Σ_k G_ki σ_kj + σ_ik G_kj`.
fn full_stretch(s: &[[f64; 3]; 3], g: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).map(|k| g[k][i] * s[k][j] + s[i][k] * g[k][j]).sum())
    })
}

/// `F(σ)` without mollification.
pub fn rhs_f(sigma: &SymTensorField, params: &PhysicalParams) -> SymTensorField {
    Rhs::new(*params, sigma.grid(), 0.0)
        .expect("unmollified right-hand side cannot fail")
        .eval(sigma)
}

/// `F_ε(σ)`; `epsilon = 0` reduces to [`rhs_f`].
pub fn rhs_f_mollified(
    sigma: &SymTensorField,
    params: &PhysicalParams,
    epsilon: f64,
) -> Result<SymTensorField> {
    Ok(Rhs::new(*params, sigma.grid(), epsilon)?.eval(sigma))
}

/// An RK4 stage produced a non-finite value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepFailure {
    pub stage: usize,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "non-finite value in RK4 stage {}", self.stage)
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_rk4(
    sigma: &SymTensorField,
    dt: f64,
    rhs: &Rhs,
) -> std::result::Result<SymTensorField, StepFailure> {
    if dt == 0.0 {
        return Ok(sigma.clone());
    }
    let check = |f: SymTensorField, stage| {
        if f.is_finite() {
            Ok(f)
        } else {
            Err(StepFailure { stage })
        }
    };
    let k1 = check(rhs.eval(sigma), 1)?;
    let k2 = check(rhs.eval(&sigma.lincomb(1.0, &k1, 0.5 * dt)), 2)?;
    let k3 = check(rhs.eval(&sigma.lincomb(1.0, &k2, 0.5 * dt)), 3)?;
    let k4 = check(rhs.eval(&sigma.lincomb(1.0, &k3, dt)), 4)?;
    let mut out = sigma.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    check(out, 5)
}

/// `F` on an unconstrained 3×3 tensor, with no symmetrization anywhere.
///
/// Used to observe that `F` maps symmetric tensors to symmetric tensors.
pub fn rhs_full(sigma: &TensorField, rhs: &Rhs) -> TensorField {
    let grid = sigma.grid();
    let n3 = grid.points();
    let params = &rhs.params;
    let sh = forward_transform(sigma);
    let nu = params.nu_s();
    // Stokes with f_j = i k_k σ̂_kj.
    let mut uh = SpectralField::<3>::zeros(grid);
    let mut gh = SpectralField::<9>::zeros(grid);
    for idx in 0..n3 {
        let k = grid.wavevector(idx);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 || grid.on_nyquist_plane(idx) {
            continue;
        }
        let f: [Complex64; 3] = std::array::from_fn(|j| {
            (0..3)
                .map(|a| Complex64::new(0.0, k[a]) * sh.component(3 * a + j)[idx])
                .sum()
        });
        let kf = k[0] * f[0] + k[1] * f[1] + k[2] * f[2];
        for j in 0..3 {
            let u = (f[j] - kf * (k[j] / k2)) / (nu * k2);
            uh.component_mut(j)[idx] = u;
            for i in 0..3 {
                gh.component_mut(3 * i + j)[idx] = Complex64::new(0.0, k[i]) * u;
            }
        }
    }
    let mut shm = sh.clone();
    shm.dealias();
    let mut uhm = uh;
    uhm.dealias();
    let mut ghm = gh.clone();
    ghm.dealias();
    let sm = inverse_transform(&shm);
    let um = inverse_transform(&uhm);
    let gm = inverse_transform(&ghm);
    let transported = match &rhs.mollifier {
        Some(j) => j.apply_hat(&shm),
        None => shm,
    };
    let mut nonlinear = vec![0.0; 9 * n3];
    for axis in 0..3 {
        let mut d = transported.clone();
        d.apply_multiplier(|_, k| Complex64::new(0.0, k[axis]));
        let d = inverse_transform(&d);
        let ua = um.component(axis);
        for c in 0..9 {
            let dc = d.component(c);
            for p in 0..n3 {
                nonlinear[c * n3 + p] -= ua[p] * dc[p];
            }
        }
    }
    let mut adv = forward_transform(&TensorField::from_raw(grid, nonlinear));
    adv.dealias();
    if let Some(j) = &rhs.mollifier {
        adv = j.apply_hat(&adv);
    }
    let mut stretch = vec![0.0; 9 * n3];
    for p in 0..n3 {
        let prod = full_stretch(&sm.matrix_at(p), &gm.matrix_at(p));
        for c in 0..9 {
            stretch[c * n3 + p] = prod[c / 3][c % 3];
        }
    }
    let mut st = forward_transform(&TensorField::from_raw(grid, stretch));
    st.dealias();
    let rate = params.relaxation_rate();
    let coef = params.forcing_coefficient();
    let mut total = SpectralField::<9>::zeros(grid);
    for c in 0..9 {
        let (i, j) = (c / 3, c % 3);
        for p in 0..n3 {
            total.component_mut(c)[p] = rhs.sign
                * (adv.component(c)[p] + st.component(c)[p] - rate * sh.component(c)[p]
                    + coef * (gh.component(3 * i + j)[p] + gh.component(3 * j + i)[p]));
        }
    }
    inverse_transform(&total)
}

/// RK4 on an unconstrained 3×3 tensor, with no symmetrization.
pub fn step_rk4_full(sigma: &TensorField, dt: f64, rhs: &Rhs) -> TensorField {
    let k1 = rhs_full(sigma, rhs);
    let k2 = rhs_full(&sigma.lincomb(1.0, &k1, 0.5 * dt), rhs);
    let k3 = rhs_full(&sigma.lincomb(1.0, &k2, 0.5 * dt), rhs);
    let k4 = rhs_full(&sigma.lincomb(1.0, &k3, dt), rhs);
    let mut out = sigma.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    out
}

/// How an integration ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowupSuspected,
    StepFailed,
}

/// What the monitor sees after each accepted step (and once at the start).
pub struct StepInfo<'a> {
    pub step: usize,
    pub t: f64,
    /// Step that produced this state; 0 for the initial state.
    pub dt: f64,
    pub sigma: &'a SymTensorField,
    pub velocity: &'a VectorField,
    pub gradient: &'a TensorField,
}

/// Final state of an integration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub state: SymTensorField,
    pub status: RunStatus,
    pub t_reached: f64,
    pub steps: usize,
    /// Present when the run ended with [`RunStatus::StepFailed`].
    pub failure: Option<StepFailure>,
}

/// Integrates `dσ/dt = F(σ)` (or `F_ε`) from `t = 0` to `ts.t_end`.
pub fn integrate(
    sigma0: &SymTensorField,
    params: &PhysicalParams,
    ts: &TimeStepperConfig,
    monitor: impl FnMut(&StepInfo) -> ControlFlow<RunStatus>,
) -> Result<Trajectory> {
    ts.validate()?;
    let rhs = Rhs::new(*params, sigma0.grid(), ts.mollify_epsilon)?;
    integrate_with(sigma0, 0.0, &rhs, ts, monitor)
}

/// Integrates from `t0` to `ts.t_end` with an explicit right-hand side.
///
/// The monitor is called on the initial state and after every step; it may
/// stop the run by returning `Break(status)`. Fixed-step times are computed
/// as `t0 + k·dt`, so a run resumed at a step boundary reproduces the
/// uninterrupted one.
pub fn integrate_with(
    sigma0: &SymTensorField,
    t0: f64,
    rhs: &Rhs,
    ts: &TimeStepperConfig,
    mut monitor: impl FnMut(&StepInfo) -> ControlFlow<RunStatus>,
) -> Result<Trajectory> {
    ts.validate()?;
    if !sigma0.is_finite() {
        return Err(crate::Error::NonFinite);
    }
    let grid = sigma0.grid().clone();
    let stokes = rhs.params.stokes();
    let mut state = sigma0.clone();
    let (mut u, mut g) = solve_stokes_spectral(&state, &stokes);
    let mut t = t0;
    let mut steps = 0usize;
    let finish = |state, status, t, steps, failure| Trajectory {
        state,
        status,
        t_reached: t,
        steps,
        failure,
    };
    let info = StepInfo {
        step: 0,
        t,
        dt: 0.0,
        sigma: &state,
        velocity: &u,
        gradient: &g,
    };
    if let ControlFlow::Break(status) = monitor(&info) {
        return Ok(finish(state, status, t, steps, None));
    }
    let tol = 1e-12 * ts.t_end.abs().max(1.0);
    let mut fixed_k = 0u64;
    while t < ts.t_end - tol {
        let mut dt = if ts.adaptive {
            let (umax, gmax) = (linf_norm(&u), linf_norm(&g));
            let mut limit = f64::INFINITY;
            if umax > 0.0 {
                limit = limit.min(grid.spacing() / umax);
            }
            if gmax > 0.0 {
                limit = limit.min(1.0 / gmax);
            }
            (ts.cfl_safety * limit).clamp(ts.dt_min, ts.dt)
        } else {
            ts.dt
        };
        let mut next_t = if ts.adaptive {
            t + dt
        } else {
            t0 + (fixed_k + 1) as f64 * ts.dt
        };
        if next_t > ts.t_end - tol {
            next_t = ts.t_end;
        }
        if !ts.adaptive || next_t == ts.t_end {
            dt = next_t - t;
        }
        match step_rk4(&state, dt, rhs) {
            Ok(next) => state = next,
            Err(failure) => {
                return Ok(finish(
                    state,
                    RunStatus::StepFailed,
                    t,
                    steps,
                    Some(failure),
                ))
            }
        }
        t = next_t;
        fixed_k += 1;
        steps += 1;
        (u, g) = solve_stokes_spectral(&state, &stokes);
        let info = StepInfo {
            step: steps,
            t,
            dt,
            sigma: &state,
            velocity: &u,
            gradient: &g,
        };
        if let ControlFlow::Break(status) = monitor(&info) {
            return Ok(finish(state, status, t, steps, None));
        }
    }
    Ok(finish(state, RunStatus::Completed, t, steps, None))
}
