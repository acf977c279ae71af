//! Run diagnostics: norms, the time integrals of the breakdown criterion,
//! the energy budget, the a priori bounds and blow-up classification.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evolution::{step_rk4, PhysicalParams, Rhs};
use crate::field::{Field, SymTensorField, TensorField};
use crate::norms::{hm_norm_hat, l2_norm, linf_norm, lp_norm, sobolev_weights, SobolevIndex};
use crate::spectral::{
    derivative_symbol, forward_transform, gradient_sym_hat, inverse_transform, MultiIndex,
    SpectralField,
};

/// Column names of the diagnostics CSV, in order.
pub const CSV_HEADER: [&str; 10] = [
    "t",
    "linf_sigma",
    "linf_gradu",
    "h0",
    "hm",
    "l4_grad_sigma",
    "bkm_integral",
    "combined_integral",
    "dt_used",
    "energy_residual",
];

/// One diagnostics sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `‖σ‖_∞`.
    pub linf_sigma: f64,
    /// `‖∇u‖_∞`.
    pub linf_gradu: f64,
    /// `‖σ‖₀`.
    pub h0: f64,
    /// `‖σ‖_m`.
    pub hm: f64,
    /// `‖∇σ‖₄`.
    pub l4_grad_sigma: f64,
    /// `N(t) = ∫₀ᵗ ‖σ‖_∞ ds` by the trapezoid rule.
    pub bkm_integral: f64,
    /// `M(t) = ∫₀ᵗ (1 + ‖σ‖_∞ + ‖∇u‖_∞) ds` by the trapezoid rule.
    pub combined_integral: f64,
    /// Time since the previous record; 0 for the first.
    pub dt_used: f64,
    /// Energy-budget residual for `α = 0`; NaN when not measured.
    pub energy_residual: f64,
}

impl DiagnosticsRecord {
    pub fn csv_header() -> String {
        CSV_HEADER.join(",")
    }

    /// Shortest round-trip representation of every value.
    pub fn to_csv_row(&self) -> String {
        self.values().map(|v| format!("{v:e}")).join(",")
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let vals: Vec<f64> = row
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid("diagnostics row", format!("{e}: {row:?}")))?;
        let v: [f64; 10] = vals.try_into().map_err(|v: Vec<f64>| {
            invalid(
                "diagnostics row",
                format!("expected 10 columns, found {}", v.len()),
            )
        })?;
        Ok(Self {
            t: v[0],
            linf_sigma: v[1],
            linf_gradu: v[2],
            h0: v[3],
            hm: v[4],
            l4_grad_sigma: v[5],
            bkm_integral: v[6],
            combined_integral: v[7],
            dt_used: v[8],
            energy_residual: v[9],
        })
    }

    fn values(&self) -> [f64; 10] {
        [
            self.t,
            self.linf_sigma,
            self.linf_gradu,
            self.h0,
            self.hm,
            self.l4_grad_sigma,
            self.bkm_integral,
            self.combined_integral,
            self.dt_used,
            self.energy_residual,
        ]
    }

    pub fn with_energy_residual(mut self, residual: f64) -> Self {
        self.energy_residual = residual;
        self
    }
}

/// `‖∇σ‖₄` with the pointwise Frobenius norm over all `∂_k σ_ij`.
pub fn l4_grad_norm(sigma: &SymTensorField) -> f64 {
    let grad: Field<18> = inverse_transform(&gradient_sym_hat(&forward_transform(sigma)));
    lp_norm(&grad, 4.0).expect("exponent 4 is admissible")
}

/// Norms at time `t`, with the time integrals advanced from `previous`.
pub fn compute_diagnostics(
    sigma: &SymTensorField,
    grad_u: &TensorField,
    m: SobolevIndex,
    t: f64,
    previous: Option<&DiagnosticsRecord>,
) -> DiagnosticsRecord {
    let sh = forward_transform(sigma);
    let linf_sigma = linf_norm(sigma);
    let linf_gradu = linf_norm(grad_u);
    let grad: Field<18> = inverse_transform(&gradient_sym_hat(&sh));
    let mut rec = DiagnosticsRecord {
        t,
        linf_sigma,
        linf_gradu,
        h0: l2_norm(sigma),
        hm: hm_norm_hat(&sh, m),
        l4_grad_sigma: lp_norm(&grad, 4.0).expect("exponent 4 is admissible"),
        bkm_integral: 0.0,
        combined_integral: 0.0,
        dt_used: 0.0,
        energy_residual: f64::NAN,
    };
    if let Some(p) = previous {
        let dt = t - p.t;
        rec.dt_used = dt;
        rec.bkm_integral = p.bkm_integral + 0.5 * dt * (p.linf_sigma + linf_sigma);
        rec.combined_integral = p.combined_integral
            + 0.5 * dt * (2.0 + p.linf_sigma + linf_sigma + p.linf_gradu + linf_gradu);
    }
    rec
}

/// Energy constants `c₁, c₂` of the `H^m` inequality
/// `d‖σ‖_m/dt + ‖σ‖_m/λ ≤ c₁ ν_p/(λν_s) ‖σ‖_m + (c₂/ν_s) ‖σ‖_m²`.
///
/// `c₃` and `c₄` are always derived from these and the physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExistenceBoundParams {
    c1: f64,
    c2: f64,
}

impl ExistenceBoundParams {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1.is_finite() && c1 >= 0.0) {
            return Err(invalid("c1", format!("must be nonnegative, got {c1}")));
        }
        if !(c2.is_finite() && c2 >= 0.0) {
            return Err(invalid("c2", format!("must be nonnegative, got {c2}")));
        }
        Ok(Self { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `λ⁻¹(c₁ν_p/ν_s − 1)`; in Kelvin-Voigt mode `ν_p/λ` is the retained ratio.
    pub fn c3(&self, params: &PhysicalParams) -> f64 {
        self.c1 * params.forcing_coefficient() / params.nu_s() - params.relaxation_rate()
    }

    /// `c₂/ν_s`.
    pub fn c4(&self, params: &PhysicalParams) -> f64 {
        self.c2 / params.nu_s()
    }

    /// `K(y₀, T) = c₃e^{c₃T} y₀ / (c₃ + c₄(1 − e^{c₃T}) y₀)`, the common
    /// bound on `‖σ‖_m` up to time `T`; infinite past the existence time.
    pub fn uniform_bound(&self, params: &PhysicalParams, y0: f64, t: f64) -> f64 {
        let (c3, c4) = (self.c3(params), self.c4(params));
        // (e^{c₃T} − 1)/c₃, continuous at c₃ = 0.
        let growth = if c3 == 0.0 { t } else { (c3 * t).exp_m1() / c3 };
        let denom = 1.0 - c4 * y0 * growth;
        if denom <= 0.0 {
            f64::INFINITY
        } else {
            y0 * (c3 * t).exp() / denom
        }
    }
}

/// Uniform existence time `(1/|c₃|) log(1 + |c₃|/(c₄‖σ₀‖_m))`.
///
/// Infinite in the small-data regime `c₃ < 0`, `‖σ₀‖_m ≤ |c₃|/c₄`, and when
/// `c₄ = 0`. At `c₃ = 0` the limit `1/(c₄‖σ₀‖_m)` is returned.
pub fn existence_time_bound(
    norm_sigma0_m: f64,
    params: &PhysicalParams,
    c: &ExistenceBoundParams,
) -> Result<f64> {
    if !(norm_sigma0_m.is_finite() && norm_sigma0_m > 0.0) {
        return Err(invalid(
            "norm_sigma0_m",
            format!("must be positive, got {norm_sigma0_m}"),
        ));
    }
    let (c3, c4) = (c.c3(params), c.c4(params));
    if c4 == 0.0 || (c3 < 0.0 && norm_sigma0_m <= c3.abs() / c4) {
        return Ok(f64::INFINITY);
    }
    if c3 == 0.0 {
        return Ok(1.0 / (c4 * norm_sigma0_m));
    }
    let a = c3.abs();
    Ok((a / (c4 * norm_sigma0_m)).ln_1p() / a)
}

/// `exp[C·M(t)] ‖σ₀‖_m` at the last record (`‖σ₀‖_m` when there is none).
pub fn apriori_bound_rhs(records: &[DiagnosticsRecord], norm_sigma0_m: f64, c: f64) -> f64 {
    records
        .last()
        .map_or(norm_sigma0_m, |r| apriori_bound(r, norm_sigma0_m, c))
}

/// `exp[C·M(t)] y₀` at one record; also the `‖∇σ‖₄` bound with `y₀ = ‖∇σ₀‖₄`.
pub fn apriori_bound(record: &DiagnosticsRecord, y0: f64, c: f64) -> f64 {
    (c * record.combined_integral).exp() * y0
}

/// `exp[C·exp(C·N(t))] ‖σ₀‖_m`, the bound driven by `∫‖σ‖_∞` alone.
pub fn doubly_exponential_bound(record: &DiagnosticsRecord, norm_sigma0_m: f64, c: f64) -> f64 {
    (c * (c * record.bkm_integral).exp()).exp() * norm_sigma0_m
}

/// Smallest `C ≥ 0` with `y(t) ≤ exp[C·M(t)] y₀` at every record, where
/// `y` is read by `norm` (e.g. `hm` or `l4_grad_sigma`).
pub fn calibrate_apriori_constant(
    records: &[DiagnosticsRecord],
    y0: f64,
    norm: impl Fn(&DiagnosticsRecord) -> f64,
) -> f64 {
    if y0 <= 0.0 {
        return 0.0;
    }
    records
        .iter()
        .filter(|r| r.combined_integral > 0.0)
        .map(|r| (norm(r) / y0).ln() / r.combined_integral)
        .fold(0.0, f64::max)
}

/// Records at which `y(t) > exp[C·M(t)] y₀ (1 + rel_tol)`.
pub fn apriori_violations(
    records: &[DiagnosticsRecord],
    y0: f64,
    c: f64,
    rel_tol: f64,
    norm: impl Fn(&DiagnosticsRecord) -> f64,
) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| norm(r) > apriori_bound(r, y0, c) * (1.0 + rel_tol))
        .map(|(i, _)| i)
        .collect()
}

/// `log₊x = max(log x, 0)`.
pub fn log_plus(x: f64) -> f64 {
    x.ln().max(0.0)
}

/// Radii splitting the singular integral for `∇u` into outer, middle and inner parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRadii {
    pub outer: f64,
    pub inner: f64,
    /// `‖σ‖₀R^{-3/2} + ‖∇σ‖₄ε^{1/4} + ‖σ‖_∞ log(R/ε)` at these radii.
    pub value: f64,
}

/// The logarithmic bound on `‖∇u‖_∞` together with its splitting radii.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinfBound {
    /// `C‖σ‖_∞(1 + log₊‖σ‖₀ + log₊‖∇σ‖₄)`.
    pub bound: f64,
    /// `R = ((3/2)‖σ‖₀/‖σ‖_∞)^{2/3}`.
    pub r_opt: f64,
    /// `ε = (4‖σ‖_∞/‖∇σ‖₄)^{1/4}`, as printed.
    pub eps_opt: f64,
    /// The split functional at the printed radii.
    pub printed: SplitRadii,
    /// The split functional minimized numerically over `R` and `ε`.
    pub minimized: SplitRadii,
}

/// `‖σ‖₀R^{-3/2} + ‖∇σ‖₄ε^{1/4} + ‖σ‖_∞ log(R/ε)`.
pub fn split_functional(
    h0: f64,
    linf_sigma: f64,
    l4_grad_sigma: f64,
    outer: f64,
    inner: f64,
) -> f64 {
    h0 * outer.powf(-1.5) + l4_grad_sigma * inner.powf(0.25) + linf_sigma * (outer / inner).ln()
}

/// Golden-section minimization of a unimodal function of `log x`.
fn minimize_log(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fa, mut fb) = (f(a.exp()), f(b.exp()));
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a.exp());
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b.exp());
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub fn loglinf_gradvel_bound(
    h0: f64,
    linf_sigma: f64,
    l4_grad_sigma: f64,
    c: f64,
) -> Result<LogLinfBound> {
    for (name, v) in [
        ("h0", h0),
        ("linf_sigma", linf_sigma),
        ("l4_grad_sigma", l4_grad_sigma),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    let bound = c * linf_sigma * (1.0 + log_plus(h0) + log_plus(l4_grad_sigma));
    let r_opt = (1.5 * h0 / linf_sigma).powf(2.0 / 3.0);
    let eps_opt = (4.0 * linf_sigma / l4_grad_sigma).powf(0.25);
    let printed = SplitRadii {
        outer: r_opt,
        inner: eps_opt,
        value: split_functional(h0, linf_sigma, l4_grad_sigma, r_opt, eps_opt),
    };
    // The functional separates in R and ε.
    let outer = minimize_log(|r| h0 * r.powf(-1.5) + linf_sigma * r.ln(), -60.0, 60.0);
    let inner = minimize_log(
        |e| l4_grad_sigma * e.powf(0.25) - linf_sigma * e.ln(),
        -200.0,
        200.0,
    );
    let minimized = SplitRadii {
        outer,
        inner,
        value: split_functional(h0, linf_sigma, l4_grad_sigma, outer, inner),
    };
    Ok(LogLinfBound {
        bound,
        r_opt,
        eps_opt,
        printed,
        minimized,
    })
}

/// The inner products of the `D^α` energy equation at one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    /// `−⟨D^ασ, D^α(advection)⟩`.
    pub i1: f64,
    /// `⟨D^ασ, D^α((∇u)ᵀσ + σ∇u)⟩`.
    pub i2: f64,
    /// `(ν_p/λ)⟨D^ασ, D^α(∇u + ∇uᵀ)⟩`.
    pub i3: f64,
    /// `‖D^ασ‖₀²/λ`.
    pub relaxation: f64,
    /// Central difference of `½‖D^ασ‖₀²` over `±dt`.
    pub rate_of_change: f64,
    /// `|rate_of_change + relaxation − (I₁ + I₂ + I₃)|`.
    pub residual: f64,
}

impl EnergyBudget {
    /// Largest magnitude among the terms, for relative comparisons.
    pub fn scale(&self) -> f64 {
        [
            self.i1,
            self.i2,
            self.i3,
            self.relaxation,
            self.rate_of_change,
        ]
        .iter()
        .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// `Σ_k w(k) Re(â·b̄)` times the volume, with Frobenius component weights.
fn weighted_inner(a: &SpectralField<6>, b: &SpectralField<6>, weight: &[f64]) -> f64 {
    let mut total = 0.0;
    for c in 0..6 {
        let s: f64 = a
            .component(c)
            .iter()
            .zip(b.component(c))
            .zip(weight)
            .map(|((x, y), w)| w * (x * y.conj()).re)
            .sum();
        total += SymTensorField::component_weight(c) * s;
    }
    total * a.grid().volume()
}

fn derivative_weight(grid: &crate::Grid, alpha: &MultiIndex) -> Vec<f64> {
    (0..grid.points())
        .map(|idx| derivative_symbol(grid, alpha, idx).norm_sqr())
        .collect()
}

fn budget_terms(sigma: &SymTensorField, rhs: &Rhs, weight: &[f64]) -> (f64, f64, f64, f64) {
    let sh = forward_transform(sigma);
    let terms = rhs.terms(sigma);
    let i1 = -weighted_inner(&terms.advection, &sh, weight);
    let i2 = weighted_inner(&terms.stretching, &sh, weight);
    let i3 = weighted_inner(&terms.forcing, &sh, weight);
    let relaxation = -weighted_inner(&terms.relaxation, &sh, weight);
    (i1, i2, i3, relaxation)
}

/// The `D^α` energy equation evaluated at `σ`, with its time derivative
/// measured by RK4 steps of `±dt`.
pub fn energy_budget(
    sigma: &SymTensorField,
    rhs: &Rhs,
    alpha: &MultiIndex,
    dt: f64,
) -> Result<EnergyBudget> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let weight = derivative_weight(sigma.grid(), alpha);
    let (i1, i2, i3, relaxation) = budget_terms(sigma, rhs, &weight);
    let energy = |s: &SymTensorField| {
        let sh = forward_transform(s);
        0.5 * weighted_inner(&sh, &sh, &weight)
    };
    let fail = |f: crate::evolution::StepFailure| crate::Error::Integration {
        t: 0.0,
        reason: f.to_string(),
    };
    let ahead = step_rk4(sigma, dt, rhs).map_err(fail)?;
    let behind = step_rk4(sigma, dt, &rhs.reversed()).map_err(fail)?;
    let rate_of_change = (energy(&ahead) - energy(&behind)) / (2.0 * dt);
    let residual = (rate_of_change + relaxation - (i1 + i2 + i3)).abs();
    Ok(EnergyBudget {
        i1,
        i2,
        i3,
        relaxation,
        rate_of_change,
        residual,
    })
}

/// Fits `c₁, c₂` as the smallest constants consistent with the summed
/// `|α| ≤ m` energy terms at every given state.
///
/// `c₁` bounds the forcing share `Σ I₃ ≤ c₁ (ν_p/λν_s)‖σ‖_m²`, `c₂` the
/// quadratic share `Σ (I₁+I₂) ≤ (c₂/ν_s)‖σ‖_m³`. Both are clamped at 0.
pub fn calibrate_energy_constants<'a>(
    states: impl IntoIterator<Item = &'a SymTensorField>,
    rhs: &Rhs,
    m: SobolevIndex,
) -> ExistenceBoundParams {
    let params = rhs.params();
    let (mut c1, mut c2) = (0.0f64, 0.0f64);
    let mut weight: Option<Vec<f64>> = None;
    for s in states {
        let w = weight.get_or_insert_with(|| sobolev_weights(s.grid(), m.0));
        let sh = forward_transform(s);
        let y2 = weighted_inner(&sh, &sh, w);
        if y2 <= 0.0 {
            continue;
        }
        let (i1, i2, i3, _) = budget_terms(s, rhs, w);
        let coef = params.forcing_coefficient();
        if coef > 0.0 {
            c1 = c1.max(params.nu_s() * i3 / (coef * y2));
        }
        c2 = c2.max(params.nu_s() * (i1 + i2) / y2.powf(1.5));
    }
    ExistenceBoundParams::new(c1, c2).expect("clamped nonnegative")
}

/// Blow-up thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupThresholds {
    pub linf_cap: f64,
    pub dt_floor: f64,
    pub integral_cap: f64,
}

impl Default for BlowupThresholds {
    fn default() -> Self {
        Self {
            linf_cap: 1e6,
            dt_floor: 1e-8,
            integral_cap: 1e3,
        }
    }
}

/// Which threshold fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupReason {
    LinfCap,
    DtFloor,
    IntegralCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    BlowupSuspected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub status: Health,
    pub reason: Option<BlowupReason>,
    /// Slope of `∫‖σ‖_∞` over the trailing window.
    pub growth_rate: f64,
    /// Ratio of the trailing-window slope to the slope over the window before it.
    pub growth_acceleration: f64,
}

/// Number of records in the trailing window of [`detect_blowup`].
pub const TRAILING_WINDOW: usize = 8;

/// Classifies the run from its records.
///
/// The step-size floor counts as hit only when the two most recent steps
/// are both at or below it, so a single short step that lands on the end
/// time does not trigger it.
pub fn detect_blowup(records: &[DiagnosticsRecord], thresholds: &BlowupThresholds) -> BlowupReport {
    let slope = |w: &[DiagnosticsRecord]| match (w.first(), w.last()) {
        (Some(a), Some(b)) if b.t > a.t => (b.bkm_integral - a.bkm_integral) / (b.t - a.t),
        _ => 0.0,
    };
    let n = records.len();
    let recent = &records[n.saturating_sub(TRAILING_WINDOW + 1)..];
    let before =
        &records[n.saturating_sub(2 * TRAILING_WINDOW + 1)..n.saturating_sub(TRAILING_WINDOW)];
    let growth_rate = slope(recent);
    let prior = slope(before);
    let growth_acceleration = if prior > 0.0 {
        growth_rate / prior
    } else {
        1.0
    };

    let reason = match records.last() {
        None => None,
        Some(last) if !(last.linf_sigma <= thresholds.linf_cap) => Some(BlowupReason::LinfCap),
        Some(last) if !(last.bkm_integral <= thresholds.integral_cap) => {
            Some(BlowupReason::IntegralCap)
        }
        Some(_) => {
            let floored =
                |r: &DiagnosticsRecord| r.dt_used > 0.0 && r.dt_used <= thresholds.dt_floor;
            (n >= 2 && records[n - 2..].iter().all(floored)).then_some(BlowupReason::DtFloor)
        }
    };
    BlowupReport {
        status: if reason.is_some() {
            Health::BlowupSuspected
        } else {
            Health::Healthy
        },
        reason,
        growth_rate,
        growth_acceleration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{integrate, TimeStepperConfig};
    use crate::grid::Grid;
    use crate::stokes::solve_stokes_spectral;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::ops::ControlFlow;

    fn unit() -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap()
    }

    fn smooth_sym(grid: &Grid, seed: u64, amp: f64) -> SymTensorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(usize, [f64; 3], f64, f64)> = (0..18)
            .map(|_| {
                let k = [0, 1, 2].map(|_| rng.random_range(-2i32..=2) as f64);
                (
                    rng.random_range(0..6),
                    k,
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..6.3),
                )
            })
            .collect();
        SymTensorField::from_fn(grid, |x| {
            let mut v = [0.0; 6];
            for (c, k, a, ph) in &modes {
                v[*c] += amp * a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).cos();
            }
            v
        })
    }

    fn record(
        t: f64,
        linf: f64,
        gradu: f64,
        prev: Option<&DiagnosticsRecord>,
    ) -> DiagnosticsRecord {
        let mut r = DiagnosticsRecord {
            t,
            linf_sigma: linf,
            linf_gradu: gradu,
            h0: linf,
            hm: linf,
            l4_grad_sigma: linf,
            bkm_integral: 0.0,
            combined_integral: 0.0,
            dt_used: 0.0,
            energy_residual: 0.0,
        };
        if let Some(p) = prev {
            r.dt_used = t - p.t;
            r.bkm_integral = p.bkm_integral + 0.5 * r.dt_used * (p.linf_sigma + linf);
            r.combined_integral = p.combined_integral
                + 0.5 * r.dt_used * (2.0 + p.linf_sigma + linf + p.linf_gradu + gradu);
        }
        r
    }

    fn series(ts: &[f64], linf: impl Fn(f64) -> f64) -> Vec<DiagnosticsRecord> {
        let mut out: Vec<DiagnosticsRecord> = Vec::new();
        for &t in ts {
            let r = record(t, linf(t), 0.0, out.last());
            out.push(r);
        }
        out
    }

    #[test]
    fn zero_field_has_zero_diagnostics() {
        let g = Grid::periodic_2pi(8).unwrap();
        let z = SymTensorField::zeros(&g);
        let a = compute_diagnostics(&z, &TensorField::zeros(&g), SobolevIndex(3), 0.0, None);
        let b = compute_diagnostics(&z, &TensorField::zeros(&g), SobolevIndex(3), 0.5, Some(&a));
        for r in [a, b] {
            assert_eq!(
                [
                    r.linf_sigma,
                    r.linf_gradu,
                    r.h0,
                    r.hm,
                    r.l4_grad_sigma,
                    r.bkm_integral
                ],
                [0.0; 6]
            );
        }
        assert_eq!(b.combined_integral, 0.5);
        assert_eq!(b.dt_used, 0.5);
    }

    #[test]
    fn constant_linf_integrates_exactly() {
        let ts: Vec<f64> = (0..=7).map(|i| 0.3 * i as f64).collect();
        let recs = series(&ts, |_| 2.5);
        assert!((recs.last().unwrap().bkm_integral - 2.5 * 2.1).abs() < 1e-14);
    }

    #[test]
    fn relaxation_run_integral_matches_exponential() {
        let g = Grid::periodic_2pi(8).unwrap();
        let s0 = SymTensorField::from_fn(&g, |_| [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let err = |dt: f64| {
            let mut recs: Vec<DiagnosticsRecord> = Vec::new();
            integrate(&s0, &unit(), &TimeStepperConfig::fixed(dt, 1.0), |info| {
                let r = compute_diagnostics(
                    info.sigma,
                    info.gradient,
                    SobolevIndex(3),
                    info.t,
                    recs.last(),
                );
                recs.push(r);
                ControlFlow::Continue(())
            })
            .unwrap();
            (recs.last().unwrap().bkm_integral - (1.0 - (-1.0f64).exp())).abs()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 < 1e-3, "{e1}");
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{}", e1 / e2);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let r = DiagnosticsRecord {
            t: 0.1 + 0.2,
            linf_sigma: 1.0 / 3.0,
            linf_gradu: 1e-300,
            h0: 12345.678,
            hm: f64::MAX,
            l4_grad_sigma: 0.0,
            bkm_integral: 2.0f64.sqrt(),
            combined_integral: 7.0,
            dt_used: 1e-3,
            energy_residual: f64::NAN,
        };
        assert_eq!(DiagnosticsRecord::csv_header().split(',').count(), 10);
        let back = DiagnosticsRecord::from_csv_row(&r.to_csv_row()).unwrap();
        assert_eq!(back.values()[..9], r.values()[..9]);
        assert!(back.energy_residual.is_nan());
        assert!(DiagnosticsRecord::from_csv_row("1,2,3").is_err());
    }

    #[test]
    fn existence_bound_limits() {
        let p = unit();
        // c₃ = 0 with c₁ = c₂ = 1 and unit parameters.
        let c = ExistenceBoundParams::new(1.0, 1.0).unwrap();
        assert_eq!(c.c3(&p), 0.0);
        assert!((existence_time_bound(0.5, &p, &c).unwrap() - 2.0).abs() < 1e-15);
        // Approaching c₃ = 0 the printed formula tends to the limit.
        let near = ExistenceBoundParams::new(1.0 + 1e-9, 1.0).unwrap();
        assert!((existence_time_bound(0.5, &p, &near).unwrap() - 2.0).abs() < 1e-6);
        // Small data with c₃ < 0: unbounded.
        let small = PhysicalParams::new(1.0, 0.01, 1.0, false).unwrap();
        assert_eq!(
            existence_time_bound(1e-6, &small, &c).unwrap(),
            f64::INFINITY
        );
        assert!(existence_time_bound(100.0, &small, &c).unwrap().is_finite());
        // Infinite relaxation time: ν_s/(c₂‖σ₀‖_m).
        let inf = PhysicalParams::new(2.0, 1.0, f64::INFINITY, false).unwrap();
        let c2 = ExistenceBoundParams::new(0.7, 4.0).unwrap();
        assert!(
            (existence_time_bound(0.25, &inf, &c2).unwrap() - 2.0 / (4.0 * 0.25)).abs() < 1e-15
        );
        assert!(existence_time_bound(0.0, &p, &c).is_err());
        assert!(ExistenceBoundParams::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_bound_solves_the_comparison_ode() {
        // y' = c₃y + c₄y², integrated by RK4, against K(y₀, T).
        let p = PhysicalParams::new(1.0, 2.0, 1.5, false).unwrap();
        let c = ExistenceBoundParams::new(1.2, 0.8).unwrap();
        let (c3, c4) = (c.c3(&p), c.c4(&p));
        let f = |y: f64| c3 * y + c4 * y * y;
        let (mut y, dt) = (0.3, 1e-4);
        for _ in 0..5000 {
            let k1 = f(y);
            let k2 = f(y + 0.5 * dt * k1);
            let k3 = f(y + 0.5 * dt * k2);
            let k4 = f(y + dt * k3);
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((c.uniform_bound(&p, 0.3, 0.5) - y).abs() < 1e-10 * y);
        let tb = existence_time_bound(0.3, &p, &c).unwrap();
        assert!(c.uniform_bound(&p, 0.3, 0.999 * tb).is_finite());
        assert_eq!(c.uniform_bound(&p, 0.3, 1.001 * tb), f64::INFINITY);
    }

    #[test]
    fn apriori_bound_forms() {
        assert_eq!(apriori_bound_rhs(&[], 2.0, 5.0), 2.0);
        let recs = series(&[0.0, 0.5, 1.0], |_| 0.0);
        // Integrand is the constant 1.
        let b = apriori_bound_rhs(&recs, 2.0, 0.3);
        assert!((b - 2.0 * 0.3f64.exp()).abs() < 1e-14);
        let d = doubly_exponential_bound(&recs[0], 2.0, 0.3);
        assert!((d - 2.0 * 0.3f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn calibrated_constant_is_tight() {
        let ts: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
        let mut recs = series(&ts, |_| 1.0);
        for (i, r) in recs.iter_mut().enumerate() {
            r.hm = (0.2 * i as f64).exp();
        }
        let c = calibrate_apriori_constant(&recs, 1.0, |r| r.hm);
        assert!(apriori_violations(&recs, 1.0, c, 1e-12, |r| r.hm).is_empty());
        assert!(!apriori_violations(&recs, 1.0, 0.9 * c, 0.0, |r| r.hm).is_empty());
    }

    #[test]
    fn loglinf_trivial_values() {
        let b = loglinf_gradvel_bound(1.0, 2.0, 1.0, 3.0).unwrap();
        assert_eq!(b.bound, 6.0);
        let e = std::f64::consts::E;
        let b = loglinf_gradvel_bound(e, 2.0, e, 3.0).unwrap();
        assert!((b.bound - 18.0).abs() < 1e-14);
        assert!(loglinf_gradvel_bound(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn minimized_radii_against_stationarity() {
        let (h0, linf, l4) = (3.0, 0.7, 5.0);
        let b = loglinf_gradvel_bound(h0, linf, l4, 1.0).unwrap();
        // ∂_R: R^{3/2} = (3/2)h0/linf, which is the printed outer radius.
        assert!(
            (b.minimized.outer - b.r_opt).abs() < 1e-6 * b.r_opt,
            "{b:?}"
        );
        // ∂_ε: ε^{1/4} = 4 linf/l4, i.e. ε = (4linf/l4)⁴, not the printed fourth root.
        let eps_star = (4.0 * linf / l4).powi(4);
        assert!(
            (b.minimized.inner - eps_star).abs() < 1e-6 * eps_star,
            "{b:?}"
        );
        assert!(b.minimized.value <= b.printed.value);
    }

    #[test]
    fn blowup_thresholds() {
        let t = BlowupThresholds {
            linf_cap: 10.0,
            dt_floor: 1e-4,
            integral_cap: 100.0,
        };
        let decay = series(&[0.0, 0.1, 0.2, 0.3], |t| (-t).exp());
        assert_eq!(detect_blowup(&decay, &t).status, Health::Healthy);
        let spike = series(&[0.0, 0.1], |t| if t > 0.0 { 20.0 } else { 1.0 });
        assert_eq!(
            detect_blowup(&spike, &t).reason,
            Some(BlowupReason::LinfCap)
        );
        // One short landing step is fine; two in a row are not.
        let landing = series(&[0.0, 0.1, 0.1 + 1e-6], |_| 1.0);
        assert_eq!(detect_blowup(&landing, &t).status, Health::Healthy);
        let pinned = series(&[0.0, 0.1, 0.1 + 1e-6, 0.1 + 2e-6], |_| 1.0);
        assert_eq!(
            detect_blowup(&pinned, &t).reason,
            Some(BlowupReason::DtFloor)
        );
    }

    #[test]
    fn singular_profile_is_flagged_before_singularity() {
        let t_star = 1.0;
        let ts: Vec<f64> = (0..100_000).map(|i| i as f64 * 1e-5).collect();
        let recs = series(&ts, |t| 1.0 / (t_star - t));
        let thresholds = BlowupThresholds {
            linf_cap: f64::INFINITY,
            dt_floor: 0.0,
            integral_cap: 5.0,
        };
        let first = (1..=recs.len())
            .find(|&k| detect_blowup(&recs[..k], &thresholds).status == Health::BlowupSuspected)
            .expect("flagged");
        let t_flag = recs[first - 1].t;
        assert!(t_flag < t_star);
        assert_eq!(
            detect_blowup(&recs[..first], &thresholds).reason,
            Some(BlowupReason::IntegralCap)
        );
        // Trailing-window growth accelerates towards the singularity.
        let late = detect_blowup(&recs, &BlowupThresholds::default());
        assert!(late.growth_rate > 1e3 && late.growth_acceleration > 1.0);
    }

    #[test]
    fn energy_budget_of_constant_state_is_pure_relaxation() {
        let g = Grid::periodic_2pi(8).unwrap();
        let s = SymTensorField::from_fn(&g, |_| [1.0, 0.5, 0.0, 0.2, 0.0, 0.0]);
        let rhs = Rhs::new(unit(), &g, 0.0).unwrap();
        let b = energy_budget(&s, &rhs, &MultiIndex::ZERO, 1e-3).unwrap();
        assert_eq!([b.i1, b.i2, b.i3], [0.0; 3]);
        assert!((b.rate_of_change + b.relaxation).abs() < 1e-5 * b.relaxation);
    }

    #[test]
    fn energy_residual_is_second_order_in_dt() {
        let g = Grid::periodic_2pi(16).unwrap();
        let s = smooth_sym(&g, 11, 0.5);
        let rhs = Rhs::new(PhysicalParams::new(1.0, 0.5, 1.0, false).unwrap(), &g, 0.0).unwrap();
        for alpha in [MultiIndex::ZERO, MultiIndex::new(1, 0, 1)] {
            let a = energy_budget(&s, &rhs, &alpha, 2e-3).unwrap();
            let b = energy_budget(&s, &rhs, &alpha, 1e-3).unwrap();
            assert!(b.residual < 1e-3 * b.scale(), "{b:?}");
            let ratio = a.residual / b.residual;
            assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
        }
    }

    #[test]
    fn advection_term_fades_under_wide_mollification() {
        let g = Grid::periodic_2pi(16).unwrap();
        let s = smooth_sym(&g, 5, 0.5);
        let alpha = MultiIndex::new(1, 0, 0);
        let i1 = |eps: f64| {
            let rhs = Rhs::new(unit(), &g, eps).unwrap();
            energy_budget(&s, &rhs, &alpha, 1e-3).unwrap().i1.abs()
        };
        let (plain, narrow, wide) = (i1(0.0), i1(1.0), i1(3.1));
        assert!(
            wide < 0.05 * plain && narrow < plain,
            "{plain} {narrow} {wide}"
        );
    }

    #[test]
    fn advection_is_energy_neutral_at_zeroth_order() {
        let g = Grid::periodic_2pi(16).unwrap();
        let s = smooth_sym(&g, 8, 0.5);
        let rhs = Rhs::new(unit(), &g, 0.0).unwrap();
        let b = energy_budget(&s, &rhs, &MultiIndex::ZERO, 1e-3).unwrap();
        assert!(b.i1.abs() < 1e-12 * b.scale(), "{b:?}");
    }

    #[test]
    fn energy_constants_from_random_states() {
        let g = Grid::periodic_2pi(8).unwrap();
        let states: Vec<_> = (0..4).map(|s| smooth_sym(&g, s, 0.3)).collect();
        let rhs = Rhs::new(unit(), &g, 0.0).unwrap();
        let c = calibrate_energy_constants(&states, &rhs, SobolevIndex(2));
        // The forcing term is dissipative, so its constant clamps to zero.
        assert_eq!(c.c1(), 0.0);
        assert!(c.c2() > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn integrals_nondecreasing_and_additive(vals in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.01f64..0.5), 2..20)) {
            let mut recs: Vec<DiagnosticsRecord> = Vec::new();
            let mut t = 0.0;
            for (a, b, dt) in &vals {
                let r = record(t, *a, *b, recs.last());
                recs.push(r);
                t += dt;
            }
            for w in recs.windows(2) {
                prop_assert!(w[1].bkm_integral >= w[0].bkm_integral);
                prop_assert!(w[1].combined_integral >= w[0].combined_integral);
            }
            // Restarting the sum at a split point and adding the offsets gives the same totals.
            let k = recs.len() / 2;
            let mut tail: Vec<DiagnosticsRecord> = Vec::new();
            for r in &recs[k..] {
                let nr = record(r.t, r.linf_sigma, r.linf_gradu, tail.last());
                tail.push(nr);
            }
            let last = recs.last().unwrap();
            prop_assert!((recs[k].bkm_integral + tail.last().unwrap().bkm_integral - last.bkm_integral).abs() < 1e-12);
            prop_assert!((recs[k].combined_integral + tail.last().unwrap().combined_integral - last.combined_integral).abs() < 1e-12);
        }

        #[test]
        fn forcing_term_is_minus_twice_the_dissipation(seed in any::<u64>(), a in 0u32..2, b in 0u32..2) {
            let g = Grid::periodic_2pi(8).unwrap();
            let s = smooth_sym(&g, seed, 0.4);
            let p = PhysicalParams::new(0.6, 0.9, 1.5, false).unwrap();
            let rhs = Rhs::new(p, &g, 0.0).unwrap();
            let alpha = MultiIndex::new(a, b, 1);
            let budget = energy_budget(&s, &rhs, &alpha, 1e-3).unwrap();
            let (_, gu) = solve_stokes_spectral(&s, &p.stokes());
            let dgu = crate::spectral::derivative(&gu, &alpha);
            let dissipation = l2_norm(&dgu).powi(2);
            let expected = -2.0 * p.forcing_coefficient() * p.nu_s() * dissipation;
            prop_assert!((budget.i3 - expected).abs() < 1e-10 * expected.abs().max(1e-300));
        }

        #[test]
        fn loglinf_monotone(h0 in 0.01f64..100.0, linf in 0.01f64..100.0, l4 in 0.01f64..100.0, f in 1.0f64..3.0) {
            let b = |h: f64, s: f64, l: f64| loglinf_gradvel_bound(h, s, l, 1.0).unwrap().bound;
            let base = b(h0, linf, l4);
            prop_assert!(b(h0 * f, linf, l4) >= base);
            prop_assert!(b(h0, linf * f, l4) >= base);
            prop_assert!(b(h0, linf, l4 * f) >= base);
        }

        #[test]
        fn existence_bound_decreasing(y in 0.01f64..10.0, f in 1.01f64..3.0, c1 in 0.0f64..3.0, c2 in 0.1f64..3.0) {
            let p = PhysicalParams::new(1.0, 1.0, 2.0, false).unwrap();
            let c = ExistenceBoundParams::new(c1, c2).unwrap();
            let (a, b) = (existence_time_bound(y, &p, &c).unwrap(), existence_time_bound(y * f, &p, &c).unwrap());
            if a.is_finite() {
                prop_assert!(b < a);
            }
        }
    }
}
