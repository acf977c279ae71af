//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test prints a single `PASS`/`FAIL` line straight to stderr so the
//! verdicts show up even when the harness captures output.

use std::io::Write;
use std::path::Path;

use obkm::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use obkm::config::RunConfig;
use obkm::evolution::{step_rk4, step_rk4_full, PhysicalParams, Rhs};
use obkm::lab::{
    cauchy_convergence_rate, check_mollifier_properties, run_battery, BatteryConfig, Ensemble,
    RandomFieldSpec,
};
use obkm::monitor::{
    apriori_violations, calibrate_apriori_constant, energy_budget, DiagnosticsRecord,
};
use obkm::norms::{hm_norm, l2_norm, linf_norm, SobolevIndex};
use obkm::runner::{
    kernel_check, read_diagnostics, simulate, KernelCheckConfig, DIAGNOSTICS_FILE, FINAL_CHECKPOINT,
};
use obkm::spectral::divergence_vector;
use obkm::stokes::{solve_stokes_spectral, StokesParams};
use obkm::{Grid, MultiIndex, SymTensorField, TensorField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "{} [{id:>2}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pointwise_random(grid: &Grid, seed: u64) -> SymTensorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..6 * grid.points())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    SymTensorField::from_data(grid, data).unwrap()
}

fn band(grid: &Grid, seed: u64, band_limit: u32, linf: f64) -> SymTensorField {
    let spec = RandomFieldSpec {
        seed,
        band_limit,
        amplitude: 1.0,
    };
    let s: SymTensorField = spec.sample(grid, 0).unwrap();
    s.scaled(linf / linf_norm(&s))
}

fn rel_l2<const C: usize>(a: &obkm::Field<C>, b: &obkm::Field<C>) -> f64 {
    l2_norm(&a.lincomb(1.0, b, -1.0)) / l2_norm(b)
}

fn run_to(sigma: &SymTensorField, rhs: &Rhs, dt: f64, steps: usize) -> SymTensorField {
    (0..steps).fold(sigma.clone(), |s, _| step_rk4(&s, dt, rhs).unwrap())
}

#[test]
fn c01_stokes_single_mode_oracle() {
    let g = Grid::periodic_2pi(16).unwrap();
    let s = SymTensorField::from_fn(&g, |x| [0.0, 0.0, 0.0, x[0].sin(), 0.0, 0.0]);
    let (u, gu) = solve_stokes_spectral(&s, &StokesParams::new(1.0).unwrap());
    let u_exact = VectorField::from_fn(&g, |x| [0.0, x[0].cos(), 0.0]);
    let g_exact = TensorField::from_fn(&g, |x| {
        let mut t = [0.0; 9];
        t[1] = -x[0].sin();
        t
    });
    let (eu, eg) = (rel_l2(&u, &u_exact), rel_l2(&gu, &g_exact));
    verdict(
        1,
        "Stokes single-mode oracle",
        eu < 1e-12 && eg < 1e-12,
        format!("rel err u {eu:.2e}, grad u {eg:.2e} (< 1e-12)"),
    );
}

#[test]
fn c02_velocity_is_divergence_free() {
    let mut worst = 0.0f64;
    for n in [16, 32] {
        let g = Grid::periodic_2pi(n).unwrap();
        for seed in 0..50 {
            let (u, _) = solve_stokes_spectral(
                &pointwise_random(&g, seed),
                &StokesParams::new(1.0).unwrap(),
            );
            worst = worst.max(l2_norm(&divergence_vector(&u)) / hm_norm(&u, SobolevIndex(1)));
        }
    }
    verdict(
        2,
        "divergence-free velocity",
        worst < 1e-12,
        format!("max ‖div u‖₀/‖u‖₁ = {worst:.2e} over 50 fields at n = 16, 32 (< 1e-12)"),
    );
}

#[test]
fn c03_free_space_matches_spectral() {
    let report = kernel_check(&KernelCheckConfig::new(64)).unwrap();
    let worst_grad = report
        .probes
        .iter()
        .map(|p| p.gradient_rel_error)
        .fold(0.0, f64::max);
    let worst_vel = report
        .probes
        .iter()
        .map(|p| p.velocity_rel_error)
        .fold(0.0, f64::max);
    let worst_z = report
        .sphere_averages
        .iter()
        .map(|r| r.average.mean.abs() / r.average.standard_error)
        .fold(0.0, f64::max);
    verdict(
        3,
        "free-space/spectral agreement",
        report.pass,
        format!(
            "max rel err grad u {worst_grad:.2e}, u {worst_vel:.2e} at 5 probes (< 1e-2); \
             max |mean|/SE over 81 sphere averages {worst_z:.2} (< 3)"
        ),
    );
}

#[test]
fn c04_relaxation_is_fourth_order() {
    let g = Grid::periodic_2pi(8).unwrap();
    let s0 = SymTensorField::from_fn(&g, |_| [1.0, -0.5, 2.0, 0.3, -0.2, 0.7]);
    let rhs = Rhs::new(PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap(), &g, 0.0).unwrap();
    let exact = s0.scaled((-1.0f64).exp());
    let err = |steps: usize| rel_l2(&run_to(&s0, &rhs, 1.0 / steps as f64, steps), &exact);
    let (e1, e2) = (err(10), err(20));
    let ratio = e1 / e2;
    verdict(
        4,
        "relaxation oracle, RK4 order",
        (ratio - 16.0).abs() <= 3.0,
        format!("errors {e1:.3e} (dt 0.1), {e2:.3e} (dt 0.05), ratio {ratio:.2} (16 ± 3)"),
    );
}

#[test]
fn c05_symmetry_is_preserved() {
    let g = Grid::periodic_2pi(16).unwrap();
    let rhs = Rhs::new(PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap(), &g, 0.0).unwrap();
    let mut s = band(&g, 5, 5, 1.0).to_full();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        s = step_rk4_full(&s, 0.01, &rhs);
        worst = worst.max(s.max_asymmetry());
    }
    verdict(
        5,
        "symmetry preservation",
        worst < 1e-13,
        format!("max |σ_ij − σ_ji| over 100 unsymmetrized steps {worst:.2e} (< 1e-13)"),
    );
}

#[test]
fn c06_time_reversibility() {
    let g = Grid::periodic_2pi(16).unwrap();
    let rhs = Rhs::new(PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap(), &g, 0.0).unwrap();
    let s0 = band(&g, 6, 5, 2.0);
    let (dt, steps) = (0.05, 10);
    let forward = run_to(&s0, &rhs, dt, steps);
    let fine = run_to(&s0, &rhs, dt / 2.0, 2 * steps);
    // Richardson estimate of the global error of the coarse run.
    let global = rel_l2(&forward, &fine) * 16.0 / 15.0;
    let back = run_to(&forward, &rhs.reversed(), dt, steps);
    let round_trip = rel_l2(&back, &s0);
    verdict(
        6,
        "time reversibility",
        round_trip < 10.0 * global,
        format!(
            "round-trip rel err {round_trip:.3e}, forward global err {global:.3e} (ratio < 10)"
        ),
    );
}

fn run_config(cfg: &RunConfig) -> Vec<DiagnosticsRecord> {
    let s = simulate(cfg, None).unwrap();
    assert_eq!(s.status, obkm::evolution::RunStatus::Completed);
    read_diagnostics(&cfg.output.directory.join(DIAGNOSTICS_FILE)).unwrap()
}

fn decay_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&configs().join("small_data_decay.json")).unwrap();
    cfg.output.directory = dir.to_path_buf();
    cfg.output.diagnostics_every = 1;
    cfg
}

#[test]
fn c07_small_data_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = decay_config(dir.path());
    let p = &cfg.physical;
    assert_eq!((p.nu_p / p.nu_s, p.lambda.0), (0.01, 1.0));
    let rows = run_config(&cfg);
    let window: Vec<&DiagnosticsRecord> = rows
        .iter()
        .filter(|r| r.t >= 0.5 - 1e-12 && r.t <= 5.0 + 1e-12)
        .collect();
    let increases = window.windows(2).filter(|w| w[1].hm >= w[0].hm).count();
    verdict(
        7,
        "small-data decay",
        (rows[0].hm - 0.01).abs() < 1e-15 && increases == 0 && window.len() > 400,
        format!(
            "‖σ₀‖₃ = {:.3e}; {} samples on [0.5, 5], {increases} non-decreasing; ‖σ(5)‖₃ = {:.3e}",
            rows[0].hm,
            window.len(),
            window.last().unwrap().hm
        ),
    );
}

#[test]
fn c08_mollified_cauchy_rate() {
    let g = Grid::new(32, 1.5).unwrap();
    let s0 = band(&g, 42, 1, 0.3);
    let p = PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap();
    let r = cauchy_convergence_rate(&s0, &p, 0.5, 0.01, &[0.4, 0.2, 0.1]).unwrap();
    verdict(
        8,
        "mollified Cauchy rate",
        r.pass,
        format!(
            "sup-time distances to ε = 0.1: {:.3e} (ε 0.2), {:.3e} (ε 0.4); slope {:.3} (≥ 0.9)",
            r.distances[0],
            r.distances[1],
            r.slope.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn c09_mollifier_constants_are_stable() {
    let ens = Ensemble::new(42, 20, &[32, 64], 1.5).unwrap();
    let reports = check_mollifier_properties(&ens, SobolevIndex(2), &[0.4, 0.2, 0.1]).unwrap();
    let detail = reports
        .iter()
        .map(|r| {
            format!(
                "{} C {:.3e} res {:.3} ε {:.3}",
                r.name,
                r.max_ratio,
                r.ratio_stability.unwrap(),
                r.epsilon_stability.unwrap()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        9,
        "mollifier constants",
        reports.iter().all(|r| r.pass),
        detail + " (factors < 2)",
    );
}

#[test]
fn c10_inequality_battery() {
    let reports = run_battery(&BatteryConfig::new(42, &[16, 32])).unwrap();
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    let worst = reports
        .iter()
        .filter_map(|r| r.ratio_stability)
        .fold(1.0, f64::max);
    verdict(
        10,
        "inequality battery",
        failing.is_empty(),
        format!(
            "{} reports at seed 42, n = 16, 32; worst resolution factor {worst:.3}; failing {failing:?}",
            reports.len()
        ),
    );
}

fn growth_config(dir: &Path, seed: u64, amplitude: f64) -> RunConfig {
    let text = serde_json::json!({
        "grid": {"n": 16},
        "physical": {"nu_s": 1.0, "nu_p": 0.0, "lambda": "inf"},
        "stepper": {"dt": 0.001, "t_end": 0.3},
        "sobolev_m": 3,
        "ic": {"kind": "random_band", "amplitude": amplitude, "seed": seed, "band_limit": 3},
        "output": {"directory": dir}
    });
    RunConfig::from_json(&text.to_string()).unwrap()
}

#[test]
fn c11_apriori_bound_with_calibrated_constant() {
    // Calibrate on one set of strongly growing runs, then check held-out runs.
    let dir = tempfile::tempdir().unwrap();
    let mut c = 0.0f64;
    for seed in 1..=3 {
        let rows = run_config(&growth_config(
            &dir.path().join(format!("cal{seed}")),
            seed,
            1000.0,
        ));
        c = c.max(calibrate_apriori_constant(&rows, rows[0].hm, |r| r.hm));
    }
    let mut held_out: Vec<(String, Vec<DiagnosticsRecord>)> = Vec::new();
    for seed in 4..=6 {
        for amp in [200.0, 1000.0] {
            let d = dir.path().join(format!("held{seed}_{amp}"));
            held_out.push((
                format!("seed {seed} amp {amp}"),
                run_config(&growth_config(&d, seed, amp)),
            ));
        }
    }
    held_out.push((
        "small-data decay".into(),
        run_config(&decay_config(&dir.path().join("decay"))),
    ));
    let mut single = RunConfig::load(&configs().join("single_mode.json")).unwrap();
    single.output.directory = dir.path().join("single");
    held_out.push(("single mode".into(), run_config(&single)));
    let mut bad = Vec::new();
    let mut samples = 0;
    for (name, rows) in &held_out {
        samples += rows.len();
        let v = apriori_violations(rows, rows[0].hm, c, 0.0, |r| r.hm);
        if !v.is_empty() {
            bad.push(format!("{name}: {} samples", v.len()));
        }
    }
    verdict(
        11,
        "a priori bound consistency",
        bad.is_empty() && c > 0.0,
        format!(
            "calibrated C = {c:.4} on 3 runs; {} held-out runs, {samples} samples; violations {bad:?}",
            held_out.len()
        ),
    );
}

#[test]
fn c12_energy_budget_closes() {
    let g = Grid::periodic_2pi(16).unwrap();
    let rhs = Rhs::new(PhysicalParams::new(1.0, 1.0, 1.0, false).unwrap(), &g, 0.0).unwrap();
    let s = band(&g, 12, 5, 2.0);
    let a = energy_budget(&s, &rhs, &MultiIndex::ZERO, 1e-3).unwrap();
    let b = energy_budget(&s, &rhs, &MultiIndex::ZERO, 5e-4).unwrap();
    let rel = a.residual.abs() / a.scale();
    let ratio = a.residual / b.residual;
    verdict(
        12,
        "energy budget",
        rel < 1e-3 && (3.0..=5.0).contains(&ratio),
        format!("residual/scale {rel:.2e} at dt 1e-3 (< 1e-3); halving dt divides it by {ratio:.2} (≈ 4)"),
    );
}

#[test]
fn c13_checkpoint_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::new(16, 3.0).unwrap();
    let cp = Checkpoint {
        t: 0.375,
        nu_s: 1.0,
        nu_p: 0.5,
        lambda: 2.0,
        sigma: pointwise_random(&g, 13),
    };
    let path = dir.path().join("cp.bin");
    write_checkpoint(&cp, &path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    let bits = |c: &Checkpoint| {
        c.sigma
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    let exact = bits(&back) == bits(&cp) && back.t.to_bits() == cp.t.to_bits();

    let config = |d: &Path, t_end: f64| {
        let text = serde_json::json!({
            "grid": {"n": 16},
            "physical": {"nu_s": 1.0, "nu_p": 0.5, "lambda": 1.0},
            "stepper": {"dt": 0.01, "t_end": t_end},
            "ic": {"kind": "random_band", "amplitude": 2.0, "seed": 13, "band_limit": 4},
            "output": {"directory": d, "checkpoint_every": 10}
        });
        RunConfig::from_json(&text.to_string()).unwrap()
    };
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    simulate(&config(&full, 0.4), None).unwrap();
    simulate(&config(&split, 0.2), None).unwrap();
    simulate(
        &config(&split, 0.4),
        Some(&split.join("checkpoint_00000020.bin")),
    )
    .unwrap();
    let ra = read_diagnostics(&full.join(DIAGNOSTICS_FILE)).unwrap();
    let rb = read_diagnostics(&split.join(DIAGNOSTICS_FILE)).unwrap();
    let mut worst = if ra.len() == rb.len() {
        0.0f64
    } else {
        f64::INFINITY
    };
    for (x, y) in ra.iter().zip(&rb) {
        for (p, q) in [
            (x.t, y.t),
            (x.linf_sigma, y.linf_sigma),
            (x.linf_gradu, y.linf_gradu),
            (x.h0, y.h0),
            (x.hm, y.hm),
            (x.l4_grad_sigma, y.l4_grad_sigma),
            (x.bkm_integral, y.bkm_integral),
            (x.combined_integral, y.combined_integral),
        ] {
            worst = worst.max((p - q).abs() / p.abs().max(1e-300));
        }
    }
    let fa = read_checkpoint(&full.join(FINAL_CHECKPOINT)).unwrap();
    let fb = read_checkpoint(&split.join(FINAL_CHECKPOINT)).unwrap();
    let state = rel_l2(&fb.sigma, &fa.sigma);
    verdict(
        13,
        "checkpoint round trip and resume",
        exact && worst < 1e-12 && state < 1e-12,
        format!(
            "bit-exact {exact}; resumed diagnostics max rel diff {worst:.2e}, final state {state:.2e} over {} rows (< 1e-12)",
            ra.len()
        ),
    );
}
