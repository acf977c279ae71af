//! Run orchestration behind the command-line tool: simulation with
//! diagnostics and checkpoints, the inequality battery, and the
//! free-space kernel cross-check.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evolution::{integrate_with, Rhs, RunStatus, StepFailure};
use crate::field::SymTensorField;
use crate::grid::Grid;
use crate::ic::InitialCondition;
use crate::kernels::{kernel_sphere_average, FreeSpaceEvaluator, PvQuadratureSpec, SphereAverage};
use crate::lab::{run_battery, BatteryConfig, InequalityReport};
use crate::monitor::{
    calibrate_apriori_constant, calibrate_energy_constants, compute_diagnostics, detect_blowup,
    energy_budget, existence_time_bound, BlowupReason, DiagnosticsRecord,
};
use crate::spectral::MultiIndex;
use crate::stokes::{solve_stokes_spectral, StokesParams};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const VALIDATION_FILE: &str = "validation.json";
pub const KERNEL_CHECK_FILE: &str = "kernel_check.json";

/// Name of the periodic checkpoint written after `step` steps.
pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:08}.bin")
}

/// Norms of the last diagnostics record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalNorms {
    pub linf_sigma: f64,
    pub linf_gradu: f64,
    pub h0: f64,
    pub hm: f64,
    pub l4_grad_sigma: f64,
    pub bkm_integral: f64,
    pub combined_integral: f64,
}

/// Constants fitted to the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Smallest `C` with `‖σ‖_m ≤ exp[C·∫(1+‖σ‖_∞+‖∇u‖_∞)] ‖σ₀‖_m` on this run.
    pub apriori_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub t_reached: f64,
    pub steps: usize,
    pub final_norms: FinalNorms,
    /// `null` when the bound is infinite or `‖σ₀‖_m = 0`.
    pub existence_time_bound: Option<f64>,
    pub calibrated_constants: CalibratedConstants,
    pub blowup_reason: Option<BlowupReason>,
    pub failure: Option<String>,
}

impl RunStatus {
    /// Process exit code of a finished run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Completed => 0,
            RunStatus::BlowupSuspected => 2,
            RunStatus::StepFailed => 3,
        }
    }
}

/// Diagnostics rows kept from an earlier run, up to time `t`.
fn load_rows(path: &Path, t: f64) -> Result<Vec<DiagnosticsRecord>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = DiagnosticsRecord::from_csv_row(&line)?;
        if r.t > t {
            break;
        }
        rows.push(r);
    }
    Ok(rows)
}

fn resume_mismatch(path: &Path, what: &str, found: f64, expected: f64) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: format!("{what} is {found} in the checkpoint but {expected} in the config"),
    }
}

/// Runs the configured simulation, optionally from a checkpoint.
///
/// On resume, rows of an existing diagnostics file up to the checkpoint
/// time are kept and the time integrals continue from the last of them;
/// checkpoints are written together with a diagnostics row so this row
/// exists. Without the file the integrals restart at zero.
pub fn simulate(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let params = cfg.params()?;
    let ts = cfg.stepper()?;
    let m = cfg.sobolev_index();
    let out = &cfg.output;
    std::fs::create_dir_all(&out.directory)?;
    let csv_path = out.directory.join(DIAGNOSTICS_FILE);

    let (sigma0, t0, mut records) = match resume {
        None => (cfg.ic.build(&grid, m)?, 0.0, Vec::new()),
        Some(path) => {
            let cp = read_checkpoint(path)?;
            let g = cp.sigma.grid();
            if g.n() != grid.n() {
                return Err(resume_mismatch(path, "n", g.n() as f64, grid.n() as f64));
            }
            for (what, a, b) in [
                ("length", g.length(), grid.length()),
                ("nu_s", cp.nu_s, params.nu_s()),
                ("nu_p", cp.nu_p, params.nu_p()),
                ("lambda", cp.lambda, params.lambda()),
            ] {
                if a != b {
                    return Err(resume_mismatch(path, what, a, b));
                }
            }
            let rows = load_rows(&csv_path, cp.t)?;
            let rows = match rows.last() {
                Some(r) if r.t == cp.t => rows,
                _ => Vec::new(),
            };
            (cp.sigma, cp.t, rows)
        }
    };
    let y0 = records.first().map(|r| r.hm);
    let resumed_with_rows = !records.is_empty();

    // Fixed steps are numbered globally so cadences survive a resume.
    let step0 = if ts.adaptive {
        0
    } else {
        (t0 / ts.dt).round() as usize
    };
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{}", DiagnosticsRecord::csv_header())?;
    for r in &records {
        writeln!(csv, "{}", r.to_csv_row())?;
    }
    let mut last_written = records.len();
    let mut samples: Vec<SymTensorField> = vec![sigma0.clone()];
    let rhs = Rhs::new(params, &grid, ts.mollify_epsilon)?;
    let mut io_error: Option<Error> = None;
    let residual = |s: &SymTensorField| {
        energy_budget(s, &rhs, &MultiIndex::ZERO, ts.dt).map_or(f64::NAN, |b| b.residual)
    };

    let traj = integrate_with(&sigma0, t0, &rhs, &ts, |info| {
        let global = step0 + info.step;
        if info.step == 0 && resumed_with_rows {
            return ControlFlow::Continue(());
        }
        let rec = compute_diagnostics(info.sigma, info.gradient, m, info.t, records.last());
        records.push(rec);
        let checkpoint_due =
            out.checkpoint_every > 0 && info.step > 0 && global % out.checkpoint_every == 0;
        let result = (|| -> Result<()> {
            if global % out.diagnostics_every == 0 || checkpoint_due {
                let rec = rec.with_energy_residual(residual(info.sigma));
                *records.last_mut().expect("just pushed") = rec;
                writeln!(csv, "{}", rec.to_csv_row())?;
                csv.flush()?;
                last_written = records.len();
            }
            if checkpoint_due {
                let cp = Checkpoint {
                    t: info.t,
                    nu_s: params.nu_s(),
                    nu_p: params.nu_p(),
                    lambda: params.lambda(),
                    sigma: info.sigma.clone(),
                };
                write_checkpoint(&cp, &out.directory.join(checkpoint_name(global)))?;
                samples.push(info.sigma.clone());
            }
            Ok(())
        })();
        if let Err(e) = result {
            io_error = Some(e);
            return ControlFlow::Break(RunStatus::StepFailed);
        }
        if detect_blowup(&records, &cfg.thresholds).reason.is_some() {
            return ControlFlow::Break(RunStatus::BlowupSuspected);
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    if last_written < records.len() {
        let last = records.last_mut().expect("nonempty");
        *last = last.with_energy_residual(residual(&traj.state));
        writeln!(csv, "{}", last.to_csv_row())?;
    }
    csv.flush()?;
    drop(csv);

    write_checkpoint(
        &Checkpoint {
            t: traj.t_reached,
            nu_s: params.nu_s(),
            nu_p: params.nu_p(),
            lambda: params.lambda(),
            sigma: traj.state.clone(),
        },
        &out.directory.join(FINAL_CHECKPOINT),
    )?;
    if traj.state.is_finite() {
        samples.push(traj.state.clone());
    }

    let y0 = y0.or(records.first().map(|r| r.hm)).unwrap_or(0.0);
    let last = *records
        .last()
        .expect("the initial record is always present");
    let energy = calibrate_energy_constants(&samples, &rhs, m);
    let summary = RunSummary {
        status: traj.status,
        t_reached: traj.t_reached,
        steps: step0 + traj.steps,
        final_norms: FinalNorms {
            linf_sigma: last.linf_sigma,
            linf_gradu: last.linf_gradu,
            h0: last.h0,
            hm: last.hm,
            l4_grad_sigma: last.l4_grad_sigma,
            bkm_integral: last.bkm_integral,
            combined_integral: last.combined_integral,
        },
        existence_time_bound: existence_time_bound(y0, &params, &energy)
            .ok()
            .filter(|t| t.is_finite()),
        calibrated_constants: CalibratedConstants {
            c1: energy.c1(),
            c2: energy.c2(),
            c3: energy.c3(&params),
            c4: energy.c4(&params),
            apriori_c: calibrate_apriori_constant(&records, y0, |r| r.hm),
        },
        blowup_reason: detect_blowup(&records, &cfg.thresholds).reason,
        failure: traj.failure.as_ref().map(StepFailure::to_string),
    };
    std::fs::write(
        out.directory.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

/// Reads every row of a diagnostics file.
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    load_rows(path, f64::INFINITY)
}

/// Runs the inequality battery and writes the reports as a JSON array.
pub fn validate(cfg: &BatteryConfig, directory: &Path) -> Result<Vec<InequalityReport>> {
    for &n in &cfg.resolutions {
        Grid::new(n, cfg.length)?;
    }
    let reports = run_battery(cfg)?;
    std::fs::create_dir_all(directory)?;
    std::fs::write(
        directory.join(VALIDATION_FILE),
        serde_json::to_string_pretty(&reports)? + "\n",
    )?;
    Ok(reports)
}

/// Settings of the free-space cross-check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheckConfig {
    pub resolution: usize,
    pub length: f64,
    pub bump_radius: f64,
    pub quadrature: PvQuadratureSpec,
    /// Directions per sphere average.
    pub sphere_samples: usize,
    pub seed: u64,
}

impl KernelCheckConfig {
    /// A radius-0.5 bump in a `4π` box, large enough that periodic images
    /// stay well below the 1% tolerance.
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            length: 4.0 * std::f64::consts::PI,
            bump_radius: 0.5,
            quadrature: PvQuadratureSpec {
                inner_radius: 0.5,
                outer_radius: 3.4,
                points_per_axis: 68,
            },
            sphere_samples: 1_000_000,
            seed: 7,
        }
    }
}

/// Relative tolerance of the free-space/spectral comparison.
pub const KERNEL_CHECK_TOLERANCE: f64 = 0.01;

/// Sphere averages must lie within this many standard errors of zero.
pub const SPHERE_AVERAGE_ERRORS: f64 = 3.0;

/// Probe offsets from the bump center, in lattice cells.
pub const PROBE_OFFSETS: [[i64; 3]; 5] = [[1, 0, 0], [0, 2, -1], [-2, 1, 1], [3, -2, 0], [0, 0, 4]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub point: [f64; 3],
    pub gradient_rel_error: f64,
    pub velocity_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereAverageRow {
    pub component: [usize; 4],
    pub average: SphereAverage,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheckReport {
    pub config: KernelCheckConfig,
    pub probes: Vec<ProbeComparison>,
    pub sphere_averages: Vec<SphereAverageRow>,
    pub pass: bool,
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm
}

/// Compares free-space and spectral `u`, `∇u` of a Gaussian bump at five
/// lattice points near its center, and checks the sphere averages of all
/// 81 components of the second kernel.
///
/// A bump whose support is not compact in the box is an error.
pub fn kernel_check(cfg: &KernelCheckConfig) -> Result<KernelCheckReport> {
    let grid = Grid::new(cfg.resolution, cfg.length)?;
    let ic = InitialCondition::GaussianBump {
        amplitude: 1.0,
        radius: cfg.bump_radius,
        center: None,
    };
    let sigma = ic.build(&grid, crate::norms::SobolevIndex(0))?;
    let stokes = StokesParams::new(1.0)?;
    let eval = FreeSpaceEvaluator::new(&sigma, stokes, cfg.quadrature)?;
    let (u, gu) = solve_stokes_spectral(&sigma, &stokes);
    let c = (grid.n() / 2) as i64;
    let n = grid.n() as i64;
    let probes: Vec<ProbeComparison> = PROBE_OFFSETS
        .iter()
        .map(|o| {
            let [i, j, k] = [0, 1, 2].map(|a| (c + o[a]).rem_euclid(n) as usize);
            let idx = grid.index(i, j, k);
            let x = grid.position(idx);
            let fs = eval.evaluate(x);
            let sg = gu.matrix_at(idx);
            ProbeComparison {
                point: x,
                gradient_rel_error: rel_error(fs.gradient.as_flattened(), sg.as_flattened()),
                velocity_rel_error: rel_error(&fs.velocity, &u.at(idx)),
            }
        })
        .collect();
    let mut sphere_averages = Vec::with_capacity(81);
    for flat in 0..81usize {
        let component = [flat / 27, (flat / 9) % 3, (flat / 3) % 3, flat % 3];
        let average = kernel_sphere_average(component, cfg.sphere_samples, cfg.seed + flat as u64)?;
        sphere_averages.push(SphereAverageRow {
            component,
            pass: average.within_standard_errors(SPHERE_AVERAGE_ERRORS),
            average,
        });
    }
    let pass = probes.iter().all(|p| {
        p.gradient_rel_error < KERNEL_CHECK_TOLERANCE
            && p.velocity_rel_error < KERNEL_CHECK_TOLERANCE
    }) && sphere_averages.iter().all(|r| r.pass);
    Ok(KernelCheckReport {
        config: *cfg,
        probes,
        sphere_averages,
        pass,
    })
}

/// Runs [`kernel_check`] and writes its report.
pub fn kernel_check_to(cfg: &KernelCheckConfig, directory: &Path) -> Result<KernelCheckReport> {
    let report = kernel_check(cfg)?;
    std::fs::create_dir_all(directory)?;
    std::fs::write(
        directory.join(KERNEL_CHECK_FILE),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

/// Output directory override shared by the subcommands.
pub fn with_output(mut cfg: RunConfig, directory: Option<PathBuf>) -> RunConfig {
    if let Some(d) = directory {
        cfg.output.directory = d;
    }
    cfg
}
