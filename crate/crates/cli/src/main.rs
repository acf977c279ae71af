use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obkm::config::RunConfig;
use obkm::lab::BatteryConfig;
use obkm::runner::{self, KernelCheckConfig};

/// Thread-count override for the worker pool.
const THREADS_VAR: &str = "OBKM_THREADS";

/// Exit code of a check that ran but did not pass.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "obkm", version, about = "Creeping-flow Oldroyd-B laboratory")]
struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured run, writing diagnostics, checkpoints and a summary.
    ///
    /// Exit codes: 0 completed, 2 blow-up suspected, 3 step failed, 1 bad input.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the inequality battery. Exit code 0 iff every report passes.
    Validate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "16,32")]
        resolutions: Vec<usize>,
        /// Fields per ensemble.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Compare free-space and spectral velocity gradients of a Gaussian bump.
    /// Exit code 0 iff every probe agrees within 1%.
    KernelCheck {
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Box length; defaults to 4π.
        #[arg(long)]
        length: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        bump_radius: f64,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> obkm::Result<u8> {
    let out = cli.output;
    match cli.command {
        Command::Simulate { config, resume } => {
            let cfg = runner::with_output(RunConfig::load(&config)?, out);
            let summary = runner::simulate(&cfg, resume.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary.status.exit_code() as u8)
        }
        Command::Validate {
            seed,
            resolutions,
            samples,
        } => {
            let mut cfg = BatteryConfig::new(seed, &resolutions);
            cfg.samples = samples;
            let reports = runner::validate(&cfg, &out.unwrap_or_else(|| PathBuf::from("out")))?;
            for r in &reports {
                let stability = r
                    .ratio_stability
                    .map_or("n/a".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{} {:<24} max_ratio {:.4e}  stability {}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_ratio,
                    stability
                );
            }
            Ok(if reports.iter().all(|r| r.pass) {
                0
            } else {
                CHECK_FAILED
            })
        }
        Command::KernelCheck {
            resolution,
            length,
            bump_radius,
        } => {
            let mut cfg = KernelCheckConfig::new(resolution);
            if let Some(l) = length {
                cfg.length = l;
            }
            cfg.bump_radius = bump_radius;
            let report =
                runner::kernel_check_to(&cfg, &out.unwrap_or_else(|| PathBuf::from("out")))?;
            for p in &report.probes {
                println!(
                    "x = ({:.4}, {:.4}, {:.4})  grad rel err {:.3e}  vel rel err {:.3e}",
                    p.point[0], p.point[1], p.point[2], p.gradient_rel_error, p.velocity_rel_error
                );
            }
            let failing = report.sphere_averages.iter().filter(|r| !r.pass).count();
            println!("sphere averages outside 3 standard errors: {failing} of 81");
            Ok(if report.pass { 0 } else { CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
