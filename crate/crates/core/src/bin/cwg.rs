use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coupled_waveguides::check::{self, Status};
use coupled_waveguides::commands::{self, XProfile};
use coupled_waveguides::config::RunConfig;
use coupled_waveguides::output::RunDir;
use coupled_waveguides::units;
use coupled_waveguides::xaxis::Regime;
use coupled_waveguides::{Error, Result};

/// Two coupled waveguides as a separable double-well problem.
#[derive(Parser)]
#[command(name = "cwg", version)]
struct Cli {
    /// Configuration file (`section.key = value`); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `numerics.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest eigenpairs of the transverse Hamiltonian.
    Eigs {
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
    /// Fit the free potential parameter to the target period.
    Calibrate,
    /// dS/dy over (y, t) and the speed statistics.
    Phasemap {
        #[arg(long)]
        t_samples: Option<usize>,
    },
    /// Well populations over one period with the two-level comparison.
    Populations,
    /// Longitudinal profiles.
    Xprofile {
        #[arg(long, value_enum)]
        regime: RegimeArg,
    },
    /// Bohmian trajectories and the equivariance report.
    Trajectories,
    /// Run the invariant suite.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Oscillating,
    Evanescent,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let run = RunDir::create(&out)?;

    match cli.command {
        Command::Eigs { levels } => {
            let s = commands::cmd_eigs(&cfg, levels, &run)?;
            println!(
                "omega_s = {:e} rad/s, period = {} ps",
                units::freq_to_rad_per_s(s.modes.omega_s),
                s.modes.period()
            );
            for (n, e) in s.levels.iter().enumerate() {
                println!("E_{n} = {:e} J", units::energy_to_joule(*e));
            }
        }
        Command::Calibrate => {
            let (cal, updated) = commands::cmd_calibrate(&cfg, &run)?;
            println!(
                "period {} ps after {} evaluations; {} = {:e}",
                cal.period,
                cal.evaluations,
                cfg.calibration.free_parameter.name(),
                match cfg.calibration.free_parameter {
                    coupled_waveguides::eigensolver::FreeParameter::Mass =>
                        updated.potential.mass_kg,
                    coupled_waveguides::eigensolver::FreeParameter::WellFrequency => {
                        updated.potential.well_frequency_rad_per_s
                    }
                }
            );
        }
        Command::Phasemap { t_samples } => {
            let n = t_samples.unwrap_or(cfg.phasemap.t_samples);
            let (_, stats) = commands::cmd_phasemap(&cfg, n, &run)?;
            println!("mean_abs_v_uniform = {:e} m/s", stats.mean_abs_v_uniform);
            println!(
                "mean_abs_v_rho_weighted = {:e} m/s",
                stats.mean_abs_v_rho_weighted
            );
            println!("peak_abs_v = {:e} m/s", stats.peak_abs_v);
        }
        Command::Populations => {
            let s = commands::cmd_populations(&cfg, &run)?;
            println!(
                "log-log slope {:.4}, curvature error {:.2e}",
                s.law.slope,
                s.law.curvature_error()
            );
        }
        Command::Xprofile { regime } => {
            let regime = match regime {
                RegimeArg::Oscillating => Regime::Oscillating,
                RegimeArg::Evanescent => Regime::Evanescent,
            };
            match commands::cmd_xprofile(&cfg, regime, &run)? {
                XProfile::Oscillating { fit, .. } => {
                    println!(
                        "rho_a / x^2 spread {:.2e}, curvature error {:.2e}",
                        fit.spread,
                        fit.relative_error()
                    )
                }
                XProfile::Evanescent { points, .. } => println!("{} points", points.len()),
            }
        }
        Command::Trajectories => {
            let (_, rep) = commands::cmd_trajectories(&cfg, &run)?;
            for (q, d) in &rep.distances {
                println!("L1 at {q} T = {d:.4}");
            }
            println!(
                "non-crossing: {}",
                if rep.order_preserved { "pass" } else { "fail" }
            );
        }
        Command::Check => {
            let rep = check::run_checks(&cfg)?;
            check::write_report(&rep, &run)?;
            run.write_metadata(&cfg, "check", &[])?;
            for r in &rep.results {
                println!(
                    "{:<7} {}.{} {}",
                    r.status,
                    r.module,
                    r.name,
                    if r.status == Status::Skipped {
                        r.note.clone()
                    } else {
                        format!("{:e} ({})", r.value, r.threshold)
                    }
                );
            }
            if !rep.all_passed() {
                let err = Error::Invariant(format!("{} checks failed", rep.failures().len()));
                eprintln!("error: {err}");
                return Ok(err.exit_code() as u8);
            }
        }
    }
    Ok(0)
}
