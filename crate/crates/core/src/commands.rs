//! The reproduction pipelines behind the CLI verbs.
//!
//! Each verb has a compute step returning plain data, used directly by the
//! tests, and a thin writer that puts the data into a run directory.

use rayon::prelude::*;

use crate::bohmian::{
    self, equivariance_distance, integrate_trajectories, SpeedStatistics, TrajectoryEnsemble,
    VelocityField,
};
use crate::config::RunConfig;
use crate::dynamics::{self, FieldOptions, FieldSnapshot, QuadraticLaw, WellPopulations};
use crate::eigensolver::{
    build_hamiltonian, calibrate, make_mode_pair, solve_lowest, Calibration, ModePair,
    PotentialSpec,
};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::output::{num, RunDir};
use crate::units;
use crate::xaxis::{self, DampedPoint, LongitudinalConfig, ParabolaFit, Regime, RhoAPoint};

/// Solved transverse problem for one configuration.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub grid: Grid1D,
    pub potential: PotentialSpec,
    pub modes: ModePair,
}

impl Context {
    pub fn solve(cfg: &RunConfig) -> Result<Self> {
        let grid = cfg.grid()?;
        let potential = cfg.potential()?;
        let ham = build_hamiltonian(&grid, &potential)?;
        let modes = make_mode_pair(&grid, &solve_lowest(&ham, 2)?)?;
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            potential,
            modes,
        })
    }

    pub fn mass(&self) -> f64 {
        self.potential.mass
    }

    pub fn period(&self) -> f64 {
        self.modes.period()
    }

    pub fn field_options(&self) -> Result<FieldOptions> {
        self.cfg.field_options()
    }

    fn mode_metadata(&self) -> Vec<(String, String)> {
        mode_metadata(&self.modes)
    }
}

fn mode_metadata(m: &ModePair) -> Vec<(String, String)> {
    vec![
        ("E_e_J".into(), num(units::energy_to_joule(m.e_even))),
        ("E_o_J".into(), num(units::energy_to_joule(m.e_odd))),
        ("E_bar_J".into(), num(units::energy_to_joule(m.e_bar))),
        (
            "omega_s_rad_per_s".into(),
            num(units::freq_to_rad_per_s(m.omega_s)),
        ),
        ("J0_rad_per_s".into(), num(units::freq_to_rad_per_s(m.j0))),
        ("period_ps".into(), num(m.period())),
    ]
}

#[derive(Debug, Clone)]
pub struct EigsSummary {
    pub modes: ModePair,
    /// Lowest energies, internal units.
    pub levels: Vec<f64>,
}

pub fn compute_eigs(cfg: &RunConfig, levels: usize) -> Result<EigsSummary> {
    let grid = cfg.grid()?;
    let pot = cfg.potential()?;
    let ham = build_hamiltonian(&grid, &pot)?;
    let pairs = solve_lowest(&ham, levels.max(2))?;
    let modes = make_mode_pair(&grid, &pairs)?;
    Ok(EigsSummary {
        modes,
        levels: pairs.iter().take(levels.max(1)).map(|p| p.energy).collect(),
    })
}

pub fn cmd_eigs(cfg: &RunConfig, levels: usize, run: &RunDir) -> Result<EigsSummary> {
    let out = compute_eigs(cfg, levels)?;
    let pot = cfg.potential()?;
    let m = &out.modes;
    let mut meta = mode_metadata(m);
    meta.push(("n_points".into(), m.grid.n_points().to_string()));
    run.write_csv(
        "eigs.csv",
        &meta,
        &["y", "chi_e", "chi_o"],
        (0..m.grid.n_points()).map(|i| vec![num(m.grid.y(i)), num(m.chi_e[i]), num(m.chi_o[i])]),
    )?;
    run.write_csv(
        "levels.csv",
        &[(
            "hbar_omega0_J".into(),
            num(units::energy_to_joule(pot.well_frequency)),
        )],
        &["level", "energy_J", "energy_over_hbar_omega0"],
        out.levels.iter().enumerate().map(|(n, &e)| {
            vec![
                n.to_string(),
                num(units::energy_to_joule(e)),
                num(e / pot.well_frequency),
            ]
        }),
    )?;
    run.write_metadata(cfg, "eigs", &meta)?;
    Ok(out)
}

pub fn cmd_calibrate(cfg: &RunConfig, run: &RunDir) -> Result<(Calibration, RunConfig)> {
    let grid = cfg.grid()?;
    let target = cfg.calibration_target();
    let cal = calibrate(&target, &cfg.potential()?, &grid)?;
    let updated = cfg.with_potential(&cal.potential);
    std::fs::write(run.file("calibrated.conf"), updated.to_text())?;
    let report = vec![
        ("free_parameter".to_string(), target.free.name().to_string()),
        ("target_period_ps".into(), num(target.period)),
        ("achieved_period_ps".into(), num(cal.period)),
        (
            "relative_error".into(),
            num((cal.period - target.period).abs() / target.period),
        ),
        ("mass_kg".into(), num(updated.potential.mass_kg)),
        (
            "well_frequency_rad_per_s".into(),
            num(updated.potential.well_frequency_rad_per_s),
        ),
        ("evaluations".into(), cal.evaluations.to_string()),
        ("used_scan".into(), cal.used_scan.to_string()),
        ("unchanged".into(), cal.unchanged.to_string()),
    ];
    run.write_report("calibration", &report)?;
    run.write_metadata(cfg, "calibrate", &report)?;
    Ok((cal, updated))
}

/// `dS/dy` over `(y, t)`, one column per time.
#[derive(Debug, Clone)]
pub struct PhaseMap {
    pub times: Vec<f64>,
    /// `columns[k][i]` at `times[k]`, `y_i`; `NaN` where masked.
    pub columns: Vec<Vec<f64>>,
}

impl PhaseMap {
    pub fn peak(&self) -> f64 {
        self.columns
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|y|` of any cell above `frac` of the peak.
    pub fn support_half_width(&self, grid: &Grid1D, frac: f64) -> f64 {
        let cut = frac * self.peak();
        self.columns
            .iter()
            .flat_map(|c| c.iter().enumerate())
            .filter(|(_, v)| v.is_finite() && v.abs() > cut)
            .map(|(i, _)| grid.y(i).abs())
            .fold(0.0, f64::max)
    }
}

pub fn uniform_times(period: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|k| period * k as f64 / (samples - 1) as f64)
        .collect()
}

pub fn phase_map(ctx: &Context, t_samples: usize) -> Result<PhaseMap> {
    if t_samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 time samples, got {t_samples}"
        )));
    }
    let opts = ctx.field_options()?;
    let times = uniform_times(ctx.period(), t_samples);
    let columns = times
        .par_iter()
        .map(|&t| FieldSnapshot::compute(&ctx.modes, ctx.mass(), t, &opts).map(|s| s.ds_dy))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseMap { times, columns })
}

/// `dS/dy` at `y = 0` just after release (`t = 1e-3 T`).
pub fn initial_midchannel_gradient(ctx: &Context) -> Result<f64> {
    let snap = FieldSnapshot::compute(
        &ctx.modes,
        ctx.mass(),
        1e-3 * ctx.period(),
        &ctx.field_options()?,
    )?;
    Ok(snap.ds_dy[ctx.grid.center()])
}

pub fn speed_stats(ctx: &Context, times: &[f64]) -> Result<SpeedStatistics> {
    let w = ctx.cfg.phasemap.window_um;
    let opts = ctx.field_options()?;
    bohmian::speed_statistics(
        &ctx.modes,
        ctx.mass(),
        (-w, w),
        times,
        &opts.stencil,
        opts.eps_rho,
    )
}

pub fn cmd_phasemap(
    cfg: &RunConfig,
    t_samples: usize,
    run: &RunDir,
) -> Result<(PhaseMap, SpeedStatistics)> {
    let ctx = Context::solve(cfg)?;
    let map = phase_map(&ctx, t_samples)?;
    let stats = speed_stats(&ctx, &map.times)?;
    let mut meta = ctx.mode_metadata();
    meta.push((
        "values".into(),
        "dS/dy in 1/um; empty cells are below the density floor".into(),
    ));
    meta.push(("columns".into(), "t in ps".into()));
    meta.push(("eps_rho".into(), num(cfg.numerics.eps_rho)));
    meta.push(("gauge".into(), dynamics::GAUGE.into()));
    let mut header = vec!["y".to_string()];
    header.extend(map.times.iter().map(|&t| num(t)));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let grid = ctx.grid;
    run.write_csv(
        "phasemap.csv",
        &meta,
        &header_refs,
        (0..grid.n_points()).map(|i| {
            let mut row = vec![num(grid.y(i))];
            row.extend(map.columns.iter().map(|c| num(c[i])));
            row
        }),
    )?;
    let w = cfg.phasemap.window_um;
    let report = vec![
        (
            "window_y_um".to_string(),
            format!("[{}, {}]", num(-w), num(w)),
        ),
        ("window_t_ps".into(), format!("[0, {}]", num(ctx.period()))),
        ("t_samples".into(), t_samples.to_string()),
        (
            "mean_abs_v_uniform_m_per_s".into(),
            num(stats.mean_abs_v_uniform),
        ),
        (
            "mean_abs_v_rho_weighted_m_per_s".into(),
            num(stats.mean_abs_v_rho_weighted),
        ),
        ("peak_abs_v_m_per_s".into(), num(stats.peak_abs_v)),
        ("samples".into(), stats.samples.to_string()),
        ("flagged".into(), stats.flagged.to_string()),
        (
            "support_half_width_um".into(),
            num(map.support_half_width(&grid, 0.1)),
        ),
        ("peak_dS_dy_per_um".into(), num(map.peak())),
    ];
    run.write_report("speed_stats", &report)?;
    run.write_metadata(cfg, "phasemap", &meta)?;
    Ok((map, stats))
}

#[derive(Debug, Clone)]
pub struct PopulationSeries {
    pub rows: Vec<(WellPopulations, f64)>,
    pub law: QuadraticLaw,
    /// `max |p_minus - sin^2(J0 t)|` over the series.
    pub oracle_gap: f64,
}

pub fn population_series(ctx: &Context) -> Result<PopulationSeries> {
    let p = &ctx.cfg.populations;
    let times = uniform_times(ctx.period(), p.t_samples);
    let rows: Vec<(WellPopulations, f64)> = times
        .par_iter()
        .map(|&t| {
            (
                dynamics::populations_at(&ctx.modes, t),
                dynamics::two_level_oracle(ctx.modes.j0, t).1,
            )
        })
        .collect();
    let oracle_gap = rows
        .iter()
        .map(|(w, o)| (w.p_minus - o).abs())
        .fold(0.0, f64::max);
    let law = dynamics::quadratic_law(&ctx.modes, p.fit_lo, p.fit_hi, 41)?;
    Ok(PopulationSeries {
        rows,
        law,
        oracle_gap,
    })
}

pub fn cmd_populations(cfg: &RunConfig, run: &RunDir) -> Result<PopulationSeries> {
    let ctx = Context::solve(cfg)?;
    let series = population_series(&ctx)?;
    let meta = ctx.mode_metadata();
    run.write_csv(
        "populations.csv",
        &meta,
        &["t", "p_plus", "p_minus", "two_level_p_minus"],
        series
            .rows
            .iter()
            .map(|(w, o)| vec![num(w.t), num(w.p_plus), num(w.p_minus), num(*o)]),
    )?;
    let report = vec![
        (
            "fit_window_omega_s_t".to_string(),
            format!(
                "[{}, {}]",
                num(cfg.populations.fit_lo),
                num(cfg.populations.fit_hi)
            ),
        ),
        ("loglog_slope".into(), num(series.law.slope)),
        ("curvature_per_ps2".into(), num(series.law.curvature)),
        (
            "expected_curvature_per_ps2".into(),
            num(series.law.expected),
        ),
        (
            "curvature_relative_error".into(),
            num(series.law.curvature_error()),
        ),
        ("max_abs_two_level_gap".into(), num(series.oracle_gap)),
    ];
    run.write_report("quadratic_law", &report)?;
    run.write_metadata(cfg, "populations", &meta)?;
    Ok(series)
}

#[derive(Debug, Clone)]
pub enum XProfile {
    Oscillating {
        beam: LongitudinalConfig,
        points: Vec<RhoAPoint>,
        fit: ParabolaFit,
    },
    Evanescent {
        configured: LongitudinalConfig,
        /// Beam at the detuning where the profile forms hold.
        beam: LongitudinalConfig,
        points: Vec<DampedPoint>,
    },
}

pub fn x_profile(ctx: &Context, regime: Regime) -> Result<XProfile> {
    let beam = ctx.cfg.longitudinal()?;
    let x = &ctx.cfg.xprofile;
    match regime {
        Regime::Oscillating => {
            if beam.regime() != Regime::Oscillating {
                return Err(Error::Precondition(format!(
                    "oscillating profile needs E > V0; configured detuning is {:e} J",
                    units::energy_to_joule(beam.detuning())
                )));
            }
            let xs = xaxis::xs_for_phase(&beam, &ctx.modes, x.phase_lo, x.phase_hi, x.n_points)?;
            let points = xaxis::rho_a_profile(&xs, &beam, &ctx.modes)?;
            let fit = xaxis::fit_parabola(&points, &beam, &ctx.modes)?;
            Ok(XProfile::Oscillating { beam, points, fit })
        }
        Regime::Evanescent | Regime::Threshold => {
            if beam.regime() != Regime::Evanescent {
                return Err(Error::Precondition(format!(
                    "evanescent profile needs E < V0; configured detuning is {:e} J",
                    units::energy_to_joule(beam.detuning())
                )));
            }
            let used = LongitudinalConfig::from_detuning(
                beam.mass,
                beam.step_height,
                xaxis::evanescent_detuning(ctx.modes.j0),
            )?;
            let k = used.k2().norm();
            let xs: Vec<f64> = (0..x.n_points)
                .map(|i| x.decay_lengths / k * i as f64 / (x.n_points - 1) as f64)
                .collect();
            let points = xaxis::damped_profiles(&xs, &used, &ctx.modes)?;
            Ok(XProfile::Evanescent {
                configured: beam,
                beam: used,
                points,
            })
        }
    }
}

fn beam_metadata(beam: &LongitudinalConfig, ctx: &Context) -> Vec<(String, String)> {
    let k2 = beam.k2();
    vec![
        (
            "E_J".to_string(),
            num(units::energy_to_joule(beam.beam_energy())),
        ),
        ("V0_J".into(), num(units::energy_to_joule(beam.step_height))),
        (
            "detuning_J".into(),
            num(units::energy_to_joule(beam.detuning())),
        ),
        ("k2_re_per_um".into(), num(k2.re)),
        ("k2_im_per_um".into(), num(k2.im)),
        (
            "vx_abs_m_per_s".into(),
            num(units::velocity_to_m_per_s(beam.speed())),
        ),
        (
            "J0_rad_per_s".into(),
            num(units::freq_to_rad_per_s(ctx.modes.j0)),
        ),
        (
            "omega_s_rad_per_s".into(),
            num(units::freq_to_rad_per_s(ctx.modes.omega_s)),
        ),
    ]
}

pub fn cmd_xprofile(cfg: &RunConfig, regime: Regime, run: &RunDir) -> Result<XProfile> {
    let ctx = Context::solve(cfg)?;
    let prof = x_profile(&ctx, regime)?;
    match &prof {
        XProfile::Oscillating { beam, points, fit } => {
            let mut meta = beam_metadata(beam, &ctx);
            meta.push(("fit_curvature_per_um2".into(), num(fit.curvature)));
            meta.push(("expected_curvature_per_um2".into(), num(fit.expected)));
            meta.push(("ratio_spread".into(), num(fit.spread)));
            run.write_csv(
                "xprofile.csv",
                &meta,
                &["x", "rho_a", "two_level_rho_a", "t"],
                points
                    .iter()
                    .map(|p| vec![num(p.x), num(p.rho_a), num(p.two_level), num(p.t)]),
            )?;
            run.write_metadata(cfg, "xprofile oscillating", &meta)?;
        }
        XProfile::Evanescent {
            configured,
            beam,
            points,
        } => {
            let mut meta = beam_metadata(beam, &ctx);
            meta.push((
                "configured_detuning_J".into(),
                num(units::energy_to_joule(configured.detuning())),
            ));
            meta.push((
                "note".into(),
                "profiles evaluated at detuning -2 hbar J0 where J0/|vx| = |k2|/4".into(),
            ));
            run.write_csv(
                "xprofile.csv",
                &meta,
                &[
                    "x",
                    "psi_m_sq",
                    "psi_a_sq",
                    "damping",
                    "psi_m_sq_undamped",
                    "psi_a_sq_undamped",
                ],
                points.iter().map(|p| {
                    let (m, a) = p.normalised();
                    vec![
                        num(p.x),
                        num(p.psi_m_sq),
                        num(p.psi_a_sq),
                        num(p.damping),
                        num(m),
                        num(a),
                    ]
                }),
            )?;
            run.write_metadata(cfg, "xprofile evanescent", &meta)?;
        }
    }
    Ok(prof)
}

#[derive(Debug, Clone)]
pub struct EquivarianceReport {
    /// `(t / T, L1)` at the checkpoints that were stored.
    pub distances: Vec<(f64, f64)>,
    pub order_preserved: bool,
    pub clamped: usize,
    pub floor_hits: usize,
    pub unresolved: usize,
}

impl EquivarianceReport {
    pub fn worst(&self) -> f64 {
        self.distances.iter().map(|d| d.1).fold(0.0, f64::max)
    }
}

pub const CHECKPOINTS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

pub fn run_trajectories(ctx: &Context) -> Result<TrajectoryEnsemble> {
    let opts = ctx.field_options()?;
    let field = VelocityField::new(&ctx.modes, ctx.mass(), &opts.stencil, opts.eps_rho);
    let rho0 = dynamics::density(&dynamics::initial_state(&ctx.modes));
    integrate_trajectories(&field, &rho0, &ctx.cfg.trajectory_options(ctx.period()))
}

pub fn equivariance_report(ctx: &Context, ens: &TrajectoryEnsemble) -> Result<EquivarianceReport> {
    let mut distances = Vec::new();
    for q in CHECKPOINTS {
        let t = q * ctx.period();
        if ens.time_index(t).is_some() {
            distances.push((q, equivariance_distance(ens, &ctx.modes, t)?));
        }
    }
    Ok(EquivarianceReport {
        distances,
        order_preserved: ens.is_order_preserving(),
        clamped: ens.clamped_count(),
        floor_hits: ens.floor_hits,
        unresolved: ens.unresolved,
    })
}

pub fn cmd_trajectories(
    cfg: &RunConfig,
    run: &RunDir,
) -> Result<(TrajectoryEnsemble, EquivarianceReport)> {
    let ctx = Context::solve(cfg)?;
    let ens = run_trajectories(&ctx)?;
    let report = equivariance_report(&ctx, &ens)?;
    let meta = vec![
        ("seed".to_string(), ens.seed.to_string()),
        ("dt_ps".into(), num(ens.dt)),
        ("n_traj".into(), ens.n_traj().to_string()),
        ("clamped".into(), report.clamped.to_string()),
        ("floor_hits".into(), report.floor_hits.to_string()),
        ("substep_tol_um".into(), num(cfg.numerics.substep_tol_um)),
        ("unresolved_substeps".into(), report.unresolved.to_string()),
        ("period_ps".into(), num(ctx.period())),
    ];
    run.write_csv(
        "trajectories.csv",
        &meta,
        &["traj_id", "t", "y"],
        ens.positions.iter().enumerate().flat_map(|(id, row)| {
            row.iter()
                .zip(&ens.times)
                .map(move |(y, t)| vec![id.to_string(), num(*t), num(*y)])
                .collect::<Vec<_>>()
        }),
    )?;
    let mut lines: Vec<(String, String)> = report
        .distances
        .iter()
        .map(|(q, d)| (format!("l1_at_{q}T"), num(*d)))
        .collect();
    lines.push((
        "non_crossing".into(),
        if report.order_preserved {
            "pass"
        } else {
            "fail"
        }
        .into(),
    ));
    lines.push(("clamped".into(), report.clamped.to_string()));
    lines.push(("unresolved_substeps".into(), report.unresolved.to_string()));
    run.write_report("equivariance", &lines)?;
    run.write_metadata(cfg, "trajectories", &meta)?;
    Ok((ens, report))
}
