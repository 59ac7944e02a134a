//! Invariant suite run by `cwg check`.
//!
//! Every module contributes its invariants. Checks that only make sense for
//! a genuine double well (localised initial state, two-level agreement, the
//! small-time law) are skipped with a note when the barrier does not
//! separate the lowest pair, for instance with `a = 0`.

use std::fmt;

use rayon::prelude::*;

use crate::bohmian::VelocityField;
use crate::commands::{self, Context};
use crate::config::RunConfig;
use crate::dynamics::{self, FieldSnapshot};
use crate::eigensolver::{build_hamiltonian, classify_parity, solve_modes, Parity, PARITY_TOL};
use crate::error::Result;
use crate::grid::Grid1D;
use crate::xaxis::{evanescent_detuning, LongitudinalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub status: Status,
    pub value: f64,
    pub threshold: String,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    fn push(
        &mut self,
        module: &'static str,
        name: &'static str,
        ok: bool,
        value: f64,
        threshold: impl Into<String>,
    ) {
        self.results.push(CheckResult {
            module,
            name,
            status: if ok { Status::Pass } else { Status::Fail },
            value,
            threshold: threshold.into(),
            note: String::new(),
        });
    }

    fn skip(&mut self, module: &'static str, name: &'static str, note: &str) {
        self.results.push(CheckResult {
            module,
            name,
            status: Status::Skipped,
            value: f64::NAN,
            threshold: String::new(),
            note: note.into(),
        });
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results
            .iter()
            .filter(|r| r.status == Status::Fail)
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Relative change ratio `(f(n) - f(2n)) / (f(2n) - f(4n))` for energies.
fn richardson_ratio(grid: &Grid1D, ctx: &Context) -> Result<(f64, f64)> {
    let coarse = Grid1D::symmetric(grid.n_points() / 2 + 1, grid.y_max())?;
    let fine = grid.refined();
    let pot = &ctx.potential;
    let m: Vec<_> = [coarse, *grid, fine]
        .par_iter()
        .map(|g| solve_modes(g, pot))
        .collect::<Result<Vec<_>>>()?;
    let r = |f: &dyn Fn(usize) -> f64| (f(0) - f(1)) / (f(1) - f(2));
    Ok((r(&|k| m[k].e_even), r(&|k| m[k].e_odd)))
}

pub fn run_checks(cfg: &RunConfig) -> Result<CheckReport> {
    let ctx = Context::solve(cfg)?;
    let grid = ctx.grid;
    let modes = &ctx.modes;
    let mass = ctx.mass();
    let period = ctx.period();
    let opts = ctx.field_options()?;
    let mut rep = CheckReport::default();
    let double_well =
        ctx.potential.well_separation > 0.0 && ctx.potential.barrier_height() > modes.e_odd;
    let no_barrier =
        "barrier does not separate the lowest pair; localisation checks not applicable";

    // eigensolver
    rep.push(
        "eigensolver",
        "even_mode_parity",
        classify_parity(&grid, &modes.chi_e, PARITY_TOL) == Parity::Even,
        parity_deviation(&grid, &modes.chi_e, 1.0),
        "relative < 1e-6",
    );
    rep.push(
        "eigensolver",
        "odd_mode_parity",
        classify_parity(&grid, &modes.chi_o, PARITY_TOL) == Parity::Odd,
        parity_deviation(&grid, &modes.chi_o, -1.0),
        "relative < 1e-6",
    );
    let ortho = [
        (grid.inner(&modes.chi_e, &modes.chi_e) - 1.0).abs(),
        (grid.inner(&modes.chi_o, &modes.chi_o) - 1.0).abs(),
        grid.inner(&modes.chi_e, &modes.chi_o).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    rep.push(
        "eigensolver",
        "orthonormality",
        ortho < 1e-8,
        ortho,
        "< 1e-8",
    );
    rep.push(
        "eigensolver",
        "ordering",
        modes.e_even < modes.e_odd,
        modes.e_odd - modes.e_even,
        "E_o - E_e > 0",
    );
    let ham = build_hamiltonian(&grid, &ctx.potential)?;
    let width = ctx.potential.ground_width();
    let trial: Vec<f64> = (0..grid.n_points())
        .map(|i| {
            let y = grid.y(i);
            let d = (y - ctx.potential.well_separation) / width;
            if i == 0 || i + 1 == grid.n_points() {
                0.0
            } else {
                (-0.5 * d * d).exp()
            }
        })
        .collect();
    let rq = ham.rayleigh(&trial);
    let slack = 1e-10 * modes.e_even.abs().max(1.0);
    rep.push(
        "eigensolver",
        "variational_bound",
        rq >= modes.e_even - slack,
        rq - modes.e_even,
        ">= 0",
    );
    let (ratio_e, ratio_o) = richardson_ratio(&grid, &ctx)?;
    rep.push(
        "eigensolver",
        "grid_convergence_even",
        (3.5..=4.5).contains(&ratio_e),
        ratio_e,
        "[3.5, 4.5]",
    );
    rep.push(
        "eigensolver",
        "grid_convergence_odd",
        (3.5..=4.5).contains(&ratio_o),
        ratio_o,
        "[3.5, 4.5]",
    );

    // dynamics
    let times: Vec<f64> = (0..50).map(|k| (k as f64 + 0.5) * period / 50.0).collect();
    let snaps = times
        .par_iter()
        .map(|&t| FieldSnapshot::compute(modes, mass, t, &opts))
        .collect::<Result<Vec<_>>>()?;
    let norm_dev = snaps
        .iter()
        .map(|s| (s.norm(&grid) - 1.0).abs())
        .fold(0.0, f64::max);
    rep.push(
        "dynamics",
        "norm_conservation",
        norm_dev < 1e-8,
        norm_dev,
        "< 1e-8",
    );
    let min_rho = snaps
        .iter()
        .flat_map(|s| s.rho.iter().copied())
        .fold(f64::INFINITY, f64::min);
    rep.push(
        "dynamics",
        "density_non_negative",
        min_rho >= 0.0,
        min_rho,
        ">= 0",
    );
    let identity = snaps
        .iter()
        .map(|s| s.identity_deviation())
        .fold(0.0, f64::max);
    let tol = cfg.numerics.tol_identity;
    rep.push(
        "dynamics",
        "phase_gradient_identity",
        identity < tol,
        identity,
        format!("< {tol:e}"),
    );
    let overall = snaps
        .iter()
        .map(|s| s.max_abs_gradient())
        .fold(0.0, f64::max);
    let witness = FieldSnapshot::compute(modes, mass, period / 8.0, &opts)?.max_abs_gradient();
    rep.push(
        "dynamics",
        "nonzero_gradient_at_T_over_8",
        witness > 1e-3 * overall,
        witness,
        "> 1e-3 of max over the period",
    );
    let rho_at = |t: f64| dynamics::density(&dynamics::evolve(modes, t));
    let t1 = 0.3 * period;
    let per = max_abs_diff(&rho_at(t1), &rho_at(t1 + period));
    rep.push("dynamics", "periodicity", per < 1e-10, per, "< 1e-10");
    // reflection about the crossing time T/4, and the half-period mirror
    let tau = 0.17 * period;
    let mirrored = |a: &[f64], b: &[f64]| {
        (0..grid.n_points())
            .map(|i| (a[i] - b[grid.mirror(i)]).abs())
            .fold(0.0, f64::max)
    };
    let crossing = mirrored(&rho_at(0.25 * period + tau), &rho_at(0.25 * period - tau));
    let half = mirrored(&rho_at(0.5 * period + tau), &rho_at(tau));
    let mirror = crossing.max(half);
    rep.push(
        "dynamics",
        "mirror_symmetry",
        mirror < 1e-10,
        mirror,
        "< 1e-10",
    );

    let coarse = Grid1D::symmetric(grid.n_points() / 2 + 1, grid.y_max())?;
    let coarse_modes = solve_modes(&coarse, &ctx.potential)?;
    let residual = |m: &crate::eigensolver::ModePair, dt: f64| {
        (0..=8)
            .map(|k| {
                dynamics::continuity_residual(
                    m,
                    mass,
                    k as f64 * period / 16.0,
                    dt,
                    cfg.numerics.eps_rho,
                )
            })
            .fold(0.0, f64::max)
    };
    let r_coarse = residual(&coarse_modes, period / 400.0);
    let r_fine = residual(modes, period / 800.0);
    rep.push(
        "dynamics",
        "continuity_residual",
        r_fine < 1e-4,
        r_fine,
        "< 1e-4",
    );
    let ratio = r_coarse / r_fine;
    rep.push(
        "dynamics",
        "continuity_convergence",
        (3.5..=4.5).contains(&ratio),
        ratio,
        "[3.5, 4.5]",
    );

    let pops = commands::population_series(&ctx)?;
    let sum_dev = pops
        .rows
        .iter()
        .map(|(w, _)| (w.p_plus + w.p_minus - 1.0).abs())
        .fold(0.0, f64::max);
    rep.push(
        "dynamics",
        "population_sum",
        sum_dev < 1e-8,
        sum_dev,
        "< 1e-8",
    );
    if double_well {
        let p0 = pops.rows[0].0.p_minus;
        rep.push(
            "dynamics",
            "initial_localisation",
            p0 <= 0.01,
            p0,
            "p_minus(0) <= 0.01",
        );
        rep.push(
            "dynamics",
            "two_level_agreement",
            pops.oracle_gap < 0.01,
            pops.oracle_gap,
            "< 0.01",
        );
        let slope = pops.law.slope;
        rep.push(
            "dynamics",
            "quadratic_law_slope",
            (slope - 2.0).abs() <= 0.02,
            slope,
            "2.00 +- 0.02",
        );
        let ce = pops.law.curvature_error();
        rep.push(
            "dynamics",
            "quadratic_law_curvature",
            ce < 0.02,
            ce,
            "< 0.02",
        );
    } else {
        for name in [
            "initial_localisation",
            "two_level_agreement",
            "quadratic_law_slope",
            "quadratic_law_curvature",
        ] {
            rep.skip("dynamics", name, no_barrier);
        }
    }

    // xaxis
    let beam = cfg.longitudinal()?;
    let probe = [-1.0, -1e-6, 0.0, 1e-6, 1.0]
        .map(|d| LongitudinalConfig::from_detuning(beam.mass, beam.step_height, d * modes.j0));
    let mut branch_ok = true;
    for c in probe.iter().flatten() {
        branch_ok &= c.k2().im >= 0.0
            && c.k2().norm() <= (2.0 * c.mass * c.detuning().abs()).sqrt() * (1.0 + 1e-12);
    }
    rep.push(
        "xaxis",
        "k2_branch_and_threshold",
        branch_ok,
        0.0,
        "Im k2 >= 0, k2 -> 0 at E = V0",
    );
    let shifted = ctx.potential;
    let other = crate::eigensolver::PotentialSpec {
        step_height: shifted.step_height * 3.0 + 1.0,
        beam_energy: shifted.beam_energy * 0.5,
        ..shifted
    };
    let alt = solve_modes(&grid, &other)?;
    let same = alt.omega_s.to_bits() == modes.omega_s.to_bits()
        && alt.chi_e == modes.chi_e
        && alt.chi_o == modes.chi_o;
    rep.push(
        "xaxis",
        "regime_independence",
        same,
        0.0,
        "bit-identical modes",
    );
    let ev = LongitudinalConfig::from_detuning(
        beam.mass,
        beam.step_height,
        evanescent_detuning(modes.j0),
    )?;
    let q = (ev.quarter_relation_ratio(modes.j0) - 1.0).abs();
    rep.push(
        "xaxis",
        "quarter_relation_at_minus_2_J0",
        q < 1e-9,
        q,
        "< 1e-9",
    );

    // bohmian
    let field = VelocityField::new(modes, mass, &opts.stencil, opts.eps_rho);
    let zero = field
        .on_grid(0.0)
        .iter()
        .map(|v| v.value.abs())
        .fold(0.0, f64::max);
    rep.push("bohmian", "zero_field_at_t0", zero == 0.0, zero, "== 0");
    let t = 0.2 * period;
    let snap = FieldSnapshot::compute(modes, mass, t, &opts)?;
    let on = field.on_grid(t);
    let scale = snap
        .v_y
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let dev = (0..grid.n_points())
        .filter(|&i| snap.v_y[i].is_finite() && !on[i].flagged)
        .map(|i| (on[i].value - snap.v_y[i]).abs())
        .fold(0.0, f64::max)
        / scale;
    rep.push(
        "bohmian",
        "velocity_matches_snapshot",
        dev < 1e-6,
        dev,
        "< 1e-6",
    );
    let ens = commands::run_trajectories(&ctx)?;
    let eq = commands::equivariance_report(&ctx, &ens)?;
    rep.push(
        "bohmian",
        "non_crossing",
        eq.order_preserved,
        0.0,
        "order preserved",
    );
    rep.push(
        "bohmian",
        "no_clamping",
        eq.clamped == 0,
        eq.clamped as f64,
        "== 0",
    );
    let worst = eq.worst();
    rep.push(
        "bohmian",
        "equivariance_l1",
        worst < 0.05,
        worst,
        "< 0.05 at stored checkpoints",
    );

    Ok(rep)
}

pub fn write_report(rep: &CheckReport, run: &crate::output::RunDir) -> Result<()> {
    use crate::output::num;
    run.write_csv(
        "check.csv",
        &[],
        &["module", "check", "status", "value", "threshold", "note"],
        rep.results.iter().map(|r| {
            vec![
                r.module.to_string(),
                r.name.to_string(),
                r.status.to_string(),
                num(r.value),
                r.threshold.clone(),
                r.note.clone(),
            ]
        }),
    )?;
    Ok(())
}

/// max |f(y) - s f(-y)| / max |f|
fn parity_deviation(grid: &Grid1D, f: &[f64], s: f64) -> f64 {
    let max = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (0..grid.n_points())
        .map(|i| (f[i] - s * f[grid.mirror(i)]).abs())
        .fold(0.0, f64::max)
        / max
}
