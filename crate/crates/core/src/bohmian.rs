//! Bohmian velocity field `v = (hbar/m) dS/dy` of the two-mode state,
//! trajectory ensembles, equivariance and speed statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{self, ModeGradients, Superposition};
use crate::eigensolver::ModePair;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::stencil::Stencil;
use crate::units;

/// Velocity at one point. `flagged` marks points below the density floor,
/// where the value is set to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub value: f64,
    pub flagged: bool,
}

/// Time-dependent data shared by every evaluation at one instant.
#[derive(Debug, Clone, Copy)]
struct Slice {
    sin2: f64,
    cos2: f64,
    floor: f64,
}

/// Closed-form velocity field, cubic in `y` between grid points and exact
/// in `t`.
#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: Grid1D,
    mass: f64,
    omega_s: f64,
    mix: Superposition,
    eps_rho: f64,
    chi_e: Vec<f64>,
    chi_o: Vec<f64>,
    d_e: Vec<f64>,
    d_o: Vec<f64>,
}

impl VelocityField {
    pub fn new(modes: &ModePair, mass: f64, stencil: &Stencil, eps_rho: f64) -> Self {
        Self::with_superposition(modes, Superposition::BALANCED, mass, stencil, eps_rho)
    }

    pub fn with_superposition(
        modes: &ModePair,
        mix: Superposition,
        mass: f64,
        stencil: &Stencil,
        eps_rho: f64,
    ) -> Self {
        let grads = ModeGradients::new(modes, stencil);
        Self {
            grid: modes.grid,
            mass,
            omega_s: modes.omega_s,
            mix,
            eps_rho,
            chi_e: modes.chi_e.clone(),
            chi_o: modes.chi_o.clone(),
            d_e: grads.d_e,
            d_o: grads.d_o,
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Density period `2 pi / w_s`, infinite for a decoupled pair.
    pub fn period(&self) -> f64 {
        if self.omega_s > 0.0 {
            2.0 * std::f64::consts::PI / self.omega_s
        } else {
            f64::INFINITY
        }
    }

    fn slice(&self, t: f64) -> Slice {
        let (sin2, cos2) = (self.omega_s * t).sin_cos();
        let (ae, ao) = (self.mix.a_e, self.mix.a_o);
        let max = self
            .chi_e
            .iter()
            .zip(&self.chi_o)
            .map(|(&e, &o)| ae * ae * e * e + ao * ao * o * o + 2.0 * ae * ao * cos2 * e * o)
            .fold(0.0_f64, f64::max);
        Slice {
            sin2,
            cos2,
            floor: self.eps_rho * max,
        }
    }

    /// Lagrange weights of the 4-point cell around `y`.
    fn cell(&self, y: f64) -> (usize, [f64; 4]) {
        let n = self.grid.n_points();
        let h = self.grid.spacing();
        let u = (y - self.grid.y_min()) / h;
        let i = (u.floor() as isize).clamp(1, n as isize - 3) as usize;
        let s = u - i as f64;
        // nodes at -1, 0, 1, 2
        let w = [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ];
        (i - 1, w)
    }

    fn eval(&self, slice: &Slice, y: f64) -> Velocity {
        let (start, w) = self.cell(y);
        let mut e = 0.0;
        let mut o = 0.0;
        let mut de = 0.0;
        let mut d_o = 0.0;
        for k in 0..4 {
            e += w[k] * self.chi_e[start + k];
            o += w[k] * self.chi_o[start + k];
            de += w[k] * self.d_e[start + k];
            d_o += w[k] * self.d_o[start + k];
        }
        let (ae, ao) = (self.mix.a_e, self.mix.a_o);
        let rho = ae * ae * e * e + ao * ao * o * o + 2.0 * ae * ao * slice.cos2 * e * o;
        if !(rho > slice.floor) {
            return Velocity {
                value: 0.0,
                flagged: true,
            };
        }
        let im = ae * ao * slice.sin2 * (o * de - e * d_o);
        Velocity {
            value: im / (self.mass * rho),
            flagged: false,
        }
    }

    /// `v(y, t)` in um/ps.
    pub fn velocity(&self, y: f64, t: f64) -> Result<Velocity> {
        if !self.grid.contains(y) || !y.is_finite() {
            return Err(Error::OutOfDomain {
                y,
                y_min: self.grid.y_min(),
                y_max: self.grid.y_max(),
            });
        }
        Ok(self.eval(&self.slice(t), y))
    }

    /// `v` at every grid point at time `t`.
    pub fn on_grid(&self, t: f64) -> Vec<Velocity> {
        let slice = self.slice(t);
        (0..self.grid.n_points())
            .map(|i| self.eval(&slice, self.grid.y(i)))
            .collect()
    }
}

/// Stored trajectories, one row per trajectory, one column per stored time.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub seed: u64,
    pub dt: f64,
    /// Trajectories that left the grid and were clamped to its boundary.
    pub clamped: Vec<bool>,
    /// Velocity evaluations that fell below the density floor.
    pub floor_hits: usize,
    /// Substeps accepted at the subdivision limit without meeting the
    /// tolerance.
    pub unresolved: usize,
}

impl TrajectoryEnsemble {
    pub fn n_traj(&self) -> usize {
        self.positions.len()
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    pub fn positions_at(&self, k: usize) -> Vec<f64> {
        self.positions.iter().map(|row| row[k]).collect()
    }

    /// Index of the stored time equal to `t` up to rounding.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let span = self.times.last().copied().unwrap_or(0.0).abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * span)
    }

    /// True when, at every stored time, the trajectories keep the order they
    /// started in.
    pub fn is_order_preserving(&self) -> bool {
        let mut order: Vec<usize> = (0..self.n_traj()).collect();
        order.sort_by(|&a, &b| self.positions[a][0].total_cmp(&self.positions[b][0]));
        (0..self.times.len()).all(|k| {
            order
                .windows(2)
                .all(|w| self.positions[w[0]][k] <= self.positions[w[1]][k])
        })
    }
}

/// Settings for [`integrate_trajectories`].
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOptions {
    pub n_traj: usize,
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    /// Store every `record_every`-th step (plus the initial and final state).
    pub record_every: usize,
    /// Local error tolerance (um) for step-doubling subdivision of a base
    /// step. Zero gives plain fixed-step RK4.
    pub substep_tol: f64,
}

/// Subdivision depth limit: `dt / 2^40`.
const MAX_SUBSTEP_DEPTH: u32 = 40;

/// Initial positions by inverse-CDF sampling of the grid density.
///
/// The CDF is the running trapezoid integral of `rho`, inverted exactly
/// inside each cell (linear density, quadratic CDF). Quantiles are
/// systematic, `u_j = (j + U) / n` with one uniform offset `U` drawn from a
/// ChaCha8 stream seeded with `seed`, so the sample is ordered and carries
/// far less noise than independent draws.
pub fn sample_positions(grid: &Grid1D, rho: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Precondition("need at least one trajectory".into()));
    }
    let h = grid.spacing();
    let mut cdf = Vec::with_capacity(rho.len());
    cdf.push(0.0);
    for i in 1..rho.len() {
        cdf.push(cdf[i - 1] + 0.5 * h * (rho[i - 1] + rho[i]));
    }
    let total = *cdf.last().unwrap_or(&0.0);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Input("density has no mass to sample from".into()));
    }
    let offset: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    let mut out = Vec::with_capacity(n);
    let mut cell = 0;
    for j in 0..n {
        let target = (j as f64 + offset) / n as f64 * total;
        while cell + 2 < cdf.len() && cdf[cell + 1] <= target {
            cell += 1;
        }
        let (r0, r1) = (rho[cell], rho[cell + 1]);
        let need = (target - cdf[cell]).max(0.0);
        // solve r0 s + (r1 - r0) s^2 / 2h = need for s in [0, h]
        let slope = (r1 - r0) / h;
        let s = if slope.abs() < 1e-300 {
            if r0 > 0.0 {
                need / r0
            } else {
                0.5 * h
            }
        } else {
            let disc = (r0 * r0 + 2.0 * slope * need).max(0.0);
            2.0 * need / (r0 + disc.sqrt())
        };
        out.push(grid.y(cell) + s.clamp(0.0, h));
    }
    Ok(out)
}

/// Fourth-order Runge-Kutta integration of `dy/dt = v(y, t)` from
/// `rho(., 0)`-distributed starting points.
///
/// Each base step of length `dt` is one classic RK4 step when
/// `substep_tol = 0`. Otherwise the step is compared with two half steps and
/// halved recursively until the step-doubling error estimate drops below
/// `substep_tol`; this only triggers where the field varies on a scale the
/// base step cannot follow (transit through the low-density barrier).
pub fn integrate_trajectories(
    field: &VelocityField,
    rho0: &[f64],
    opts: &TrajectoryOptions,
) -> Result<TrajectoryEnsemble> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || !(opts.t_final >= 0.0) {
        return Err(Error::Precondition(format!(
            "need dt > 0 and t_final >= 0, got dt = {}, t_final = {}",
            opts.dt, opts.t_final
        )));
    }
    let period = field.period();
    if period.is_finite() && opts.dt > period / 1000.0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "dt = {} ps exceeds T/1000 = {} ps",
            opts.dt,
            period / 1000.0
        )));
    }
    if opts.record_every == 0 {
        return Err(Error::Precondition(
            "record_every must be at least 1".into(),
        ));
    }
    if !(opts.substep_tol >= 0.0) {
        return Err(Error::Precondition(format!(
            "substep tolerance must be non-negative, got {}",
            opts.substep_tol
        )));
    }
    let grid = *field.grid();
    let start = sample_positions(&grid, rho0, opts.n_traj, opts.seed)?;

    let steps = (opts.t_final / opts.dt).round() as usize;
    let dt = if steps > 0 {
        opts.t_final / steps as f64
    } else {
        opts.dt
    };
    // density floor per base step, shared by all trajectories
    let floors: Vec<f64> = (0..steps.max(1))
        .into_par_iter()
        .map(|k| field.slice(dt * k as f64).floor)
        .collect();
    let mut recorded: Vec<usize> = (0..=steps).step_by(opts.record_every).collect();
    if *recorded.last().unwrap() != steps {
        recorded.push(steps);
    }
    let times: Vec<f64> = recorded.iter().map(|&k| k as f64 * dt).collect();

    let rows: Vec<(Vec<f64>, Stepper)> = start
        .par_iter()
        .map(|&y0| {
            let mut st = Stepper {
                field,
                lo: grid.y_min(),
                hi: grid.y_max(),
                tol: opts.substep_tol,
                floor: 0.0,
                hits: 0,
                clamped: false,
                unresolved: 0,
            };
            let mut y = y0;
            let mut row = Vec::with_capacity(recorded.len());
            let mut next = 0;
            for k in 0..=steps {
                if next < recorded.len() && recorded[next] == k {
                    row.push(y);
                    next += 1;
                }
                if k == steps {
                    break;
                }
                st.floor = floors[k];
                y = st.advance(y, dt * k as f64, dt, 0);
            }
            (row, st)
        })
        .collect();

    let floor_hits = rows.iter().map(|r| r.1.hits).sum();
    let unresolved: usize = rows.iter().map(|r| r.1.unresolved).sum();
    let clamped: Vec<bool> = rows.iter().map(|r| r.1.clamped).collect();
    if clamped.iter().any(|&c| c) {
        log::warn!(
            "{} trajectories left the grid and were clamped",
            clamped.iter().filter(|&&c| c).count()
        );
    }
    if unresolved > 0 {
        log::warn!("{unresolved} substeps hit the subdivision limit");
    }
    Ok(TrajectoryEnsemble {
        times,
        positions: rows.into_iter().map(|r| r.0).collect(),
        seed: opts.seed,
        dt,
        clamped,
        floor_hits,
        unresolved,
    })
}

struct Stepper<'a> {
    field: &'a VelocityField,
    lo: f64,
    hi: f64,
    tol: f64,
    floor: f64,
    hits: usize,
    clamped: bool,
    unresolved: usize,
}

impl Stepper<'_> {
    fn v(&mut self, y: f64, t: f64) -> f64 {
        let (sin2, cos2) = (self.field.omega_s * t).sin_cos();
        let slice = Slice {
            sin2,
            cos2,
            floor: self.floor,
        };
        let r = self.field.eval(&slice, y.clamp(self.lo, self.hi));
        if r.flagged {
            self.hits += 1;
        }
        r.value
    }

    fn rk4(&mut self, y: f64, t: f64, h: f64, k1: f64) -> f64 {
        let k2 = self.v(y + 0.5 * h * k1, t + 0.5 * h);
        let k3 = self.v(y + 0.5 * h * k2, t + 0.5 * h);
        let k4 = self.v(y + h * k3, t + h);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    fn keep_inside(&mut self, y: f64) -> f64 {
        if y < self.lo || y > self.hi {
            self.clamped = true;
            y.clamp(self.lo, self.hi)
        } else {
            y
        }
    }

    fn advance(&mut self, y: f64, t: f64, h: f64, depth: u32) -> f64 {
        let k1 = self.v(y, t);
        let full = self.rk4(y, t, h, k1);
        if self.tol == 0.0 {
            return self.keep_inside(full);
        }
        let half = 0.5 * h;
        let mid = self.rk4(y, t, half, k1);
        let k1m = self.v(mid, t + half);
        let two = self.rk4(mid, t + half, half, k1m);
        if (two - full).abs() / 15.0 <= self.tol {
            return self.keep_inside(two);
        }
        if depth >= MAX_SUBSTEP_DEPTH {
            self.unresolved += 1;
            return self.keep_inside(two);
        }
        let m = self.advance(y, t, half, depth + 1);
        self.advance(m, t + half, half, depth + 1)
    }
}

/// L1 distance between the normalised histogram of positions at stored time
/// `t` (one bin per grid cell) and the exact cell masses of `rho(., t)`.
pub fn equivariance_distance(
    ensemble: &TrajectoryEnsemble,
    modes: &ModePair,
    t: f64,
) -> Result<f64> {
    let k = ensemble.time_index(t).ok_or_else(|| {
        Error::Precondition(format!("t = {t} ps is not a stored trajectory time"))
    })?;
    let grid = modes.grid;
    let rho = dynamics::density(&dynamics::evolve(modes, t));
    Ok(histogram_l1(&grid, &rho, &ensemble.positions_at(k)))
}

/// L1 distance between sample histogram and grid density, per grid cell.
pub fn histogram_l1(grid: &Grid1D, rho: &[f64], samples: &[f64]) -> f64 {
    let cells = grid.n_points() - 1;
    let h = grid.spacing();
    let mut counts = vec![0usize; cells];
    for &y in samples {
        let c = (((y - grid.y_min()) / h).floor() as isize).clamp(0, cells as isize - 1);
        counts[c as usize] += 1;
    }
    let total: f64 = grid.integrate(rho);
    let n = samples.len() as f64;
    (0..cells)
        .map(|c| {
            let exact = 0.5 * h * (rho[c] + rho[c + 1]) / total;
            (counts[c] as f64 / n - exact).abs()
        })
        .sum()
}

/// Three summaries of `|v|` over a `(y, t)` window, in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedStatistics {
    pub mean_abs_v_uniform: f64,
    pub mean_abs_v_rho_weighted: f64,
    pub peak_abs_v: f64,
    /// Masked `(y, t)` samples that entered the averages.
    pub samples: usize,
    /// Samples excluded for lying below the density floor.
    pub flagged: usize,
}

/// `|v| = (hbar/m)|dS/dy|` from the closed-form gradient, averaged over
/// grid points with `window.0 <= y <= window.1` and the given times.
pub fn speed_statistics(
    modes: &ModePair,
    mass: f64,
    window: (f64, f64),
    times: &[f64],
    stencil: &Stencil,
    eps_rho: f64,
) -> Result<SpeedStatistics> {
    let grid = modes.grid;
    for y in [window.0, window.1] {
        if !grid.contains(y) {
            return Err(Error::OutOfDomain {
                y,
                y_min: grid.y_min(),
                y_max: grid.y_max(),
            });
        }
    }
    let field = VelocityField::new(modes, mass, stencil, eps_rho);
    let idx: Vec<usize> = (0..grid.n_points())
        .filter(|&i| grid.y(i) >= window.0 && grid.y(i) <= window.1)
        .collect();
    let per_time: Vec<(f64, f64, f64, f64, usize, usize)> = times
        .par_iter()
        .map(|&t| {
            let slice = field.slice(t);
            let mut acc = (0.0, 0.0, 0.0, 0.0, 0, 0);
            for &i in &idx {
                let y = grid.y(i);
                let v = field.eval(&slice, y);
                if v.flagged {
                    acc.5 += 1;
                    continue;
                }
                let (e, o) = (modes.chi_e[i], modes.chi_o[i]);
                let rho = 0.5 * (e * e + o * o) + slice.cos2 * e * o;
                let a = v.value.abs();
                acc.0 += a;
                acc.1 += rho * a;
                acc.2 += rho;
                acc.3 = f64::max(acc.3, a);
                acc.4 += 1;
            }
            acc
        })
        .collect();
    let (mut sum, mut wsum, mut wtot, mut peak, mut count, mut flagged) =
        (0.0, 0.0, 0.0, 0.0_f64, 0, 0);
    for p in per_time {
        sum += p.0;
        wsum += p.1;
        wtot += p.2;
        peak = peak.max(p.3);
        count += p.4;
        flagged += p.5;
    }
    if count == 0 {
        return Err(Error::EmptyPhase);
    }
    let conv = units::velocity_to_m_per_s;
    Ok(SpeedStatistics {
        mean_abs_v_uniform: conv(sum / count as f64),
        mean_abs_v_rho_weighted: conv(if wtot > 0.0 { wsum / wtot } else { 0.0 }),
        peak_abs_v: conv(peak),
        samples: count,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FieldOptions, FieldSnapshot};
    use crate::eigensolver::{solve_modes, PotentialSpec};

    fn modes() -> ModePair {
        let pot = PotentialSpec::new(1.0, 3.0, 1.5, 0.0, 0.0).unwrap();
        solve_modes(&Grid1D::symmetric(1601, 9.0).unwrap(), &pot).unwrap()
    }

    #[test]
    fn field_vanishes_at_t_zero_and_has_flow_symmetries() {
        let m = modes();
        let f = VelocityField::new(&m, 1.0, &Stencil::new(8).unwrap(), 1e-12);
        assert!(f.on_grid(0.0).iter().all(|v| v.value == 0.0));
        let tp = m.period();
        let v = |y: f64, t: f64| f.velocity(y, t).unwrap().value;
        // mirrored points use different interpolation cells
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-7 * a.abs().max(b.abs()).max(1e-30);
        let mut reversed_mirror_holds = true;
        for &(y, t) in &[
            (0.37, 0.1 * tp),
            (-2.2, 0.3 * tp),
            (4.05, 0.77 * tp),
            (1.3, 0.05 * tp),
        ] {
            // time reversal, and parity combined with a half-period shift
            assert!(close(v(y, tp - t), -v(y, t)));
            assert!(close(v(-y, t + 0.5 * tp), -v(y, t)));
            assert!(close(v(-y, 0.5 * tp - t), v(y, t)));
            reversed_mirror_holds &= close(v(-y, tp - t), -v(y, t));
        }
        // v(y, t) = -v(-y, T - t) would require rho(y, t) = rho(-y, t)
        assert!(!reversed_mirror_holds);
        assert!(matches!(
            f.velocity(9.5, 1.0),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn grid_values_match_snapshot_velocity() {
        let m = modes();
        let opts = FieldOptions::default();
        let f = VelocityField::new(&m, 1.0, &opts.stencil, opts.eps_rho);
        let t = 0.21 * m.period();
        let snap = FieldSnapshot::compute(&m, 1.0, t, &opts).unwrap();
        let v = f.on_grid(t);
        let scale = snap
            .v_y
            .iter()
            .filter(|x| x.is_finite())
            .fold(0.0_f64, |a, b| a.max(b.abs()));
        for i in 0..v.len() {
            if snap.v_y[i].is_finite() && !v[i].flagged {
                assert!((v[i].value - snap.v_y[i]).abs() < 1e-6 * scale);
            }
        }
    }

    #[test]
    fn interpolation_is_exact_for_cubics() {
        let grid = Grid1D::symmetric(21, 2.0).unwrap();
        let ys = grid.points();
        let cubic = |y: f64| 0.3 * y * y * y - y * y + 2.0;
        let mut m = modes();
        m.grid = grid;
        m.chi_e = ys.iter().map(|&y| cubic(y)).collect();
        m.chi_o = vec![0.0; 21];
        let f = VelocityField::new(&m, 1.0, &Stencil::new(2).unwrap(), 1e-12);
        let (start, w) = f.cell(0.537);
        let got: f64 = (0..4).map(|k| w[k] * f.chi_e[start + k]).sum();
        assert!((got - cubic(0.537)).abs() < 1e-12);
    }

    #[test]
    fn stationary_state_is_static() {
        let m = modes();
        let f = VelocityField::with_superposition(
            &m,
            Superposition::EVEN,
            1.0,
            &Stencil::new(8).unwrap(),
            1e-12,
        );
        let rho0: Vec<f64> = m.chi_e.iter().map(|e| e * e).collect();
        let opts = TrajectoryOptions {
            n_traj: 200,
            t_final: 0.01 * m.period(),
            dt: 0.0005 * m.period(),
            seed: 7,
            record_every: 5,
            substep_tol: 0.0,
        };
        let ens = integrate_trajectories(&f, &rho0, &opts).unwrap();
        for row in &ens.positions {
            assert!(row.iter().all(|&y| y == row[0]));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_sorted() {
        let m = modes();
        let rho = dynamics::density(&dynamics::initial_state(&m));
        let a = sample_positions(&m.grid, &rho, 5000, 11).unwrap();
        let b = sample_positions(&m.grid, &rho, 5000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(histogram_l1(&m.grid, &rho, &a) < 0.05);
        assert!(sample_positions(&m.grid, &rho, 0, 1).is_err());
    }

    #[test]
    fn fixed_step_rk4_converges_at_fourth_order() {
        // strongly overlapping wells: the field is resolved by the base step
        let pot = PotentialSpec::new(1.0, 1.5, 1.0, 0.0, 0.0).unwrap();
        let m = solve_modes(&Grid1D::symmetric(801, 8.0).unwrap(), &pot).unwrap();
        let f = VelocityField::new(&m, 1.0, &Stencil::new(8).unwrap(), 1e-12);
        let rho0 = dynamics::density(&dynamics::initial_state(&m));
        let run = |dt_frac: f64| {
            let opts = TrajectoryOptions {
                n_traj: 64,
                t_final: 0.25 * m.period(),
                dt: dt_frac * m.period(),
                seed: 3,
                record_every: 1_000_000,
                substep_tol: 0.0,
            };
            let e = integrate_trajectories(&f, &rho0, &opts).unwrap();
            e.positions_at(e.times.len() - 1)
        };
        let (a, b, c) = (run(1.0 / 1000.0), run(1.0 / 2000.0), run(1.0 / 4000.0));
        let d1 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let d2 = b
            .iter()
            .zip(&c)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!((d1 / d2).log2() >= 3.5, "{d1:e} {d2:e}");
    }

    /// Cumulative mass of piecewise-linear `rho` up to `y`, normalised.
    fn cdf(grid: &Grid1D, rho: &[f64], y: f64) -> f64 {
        let h = grid.spacing();
        let mut acc = 0.0;
        let mut total = 0.0;
        for i in 0..rho.len() - 1 {
            let cell = 0.5 * h * (rho[i] + rho[i + 1]);
            total += cell;
            let (a, b) = (grid.y(i), grid.y(i + 1));
            if y >= b {
                acc += cell;
            } else if y > a {
                let s = y - a;
                acc += rho[i] * s + 0.5 * (rho[i + 1] - rho[i]) / h * s * s;
            }
        }
        acc / total
    }

    fn quantile(grid: &Grid1D, rho: &[f64], u: f64) -> f64 {
        let (mut lo, mut hi) = (grid.y_min(), grid.y_max());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(grid, rho, mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn substeps_follow_the_quantile_transport_through_the_barrier() {
        // a monotone flow carrying rho(., 0) to rho(., t) maps each trajectory
        // to the point with the same cumulative mass
        let m = modes();
        let f = VelocityField::new(&m, 1.0, &Stencil::new(8).unwrap(), 1e-12);
        let rho0 = dynamics::density(&dynamics::initial_state(&m));
        let opts = TrajectoryOptions {
            n_traj: 200,
            t_final: 0.5 * m.period(),
            dt: m.period() / 2000.0,
            seed: 5,
            record_every: 250,
            substep_tol: 1e-7,
        };
        let e = integrate_trajectories(&f, &rho0, &opts).unwrap();
        assert_eq!(e.clamped_count(), 0);
        assert!(e.is_order_preserving());
        let start = e.positions_at(0);
        let g = &m.grid;
        for &q in &[0.25, 0.5] {
            let t = q * m.period();
            let rho = dynamics::density(&dynamics::evolve(&m, t));
            let now = e.positions_at(e.time_index(t).unwrap());
            let mut worst = 0.0_f64;
            for (y0, y) in start.iter().zip(&now) {
                let exact = quantile(g, &rho, cdf(g, &rho0, *y0));
                worst = worst.max((y - exact).abs());
            }
            // second order in h through the discrete modes; 3201 points give 3e-4
            assert!(worst < 2e-3, "t = {q} T: {worst:e}");
        }
    }

    #[test]
    fn coarse_step_is_refused() {
        let m = modes();
        let f = VelocityField::new(&m, 1.0, &Stencil::new(8).unwrap(), 1e-12);
        let rho0 = dynamics::density(&dynamics::initial_state(&m));
        let opts = TrajectoryOptions {
            n_traj: 10,
            t_final: m.period(),
            dt: m.period() / 100.0,
            seed: 1,
            record_every: 1,
            substep_tol: 0.0,
        };
        assert!(matches!(
            integrate_trajectories(&f, &rho0, &opts),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn speed_statistics_scale_inversely_with_mass() {
        let m = modes();
        let st = Stencil::new(8).unwrap();
        let ts: Vec<f64> = (0..21).map(|k| k as f64 * m.period() / 20.0).collect();
        let a = speed_statistics(&m, 1.0, (-2.0, 2.0), &ts, &st, 1e-12).unwrap();
        let b = speed_statistics(&m, 2.0, (-2.0, 2.0), &ts, &st, 1e-12).unwrap();
        assert!((a.mean_abs_v_uniform / b.mean_abs_v_uniform - 2.0).abs() < 1e-12);
        assert!((a.mean_abs_v_rho_weighted / b.mean_abs_v_rho_weighted - 2.0).abs() < 1e-12);
        assert!((a.peak_abs_v / b.peak_abs_v - 2.0).abs() < 1e-12);
        assert!(a.peak_abs_v >= a.mean_abs_v_uniform);
        assert!(speed_statistics(&m, 1.0, (-20.0, 2.0), &ts, &st, 1e-12).is_err());
    }
}
