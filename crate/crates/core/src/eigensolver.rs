//! Transverse eigenproblem: finite-difference `H_y = p_y^2 / 2m + V(y)` on a
//! symmetric grid, its lowest even/odd pair, and calibration of the potential
//! to a target tunnelling period.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::tridiag::SymTridiagonal;
use crate::units;

/// Pointwise parity tolerance, relative to the largest amplitude.
pub const PARITY_TOL: f64 = 1e-6;

/// Splittings below this multiple of `eps * |E_e|` are treated as degenerate.
pub const DEGENERACY_FACTOR: f64 = 1e3;

/// Piecewise-harmonic double well `V(y) = m w0^2 (|y| - a)^2 / 2` together
/// with the longitudinal step. All fields in internal units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub mass: f64,
    pub well_separation: f64,
    pub well_frequency: f64,
    pub step_height: f64,
    pub beam_energy: f64,
}

impl PotentialSpec {
    pub fn new(
        mass: f64,
        well_separation: f64,
        well_frequency: f64,
        step_height: f64,
        beam_energy: f64,
    ) -> Result<Self> {
        let spec = Self {
            mass,
            well_separation,
            well_frequency,
            step_height,
            beam_energy,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Build from SI inputs (kg, um, rad/s, J, J).
    pub fn from_si(
        mass_kg: f64,
        well_separation_um: f64,
        well_frequency_rad_per_s: f64,
        step_height_j: f64,
        beam_energy_j: f64,
    ) -> Result<Self> {
        Self::new(
            units::mass_from_kg(mass_kg),
            well_separation_um,
            units::freq_from_rad_per_s(well_frequency_rad_per_s),
            units::energy_from_joule(step_height_j),
            units::energy_from_joule(beam_energy_j),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.well_separation,
            self.well_frequency,
            self.step_height,
            self.beam_energy,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("potential parameters must be finite".into()));
        }
        if self.mass <= 0.0 || self.well_frequency <= 0.0 {
            return Err(Error::Input(format!(
                "mass and well frequency must be positive (m = {}, w0 = {})",
                self.mass, self.well_frequency
            )));
        }
        if self.well_separation < 0.0 {
            return Err(Error::Input(format!(
                "well separation must be non-negative, got {}",
                self.well_separation
            )));
        }
        Ok(())
    }

    pub fn value(&self, y: f64) -> f64 {
        let d = y.abs() - self.well_separation;
        0.5 * self.mass * self.well_frequency * self.well_frequency * d * d
    }

    pub fn barrier_height(&self) -> f64 {
        self.value(0.0)
    }

    /// Oscillator length `sqrt(hbar / m w0)` of a single well.
    pub fn ground_width(&self) -> f64 {
        (1.0 / (self.mass * self.well_frequency)).sqrt()
    }

    pub fn with_mass(self, mass: f64) -> Self {
        Self { mass, ..self }
    }

    pub fn with_well_frequency(self, well_frequency: f64) -> Self {
        Self {
            well_frequency,
            ..self
        }
    }

    pub fn with_well_separation(self, well_separation: f64) -> Self {
        Self {
            well_separation,
            ..self
        }
    }
}

/// Dirichlet finite-difference Hamiltonian. The matrix acts on the interior
/// points `1..n-1`; the two end points are pinned to zero.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grid: Grid1D,
    matrix: SymTridiagonal,
    sign_reference: f64,
    coarse: bool,
}

impl Hamiltonian {
    /// Hamiltonian for arbitrary potential samples `v[i] = V(y_i)`.
    /// `sign_reference` is the `y` where eigenvectors are made positive.
    pub fn from_samples(grid: &Grid1D, mass: f64, v: &[f64], sign_reference: f64) -> Result<Self> {
        grid.require_symmetric()?;
        if v.len() != grid.n_points() {
            return Err(Error::Input(format!(
                "potential has {} samples for {} grid points",
                v.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Input(format!(
                "potential is not finite at y = {}",
                grid.y(i)
            )));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Input(format!("mass must be positive, got {mass}")));
        }
        let h = grid.spacing();
        let kin = 1.0 / (2.0 * mass * h * h);
        let n = grid.n_points();
        let diag: Vec<f64> = (1..n - 1).map(|i| 2.0 * kin + v[i]).collect();
        let off = vec![-kin; n - 3];
        Ok(Self {
            grid: *grid,
            matrix: SymTridiagonal::new(diag, off)?,
            sign_reference,
            coarse: false,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn matrix(&self) -> &SymTridiagonal {
        &self.matrix
    }

    /// Whether the potential changes by more than `0.1 hbar w0` per cell.
    pub fn is_coarse(&self) -> bool {
        self.coarse
    }

    /// Rayleigh quotient of a full-grid function (end values ignored).
    pub fn rayleigh(&self, f: &[f64]) -> f64 {
        self.matrix.rayleigh(&f[1..f.len() - 1])
    }
}

/// Second-order central differences for `H_y` of the double well.
pub fn build_hamiltonian(grid: &Grid1D, pot: &PotentialSpec) -> Result<Hamiltonian> {
    grid.require_symmetric()?;
    pot.validate()?;
    let ys = grid.points();
    let v: Vec<f64> = ys.iter().map(|&y| pot.value(y)).collect();
    let mut ham = Hamiltonian::from_samples(grid, pot.mass, &v, pot.well_separation)?;

    let quantum = 0.1 * pot.well_frequency;
    let step = v
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    if step > quantum {
        warn!(
            "grid too coarse: potential changes by {step:.3e} per cell, more than 0.1 hbar w0 = {quantum:.3e}"
        );
        ham.coarse = true;
    }
    let needed = pot.well_separation + 6.0 * pot.ground_width();
    if grid.y_max() < needed {
        warn!(
            "grid half-extent {} um is below a + 6 sigma = {needed:.3} um; boundary error may exceed quadrature tolerance",
            grid.y_max()
        );
    }
    Ok(ham)
}

/// An eigenpair on the full grid, trapezoid-normalised.
#[derive(Debug, Clone)]
pub struct GridEigenpair {
    pub energy: f64,
    pub values: Vec<f64>,
}

/// The `k` lowest eigenpairs, ascending, normalised under the trapezoid rule
/// and signed so each is positive at `y = +a` (or, where it vanishes there,
/// at its largest lobe on `y > 0`).
pub fn solve_lowest(ham: &Hamiltonian, k: usize) -> Result<Vec<GridEigenpair>> {
    if k < 2 {
        return Err(Error::Input(format!(
            "need at least 2 eigenpairs, asked for {k}"
        )));
    }
    let grid = ham.grid;
    let h = grid.spacing();
    let raw = ham.matrix.lowest(k)?;
    let gap = raw[1].value - raw[0].value;
    let floor = DEGENERACY_FACTOR * f64::EPSILON * raw[0].value.abs();
    if gap < floor {
        return Err(Error::Degenerate { gap, floor });
    }
    let reference = grid.nearest(ham.sign_reference);
    let out = raw
        .into_iter()
        .map(|p| {
            let mut values = Vec::with_capacity(grid.n_points());
            values.push(0.0);
            // interior Euclidean norm 1 -> trapezoid norm 1 (ends are zero)
            let scale = 1.0 / h.sqrt();
            values.extend(p.vector.iter().map(|v| v * scale));
            values.push(0.0);
            if sign_at(&grid, &values, reference) < 0.0 {
                values.iter_mut().for_each(|v| *v = -*v);
            }
            GridEigenpair {
                energy: p.value,
                values,
            }
        })
        .collect();
    Ok(out)
}

fn sign_at(grid: &Grid1D, f: &[f64], reference: usize) -> f64 {
    let max = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if f[reference].abs() > 1e-8 * max {
        return f[reference];
    }
    let start = grid.center() + 1;
    let (_, v) = f[start..]
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |acc, (i, &v)| {
            if v.abs() > acc.1.abs() {
                (i, v)
            } else {
                acc
            }
        });
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

/// Compare `f(y)` with `f(-y)` pointwise on a symmetric grid.
pub fn classify_parity(grid: &Grid1D, f: &[f64], tol: f64) -> Parity {
    let max = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Parity::Mixed;
    }
    let n = grid.n_points();
    let mut even_dev = 0.0_f64;
    let mut odd_dev = 0.0_f64;
    for i in 0..n {
        let j = grid.mirror(i);
        even_dev = even_dev.max((f[i] - f[j]).abs());
        odd_dev = odd_dev.max((f[i] + f[j]).abs());
    }
    if even_dev <= tol * max {
        Parity::Even
    } else if odd_dev <= tol * max {
        Parity::Odd
    } else {
        Parity::Mixed
    }
}

/// The even/odd pair driving the transverse dynamics.
#[derive(Debug, Clone)]
pub struct ModePair {
    pub grid: Grid1D,
    pub chi_e: Vec<f64>,
    pub chi_o: Vec<f64>,
    pub e_even: f64,
    pub e_odd: f64,
    /// Tunnel splitting `(E_o - E_e) / hbar`.
    pub omega_s: f64,
    pub e_bar: f64,
    /// Two-level coupling `omega_s / 2`.
    pub j0: f64,
}

impl ModePair {
    /// Period of the density oscillation, `2 pi / omega_s`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_s
    }
}

pub fn make_mode_pair(grid: &Grid1D, pairs: &[GridEigenpair]) -> Result<ModePair> {
    if pairs.len() < 2 {
        return Err(Error::Input(format!(
            "need the two lowest eigenpairs, got {}",
            pairs.len()
        )));
    }
    grid.require_symmetric()?;
    let (ground, excited) = (&pairs[0], &pairs[1]);
    let pe = classify_parity(grid, &ground.values, PARITY_TOL);
    let po = classify_parity(grid, &excited.values, PARITY_TOL);
    if pe != Parity::Even || po != Parity::Odd {
        return Err(Error::ModelViolation(format!(
            "lowest two states are not an even/odd pair (found {pe:?}, {po:?}); \
             potential asymmetric or grid too coarse"
        )));
    }
    let gap = excited.energy - ground.energy;
    let floor = DEGENERACY_FACTOR * f64::EPSILON * ground.energy.abs();
    if !(gap > floor) {
        return Err(Error::Degenerate { gap, floor });
    }
    Ok(ModePair {
        grid: *grid,
        chi_e: ground.values.clone(),
        chi_o: excited.values.clone(),
        e_even: ground.energy,
        e_odd: excited.energy,
        omega_s: gap,
        e_bar: 0.5 * (ground.energy + excited.energy),
        j0: 0.5 * gap,
    })
}

/// Build, solve and package in one step.
pub fn solve_modes(grid: &Grid1D, pot: &PotentialSpec) -> Result<ModePair> {
    let ham = build_hamiltonian(grid, pot)?;
    let pairs = solve_lowest(&ham, 2)?;
    make_mode_pair(grid, &pairs)
}

/// Tunnelling period `2 pi / omega_s` for a potential.
pub fn period_of(grid: &Grid1D, pot: &PotentialSpec) -> Result<f64> {
    Ok(solve_modes(grid, pot)?.period())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParameter {
    Mass,
    WellFrequency,
}

impl FreeParameter {
    pub fn get(&self, pot: &PotentialSpec) -> f64 {
        match self {
            FreeParameter::Mass => pot.mass,
            FreeParameter::WellFrequency => pot.well_frequency,
        }
    }

    pub fn set(&self, pot: &PotentialSpec, value: f64) -> PotentialSpec {
        match self {
            FreeParameter::Mass => pot.with_mass(value),
            FreeParameter::WellFrequency => pot.with_well_frequency(value),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FreeParameter::Mass => "mass",
            FreeParameter::WellFrequency => "well_frequency",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationTarget {
    /// Target period, ps.
    pub period: f64,
    pub free: FreeParameter,
    /// Search interval for the free parameter (internal units).
    pub bracket: (f64, f64),
    /// Accepted relative period error.
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub potential: PotentialSpec,
    pub period: f64,
    pub evaluations: usize,
    /// True when the probe found a non-monotone period curve and the log-grid
    /// scan was used to locate the bracket.
    pub used_scan: bool,
    /// True when the input already met the target and was returned as is.
    pub unchanged: bool,
}

const PROBE_POINTS: usize = 9;
const SCAN_POINTS: usize = 65;
const MAX_CALIBRATION_STEPS: usize = 200;

/// Adjust one parameter of `pot` until the solved period matches the target.
///
/// The tunnel splitting is a smooth, usually monotone function of either
/// parameter, so the search is plain bisection in log space. A coarse probe
/// checks monotonicity first; if it fails, a finer log-grid scan picks the
/// first sign change and bisection runs locally there.
pub fn calibrate(
    target: &CalibrationTarget,
    pot: &PotentialSpec,
    grid: &Grid1D,
) -> Result<Calibration> {
    let (lo, hi) = target.bracket;
    if !(target.period > 0.0 && target.period.is_finite()) {
        return Err(Error::Config(format!(
            "target period must be positive, got {}",
            target.period
        )));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Config(format!(
            "calibration bracket for {} must satisfy 0 < lo < hi, got [{lo:e}, {hi:e}]",
            target.free.name()
        )));
    }
    grid.require_symmetric()?;
    pot.validate()?;

    let period_at = |p: f64| -> Result<f64> {
        match period_of(grid, &target.free.set(pot, p)) {
            Ok(t) => Ok(t),
            // splitting below resolution: the period is effectively unbounded
            Err(Error::Degenerate { .. }) | Err(Error::ModelViolation(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let rel_err = |t: f64| ((t - target.period) / target.period).abs();

    let mut evaluations = 1;
    let current = period_at(target.free.get(pot))?;
    if rel_err(current) <= target.rel_tol {
        return Ok(Calibration {
            potential: *pot,
            period: current,
            evaluations,
            used_scan: false,
            unchanged: true,
        });
    }

    let log_points = |count: usize| -> Vec<f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect()
    };
    let sample = |ps: &[f64]| -> Result<Vec<f64>> {
        ps.par_iter()
            .map(|&p| period_at(p))
            .collect::<Result<Vec<_>>>()
    };

    let probe = log_points(PROBE_POINTS);
    let probe_t = sample(&probe)?;
    evaluations += probe.len();
    let monotone = probe_t.iter().all(|t| t.is_finite())
        && (probe_t.windows(2).all(|w| w[1] > w[0]) || probe_t.windows(2).all(|w| w[1] < w[0]));

    let (points, periods, used_scan) = if monotone {
        (probe, probe_t, false)
    } else {
        let scan = log_points(SCAN_POINTS);
        let scan_t = sample(&scan)?;
        evaluations += scan.len();
        (scan, scan_t, true)
    };

    let sign = |t: f64| (t - target.period).signum();
    let cell = periods
        .windows(2)
        .position(|w| w[0].is_finite() && w[1].is_finite() && sign(w[0]) != sign(w[1]));
    let Some(cell) = cell else {
        let finite: Vec<f64> = periods.iter().copied().filter(|t| t.is_finite()).collect();
        return Err(Error::Calibration {
            target_ps: target.period,
            min_ps: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max_ps: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    };

    let (mut a, mut b) = (points[cell].ln(), points[cell + 1].ln());
    let sa = sign(periods[cell]);
    let mut best = (f64::INFINITY, points[cell]);
    for (p, t) in [
        (points[cell], periods[cell]),
        (points[cell + 1], periods[cell + 1]),
    ] {
        if rel_err(t) < best.0 {
            best = (rel_err(t), p);
        }
    }
    for _ in 0..MAX_CALIBRATION_STEPS {
        let mid = 0.5 * (a + b);
        let p = mid.exp();
        let t = period_at(p)?;
        evaluations += 1;
        if rel_err(t) < best.0 {
            best = (rel_err(t), p);
        }
        // stop once the period is pinned well below the tolerance or the
        // bracket has collapsed to rounding
        if rel_err(t) <= 1e-2 * target.rel_tol
            || (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(1.0)
        {
            break;
        }
        if sign(t) == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    let potential = target.free.set(pot, best.1);
    let period = period_of(grid, &potential)?;
    evaluations += 1;
    if rel_err(period) > target.rel_tol {
        return Err(Error::Numeric(format!(
            "calibration converged to {} = {:e} with period {period} ps, relative error {:e} above {:e}",
            target.free.name(),
            best.1,
            rel_err(period),
            target.rel_tol
        )));
    }
    Ok(Calibration {
        potential,
        period,
        evaluations,
        used_scan,
        unchanged: false,
    })
}
