//! Two-mode dynamics of the transverse state and the fields derived from it.
//!
//! All states are written in the rotating frame, i.e. with the common factor
//! `exp(-i E_bar t / hbar)` removed:
//!
//! ```text
//! chi(y, t) = a_e e^{+i w_s t / 2} chi_e(y) + a_o e^{-i w_s t / 2} chi_o(y)
//! ```
//!
//! With `a_e = a_o = 1/sqrt 2` this is the balanced superposition that starts
//! in the positive-y waveguide.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::ops::Range;

use log::warn;
use num_complex::Complex64;

use crate::eigensolver::ModePair;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::stencil::Stencil;

/// Frame label written into output metadata.
pub const GAUGE: &str = "rotating frame (common factor exp(-i E_bar t / hbar) removed)";

/// Default relative density floor for phase quantities.
pub const DEFAULT_EPS_RHO: f64 = 1e-12;

/// Real amplitudes of the even and odd modes at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superposition {
    pub a_e: f64,
    pub a_o: f64,
}

impl Superposition {
    /// `(chi_e + chi_o) / sqrt 2`, localised in the positive-y waveguide.
    pub const BALANCED: Self = Self {
        a_e: FRAC_1_SQRT_2,
        a_o: FRAC_1_SQRT_2,
    };

    /// The ground state alone; stationary.
    pub const EVEN: Self = Self { a_e: 1.0, a_o: 0.0 };

    pub fn new(a_e: f64, a_o: f64) -> Result<Self> {
        let norm = a_e * a_e + a_o * a_o;
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!(
                "mode amplitudes must satisfy a_e^2 + a_o^2 = 1, got {norm}"
            )));
        }
        Ok(Self { a_e, a_o })
    }
}

/// Numerical settings shared by the field computations.
#[derive(Debug, Clone, Copy)]
pub struct FieldOptions {
    /// Density floor relative to `max rho(., t)`.
    pub eps_rho: f64,
    /// Stencil for the phase gradient and the current.
    pub stencil: Stencil,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            eps_rho: DEFAULT_EPS_RHO,
            stencil: Stencil::new(8).expect("order 8 is valid"),
        }
    }
}

pub fn initial_state(modes: &ModePair) -> Vec<Complex64> {
    evolve(modes, 0.0)
}

/// Balanced state at time `t`:
/// `cos(w_s t/2) (chi_e + chi_o)/sqrt 2 + i sin(w_s t/2) (chi_e - chi_o)/sqrt 2`.
pub fn evolve(modes: &ModePair, t: f64) -> Vec<Complex64> {
    let (s, c) = (0.5 * modes.omega_s * t).sin_cos();
    modes
        .chi_e
        .iter()
        .zip(&modes.chi_o)
        .map(|(&e, &o)| Complex64::new(c * (e + o) * FRAC_1_SQRT_2, s * (e - o) * FRAC_1_SQRT_2))
        .collect()
}

/// General two-mode state at time `t`.
pub fn evolve_superposition(modes: &ModePair, mix: Superposition, t: f64) -> Vec<Complex64> {
    let phase = Complex64::from_polar(1.0, 0.5 * modes.omega_s * t);
    let (pe, po) = (phase * mix.a_e, phase.conj() * mix.a_o);
    modes
        .chi_e
        .iter()
        .zip(&modes.chi_o)
        .map(|(&e, &o)| pe * e + po * o)
        .collect()
}

pub fn density(chi: &[Complex64]) -> Vec<f64> {
    chi.iter().map(|z| z.norm_sqr()).collect()
}

/// Points where `rho > eps_rho * max rho`.
pub fn density_mask(rho: &[f64], eps_rho: f64) -> Vec<bool> {
    let floor = eps_rho * rho.iter().fold(0.0_f64, |m, &r| m.max(r));
    rho.iter().map(|&r| r > floor).collect()
}

/// Unwrapped phase on the density mask.
#[derive(Debug, Clone)]
pub struct Phase {
    /// `NaN` off the mask.
    pub values: Vec<f64>,
    /// Runs of consecutive points unwrapped together.
    pub segments: Vec<Range<usize>>,
}

/// Argument of `chi`, unwrapped left to right within each connected mask
/// component. A component is split where neighbouring arguments differ by
/// more than `pi/2` after wrapping: the grid does not resolve the phase there
/// (a node of `chi` sits between the two points). Each segment is anchored at
/// `atan(Im chi / Re chi)` at its first point.
pub fn phase(chi: &[Complex64], mask: &[bool]) -> Result<Phase> {
    let n = chi.len();
    let mut values = vec![f64::NAN; n];
    let mut segments = Vec::new();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        values[i] = anchor(chi[i]);
        i += 1;
        while i < n && mask[i] {
            let step = wrap(chi[i].arg() - chi[i - 1].arg());
            if step.abs() > FRAC_PI_2 {
                break;
            }
            values[i] = values[i - 1] + step;
            i += 1;
        }
        segments.push(start..i);
    }
    if segments.is_empty() {
        return Err(Error::EmptyPhase);
    }
    Ok(Phase { values, segments })
}

fn anchor(z: Complex64) -> f64 {
    if z.re == 0.0 {
        return if z.im >= 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
    }
    (z.im / z.re).atan()
}

fn wrap(d: f64) -> f64 {
    let mut d = d % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Finite-difference derivative of the unwrapped phase, segment by segment,
/// never straddling `breaks`. Segments shorter than three points stay `NaN`;
/// the second value is how many were skipped.
pub fn phase_gradient(
    phase: &Phase,
    h: f64,
    stencil: &Stencil,
    breaks: &[usize],
) -> (Vec<f64>, usize) {
    let mut out = vec![f64::NAN; phase.values.len()];
    let mut skipped = 0;
    for seg in &phase.segments {
        if !stencil.derivative_on(&phase.values, h, seg.clone(), breaks, &mut out) {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("{skipped} mask fragment(s) shorter than 3 points have no phase gradient");
    }
    (out, skipped)
}

/// Grid derivatives of the two modes.
#[derive(Debug, Clone)]
pub struct ModeGradients {
    pub d_e: Vec<f64>,
    pub d_o: Vec<f64>,
}

impl ModeGradients {
    pub fn new(modes: &ModePair, stencil: &Stencil) -> Self {
        let h = modes.grid.spacing();
        let breaks = [modes.grid.center()];
        Self {
            d_e: stencil.derivative(&modes.chi_e, h, &breaks),
            d_o: stencil.derivative(&modes.chi_o, h, &breaks),
        }
    }

    /// Wronskian-type combination `chi_o chi_e' - chi_e chi_o'` at point `i`.
    pub fn wronskian(&self, modes: &ModePair, i: usize) -> f64 {
        modes.chi_o[i] * self.d_e[i] - modes.chi_e[i] * self.d_o[i]
    }
}

/// Closed-form phase gradient of the two-mode state,
/// `a_e a_o sin(w_s t) (chi_o chi_e' - chi_e chi_o') / rho`, on the mask.
pub fn analytic_phase_gradient(
    modes: &ModePair,
    grads: &ModeGradients,
    mix: Superposition,
    t: f64,
    mask: &[bool],
) -> Vec<f64> {
    let (s2, c2) = (modes.omega_s * t).sin_cos();
    let ae = mix.a_e;
    let ao = mix.a_o;
    (0..modes.chi_e.len())
        .map(|i| {
            if !mask[i] {
                return f64::NAN;
            }
            let (e, o) = (modes.chi_e[i], modes.chi_o[i]);
            let rho = ae * ae * e * e + ao * ao * o * o + 2.0 * ae * ao * c2 * e * o;
            ae * ao * s2 * grads.wronskian(modes, i) / rho
        })
        .collect()
}

/// Probability current `(hbar/m) Im(chi* d_y chi)`.
pub fn current(chi: &[Complex64], mass: f64, grid: &Grid1D, stencil: &Stencil) -> Vec<f64> {
    let d = stencil.derivative(chi, grid.spacing(), &[grid.center()]);
    chi.iter()
        .zip(&d)
        .map(|(z, dz)| (z.conj() * dz).im / mass)
        .collect()
}

/// Density, phase, phase gradient, current and velocity at one time.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub t: f64,
    pub rho: Vec<f64>,
    /// Unwrapped phase, `NaN` off the mask.
    pub s: Vec<f64>,
    /// Finite-difference derivative of `s`; `NaN` where undefined.
    pub ds_dy: Vec<f64>,
    pub j_y: Vec<f64>,
    /// `(hbar/m) ds_dy`.
    pub v_y: Vec<f64>,
    pub mask: Vec<bool>,
    pub segments: Vec<Range<usize>>,
    pub skipped_fragments: usize,
    mass: f64,
}

impl FieldSnapshot {
    pub fn compute(modes: &ModePair, mass: f64, t: f64, opts: &FieldOptions) -> Result<Self> {
        Self::from_state(&modes.grid, &evolve(modes, t), mass, t, opts)
    }

    pub fn from_state(
        grid: &Grid1D,
        chi: &[Complex64],
        mass: f64,
        t: f64,
        opts: &FieldOptions,
    ) -> Result<Self> {
        let rho = density(chi);
        let mask = density_mask(&rho, opts.eps_rho);
        let ph = phase(chi, &mask)?;
        let (ds_dy, skipped_fragments) =
            phase_gradient(&ph, grid.spacing(), &opts.stencil, &[grid.center()]);
        let j_y = current(chi, mass, grid, &opts.stencil);
        let v_y = ds_dy.iter().map(|d| d / mass).collect();
        Ok(Self {
            t,
            rho,
            s: ph.values,
            ds_dy,
            j_y,
            v_y,
            mask,
            segments: ph.segments,
            skipped_fragments,
            mass,
        })
    }

    /// `m j / (hbar rho)` on the mask, `NaN` elsewhere.
    pub fn current_gradient(&self) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.j_y)
            .zip(&self.mask)
            .map(|((&r, &j), &m)| if m { self.mass * j / r } else { f64::NAN })
            .collect()
    }

    /// `max |dS/dy - m j/(hbar rho)| / max |dS/dy|` over points where both are
    /// defined. When the gradient vanishes identically the absolute deviation
    /// is returned.
    pub fn identity_deviation(&self) -> f64 {
        let other = self.current_gradient();
        let mut diff = 0.0_f64;
        let mut scale = 0.0_f64;
        for (a, b) in self.ds_dy.iter().zip(&other) {
            if a.is_finite() && b.is_finite() {
                diff = diff.max((a - b).abs());
                scale = scale.max(a.abs());
            }
        }
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    /// Largest `|dS/dy|` over defined points.
    pub fn max_abs_gradient(&self) -> f64 {
        self.ds_dy
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self, grid: &Grid1D) -> f64 {
        grid.integrate(&self.rho)
    }
}

/// Normalised continuity residual of the balanced state.
pub fn continuity_residual(modes: &ModePair, mass: f64, t: f64, dt: f64, eps_rho: f64) -> f64 {
    continuity_residual_for(modes, Superposition::BALANCED, mass, t, dt, eps_rho)
}

/// `max |(rho(t+dt) - rho(t-dt)) / 2dt + d_y j(t)|` over the masked interior,
/// divided by `max(rho) * w_s`. Second-order differences in both `y` and `t`.
pub fn continuity_residual_for(
    modes: &ModePair,
    mix: Superposition,
    mass: f64,
    t: f64,
    dt: f64,
    eps_rho: f64,
) -> f64 {
    let grid = &modes.grid;
    let stencil = Stencil::second_order();
    let chi = evolve_superposition(modes, mix, t);
    let rho = density(&chi);
    let mask = density_mask(&rho, eps_rho);
    let ahead = density(&evolve_superposition(modes, mix, t + dt));
    let behind = density(&evolve_superposition(modes, mix, t - dt));
    // plain centred differences through the cusp: a one-sided rule at y = 0
    // carries a different O(h^2) coefficient than its neighbours, and the
    // outer derivative turns that into an O(h) spike
    let h = grid.spacing();
    let dchi = stencil.derivative(&chi, h, &[]);
    let j: Vec<f64> = chi
        .iter()
        .zip(&dchi)
        .map(|(z, dz)| (z.conj() * dz).im / mass)
        .collect();
    let dj = stencil.derivative(&j, h, &[]);
    let scale = rho.iter().fold(0.0_f64, |m, &r| m.max(r)) * modes.omega_s;
    let n = rho.len();
    let worst = (1..n - 1)
        .filter(|&i| mask[i])
        .map(|i| ((ahead[i] - behind[i]) / (2.0 * dt) + dj[i]).abs())
        .fold(0.0_f64, f64::max);
    worst / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellPopulations {
    pub t: f64,
    pub p_plus: f64,
    pub p_minus: f64,
}

/// Probability on each side of the barrier; the `y = 0` cell is shared
/// evenly by the two trapezoid sums.
pub fn well_populations(grid: &Grid1D, rho: &[f64], t: f64) -> WellPopulations {
    let c = grid.center();
    WellPopulations {
        t,
        p_plus: grid.integrate_range(rho, c, grid.n_points() - 1),
        p_minus: grid.integrate_range(rho, 0, c),
    }
}

/// Populations of the balanced state at `t`.
pub fn populations_at(modes: &ModePair, t: f64) -> WellPopulations {
    well_populations(&modes.grid, &density(&evolve(modes, t)), t)
}

/// Small-time fit of `p_minus(t)` over a window of `w_s t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticLaw {
    /// Least-squares slope of `ln p_minus` against `ln t`.
    pub slope: f64,
    /// Least-squares `c` in `p_minus = c t^2`.
    pub curvature: f64,
    /// `w_s^2 / 4`.
    pub expected: f64,
}

impl QuadraticLaw {
    pub fn curvature_error(&self) -> f64 {
        (self.curvature - self.expected).abs() / self.expected
    }
}

/// Fits `p_minus` at `n` log-spaced times with `w_s t` in `[lo, hi]`.
pub fn quadratic_law(modes: &ModePair, lo: f64, hi: f64, n: usize) -> Result<QuadraticLaw> {
    if n < 2 || !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!(
            "quadratic-law window needs n >= 2 and 0 < lo < hi, got n = {n}, [{lo}, {hi}]"
        )));
    }
    let ts: Vec<f64> = (0..n)
        .map(|k| (lo.ln() + (hi / lo).ln() * k as f64 / (n - 1) as f64).exp() / modes.omega_s)
        .collect();
    let ps: Vec<f64> = ts
        .iter()
        .map(|&t| populations_at(modes, t).p_minus)
        .collect();
    if ps.iter().any(|&p| p <= 0.0) {
        return Err(Error::Numeric(
            "non-positive p_minus inside the fit window".into(),
        ));
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let t4: f64 = ts.iter().map(|t| t.powi(4)).sum();
    let pt2: f64 = ts.iter().zip(&ps).map(|(t, p)| p * t * t).sum();
    Ok(QuadraticLaw {
        slope: sxy / sxx,
        curvature: pt2 / t4,
        expected: 0.25 * modes.omega_s * modes.omega_s,
    })
}

/// Binary two-level model with coupling `J0`: amplitudes for the upper
/// (positive-y) and lower waveguide. It has no transverse coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelState {
    pub up: Complex64,
    pub down: Complex64,
}

impl TwoLevelState {
    pub fn at(j0: f64, t: f64) -> Self {
        let (s, c) = (j0 * t).sin_cos();
        Self {
            up: Complex64::new(c, 0.0),
            down: Complex64::new(0.0, s),
        }
    }

    /// The model's state lifted onto a transverse grid: a constant amplitude
    /// per waveguide and a node at `y = 0`. Its phase gradient vanishes
    /// wherever it is defined.
    pub fn on_grid(&self, grid: &Grid1D) -> Vec<Complex64> {
        let c = grid.center();
        (0..grid.n_points())
            .map(|i| match i.cmp(&c) {
                std::cmp::Ordering::Greater => self.up,
                std::cmp::Ordering::Less => self.down,
                std::cmp::Ordering::Equal => Complex64::new(0.0, 0.0),
            })
            .collect()
    }
}

/// `(p_up, p_down) = (cos^2 J0 t, sin^2 J0 t)`.
pub fn two_level_oracle(j0: f64, t: f64) -> (f64, f64) {
    let s = TwoLevelState::at(j0, t);
    (s.up.norm_sqr(), s.down.norm_sqr())
}
