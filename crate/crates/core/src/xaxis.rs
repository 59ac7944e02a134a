//! Longitudinal kinematics beyond the step at `x = 0`.
//!
//! For `x > 0` the beam sees the constant potential `V0`, so the x factor is
//! a plane wave with `k2 = sqrt(2m(E - V0))`. Real `k2` propagates and maps
//! distance to elapsed time through `t = x / v_x`; imaginary `k2` decays.
//! Nothing here feeds back into the transverse problem.

use num_complex::Complex64;

use crate::dynamics::{self, two_level_oracle};
use crate::eigensolver::ModePair;
use crate::error::{Error, Result};

/// Tolerance on the quarter relation `J0 / |v_x| = |k2| / 4`.
pub const QUARTER_RELATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Oscillating,
    Threshold,
    Evanescent,
}

/// Beam parameters in internal units. Detuning is stored rather than the
/// beam energy so that `k2` stays accurate when `|E - V0| << V0`; the
/// energy and `k0` are derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalConfig {
    pub mass: f64,
    pub step_height: f64,
    pub detuning: f64,
}

impl LongitudinalConfig {
    pub fn new(mass: f64, beam_energy: f64, step_height: f64) -> Result<Self> {
        Self::from_detuning(mass, step_height, beam_energy - step_height)
    }

    /// Beam with energy `V0 + detuning`.
    pub fn from_detuning(mass: f64, step_height: f64, detuning: f64) -> Result<Self> {
        if ![mass, detuning, step_height].iter().all(|v| v.is_finite()) {
            return Err(Error::Input(
                "longitudinal parameters must be finite".into(),
            ));
        }
        if mass <= 0.0 {
            return Err(Error::Input(format!("mass must be positive, got {mass}")));
        }
        let cfg = Self {
            mass,
            step_height,
            detuning,
        };
        if cfg.beam_energy() < 0.0 {
            return Err(Error::Input(format!(
                "beam energy must be non-negative (incident wave above V = 0), got {}",
                cfg.beam_energy()
            )));
        }
        Ok(cfg)
    }

    /// Beam with incident wavenumber `k0`, `E = k0^2 / 2m`.
    pub fn from_k0(mass: f64, step_height: f64, k0: f64) -> Result<Self> {
        Self::new(mass, k0 * k0 / (2.0 * mass), step_height)
    }

    pub fn beam_energy(&self) -> f64 {
        self.step_height + self.detuning
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn k0(&self) -> f64 {
        (2.0 * self.mass * self.beam_energy()).sqrt()
    }

    pub fn regime(&self) -> Regime {
        let d = self.detuning();
        if d > 0.0 {
            Regime::Oscillating
        } else if d < 0.0 {
            Regime::Evanescent
        } else {
            Regime::Threshold
        }
    }

    /// `k2 = sqrt(2m(E - V0))` on the branch with `Im k2 >= 0`.
    pub fn k2(&self) -> Complex64 {
        let q = 2.0 * self.mass * self.detuning();
        if q >= 0.0 {
            Complex64::new(q.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-q).sqrt())
        }
    }

    /// `v_x = k2 / m`, imaginary in the evanescent regime.
    pub fn vx(&self) -> Complex64 {
        self.k2() / self.mass
    }

    pub fn speed(&self) -> f64 {
        self.vx().norm()
    }

    /// `|phi_k2(x)|^2` relative to its value at `x = 0`.
    pub fn x_density(&self, x: f64) -> f64 {
        (-2.0 * self.k2().im * x).exp()
    }

    /// Elapsed transverse time when the beam reaches `x`.
    pub fn x_to_t(&self, x: f64) -> Result<f64> {
        if self.regime() != Regime::Oscillating {
            return Err(Error::Precondition(format!(
                "x -> t mapping needs a propagating beam (E > V0); detuning is {:e}",
                self.detuning()
            )));
        }
        Ok(x * self.mass / self.k2().re)
    }

    /// `(J0 / |v_x|) / (|k2| / 4)`; equals 1 where the damped profile forms apply.
    pub fn quarter_relation_ratio(&self, j0: f64) -> f64 {
        let k = self.k2().norm();
        (j0 / self.speed()) / (k / 4.0)
    }
}

/// Detuning at which `J0 / |v_x| = |k2| / 4` holds exactly: `-2 J0`.
///
/// From `|k2|^2 = 2m|D|` the ratio `J0 m / |k2|^2` is `J0 / 2|D|`, so the
/// quarter relation needs `|D| = 2 J0`. At `D = -J0` the ratio is `|k2| / 2`.
pub fn evanescent_detuning(j0: f64) -> f64 {
    -2.0 * j0
}

/// Transverse-coupling phase `w_s x / v_x` reached at `x`.
pub fn phase_at(cfg: &LongitudinalConfig, modes: &ModePair, x: f64) -> Result<f64> {
    Ok(modes.omega_s * cfg.x_to_t(x)?)
}

/// `n` evenly spaced distances spanning `w_s x / v_x` in `[lo, hi]`.
pub fn xs_for_phase(
    cfg: &LongitudinalConfig,
    modes: &ModePair,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let unit = phase_at(cfg, modes, 1.0)?;
    if n < 2 || !(hi > lo) {
        return Err(Error::Config(format!(
            "need n >= 2 and hi > lo for a phase window, got n = {n}, [{lo}, {hi}]"
        )));
    }
    Ok((0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64) / unit)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoAPoint {
    pub x: f64,
    pub t: f64,
    /// Lower-waveguide population `p_minus(x / v_x)` from the full model.
    pub rho_a: f64,
    /// Same quantity from the two-level model.
    pub two_level: f64,
}

/// Lower-waveguide density along the propagating beam.
pub fn rho_a_profile(
    xs: &[f64],
    cfg: &LongitudinalConfig,
    modes: &ModePair,
) -> Result<Vec<RhoAPoint>> {
    xs.iter()
        .map(|&x| {
            let t = cfg.x_to_t(x)?;
            Ok(RhoAPoint {
                x,
                t,
                rho_a: dynamics::populations_at(modes, t).p_minus,
                two_level: two_level_oracle(modes.j0, t).1,
            })
        })
        .collect()
}

/// Least-squares fit `rho_a = c x^2` with the spread of `rho_a / x^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaFit {
    pub curvature: f64,
    /// `(max - min) / mean` of `rho_a / x^2` over the fitted points.
    pub spread: f64,
    /// `w_s^2 / 4 v_x^2`.
    pub expected: f64,
}

impl ParabolaFit {
    pub fn relative_error(&self) -> f64 {
        (self.curvature - self.expected).abs() / self.expected
    }
}

pub fn fit_parabola(
    profile: &[RhoAPoint],
    cfg: &LongitudinalConfig,
    modes: &ModePair,
) -> Result<ParabolaFit> {
    let pts: Vec<&RhoAPoint> = profile.iter().filter(|p| p.x > 0.0).collect();
    if pts.len() < 2 {
        return Err(Error::Input(
            "parabola fit needs at least two points with x > 0".into(),
        ));
    }
    let sxx: f64 = pts.iter().map(|p| p.x.powi(4)).sum();
    let sxy: f64 = pts.iter().map(|p| p.rho_a * p.x * p.x).sum();
    let ratios: Vec<f64> = pts.iter().map(|p| p.rho_a / (p.x * p.x)).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
            (a.min(r), b.max(r))
        });
    let v = cfg.speed();
    Ok(ParabolaFit {
        curvature: sxy / sxx,
        spread: (hi - lo) / mean,
        expected: modes.omega_s * modes.omega_s / (4.0 * v * v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedPoint {
    pub x: f64,
    pub damping: f64,
    pub psi_m_sq: f64,
    pub psi_a_sq: f64,
}

impl DampedPoint {
    /// Profiles with the x damping divided out: `(cos^2, sin^2)`.
    pub fn normalised(&self) -> (f64, f64) {
        (self.psi_m_sq / self.damping, self.psi_a_sq / self.damping)
    }
}

/// `|psi_m|^2 = e^{-2|k2|x} cos^2(|k2|x/4)` and the matching `sin^2` profile,
/// only at the detuning where `J0 / |v_x| = |k2| / 4`.
pub fn damped_profiles(
    xs: &[f64],
    cfg: &LongitudinalConfig,
    modes: &ModePair,
) -> Result<Vec<DampedPoint>> {
    if cfg.regime() != Regime::Evanescent {
        return Err(Error::Precondition(format!(
            "damped profiles need an evanescent beam (E < V0); detuning is {:e}",
            cfg.detuning()
        )));
    }
    let ratio = cfg.quarter_relation_ratio(modes.j0);
    if (ratio - 1.0).abs() > QUARTER_RELATION_TOL {
        return Err(Error::Precondition(format!(
            "J0/|v_x| = {:.6} |k2| at detuning {:e} (J0 = {:e}); the profiles need |k2|/4, \
             reached at detuning {:e}",
            ratio / 4.0,
            cfg.detuning(),
            modes.j0,
            evanescent_detuning(modes.j0)
        )));
    }
    let k = cfg.k2().norm();
    Ok(xs
        .iter()
        .map(|&x| {
            let damping = cfg.x_density(x);
            let (s, c) = (0.25 * k * x).sin_cos();
            DampedPoint {
                x,
                damping,
                psi_m_sq: damping * c * c,
                psi_a_sq: damping * s * s,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{solve_modes, PotentialSpec};
    use crate::grid::Grid1D;

    fn modes() -> ModePair {
        let pot = PotentialSpec::new(1.0, 3.0, 1.5, 0.0, 0.0).unwrap();
        solve_modes(&Grid1D::symmetric(1601, 9.0).unwrap(), &pot).unwrap()
    }

    #[test]
    fn k2_branches() {
        let m = 2.0;
        assert_eq!(
            LongitudinalConfig::new(m, 5.0, 5.0).unwrap().k2(),
            Complex64::new(0.0, 0.0)
        );
        // E - V0 = 1 / 2m gives k2 = 1
        let c = LongitudinalConfig::from_detuning(m, 5.0, 1.0 / (2.0 * m)).unwrap();
        assert!((c.k2() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let c = LongitudinalConfig::from_detuning(m, 5.0, -1.0 / (2.0 * m)).unwrap();
        assert!((c.k2() - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(c.regime(), Regime::Evanescent);
        assert!((c.x_density(1.5) - (-3.0_f64).exp()).abs() < 1e-15);
        assert!(c.x_to_t(1.0).is_err());
    }

    #[test]
    fn k0_and_detuning_encode_the_same_energy() {
        let c = LongitudinalConfig::from_k0(3.0, 2.0, 4.0).unwrap();
        assert!((c.k0() - 4.0).abs() < 1e-14);
        let k2 = c.k2().re;
        assert!((k2 * k2 - 2.0 * 3.0 * c.detuning()).abs() < 1e-12);
    }

    #[test]
    fn k2_is_continuous_through_threshold() {
        let at = |d: f64| LongitudinalConfig::from_detuning(1.0, 1.0, d).unwrap().k2();
        for d in [1e-4, 1e-8, 1e-12] {
            assert!(at(d).norm() < 2.0 * d.sqrt());
            assert!(at(-d).norm() < 2.0 * d.sqrt());
            assert!(at(-d).im >= 0.0);
        }
    }

    #[test]
    fn x_to_t_is_linear_in_distance_and_inverse_in_k2() {
        let a = LongitudinalConfig::from_k0(1.0, 0.0, 2.0).unwrap();
        let b = LongitudinalConfig::from_k0(1.0, 0.0, 4.0).unwrap();
        assert_eq!(a.x_to_t(0.0).unwrap(), 0.0);
        assert!((a.x_to_t(3.0).unwrap() - 2.0 * b.x_to_t(3.0).unwrap()).abs() < 1e-14);
        assert!((a.x_to_t(6.0).unwrap() - 2.0 * a.x_to_t(3.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rho_a_is_parabolic_at_small_distance() {
        let m = modes();
        let cfg = LongitudinalConfig::from_detuning(1.0, 10.0, 50.0).unwrap();
        let xs = xs_for_phase(&cfg, &m, 0.02, 0.2, 40).unwrap();
        let prof = rho_a_profile(&xs, &cfg, &m).unwrap();
        // oracle: sin^2(w_s t / 2) / x^2 -> w_s^2 / 4 v^2 as x -> 0
        for p in &prof {
            let exact = (0.5 * m.omega_s * p.t).sin().powi(2);
            assert!((p.two_level - exact).abs() < 1e-15);
            assert!((p.rho_a - p.two_level).abs() < 0.01);
        }
        let fit = fit_parabola(&prof, &cfg, &m).unwrap();
        let v = (2.0 * 50.0_f64).sqrt();
        assert!((fit.expected - m.omega_s.powi(2) / (4.0 * v * v)).abs() < 1e-12 * fit.expected);
        assert!(fit.relative_error() < 0.02, "{fit:?}");
    }

    #[test]
    fn quarter_relation_holds_at_twice_the_coupling() {
        let m = modes();
        let cfg = LongitudinalConfig::from_detuning(1.0, 10.0, evanescent_detuning(m.j0)).unwrap();
        assert!((cfg.quarter_relation_ratio(m.j0) - 1.0).abs() < 1e-12);
        // at detuning -J0 the ratio is |k2| / 2
        let half = LongitudinalConfig::from_detuning(1.0, 10.0, -m.j0).unwrap();
        assert!((half.quarter_relation_ratio(m.j0) - 2.0).abs() < 1e-12);
        let xs = [0.0, 0.5, 1.0];
        assert!(matches!(
            damped_profiles(&xs, &half, &m),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn damped_profiles_share_the_decay_envelope() {
        let m = modes();
        let cfg = LongitudinalConfig::from_detuning(1.0, 10.0, evanescent_detuning(m.j0)).unwrap();
        let k = cfg.k2().im;
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.37 / k).collect();
        let prof = damped_profiles(&xs, &cfg, &m).unwrap();
        assert_eq!((prof[0].psi_m_sq, prof[0].psi_a_sq), (1.0, 0.0));
        for p in &prof {
            let env = (-2.0 * k * p.x).exp();
            assert!((p.psi_m_sq + p.psi_a_sq - env).abs() <= 4.0 * f64::EPSILON * env);
            let (c2, s2) = p.normalised();
            assert!((c2 - (0.25 * k * p.x).cos().powi(2)).abs() < 1e-12);
            assert!((s2 - (0.25 * k * p.x).sin().powi(2)).abs() < 1e-12);
        }
        assert!(prof.windows(2).all(|w| w[1].damping <= w[0].damping));
    }

    #[test]
    fn damped_profiles_refuse_non_evanescent_beams() {
        let m = modes();
        let at = LongitudinalConfig::new(1.0, 10.0, 10.0).unwrap();
        assert!(matches!(
            damped_profiles(&[0.0], &at, &m),
            Err(Error::Precondition(_))
        ));
        let above = LongitudinalConfig::new(1.0, 11.0, 10.0).unwrap();
        assert!(damped_profiles(&[0.0], &above, &m).is_err());
    }

    #[test]
    fn transverse_modes_ignore_the_beam() {
        let g = Grid1D::symmetric(801, 9.0).unwrap();
        let a = solve_modes(&g, &PotentialSpec::new(1.0, 3.0, 1.5, 0.0, 0.0).unwrap()).unwrap();
        let b = solve_modes(&g, &PotentialSpec::new(1.0, 3.0, 1.5, 7.0, 2.0).unwrap()).unwrap();
        assert_eq!(a.omega_s.to_bits(), b.omega_s.to_bits());
        assert_eq!(a.chi_e, b.chi_e);
        assert_eq!(a.chi_o, b.chi_o);
    }
}
