//! Run configuration.
//!
//! Flat `section.key = value` text, one entry per line, `#` starts a
//! comment. Physical quantities carry their unit as a key suffix (`_um`,
//! `_ps`, `_J`, `_kg`, `_rad_per_s`) and are kept in those SI-style units
//! here; conversion to internal units happens in the accessors. Keys that
//! are missing take the shipped defaults, unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bohmian::TrajectoryOptions;
use crate::dynamics::FieldOptions;
use crate::eigensolver::{CalibrationTarget, FreeParameter, PotentialSpec};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::stencil::Stencil;
use crate::units;
use crate::xaxis::LongitudinalConfig;

const UNIT_SUFFIXES: [&str; 5] = ["_um", "_ps", "_J", "_kg", "_rad_per_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub n_points: usize,
    pub half_extent_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSection {
    pub mass_kg: f64,
    pub well_separation_um: f64,
    pub well_frequency_rad_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalSection {
    pub step_height_j: f64,
    pub beam_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSection {
    pub target_period_ps: f64,
    pub free_parameter: FreeParameter,
    pub well_frequency_lo_rad_per_s: f64,
    pub well_frequency_hi_rad_per_s: f64,
    pub mass_lo_kg: f64,
    pub mass_hi_kg: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericsSection {
    pub eps_rho: f64,
    pub stencil_order: usize,
    pub tol_identity: f64,
    /// Trajectory base step as a fraction of the period.
    pub dt_period_fraction: f64,
    pub t_final_periods: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub record_every: usize,
    pub substep_tol_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasemapSection {
    pub t_samples: usize,
    /// Half width of the speed-statistics window around `y = 0`.
    pub window_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationsSection {
    pub t_samples: usize,
    /// Fit window for the quadratic law, in units of `w_s t`.
    pub fit_lo: f64,
    pub fit_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XprofileSection {
    pub n_points: usize,
    /// Oscillating regime: window in units of `w_s x / v_x`.
    pub phase_lo: f64,
    pub phase_hi: f64,
    /// Evanescent regime: extent in units of `1 / |k2|`.
    pub decay_lengths: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub longitudinal: LongitudinalSection,
    pub calibration: CalibrationSection,
    pub numerics: NumericsSection,
    pub phasemap: PhasemapSection,
    pub populations: PopulationsSection,
    pub xprofile: XprofileSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    /// Calibrated to an 80 ps period with `a = 10 um`.
    fn default() -> Self {
        Self {
            grid: GridSection {
                n_points: 2001,
                half_extent_um: 27.0,
            },
            potential: PotentialSection {
                mass_kg: 1.608e-39,
                well_separation_um: 10.0,
                well_frequency_rad_per_s: 8.52609056503562e15,
            },
            longitudinal: LongitudinalSection {
                step_height_j: 1e-23,
                beam_energy_j: 1.804e-23,
            },
            calibration: CalibrationSection {
                target_period_ps: 80.0,
                free_parameter: FreeParameter::WellFrequency,
                well_frequency_lo_rad_per_s: 4e15,
                well_frequency_hi_rad_per_s: 2e16,
                mass_lo_kg: 5e-40,
                mass_hi_kg: 5e-39,
                rel_tol: 1e-4,
            },
            numerics: NumericsSection {
                eps_rho: 1e-12,
                stencil_order: 8,
                tol_identity: 1e-6,
                dt_period_fraction: 5e-4,
                t_final_periods: 1.0,
                n_traj: 10_000,
                seed: 1,
                record_every: 50,
                substep_tol_um: 1e-8,
            },
            phasemap: PhasemapSection {
                t_samples: 81,
                window_um: 5.0,
            },
            populations: PopulationsSection {
                t_samples: 401,
                fit_lo: 0.01,
                fit_hi: 0.1,
            },
            xprofile: XprofileSection {
                n_points: 101,
                phase_lo: 0.02,
                phase_hi: 0.2,
                decay_lengths: 8.0,
            },
            output: OutputSection {
                directory: "runs".into(),
                format: "csv".into(),
            },
        }
    }
}

/// A value slot in the canonical key table.
enum Slot<'a> {
    Float(&'a mut f64),
    Count(&'a mut usize),
    Seed(&'a mut u64),
    Text(&'a mut String),
    Free(&'a mut FreeParameter),
}

impl RunConfig {
    /// Every key in canonical order, with mutable access to its value.
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        let g = &mut self.grid;
        let p = &mut self.potential;
        let l = &mut self.longitudinal;
        let c = &mut self.calibration;
        let n = &mut self.numerics;
        let m = &mut self.phasemap;
        let q = &mut self.populations;
        let x = &mut self.xprofile;
        let o = &mut self.output;
        vec![
            ("grid.n_points", Slot::Count(&mut g.n_points)),
            ("grid.half_extent_um", Slot::Float(&mut g.half_extent_um)),
            ("potential.mass_kg", Slot::Float(&mut p.mass_kg)),
            (
                "potential.well_separation_um",
                Slot::Float(&mut p.well_separation_um),
            ),
            (
                "potential.well_frequency_rad_per_s",
                Slot::Float(&mut p.well_frequency_rad_per_s),
            ),
            (
                "longitudinal.step_height_J",
                Slot::Float(&mut l.step_height_j),
            ),
            (
                "longitudinal.beam_energy_J",
                Slot::Float(&mut l.beam_energy_j),
            ),
            (
                "calibration.target_period_ps",
                Slot::Float(&mut c.target_period_ps),
            ),
            (
                "calibration.free_parameter",
                Slot::Free(&mut c.free_parameter),
            ),
            (
                "calibration.well_frequency_lo_rad_per_s",
                Slot::Float(&mut c.well_frequency_lo_rad_per_s),
            ),
            (
                "calibration.well_frequency_hi_rad_per_s",
                Slot::Float(&mut c.well_frequency_hi_rad_per_s),
            ),
            ("calibration.mass_lo_kg", Slot::Float(&mut c.mass_lo_kg)),
            ("calibration.mass_hi_kg", Slot::Float(&mut c.mass_hi_kg)),
            ("calibration.rel_tol", Slot::Float(&mut c.rel_tol)),
            ("numerics.eps_rho", Slot::Float(&mut n.eps_rho)),
            ("numerics.stencil_order", Slot::Count(&mut n.stencil_order)),
            ("numerics.tol_identity", Slot::Float(&mut n.tol_identity)),
            (
                "numerics.dt_period_fraction",
                Slot::Float(&mut n.dt_period_fraction),
            ),
            (
                "numerics.t_final_periods",
                Slot::Float(&mut n.t_final_periods),
            ),
            ("numerics.n_traj", Slot::Count(&mut n.n_traj)),
            ("numerics.seed", Slot::Seed(&mut n.seed)),
            ("numerics.record_every", Slot::Count(&mut n.record_every)),
            (
                "numerics.substep_tol_um",
                Slot::Float(&mut n.substep_tol_um),
            ),
            ("phasemap.t_samples", Slot::Count(&mut m.t_samples)),
            ("phasemap.window_um", Slot::Float(&mut m.window_um)),
            ("populations.t_samples", Slot::Count(&mut q.t_samples)),
            ("populations.fit_lo", Slot::Float(&mut q.fit_lo)),
            ("populations.fit_hi", Slot::Float(&mut q.fit_hi)),
            ("xprofile.n_points", Slot::Count(&mut x.n_points)),
            ("xprofile.phase_lo", Slot::Float(&mut x.phase_lo)),
            ("xprofile.phase_hi", Slot::Float(&mut x.phase_hi)),
            ("xprofile.decay_lengths", Slot::Float(&mut x.decay_lengths)),
            ("output.directory", Slot::Text(&mut o.directory)),
            ("output.format", Slot::Text(&mut o.format)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default()
            .slots()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if let Some((first, _)) = entries.get(&key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}` (first set on line {first})",
                    lineno + 1
                )));
            }
            entries.insert(key, (lineno + 1, value.trim().to_string()));
        }

        let mut cfg = RunConfig::default();
        let known = Self::keys();
        for (key, (lineno, _)) in &entries {
            if !known.contains(&key.as_str()) {
                return Err(unknown_key(key, *lineno, &known));
            }
        }
        for (key, slot) in cfg.slots() {
            let Some((lineno, value)) = entries.get(key) else {
                continue;
            };
            let bad = |what: &str| {
                Error::Config(format!(
                    "line {lineno}: `{key}` expects {what}, got `{value}`"
                ))
            };
            match slot {
                Slot::Float(v) => {
                    *v = value
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad("a finite number"))?
                }
                Slot::Count(v) => *v = value.parse().map_err(|_| bad("a non-negative integer"))?,
                Slot::Seed(v) => {
                    *v = value
                        .parse()
                        .map_err(|_| bad("an unsigned 64-bit integer"))?
                }
                Slot::Text(v) => *v = value.clone(),
                Slot::Free(v) => {
                    *v = match value.as_str() {
                        "mass" => FreeParameter::Mass,
                        "well_frequency" => FreeParameter::WellFrequency,
                        _ => return Err(bad("`mass` or `well_frequency`")),
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        let mut section = "";
        for (key, slot) in copy.slots() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {head}");
                section = head;
            }
            let value = match slot {
                Slot::Float(v) => format_float(*v),
                Slot::Count(v) => v.to_string(),
                Slot::Seed(v) => v.to_string(),
                Slot::Text(v) => v.clone(),
                Slot::Free(v) => v.name().to_string(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.output.format != "csv" {
            return Err(Error::Config(format!(
                "output.format must be `csv`, got `{}`",
                self.output.format
            )));
        }
        if self.grid.n_points % 2 == 0 {
            return Err(Error::Config(format!(
                "grid.n_points must be odd so that y = 0 is a grid point, got {}",
                self.grid.n_points
            )));
        }
        let n = &self.numerics;
        if !(n.eps_rho > 0.0 && n.eps_rho < 1.0) {
            return Err(Error::Config(format!(
                "numerics.eps_rho must lie in (0, 1), got {}",
                n.eps_rho
            )));
        }
        if !(n.tol_identity > 0.0) {
            return Err(Error::Config(
                "numerics.tol_identity must be positive".into(),
            ));
        }
        if n.n_traj == 0 || n.record_every == 0 {
            return Err(Error::Config(
                "numerics.n_traj and numerics.record_every must be at least 1".into(),
            ));
        }
        if !(n.dt_period_fraction > 0.0 && n.t_final_periods >= 0.0 && n.substep_tol_um >= 0.0) {
            return Err(Error::Config(
                "numerics.dt_period_fraction must be positive; t_final_periods and substep_tol_um non-negative".into(),
            ));
        }
        if self.phasemap.t_samples < 2
            || self.populations.t_samples < 2
            || self.xprofile.n_points < 2
        {
            return Err(Error::Config("sample counts must be at least 2".into()));
        }
        if !(self.phasemap.window_um > 0.0) {
            return Err(Error::Config("phasemap.window_um must be positive".into()));
        }
        if !(self.xprofile.decay_lengths > 0.0) {
            return Err(Error::Config(
                "xprofile.decay_lengths must be positive".into(),
            ));
        }
        self.stencil()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::symmetric(self.grid.n_points, self.grid.half_extent_um)
    }

    /// Potential in internal units, including the longitudinal step.
    pub fn potential(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        let l = &self.longitudinal;
        PotentialSpec::from_si(
            p.mass_kg,
            p.well_separation_um,
            p.well_frequency_rad_per_s,
            l.step_height_j,
            l.beam_energy_j,
        )
    }

    pub fn longitudinal(&self) -> Result<LongitudinalConfig> {
        LongitudinalConfig::new(
            units::mass_from_kg(self.potential.mass_kg),
            units::energy_from_joule(self.longitudinal.beam_energy_j),
            units::energy_from_joule(self.longitudinal.step_height_j),
        )
    }

    pub fn stencil(&self) -> Result<Stencil> {
        Stencil::new(self.numerics.stencil_order)
    }

    pub fn field_options(&self) -> Result<FieldOptions> {
        Ok(FieldOptions {
            eps_rho: self.numerics.eps_rho,
            stencil: self.stencil()?,
        })
    }

    pub fn calibration_target(&self) -> CalibrationTarget {
        let c = &self.calibration;
        let bracket = match c.free_parameter {
            FreeParameter::WellFrequency => (
                units::freq_from_rad_per_s(c.well_frequency_lo_rad_per_s),
                units::freq_from_rad_per_s(c.well_frequency_hi_rad_per_s),
            ),
            FreeParameter::Mass => (
                units::mass_from_kg(c.mass_lo_kg),
                units::mass_from_kg(c.mass_hi_kg),
            ),
        };
        CalibrationTarget {
            period: c.target_period_ps,
            free: c.free_parameter,
            bracket,
            rel_tol: c.rel_tol,
        }
    }

    /// Copy with the calibrated parameter written back in config units.
    pub fn with_potential(&self, pot: &PotentialSpec) -> Self {
        let mut out = self.clone();
        out.potential.mass_kg = units::mass_to_kg(pot.mass);
        out.potential.well_frequency_rad_per_s = units::freq_to_rad_per_s(pot.well_frequency);
        out.potential.well_separation_um = pot.well_separation;
        out
    }

    pub fn trajectory_options(&self, period: f64) -> TrajectoryOptions {
        let n = &self.numerics;
        TrajectoryOptions {
            n_traj: n.n_traj,
            t_final: n.t_final_periods * period,
            dt: n.dt_period_fraction * period,
            seed: n.seed,
            record_every: n.record_every,
            substep_tol: n.substep_tol_um,
        }
    }
}

/// Shortest text that parses back to the same `f64`.
fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn unknown_key(key: &str, lineno: usize, known: &[&str]) -> Error {
    for k in known {
        for suffix in UNIT_SUFFIXES {
            if let Some(stem) = k.strip_suffix(suffix) {
                if key == stem {
                    return Error::Config(format!(
                        "line {lineno}: `{key}` is a physical quantity and needs a unit suffix; \
                         use `{k}`"
                    ));
                }
                if key.starts_with(&format!("{stem}_")) {
                    return Error::Config(format!(
                        "line {lineno}: unsupported unit in `{key}`; use `{k}`"
                    ));
                }
            }
        }
    }
    Error::Config(format!("line {lineno}: unknown key `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.potential.well_frequency_rad_per_s = 8.123456789012345e15;
        cfg.calibration.free_parameter = FreeParameter::Mass;
        cfg.numerics.seed = u64::MAX;
        cfg.output.directory = "out dir/x".into();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn values_are_read_in_their_units() {
        let cfg = RunConfig::parse(
            "potential.well_separation_um = 7.5  # half distance\n\
             potential.mass_kg = 2e-39\n\
             numerics.seed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.numerics.seed, 42);
        let pot = cfg.potential().unwrap();
        assert_eq!(pot.well_separation, 7.5);
        assert!((pot.mass - 2e-39 / units::KG_PER_MASS_UNIT).abs() < 1e-12 * pot.mass);
    }

    #[test]
    fn rejects_unknown_and_unitless_keys() {
        let msg = |t: &str| RunConfig::parse(t).unwrap_err().to_string();
        assert!(msg("grid.npoints = 3").contains("unknown key"));
        let m = msg("potential.mass = 1e-39");
        assert!(
            m.contains("unit suffix") && m.contains("potential.mass_kg"),
            "{m}"
        );
        assert!(msg("potential.well_separation_nm = 3").contains("unsupported unit"));
        assert!(msg("grid.n_points = 2001\ngrid.n_points = 2001").contains("duplicate"));
        assert!(msg("grid.n_points 2001").contains("key = value"));
        assert!(msg("grid.n_points = -1").contains("integer"));
        assert!(msg("grid.n_points = 2000").contains("odd"));
        assert!(msg("calibration.free_parameter = barrier").contains("mass"));
        assert!(msg("numerics.stencil_order = 3").contains("order"));
    }

    #[test]
    fn calibration_bracket_follows_the_free_parameter() {
        let mut cfg = RunConfig::default();
        let t = cfg.calibration_target();
        assert_eq!(t.free, FreeParameter::WellFrequency);
        assert!((t.bracket.0 - 4e3).abs() < 1e-9);
        cfg.calibration.free_parameter = FreeParameter::Mass;
        let t = cfg.calibration_target();
        assert!((t.bracket.1 - units::mass_from_kg(5e-39)).abs() < 1e-15);
    }
}
