//! Unit system.
//!
//! Internally `hbar = 1`, length is measured in micrometres and time in
//! picoseconds. That fixes the remaining units:
//!
//! | quantity  | internal unit        | SI value                     |
//! |-----------|----------------------|------------------------------|
//! | mass      | hbar * ps / um^2     | 1.054571817e-34 kg           |
//! | energy    | hbar / ps            | 1.054571817e-22 J            |
//! | frequency | rad / ps             | 1e12 rad/s                   |
//! | velocity  | um / ps              | 1e6 m/s                      |

/// Reduced Planck constant, J*s (CODATA 2018, exact).
pub const HBAR_SI: f64 = 1.054_571_817e-34;

pub const KG_PER_MASS_UNIT: f64 = HBAR_SI;
pub const JOULE_PER_ENERGY_UNIT: f64 = HBAR_SI * 1e12;
pub const RAD_PER_S_PER_FREQ_UNIT: f64 = 1e12;
pub const M_PER_S_PER_VELOCITY_UNIT: f64 = 1e6;
pub const S_PER_PS: f64 = 1e-12;

pub fn mass_from_kg(kg: f64) -> f64 {
    kg / KG_PER_MASS_UNIT
}

pub fn mass_to_kg(m: f64) -> f64 {
    m * KG_PER_MASS_UNIT
}

pub fn energy_from_joule(j: f64) -> f64 {
    j / JOULE_PER_ENERGY_UNIT
}

pub fn energy_to_joule(e: f64) -> f64 {
    e * JOULE_PER_ENERGY_UNIT
}

pub fn freq_from_rad_per_s(w: f64) -> f64 {
    w / RAD_PER_S_PER_FREQ_UNIT
}

pub fn freq_to_rad_per_s(w: f64) -> f64 {
    w * RAD_PER_S_PER_FREQ_UNIT
}

pub fn velocity_to_m_per_s(v: f64) -> f64 {
    v * M_PER_S_PER_VELOCITY_UNIT
}
