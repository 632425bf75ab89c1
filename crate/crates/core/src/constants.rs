//! CODATA 2018 physical constants (SI).

use std::f64::consts::PI;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Unified atomic mass unit (kg).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Coulomb coupling `e² / (4π ε₀)` between two singly charged ions (J m).
pub const COULOMB: f64 = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (4.0 * PI * VACUUM_PERMITTIVITY);

/// Atomic mass of ¹³⁸Ba (u).
pub const BA138_MASS_U: f64 = 137.905_247;
/// Atomic mass of ¹⁷⁴Yb (u).
pub const YB174_MASS_U: f64 = 173.938_866;

/// Angular frequency (rad/s) of an ordinary frequency given in MHz.
pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}
