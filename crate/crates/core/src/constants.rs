//! Physical constants (SI units).

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Coulomb constant 1/(4 pi eps0), N m^2 / C^2.
pub const COULOMB_CONSTANT: f64 = 8.987_551_792_3e9;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Default ion mass: 9Be+ (9.012 u), kg.
pub const BERYLLIUM_ION_MASS: f64 = 9.012 * ATOMIC_MASS_UNIT;

/// Convenience: 2 pi.
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
