//! Simulation toolkit for chiral p-wave pairing dynamics on rotating
//! two-dimensional trapped-ion crystals.
//!
//! The crate is organized around the stages of a run:
//!
//! * [`crystal`]: ion-crystal geometries (idealized ring crystals and
//!   equilibrated Penning-trap crystals) and their drumhead normal modes.
//! * [`states`]: preparation of chiral spin textures (BCS-like, BEC-like,
//!   domain wall) via radially shaped rotation pulses.
//! * [`dynamics`]: mean-field and discrete truncated Wigner (dTWA) time
//!   evolution for the one-channel and two-channel pairing models.
//! * [`exact`]: exact Schrödinger evolution on concentric-ring crystals in
//!   per-ring collective angular-momentum bases.
//! * [`analysis`]: order parameters, dynamical-phase classification,
//!   winding numbers, Cooper-pair distribution function and readout.
//! * [`params`]: experimental parameter calculator, RWA resonance table,
//!   off-resonant coupling matrices and the scattering-rate time budget.

pub mod analysis;
pub mod constants;
pub mod crystal;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod params;
pub mod states;
pub mod timeseries;

pub use error::{Error, Result};
