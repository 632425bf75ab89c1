//! Simulation and inference toolkit for mixed-species linear ion chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`chain_model`] describes species, trap and chain, and finds the axial
//!   equilibrium of the Coulomb crystal.
//! * [`normal_modes`] diagonalises the mass-weighted Hessian at equilibrium,
//!   labels modes and evaluates Lamb-Dicke parameters.
//! * [`thermometry`] synthesises and fits thermal carrier Rabi flops and
//!   sideband spectra and converts occupation numbers to temperatures.
//! * [`reorder_mc`] runs the classical molecular-dynamics Monte Carlo used to
//!   estimate chain-order stability versus temperature, and fits heating data.
//! * [`entanglement_budget`] evaluates photon-mediated entanglement rates.
//!
//! All quantities are SI internally (kg, m, s, rad/s, J, K). File formats use
//! the boundary units documented on each reader/writer.

pub mod chain_model;
pub mod constants;
pub mod entanglement_budget;
mod error;
pub mod normal_modes;
pub mod optimize;
pub mod reorder_mc;
pub mod stats;
pub mod thermometry;

pub use error::{Error, ErrorClass, Result};
