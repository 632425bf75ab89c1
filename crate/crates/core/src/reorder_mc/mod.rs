//! Classical molecular-dynamics Monte Carlo of chain-order stability and
//! heating-rate fits against dark-time data.

mod curve;
mod dynamics;
mod heating;

pub use curve::{reorder_curve, ReorderCurve, ReorderDetection, ReorderOptions, DEFAULT_DURATION_PERIODS, MIN_TRIALS};
pub use dynamics::{
    detect_reorder, energy_drift, integrate, sample_thermal_state, sample_thermal_state_with, Dynamics, PhaseState,
};
pub use heating::{
    fit_heating, synthesize_dark_time, DarkTimeDataset, DarkTimeRecord, HeatingFit, StabilityInterpolant,
};
