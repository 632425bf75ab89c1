//! Thermal carrier Rabi flops, sideband spectra and occupation-number
//! thermometry.

mod dataset;
mod fit;
mod rabi;
mod sideband;
mod thermal;

pub use dataset::{ScanKind, ShelvingDataset, ShelvingRecord};
pub use fit::{fit_occupation, FitOptions, OccupationFit};
pub use rabi::{
    carrier_rabi, laguerre, shelving_signal, shelving_signal_with, Evaluation, EvaluationPath, RabiMethod, RabiModel,
    SignalEvaluation, ThermalMode, DEFAULT_MC_SEED, DIRECT_TERM_LIMIT, MIN_MC_SAMPLES,
};
pub use sideband::{sideband_spectrum, ProbeDirection, SidebandProbe, SidebandScan};
pub use thermal::{doppler_limit, nbar_temperature, temperature_nbar, thermal_pn, truncation, LAMB_DICKE_LIMIT};
