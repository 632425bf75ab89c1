use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{ScanKind, ShelvingDataset};
use super::thermal::LAMB_DICKE_LIMIT;
use crate::normal_modes::{lamb_dicke, ModeSpectrum};
use crate::stats::{thermal_quantile, CompensatedSum};
use crate::{Error, Result};

/// One set of modes seen by the probe together with their thermal occupation.
#[derive(Debug, Clone)]
pub struct ProbeDirection<'a> {
    pub spectrum: &'a ModeSpectrum,
    /// Mean occupation of every mode in `spectrum`.
    pub nbar: Vec<f64>,
    /// Direction cosine between the probe wavevector and this mode axis.
    pub projection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidebandProbe {
    /// Bare carrier Rabi frequency (rad/s).
    pub omega0: f64,
    /// Pulse length (s).
    pub duration: f64,
    pub ion_index: usize,
    /// Wavevector magnitude (rad/m).
    pub wavevector: f64,
}

#[derive(Debug, Clone)]
pub struct SidebandScan {
    pub dataset: ShelvingDataset,
    /// One message per mode outside the Lamb-Dicke regime.
    pub lamb_dicke_warnings: Vec<String>,
    /// Lamb-Dicke parameters of the probed ion, indexed `[direction][mode]`.
    pub etas: Vec<Vec<f64>>,
}

struct Line {
    frequency: f64,
    eta: f64,
    nbar: f64,
}

/// Excitation probability of a square pulse of area `rabi·τ` at detuning `delta`.
fn detuned_rabi(rabi: f64, delta: f64, duration: f64) -> f64 {
    let gen_sq = rabi * rabi + delta * delta;
    if gen_sq == 0.0 {
        return 0.0;
    }
    let s = (0.5 * gen_sq.sqrt() * duration).sin();
    rabi * rabi / gen_sq * s * s
}

/// Frequency-scan shelving spectrum of one ion.
///
/// Each sample draws an occupation for every mode; the carrier is driven at
/// `Ω₀ Π(1 − η² n)` and every mode contributes a red sideband
/// (`Ω₀ η √n` at `δ = −ω`) and a blue sideband (`Ω₀ η √(n+1)` at `δ = +ω`).
/// Contributions are summed and capped at unity. The same occupation samples
/// are used at every detuning, so the scan is smooth in `δ`.
///
/// `detunings` are angular (rad/s) and must increase strictly.
pub fn sideband_spectrum(
    directions: &[ProbeDirection<'_>],
    probe: &SidebandProbe,
    detunings: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SidebandScan> {
    if !(probe.omega0.is_finite() && probe.omega0 > 0.0) {
        return Err(Error::invalid("probe.omega0", "must be > 0"));
    }
    if !(probe.duration.is_finite() && probe.duration > 0.0) {
        return Err(Error::invalid("probe.duration", "must be > 0"));
    }
    if samples == 0 {
        return Err(Error::invalid("samples", "must be ≥ 1"));
    }
    let mut lines = Vec::new();
    let mut etas = Vec::new();
    let mut lamb_dicke_warnings = Vec::new();
    for dir in directions {
        let spectrum = dir.spectrum;
        if probe.ion_index >= spectrum.chain.len() {
            return Err(Error::invalid(
                "probe.ion_index",
                format!("{} is outside a chain of {}", probe.ion_index, spectrum.chain.len()),
            ));
        }
        if dir.nbar.len() != spectrum.len() {
            return Err(Error::invalid("nbar", "need one occupation per mode"));
        }
        let mut row = Vec::with_capacity(spectrum.len());
        for (m, &nbar) in dir.nbar.iter().enumerate() {
            if !(nbar.is_finite() && nbar >= 0.0) {
                return Err(Error::invalid("nbar", format!("must be ≥ 0, got {nbar}")));
            }
            let eta = lamb_dicke(spectrum, probe.ion_index, m, probe.wavevector, dir.projection).eta;
            let ld = eta * eta * (2.0 * nbar + 1.0);
            if ld >= LAMB_DICKE_LIMIT {
                lamb_dicke_warnings.push(format!(
                    "{} mode {m}: η²(2n̄+1) = {ld:.3} is outside the Lamb-Dicke regime",
                    spectrum.direction
                ));
            }
            row.push(eta);
            lines.push(Line {
                frequency: spectrum.frequencies[m],
                eta,
                nbar,
            });
        }
        etas.push(row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occupations: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            lines
                .iter()
                .map(|l| thermal_quantile(l.nbar, 1.0 - rng.random::<f64>()) as f64)
                .collect()
        })
        .collect();
    let carriers: Vec<f64> = occupations
        .iter()
        .map(|ns| {
            lines
                .iter()
                .zip(ns)
                .map(|(l, n)| 1.0 - l.eta * l.eta * n)
                .product::<f64>()
                * probe.omega0
        })
        .collect();

    let tau = probe.duration;
    let (values, sigmas): (Vec<f64>, Vec<f64>) = detunings
        .par_iter()
        .map(|&delta| {
            let mut sum = CompensatedSum::new();
            let mut sum_sq = CompensatedSum::new();
            for (ns, &carrier) in occupations.iter().zip(&carriers) {
                let mut p = detuned_rabi(carrier, delta, tau);
                for (l, &n) in lines.iter().zip(ns) {
                    let g = probe.omega0 * l.eta;
                    p += detuned_rabi(g * n.sqrt(), delta + l.frequency, tau);
                    p += detuned_rabi(g * (n + 1.0).sqrt(), delta - l.frequency, tau);
                }
                let p = p.min(1.0);
                sum.add(p);
                sum_sq.add(p * p);
            }
            let k = samples as f64;
            let mean = sum.value() / k;
            let var = if samples > 1 {
                ((sum_sq.value() - k * mean * mean) / (k - 1.0)).max(0.0)
            } else {
                0.0
            };
            (mean.clamp(0.0, 1.0), (var / k).sqrt().max(1e-12))
        })
        .unzip();

    let dataset = ShelvingDataset::from_si(ScanKind::FrequencyScan, detunings, &values, &sigmas)?;
    Ok(SidebandScan {
        dataset,
        lamb_dicke_warnings,
        etas,
    })
}
