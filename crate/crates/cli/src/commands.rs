use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use ionchain::chain_model::{equilibrium_positions, Direction};
use ionchain::constants::mhz;
use ionchain::entanglement_budget::{compare, ion_photon_rate, remote_rate, success_probability};
use ionchain::normal_modes::{classify, ModeSet};
use ionchain::reorder_mc::{fit_heating, reorder_curve, DarkTimeDataset, Dynamics, ReorderCurve, ReorderOptions};
use ionchain::thermometry::{
    doppler_limit, fit_occupation, shelving_signal, sideband_spectrum, temperature_nbar, FitOptions, ProbeDirection,
    ScanKind, ShelvingDataset, ShelvingRecord, SidebandProbe, SidebandScan,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::error::CliError;

/// Energy drift above which a reorder curve is flagged.
pub const DRIFT_WARNING: f64 = 1e-6;

/// What a command produced: the CSV body, stderr notes and an optional
/// JSON metadata sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub body: String,
    pub notes: Vec<String>,
    pub sidecar: Option<String>,
}

impl Output {
    fn body(body: String) -> Self {
        Self {
            body,
            ..Default::default()
        }
    }
}

/// Two-column `quantity,value` report.
#[derive(Default)]
struct Report(String);

impl Report {
    fn new() -> Self {
        Report("quantity,value\n".to_string())
    }

    fn row(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.0, "{key},{value}");
        self
    }

    fn opt(&mut self, key: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.row(key, v),
            None => self.row(key, ""),
        }
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn equilibrium(config: &RunConfig) -> Result<Output, CliError> {
    let chain = config.chain()?;
    let geo = equilibrium_positions(&chain, &config.trap()?)?;
    let mut out = String::from("index,species,z_um\n");
    for (i, (ion, z)) in chain.ions().iter().zip(&geo.axial_positions).enumerate() {
        let _ = writeln!(out, "{i},{},{}", ion.name(), z * 1e6);
    }
    let mut output = Output::body(out);
    if !geo.is_linear_stable() {
        output
            .notes
            .push("the linear configuration is not a minimum transversally; the chain will buckle".into());
    }
    Ok(output)
}

pub fn mode_set(config: &RunConfig) -> Result<ModeSet, CliError> {
    let chain = config.chain()?;
    let trap = config.trap()?;
    let geo = equilibrium_positions(&chain, &trap)?;
    Ok(ModeSet::solve(&chain, &trap, &geo)?)
}

pub fn modes(config: &RunConfig) -> Result<Output, CliError> {
    let set = mode_set(config)?;
    let n = set.chain().len();
    let mut out = String::from("direction,mode,frequency_MHz,label");
    for i in 0..n {
        let _ = write!(out, ",b_{i}");
    }
    for i in 0..n {
        let _ = write!(out, ",participation_{i}");
    }
    out.push('\n');
    for spectrum in set.iter() {
        for m in 0..spectrum.len() {
            let f = spectrum.frequencies[m] / (2.0 * PI * 1e6);
            let _ = write!(
                out,
                "{},{m},{f},{}",
                spectrum.direction,
                classify(spectrum, m).kind.label()
            );
            for i in 0..n {
                let _ = write!(out, ",{}", spectrum.component(i, m));
            }
            for i in 0..n {
                let _ = write!(out, ",{}", spectrum.component(i, m).powi(2));
            }
            out.push('\n');
        }
    }
    Ok(Output::body(out))
}

/// Synthetic carrier Rabi flop from the `rabi` block, with optional
/// Gaussian noise drawn from the run seed.
pub fn rabi_dataset(config: &RunConfig) -> Result<ShelvingDataset, CliError> {
    let block = config.rabi()?;
    let grid = block
        .times
        .ok_or_else(|| CliError::invalid("rabi.times_us", "required by `rabi simulate`"))?;
    let model = block.model()?;
    let times_us = grid.values();
    let times: Vec<f64> = times_us.iter().map(|t| ScanKind::TimeScan.to_si(*t)).collect();
    let mut p = shelving_signal(&model, &times);
    if block.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, block.sigma).map_err(|e| CliError::invalid("rabi.sigma", e.to_string()))?;
        for v in &mut p {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let records = times_us
        .iter()
        .zip(&p)
        .map(|(&abscissa, &p_shelved)| ShelvingRecord {
            abscissa,
            p_shelved,
            sigma: block.sigma,
        })
        .collect();
    Ok(ShelvingDataset::new(ScanKind::TimeScan, records)?)
}

pub fn rabi_simulate(config: &RunConfig) -> Result<Output, CliError> {
    Ok(Output::body(rabi_dataset(config)?.to_csv_string()))
}

pub fn rabi_fit(config: &RunConfig, data: &Path) -> Result<Output, CliError> {
    let block = config.rabi()?;
    let dataset = ShelvingDataset::read_csv(open(data)?)?;
    let options = FitOptions {
        equal_eta: block.equal_eta,
        method: block.method.into(),
        mode_frequency: block.mode_frequency_mhz.map(mhz),
        ..Default::default()
    };
    let fit = fit_occupation(&dataset, &block.etas, &options)?;
    let mut report = Report::new();
    let khz = 2.0 * PI * 1e3;
    report
        .row("omega0_kHz", fit.omega0 / khz)
        .row("omega0_kHz_std_error", fit.std_errors[0] / khz)
        .row("sum_eta2_nbar", fit.sum_eta2_nbar)
        .row("sum_eta2_nbar_std_error", fit.std_errors[1])
        .row("contrast", fit.contrast)
        .row("contrast_std_error", fit.std_errors[2])
        .row("offset", fit.offset)
        .row("offset_std_error", fit.std_errors[3])
        .opt("sum_nbar", fit.sum_nbar)
        .opt("sum_nbar_std_error", fit.sum_nbar_std_error)
        .opt("nbar_per_mode", fit.nbar_per_mode)
        .opt("temperature_mK", fit.temperature.map(|t| t * 1e3));
    if let Some(gamma) = block.cooling_linewidth_mhz.map(mhz) {
        let limit = doppler_limit(gamma);
        report
            .row("doppler_limit_mK", limit * 1e3)
            .opt("temperature_over_doppler", fit.temperature.map(|t| t / limit));
    }
    report
        .row("chi_squared", fit.chi_squared)
        .row("reduced_chi_squared", fit.reduced_chi_squared)
        .row("ill_conditioned", fit.ill_conditioned)
        .row("iterations", fit.iterations);
    let mut output = Output::body(report.0);
    if fit.ill_conditioned {
        output
            .notes
            .push("fit is ill-conditioned: a relative standard error of omega0 or sum_eta2_nbar exceeds 1".into());
    }
    Ok(output)
}

/// Sideband spectrum of the probed ion over the configured detuning grid.
pub fn spectrum_scan(config: &RunConfig) -> Result<SidebandScan, CliError> {
    let probe = config.probe()?;
    let set = mode_set(config)?;
    let projections = probe.projection.as_array();
    let nbar = probe.nbar.map(|n| n.as_array());
    let directions: Vec<ProbeDirection<'_>> = Direction::ALL
        .iter()
        .enumerate()
        .map(|(k, &dir)| {
            let spectrum = set.get(dir);
            let occupation = match nbar {
                Some(n) => vec![n[k]; spectrum.len()],
                None => {
                    let t = probe.temperature_mk.unwrap_or(0.0) * 1e-3;
                    spectrum.frequencies.iter().map(|&w| temperature_nbar(t, w)).collect()
                }
            };
            ProbeDirection {
                spectrum,
                nbar: occupation,
                projection: projections[k],
            }
        })
        .collect();
    let settings = SidebandProbe {
        omega0: 2.0 * PI * probe.omega0_khz * 1e3,
        duration: probe.duration_us * 1e-6,
        ion_index: probe.ion_index,
        wavevector: 2.0 * PI / (probe.wavelength_nm * 1e-9),
    };
    let detunings: Vec<f64> = probe
        .detuning
        .values()
        .iter()
        .map(|d| ScanKind::FrequencyScan.to_si(*d))
        .collect();
    let mut scan = sideband_spectrum(&directions, &settings, &detunings, probe.samples, config.seed)?;
    // Report the grid values exactly as configured.
    let records = scan
        .dataset
        .records()
        .iter()
        .zip(probe.detuning.values())
        .map(|(r, abscissa)| ShelvingRecord { abscissa, ..*r })
        .collect();
    scan.dataset = ShelvingDataset::new(ScanKind::FrequencyScan, records)?;
    Ok(scan)
}

pub fn spectrum(config: &RunConfig) -> Result<Output, CliError> {
    let scan = spectrum_scan(config)?;
    Ok(Output {
        body: scan.dataset.to_csv_string(),
        notes: scan.lamb_dicke_warnings,
        sidecar: None,
    })
}

pub fn reorder_options(config: &RunConfig) -> Result<ReorderOptions, CliError> {
    let mc = config.mc()?;
    let dynamics = Dynamics::new(&config.chain()?, &config.trap()?)?;
    Ok(ReorderOptions {
        trials: mc.trials,
        duration_periods: mc.duration_periods,
        dt: Some(dynamics.default_time_step() * mc.time_step_fraction),
        seed: config.seed,
        energy_check_fraction: mc.energy_check_fraction,
        detection: mc.detection.into(),
    })
}

pub fn compute_curve(config: &RunConfig) -> Result<ReorderCurve, CliError> {
    let options = reorder_options(config)?;
    Ok(reorder_curve(
        &config.chain()?,
        &config.trap()?,
        &config.mc()?.temperatures_k,
        &options,
    )?)
}

fn curve_metadata(config: &RunConfig, curve: &ReorderCurve) -> Result<String, CliError> {
    let mc = config.mc()?;
    let meta = serde_json::json!({
        "chain": config.chain,
        "seed": curve.seed,
        "trials": mc.trials,
        "duration_periods": mc.duration_periods,
        "duration_s": curve.duration,
        "time_step_s": curve.dt,
        "detection": format!("{:?}", mc.detection),
        "energy_checks": curve.energy_checks,
        "max_energy_drift": curve.max_energy_drift,
        "ejected": curve.ejected.iter().sum::<usize>(),
    });
    serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))
}

pub fn reorder_curve_cmd(config: &RunConfig) -> Result<Output, CliError> {
    let curve = compute_curve(config)?;
    let mut notes = Vec::new();
    if curve.max_energy_drift > DRIFT_WARNING {
        notes.push(format!(
            "largest relative energy drift {:e} exceeds {DRIFT_WARNING:e}; consider a smaller mc.time_step_fraction",
            curve.max_energy_drift
        ));
    }
    let ejected: usize = curve.ejected.iter().sum();
    if ejected > 0 {
        notes.push(format!("{ejected} trials ejected an ion and were counted as reordered"));
    }
    Ok(Output {
        body: curve.to_csv_string(),
        notes,
        sidecar: Some(curve_metadata(config, &curve)? + "\n"),
    })
}

pub fn reorder_fit(config: &RunConfig, data: &Path, curve_path: Option<&Path>) -> Result<Output, CliError> {
    let dataset = DarkTimeDataset::read_csv(open(data)?)?;
    let curve = match curve_path {
        Some(p) => ReorderCurve::read_csv(open(p)?)?,
        None => compute_curve(config)?,
    };
    let fit = fit_heating(&dataset, &curve)?;
    let mut report = Report::new();
    report
        .row("t0_mK", fit.t0 * 1e3)
        .row("t0_mK_std_error", fit.std_errors[0] * 1e3)
        .row("rate_K_per_s", fit.rate)
        .row("rate_K_per_s_std_error", fit.std_errors[1])
        .row("chi_squared", fit.chi_squared)
        .row("reduced_chi_squared", fit.reduced_chi_squared)
        .row("iterations", fit.iterations);
    Ok(Output::body(report.0))
}

pub fn rate(config: &RunConfig) -> Result<Output, CliError> {
    let block = config.budget()?;
    let baseline = block.baseline()?;
    let mut report = Report::new();
    report
        .row("success_probability", success_probability(&baseline))
        .row("ion_photon_rate_Hz", ion_photon_rate(&baseline))
        .row("remote_rate_Hz", remote_rate(&baseline));
    if let Some(candidate) = block.candidate()? {
        let c = compare(&baseline, &candidate)?;
        report
            .row("candidate_success_probability", success_probability(&candidate))
            .row("candidate_ion_photon_rate_Hz", ion_photon_rate(&candidate))
            .row("candidate_remote_rate_Hz", remote_rate(&candidate))
            .row("ion_photon_factor", c.ion_photon_factor)
            .row("remote_factor", c.remote_factor);
    }
    Ok(Output::body(report.0))
}
