use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use ionchain::chain_model::{RadialModel, Species, SpeciesChain, SpeciesTable, TrapConfig};
use ionchain::constants::{mhz, BA138_MASS_U, YB174_MASS_U};
use ionchain::entanglement_budget::PhotonBudget;
use ionchain::reorder_mc::{ReorderDetection, MIN_TRIALS};
use ionchain::thermometry::{RabiMethod, RabiModel, ThermalMode};
use serde::Deserialize;

use crate::error::CliError;

/// One run's configuration. Blocks other than `chain` and `trap` are only
/// needed by the commands that use them.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Species name → mass (u). Ba138 and Yb174 are always available.
    #[serde(default)]
    pub species: BTreeMap<String, f64>,
    pub chain: Vec<String>,
    pub trap: TrapBlock,
    #[serde(default)]
    pub seed: u64,
    pub rabi: Option<RabiBlock>,
    pub probe: Option<ProbeBlock>,
    pub mc: Option<McBlock>,
    pub budget: Option<BudgetBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapBlock {
    /// Species whose secular frequencies are quoted.
    pub reference: String,
    #[serde(rename = "axial_MHz")]
    pub axial_mhz: f64,
    #[serde(rename = "radial_MHz")]
    pub radial_mhz: [f64; 2],
    #[serde(default)]
    pub radial_model: RadialModelBlock,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialModelBlock {
    #[default]
    Pseudopotential,
    /// Per-species radial frequencies in MHz; unlisted species use the trap values.
    Direct(BTreeMap<String, [f64; 2]>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    fn validate(&self, name: &str) -> Result<(), CliError> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(CliError::invalid(name, "bounds must be finite"));
        }
        if self.points < 2 || self.stop <= self.start {
            return Err(CliError::invalid(name, "need at least two points with stop > start"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MethodBlock {
    Laguerre,
    #[default]
    Linearized,
}

impl From<MethodBlock> for RabiMethod {
    fn from(m: MethodBlock) -> Self {
        match m {
            MethodBlock::Laguerre => RabiMethod::Laguerre,
            MethodBlock::Linearized => RabiMethod::Linearized,
        }
    }
}

fn default_contrast() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiBlock {
    #[serde(rename = "omega0_kHz")]
    pub omega0_khz: f64,
    pub etas: Vec<f64>,
    /// Generator occupations, one per η. Only used by `rabi simulate`.
    #[serde(default)]
    pub nbar: Vec<f64>,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub method: MethodBlock,
    #[serde(rename = "times_us")]
    pub times: Option<Grid>,
    /// Uncertainty written to the sigma column, and the Gaussian noise level when `noise` is set.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub equal_eta: bool,
    /// Mode frequency used to turn the fitted occupation into a temperature.
    #[serde(rename = "mode_frequency_MHz")]
    pub mode_frequency_mhz: Option<f64>,
    /// Cooling transition linewidth Γ/2π. Adds the Doppler limit to the fit report.
    #[serde(rename = "cooling_linewidth_MHz")]
    pub cooling_linewidth_mhz: Option<f64>,
}

impl RabiBlock {
    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.omega0_khz * 1e3
    }

    pub fn model(&self) -> Result<RabiModel, CliError> {
        if self.nbar.len() != self.etas.len() {
            return Err(CliError::invalid(
                "rabi.nbar",
                "need one occupation per entry of rabi.etas",
            ));
        }
        let modes = self
            .etas
            .iter()
            .zip(&self.nbar)
            .map(|(&eta, &nbar)| ThermalMode::new(0.0, nbar, eta))
            .collect::<ionchain::Result<Vec<_>>>()?;
        Ok(RabiModel::new(self.omega0(), modes, self.contrast, self.offset)?.with_method(self.method.into()))
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.omega0_khz.is_finite() && self.omega0_khz > 0.0) {
            return Err(CliError::invalid("rabi.omega0_kHz", "must be > 0"));
        }
        if self.etas.is_empty() || self.etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CliError::invalid("rabi.etas", "need at least one finite η ≥ 0"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(CliError::invalid("rabi.sigma", "must be > 0"));
        }
        if let Some(f) = self.mode_frequency_mhz {
            if !(f.is_finite() && f > 0.0) {
                return Err(CliError::invalid("rabi.mode_frequency_MHz", "must be > 0"));
            }
        }
        if let Some(g) = self.cooling_linewidth_mhz {
            if !(g.is_finite() && g > 0.0) {
                return Err(CliError::invalid("rabi.cooling_linewidth_MHz", "must be > 0"));
            }
        }
        if let Some(t) = &self.times {
            t.validate("rabi.times_us")?;
            if t.start < 0.0 {
                return Err(CliError::invalid("rabi.times_us", "probe times must be ≥ 0"));
            }
        }
        if !self.nbar.is_empty() {
            self.model()?;
        }
        Ok(())
    }
}

/// Per-direction value for the three trap axes.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDirection {
    #[serde(default)]
    pub axial: f64,
    #[serde(default)]
    pub radial_x: f64,
    #[serde(default)]
    pub radial_y: f64,
}

impl PerDirection {
    pub fn as_array(&self) -> [f64; 3] {
        [self.axial, self.radial_x, self.radial_y]
    }
}

fn default_samples() -> usize {
    2000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub ion_index: usize,
    #[serde(rename = "omega0_kHz")]
    pub omega0_khz: f64,
    pub duration_us: f64,
    pub wavelength_nm: f64,
    /// Direction cosines between the beam and the trap axes.
    pub projection: PerDirection,
    /// Mean occupation of every mode along each axis.
    pub nbar: Option<PerDirection>,
    /// Alternative to `nbar`: common temperature of all modes.
    #[serde(rename = "temperature_mK")]
    pub temperature_mk: Option<f64>,
    #[serde(rename = "detuning_MHz")]
    pub detuning: Grid,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl ProbeBlock {
    fn validate(&self, chain_len: usize) -> Result<(), CliError> {
        if self.ion_index >= chain_len {
            return Err(CliError::invalid(
                "probe.ion_index",
                format!("{} is outside a chain of {chain_len}", self.ion_index),
            ));
        }
        for (name, v) in [
            ("probe.omega0_kHz", self.omega0_khz),
            ("probe.duration_us", self.duration_us),
            ("probe.wavelength_nm", self.wavelength_nm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::invalid(name, "must be > 0"));
            }
        }
        if self
            .projection
            .as_array()
            .iter()
            .any(|p| !(p.is_finite() && p.abs() <= 1.0))
        {
            return Err(CliError::invalid(
                "probe.projection",
                "direction cosines must lie in [-1, 1]",
            ));
        }
        match (&self.nbar, self.temperature_mk) {
            (Some(n), None) => {
                if n.as_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(CliError::invalid("probe.nbar", "occupations must be ≥ 0"));
                }
            }
            (None, Some(t)) => {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(CliError::invalid("probe.temperature_mK", "must be ≥ 0"));
                }
            }
            _ => {
                return Err(CliError::invalid(
                    "probe",
                    "give exactly one of `nbar` and `temperature_mK`",
                ))
            }
        }
        if self.samples == 0 {
            return Err(CliError::invalid("probe.samples", "must be ≥ 1"));
        }
        self.detuning.validate("probe.detuning_MHz")
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DetectionBlock {
    #[default]
    FinalState,
    AnyTime,
}

impl From<DetectionBlock> for ReorderDetection {
    fn from(d: DetectionBlock) -> Self {
        match d {
            DetectionBlock::FinalState => ReorderDetection::FinalState,
            DetectionBlock::AnyTime => ReorderDetection::AnyTime,
        }
    }
}

fn default_trials() -> usize {
    200
}

fn default_periods() -> f64 {
    ionchain::reorder_mc::DEFAULT_DURATION_PERIODS
}

fn default_step_fraction() -> f64 {
    1.0
}

fn default_check_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(rename = "temperatures_K")]
    pub temperatures_k: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_periods")]
    pub duration_periods: f64,
    /// Integration step as a fraction of the default `1/(100 f_max)`.
    #[serde(default = "default_step_fraction")]
    pub time_step_fraction: f64,
    #[serde(default)]
    pub detection: DetectionBlock,
    #[serde(default = "default_check_fraction")]
    pub energy_check_fraction: f64,
}

impl McBlock {
    fn validate(&self) -> Result<(), CliError> {
        if self.temperatures_k.is_empty() || self.temperatures_k.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CliError::invalid(
                "mc.temperatures_K",
                "need at least one finite temperature ≥ 0",
            ));
        }
        if self.trials < MIN_TRIALS {
            return Err(CliError::invalid("mc.trials", format!("must be ≥ {MIN_TRIALS}")));
        }
        if !(self.duration_periods.is_finite() && self.duration_periods > 0.0) {
            return Err(CliError::invalid("mc.duration_periods", "must be > 0"));
        }
        if !(self.time_step_fraction > 0.0 && self.time_step_fraction <= 2.0) {
            return Err(CliError::invalid("mc.time_step_fraction", "must lie in (0, 2]"));
        }
        if !(0.0..=1.0).contains(&self.energy_check_fraction) {
            return Err(CliError::invalid("mc.energy_check_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetBlock {
    pub p_exc: f64,
    pub branching: f64,
    pub quantum_efficiency: f64,
    pub solid_angle_fraction: f64,
    pub gate_fraction: f64,
    pub transmission: f64,
    #[serde(rename = "repetition_rate_Hz")]
    pub repetition_rate_hz: f64,
    /// Candidate budget: any field given here replaces the baseline value.
    pub compare: Option<BudgetOverride>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverride {
    pub p_exc: Option<f64>,
    pub branching: Option<f64>,
    pub quantum_efficiency: Option<f64>,
    pub solid_angle_fraction: Option<f64>,
    pub gate_fraction: Option<f64>,
    pub transmission: Option<f64>,
    #[serde(rename = "repetition_rate_Hz")]
    pub repetition_rate_hz: Option<f64>,
}

impl BudgetBlock {
    pub fn baseline(&self) -> Result<PhotonBudget, CliError> {
        Ok(PhotonBudget::new(
            self.p_exc,
            self.branching,
            self.quantum_efficiency,
            self.solid_angle_fraction,
            self.gate_fraction,
            self.transmission,
            self.repetition_rate_hz,
        )?)
    }

    pub fn candidate(&self) -> Result<Option<PhotonBudget>, CliError> {
        let Some(o) = &self.compare else { return Ok(None) };
        Ok(Some(PhotonBudget::new(
            o.p_exc.unwrap_or(self.p_exc),
            o.branching.unwrap_or(self.branching),
            o.quantum_efficiency.unwrap_or(self.quantum_efficiency),
            o.solid_angle_fraction.unwrap_or(self.solid_angle_fraction),
            o.gate_fraction.unwrap_or(self.gate_fraction),
            o.transmission.unwrap_or(self.transmission),
            o.repetition_rate_hz.unwrap_or(self.repetition_rate_hz),
        )?))
    }
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates a JSON config document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config {
                field: path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn species_table(&self) -> Result<SpeciesTable, CliError> {
        let mut masses: BTreeMap<&str, f64> = BTreeMap::from([("Ba138", BA138_MASS_U), ("Yb174", YB174_MASS_U)]);
        for (name, &m) in &self.species {
            masses.insert(name, m);
        }
        let mut table = SpeciesTable::new();
        for (name, m) in masses {
            table.insert(Species::new(name, m)?)?;
        }
        Ok(table)
    }

    pub fn chain(&self) -> Result<SpeciesChain, CliError> {
        Ok(self.species_table()?.chain(&self.chain)?)
    }

    pub fn trap(&self) -> Result<TrapConfig, CliError> {
        let table = self.species_table()?;
        let reference = table
            .get(&self.trap.reference)
            .map_err(|_| CliError::invalid("trap.reference", format!("unknown species `{}`", self.trap.reference)))?
            .clone();
        let model = match &self.trap.radial_model {
            RadialModelBlock::Pseudopotential => RadialModel::PseudopotentialScaling,
            RadialModelBlock::Direct(entries) => {
                let mut out = BTreeMap::new();
                for (name, [x, y]) in entries {
                    table.get(name)?;
                    out.insert(name.clone(), [mhz(*x), mhz(*y)]);
                }
                RadialModel::DirectPerSpecies(out)
            }
        };
        Ok(TrapConfig::new(
            reference,
            mhz(self.trap.axial_mhz),
            [mhz(self.trap.radial_mhz[0]), mhz(self.trap.radial_mhz[1])],
            model,
        )?)
    }

    pub fn rabi(&self) -> Result<&RabiBlock, CliError> {
        self.rabi.as_ref().ok_or_else(|| CliError::missing("rabi"))
    }

    pub fn probe(&self) -> Result<&ProbeBlock, CliError> {
        self.probe.as_ref().ok_or_else(|| CliError::missing("probe"))
    }

    pub fn mc(&self) -> Result<&McBlock, CliError> {
        self.mc.as_ref().ok_or_else(|| CliError::missing("mc"))
    }

    pub fn budget(&self) -> Result<&BudgetBlock, CliError> {
        self.budget.as_ref().ok_or_else(|| CliError::missing("budget"))
    }

    /// Checks every block that is present.
    pub fn validate(&self) -> Result<(), CliError> {
        let chain = self.chain()?;
        let trap = self.trap()?;
        for ion in chain.ions() {
            trap.species_frequencies(ion)?;
        }
        if let Some(r) = &self.rabi {
            r.validate()?;
        }
        if let Some(p) = &self.probe {
            p.validate(chain.len())?;
        }
        if let Some(m) = &self.mc {
            m.validate()?;
        }
        if let Some(b) = &self.budget {
            b.baseline()?;
            b.candidate()?;
        }
        Ok(())
    }
}
