use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dynamics::{energy_drift, is_reordered, sample_thermal_state_with, Dynamics};
use crate::chain_model::{equilibrium_positions, SpeciesChain, TrapConfig};
use crate::normal_modes::ModeSet;
use crate::stats::{wilson_interval, Z95};
use crate::{Error, Result};

pub const MIN_TRIALS: usize = 50;
pub const DEFAULT_DURATION_PERIODS: f64 = 200.0;

/// When a trajectory is inspected for a change of species order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReorderDetection {
    /// Compare the final order only; swaps that undo themselves are missed.
    #[default]
    FinalState,
    /// Stop at the first step whose order differs.
    AnyTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorderOptions {
    pub trials: usize,
    /// Trajectory length in axial periods of the reference species.
    pub duration_periods: f64,
    /// Integration step (s); `None` selects `1/(100 f_max)`.
    pub dt: Option<f64>,
    pub seed: u64,
    /// Fraction of trials whose energy conservation is measured.
    pub energy_check_fraction: f64,
    pub detection: ReorderDetection,
}

impl Default for ReorderOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            duration_periods: DEFAULT_DURATION_PERIODS,
            dt: None,
            seed: 0,
            energy_check_fraction: 0.01,
            detection: ReorderDetection::FinalState,
        }
    }
}

/// Probability that the chain keeps its species order, per temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderCurve {
    pub temperatures: Vec<f64>,
    pub p_stable: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub trials: Vec<usize>,
    /// Trials lost to ejection; counted as not stable.
    pub ejected: Vec<usize>,
    pub seed: u64,
    /// Largest relative modified-energy drift among the checked trials.
    pub max_energy_drift: f64,
    /// Number of trials whose energy was checked.
    pub energy_checks: usize,
    pub dt: f64,
    pub duration: f64,
}

struct TrialOutcome {
    stable: bool,
    ejected: bool,
    drift: Option<f64>,
}

/// Stream selector of one trial; keeps every (temperature, trial) pair on
/// its own ChaCha stream under the master seed.
fn trial_rng(seed: u64, temperature_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((temperature_index as u64) << 32) | trial as u64);
    rng
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    modes: &ModeSet,
    dynamics: &Dynamics,
    temperature: f64,
    duration: f64,
    dt: f64,
    check_fraction: f64,
    detection: ReorderDetection,
    mut rng: ChaCha8Rng,
) -> Result<TrialOutcome> {
    let check = rng.random::<f64>() < check_fraction;
    let start = sample_thermal_state_with(modes, temperature, &mut rng)?;
    let chain = modes.chain();
    let watch = |x: &[[f64; 3]]| detection == ReorderDetection::AnyTime && is_reordered(chain, x);
    match dynamics.integrate_observed(&start, duration, dt, watch) {
        Ok((last, stopped)) => Ok(TrialOutcome {
            stable: !stopped && !is_reordered(chain, &last.positions),
            ejected: false,
            drift: (check && !stopped)
                .then(|| energy_drift(dynamics, &start, &last, Dynamics::effective_step(duration, dt))),
        }),
        Err(Error::IonEjected { .. }) => Ok(TrialOutcome {
            stable: false,
            ejected: true,
            drift: None,
        }),
        Err(e) => Err(e),
    }
}

/// Monte Carlo estimate of the order-stability probability at each temperature.
///
/// Every trial samples a canonical state, integrates it without damping and
/// compares the final species order with the initial one. Trials run in
/// parallel; each uses its own stream derived from `(seed, temperature
/// index, trial index)`, so results do not depend on scheduling.
pub fn reorder_curve(
    chain: &SpeciesChain,
    trap: &TrapConfig,
    temperatures: &[f64],
    options: &ReorderOptions,
) -> Result<ReorderCurve> {
    if options.trials < MIN_TRIALS {
        return Err(Error::invalid(
            "trials",
            format!("need at least {MIN_TRIALS}, got {}", options.trials),
        ));
    }
    if !(options.duration_periods.is_finite() && options.duration_periods > 0.0) {
        return Err(Error::invalid("duration_periods", "must be > 0"));
    }
    if !(0.0..=1.0).contains(&options.energy_check_fraction) {
        return Err(Error::invalid("energy_check_fraction", "must lie in [0, 1]"));
    }
    if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid("temperatures", format!("must be ≥ 0, got {t}")));
    }
    let geometry = equilibrium_positions(chain, trap)?;
    let modes = ModeSet::solve(chain, trap, &geometry)?;
    let dynamics = Dynamics::from_modes(&modes, trap)?;
    let dt = options.dt.unwrap_or_else(|| dynamics.default_time_step());
    if dt > dynamics.max_time_step() * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "dt",
            format!("{dt:e} s exceeds 1/(50 f_max) = {:e} s", dynamics.max_time_step()),
        ));
    }
    let duration = options.duration_periods * 2.0 * PI / trap.axial_frequency_ref();

    let jobs: Vec<(usize, usize)> = (0..temperatures.len())
        .flat_map(|ti| (0..options.trials).map(move |k| (ti, k)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(ti, k)| {
            run_trial(
                &modes,
                &dynamics,
                temperatures[ti],
                duration,
                dt,
                options.energy_check_fraction,
                options.detection,
                trial_rng(options.seed, ti, k),
            )
        })
        .collect::<Result<_>>()?;

    let mut curve = ReorderCurve {
        temperatures: temperatures.to_vec(),
        p_stable: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        trials: Vec::new(),
        ejected: Vec::new(),
        seed: options.seed,
        max_energy_drift: 0.0,
        energy_checks: 0,
        dt,
        duration,
    };
    for chunk in outcomes.chunks(options.trials) {
        let stable = chunk.iter().filter(|o| o.stable).count();
        let (lo, hi) = wilson_interval(stable, chunk.len(), Z95);
        curve.p_stable.push(stable as f64 / chunk.len() as f64);
        curve.ci_low.push(lo);
        curve.ci_high.push(hi);
        curve.trials.push(chunk.len());
        curve.ejected.push(chunk.iter().filter(|o| o.ejected).count());
        for d in chunk.iter().filter_map(|o| o.drift) {
            curve.max_energy_drift = curve.max_energy_drift.max(d);
            curve.energy_checks += 1;
        }
    }
    Ok(curve)
}

const CURVE_HEADER: [&str; 6] = ["temperature_K", "p_stable", "ci_low", "ci_high", "trials", "ejected"];

impl ReorderCurve {
    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CURVE_HEADER).map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                self.temperatures[i].to_string(),
                self.p_stable[i].to_string(),
                self.ci_low[i].to_string(),
                self.ci_high[i].to_string(),
                self.trials[i].to_string(),
                self.ejected[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads the CSV table. Run metadata (seed, step, energy checks) is not
    /// part of the table and comes back zeroed.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?;
        if headers.iter().ne(CURVE_HEADER) {
            return Err(Error::Csv {
                row: 1,
                message: format!("expected columns `{}`", CURVE_HEADER.join(",")),
            });
        }
        let mut curve = ReorderCurve {
            temperatures: Vec::new(),
            p_stable: Vec::new(),
            ci_low: Vec::new(),
            ci_high: Vec::new(),
            trials: Vec::new(),
            ejected: Vec::new(),
            seed: 0,
            max_energy_drift: 0.0,
            energy_checks: 0,
            dt: 0.0,
            duration: 0.0,
        };
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            let float = |k: usize| -> Result<f64> {
                rec[k].parse::<f64>().map_err(|e| Error::Csv {
                    row,
                    message: format!("`{}`: {e}", CURVE_HEADER[k]),
                })
            };
            let count = |k: usize| -> Result<usize> {
                rec[k].parse::<usize>().map_err(|e| Error::Csv {
                    row,
                    message: format!("`{}`: {e}", CURVE_HEADER[k]),
                })
            };
            let (t, p, lo, hi) = (float(0)?, float(1)?, float(2)?, float(3)?);
            if !(t.is_finite() && t >= 0.0) || curve.temperatures.last().is_some_and(|&prev| t <= prev) {
                return Err(Error::Csv {
                    row,
                    message: "temperatures must be ≥ 0 and strictly increasing".into(),
                });
            }
            if !(0.0..=1.0).contains(&p) || !(lo <= p && p <= hi) {
                return Err(Error::Csv {
                    row,
                    message: "need 0 ≤ ci_low ≤ p_stable ≤ ci_high ≤ 1".into(),
                });
            }
            curve.temperatures.push(t);
            curve.p_stable.push(p);
            curve.ci_low.push(lo);
            curve.ci_high.push(hi);
            curve.trials.push(count(4)?);
            curve.ejected.push(count(5)?);
        }
        if curve.is_empty() {
            return Err(Error::Csv {
                row: 2,
                message: "curve has no rows".into(),
            });
        }
        Ok(curve)
    }
}
