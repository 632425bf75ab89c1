use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::chain_model::{distance, equilibrium_positions, IonParams, SpeciesChain, TrapConfig};
use crate::constants::{BOLTZMANN, COULOMB};
use crate::normal_modes::ModeSet;
use crate::{Error, Result};

/// Ions closer than this many length scales are resampled.
const MIN_SEPARATION: f64 = 0.05;
const MAX_SAMPLE_ATTEMPTS: usize = 100;
/// Coordinates beyond this many length scales count as an ejected ion.
const EJECTION_RADIUS: f64 = 1e3;

/// Positions and velocities of every ion, in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
}

impl PhaseState {
    pub fn at_rest(positions: Vec<[f64; 3]>) -> Self {
        let velocities = vec![[0.0; 3]; positions.len()];
        Self { positions, velocities }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in 0..i {
                best = best.min(distance(&self.positions[i], &self.positions[j]));
            }
        }
        best
    }
}

/// Thermal state drawn from a seeded ChaCha stream; see [`sample_thermal_state_with`].
pub fn sample_thermal_state(modes: &ModeSet, temperature: f64, seed: u64) -> Result<PhaseState> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_thermal_state_with(modes, temperature, &mut rng)
}

/// Classical canonical sample around the equilibrium of `modes`.
///
/// Every normal mode receives an energy `E ~ Exp(k_B T)` and a uniform
/// phase; its mass-weighted amplitude is `√(2E)/ω`. Draws that bring two
/// ions within 0.05 ℓ of each other are rejected and redrawn.
pub fn sample_thermal_state_with<R: Rng + ?Sized>(
    modes: &ModeSet,
    temperature: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::invalid("temperature", format!("must be ≥ 0, got {temperature}")));
    }
    let chain = modes.chain();
    let geometry = modes.geometry();
    let masses = chain.masses_kg();
    let kt = BOLTZMANN * temperature;
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut state = PhaseState::at_rest(geometry.positions_3d());
        for spectrum in modes.iter() {
            let c = spectrum.direction.component();
            for (k, &omega) in spectrum.frequencies.iter().enumerate() {
                let unit: f64 = Exp1.sample(rng);
                let energy = kt * unit;
                let phase = 2.0 * PI * rng.random::<f64>();
                let amplitude = (2.0 * energy).sqrt() / omega;
                let (q, qdot) = (amplitude * phase.cos(), -amplitude * omega * phase.sin());
                for (i, m) in masses.iter().enumerate() {
                    let b = spectrum.component(i, k) / m.sqrt();
                    state.positions[i][c] += b * q;
                    state.velocities[i][c] += b * qdot;
                }
            }
        }
        if state.min_separation() >= MIN_SEPARATION * geometry.length_scale {
            return Ok(state);
        }
    }
    Err(Error::NonConvergence {
        what: "thermal state sampling (ions repeatedly overlapping)".into(),
        iterations: MAX_SAMPLE_ATTEMPTS,
    })
}

/// Equations of motion of one chain in one trap.
#[derive(Debug, Clone)]
pub struct Dynamics {
    params: IonParams,
    length_scale: f64,
    max_frequency: f64,
}

impl Dynamics {
    /// Fails when the linear chain is not a stable equilibrium, since the
    /// step-size bound is taken from its highest mode frequency.
    pub fn new(chain: &SpeciesChain, trap: &TrapConfig) -> Result<Self> {
        let geometry = equilibrium_positions(chain, trap)?;
        let modes = ModeSet::solve(chain, trap, &geometry)?;
        Self::from_modes(&modes, trap)
    }

    pub fn from_modes(modes: &ModeSet, trap: &TrapConfig) -> Result<Self> {
        Ok(Self {
            params: IonParams::new(modes.chain(), trap)?,
            length_scale: modes.geometry().length_scale,
            max_frequency: modes.max_frequency(),
        })
    }

    /// Highest normal-mode angular frequency (rad/s).
    pub fn max_frequency(&self) -> f64 {
        self.max_frequency
    }

    /// Largest admissible time step, `1/(50 f_max)`.
    pub fn max_time_step(&self) -> f64 {
        2.0 * PI / (50.0 * self.max_frequency)
    }

    /// Default time step, `1/(100 f_max)`.
    pub fn default_time_step(&self) -> f64 {
        2.0 * PI / (100.0 * self.max_frequency)
    }

    fn forces(&self, positions: &[[f64; 3]], out: &mut [[f64; 3]]) {
        for ((f, r), k) in out.iter_mut().zip(positions).zip(&self.params.stiffness) {
            *f = [-k[0] * r[0], -k[1] * r[1], -k[2] * r[2]];
        }
        for i in 0..positions.len() {
            for j in 0..i {
                let d = [
                    positions[i][0] - positions[j][0],
                    positions[i][1] - positions[j][1],
                    positions[i][2] - positions[j][2],
                ];
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let s = COULOMB / (r2 * r2.sqrt());
                for c in 0..3 {
                    out[i][c] += s * d[c];
                    out[j][c] -= s * d[c];
                }
            }
        }
    }

    pub fn potential_energy(&self, positions: &[[f64; 3]]) -> f64 {
        let mut energy = 0.0;
        for (r, k) in positions.iter().zip(&self.params.stiffness) {
            energy += 0.5 * (k[0] * r[0] * r[0] + k[1] * r[1] * r[1] + k[2] * r[2] * r[2]);
        }
        for i in 0..positions.len() {
            for j in 0..i {
                energy += COULOMB / distance(&positions[i], &positions[j]);
            }
        }
        energy
    }

    pub fn kinetic_energy(&self, velocities: &[[f64; 3]]) -> f64 {
        velocities
            .iter()
            .zip(&self.params.masses)
            .map(|(v, m)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum()
    }

    pub fn total_energy(&self, state: &PhaseState) -> f64 {
        self.kinetic_energy(&state.velocities) + self.potential_energy(&state.positions)
    }

    /// Modified energy conserved by velocity Verlet to `O(h⁴)`:
    /// `H + h²/12 vᵀ∇²U v − h²/24 Σ |∇ᵢU|²/mᵢ`.
    ///
    /// The plain energy oscillates by `O((ωh)²)` within every period, which
    /// masks any secular drift; this quantity does not.
    pub fn shadow_energy(&self, state: &PhaseState, dt: f64) -> f64 {
        let (x, v) = (&state.positions, &state.velocities);
        let mut curvature = 0.0;
        for (vi, k) in v.iter().zip(&self.params.stiffness) {
            curvature += k[0] * vi[0] * vi[0] + k[1] * vi[1] * vi[1] + k[2] * vi[2] * vi[2];
        }
        for i in 0..x.len() {
            for j in 0..i {
                let d = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
                let u = [v[i][0] - v[j][0], v[i][1] - v[j][1], v[i][2] - v[j][2]];
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let r = r2.sqrt();
                let du = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
                let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
                curvature += COULOMB * (3.0 * du * du / (r2 * r2 * r) - uu / (r2 * r));
            }
        }
        let mut f = vec![[0.0; 3]; x.len()];
        self.forces(x, &mut f);
        let grad_sq: f64 = f
            .iter()
            .zip(&self.params.masses)
            .map(|(g, m)| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) / m)
            .sum();
        self.total_energy(state) + dt * dt * (curvature / 12.0 - grad_sq / 24.0)
    }

    /// Velocity-Verlet trajectory of length `duration` with steps no longer
    /// than `dt`. No damping or noise is applied.
    pub fn integrate(&self, state: &PhaseState, duration: f64, dt: f64) -> Result<PhaseState> {
        self.integrate_observed(state, duration, dt, |_| false).map(|(s, _)| s)
    }

    /// As [`Dynamics::integrate`], but calls `stop` with the positions after
    /// every step and returns early, flagged `true`, once it answers `true`.
    pub fn integrate_observed<F>(
        &self,
        state: &PhaseState,
        duration: f64,
        dt: f64,
        mut stop: F,
    ) -> Result<(PhaseState, bool)>
    where
        F: FnMut(&[[f64; 3]]) -> bool,
    {
        if state.len() != self.params.masses.len() {
            return Err(Error::invalid(
                "state",
                format!("expected {} ions, got {}", self.params.masses.len(), state.len()),
            ));
        }
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::invalid("duration", "must be ≥ 0"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if dt > self.max_time_step() * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "dt",
                format!("{dt:e} s exceeds 1/(50 f_max) = {:e} s", self.max_time_step()),
            ));
        }
        let steps = (duration / dt).ceil() as usize;
        if steps == 0 {
            return Ok((state.clone(), false));
        }
        let h = duration / steps as f64;
        let limit = EJECTION_RADIUS * self.length_scale;
        let inv_m: Vec<f64> = self.params.masses.iter().map(|m| 1.0 / m).collect();
        let mut x = state.positions.clone();
        let mut v = state.velocities.clone();
        let mut f = vec![[0.0; 3]; x.len()];
        self.forces(&x, &mut f);
        for _ in 0..steps {
            for i in 0..x.len() {
                for c in 0..3 {
                    v[i][c] += 0.5 * h * f[i][c] * inv_m[i];
                    x[i][c] += h * v[i][c];
                }
            }
            self.forces(&x, &mut f);
            for i in 0..x.len() {
                for c in 0..3 {
                    v[i][c] += 0.5 * h * f[i][c] * inv_m[i];
                }
                let extent = x[i].iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if extent.is_nan() || extent > limit {
                    return Err(Error::IonEjected { ion: i, extent });
                }
            }
            if stop(&x) {
                return Ok((
                    PhaseState {
                        positions: x,
                        velocities: v,
                    },
                    true,
                ));
            }
        }
        Ok((
            PhaseState {
                positions: x,
                velocities: v,
            },
            false,
        ))
    }

    /// Step actually used by [`Dynamics::integrate`] for this duration.
    pub fn effective_step(duration: f64, dt: f64) -> f64 {
        let steps = (duration / dt).ceil().max(1.0);
        duration / steps
    }
}

/// Velocity-Verlet integration of `state` under the full 3-D potential.
pub fn integrate(
    chain: &SpeciesChain,
    trap: &TrapConfig,
    state: &PhaseState,
    duration: f64,
    dt: f64,
) -> Result<PhaseState> {
    Dynamics::new(chain, trap)?.integrate(state, duration, dt)
}

/// Relative change of the modified energy between two states of one
/// trajectory integrated with step `dt`.
pub fn energy_drift(dynamics: &Dynamics, initial: &PhaseState, last: &PhaseState, dt: f64) -> f64 {
    let e0 = dynamics.shadow_energy(initial, dt);
    let e1 = dynamics.shadow_energy(last, dt);
    ((e1 - e0) / e0).abs()
}

/// True when the species read in ascending final axial order differ from the
/// chain's species sequence. Swaps of identical species are invisible.
pub fn detect_reorder(chain: &SpeciesChain, last: &PhaseState) -> bool {
    is_reordered(chain, &last.positions)
}

pub(crate) fn is_reordered(chain: &SpeciesChain, positions: &[[f64; 3]]) -> bool {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a][2].total_cmp(&positions[b][2]));
    let ions = chain.ions();
    order.iter().zip(ions).any(|(&i, ion)| ions[i].name() != ion.name())
}
