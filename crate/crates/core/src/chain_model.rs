//! Species, trap and chain description; potential energy and the axial
//! equilibrium of a linear Coulomb crystal.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constants::{ATOMIC_MASS_UNIT, COULOMB};
use crate::normal_modes;
use crate::{Error, Result};

/// An ion species: a label and its mass in unified atomic mass units.
#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    name: String,
    mass_u: f64,
}

impl Species {
    pub fn new(name: impl Into<String>, mass_u: f64) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::invalid("species.name", "must not be empty"));
        }
        if !(mass_u.is_finite() && mass_u > 0.0) {
            return Err(Error::invalid(
                &format!("species.{name}.mass"),
                format!("must be positive, got {mass_u}"),
            ));
        }
        Ok(Self { name, mass_u })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mass_u(&self) -> f64 {
        self.mass_u
    }

    pub fn mass_kg(&self) -> f64 {
        self.mass_u * ATOMIC_MASS_UNIT
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// Registry of species known to a run; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesTable {
    entries: BTreeMap<String, Species>,
}

impl SpeciesTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, species: Species) -> Result<()> {
        if self.entries.contains_key(species.name()) {
            return Err(Error::invalid(
                "species",
                format!("duplicate species name `{}`", species.name()),
            ));
        }
        self.entries.insert(species.name.clone(), species);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Species> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid("chain", format!("unknown species `{name}`")))
    }

    /// Builds a chain from species names, resolving each against the table.
    pub fn chain<S: AsRef<str>>(&self, names: &[S]) -> Result<SpeciesChain> {
        let ions = names
            .iter()
            .map(|n| self.get(n.as_ref()).cloned())
            .collect::<Result<Vec<_>>>()?;
        SpeciesChain::new(ions)
    }
}

/// Principal axis of the trap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Axial,
    RadialX,
    RadialY,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Axial, Direction::RadialX, Direction::RadialY];
    pub const TRANSVERSE: [Direction; 2] = [Direction::RadialX, Direction::RadialY];

    /// Cartesian component index: x = 0, y = 1, z (axial) = 2.
    pub fn component(self) -> usize {
        match self {
            Direction::RadialX => 0,
            Direction::RadialY => 1,
            Direction::Axial => 2,
        }
    }

    pub fn is_transverse(self) -> bool {
        self != Direction::Axial
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Axial => "axial",
            Direction::RadialX => "radial_x",
            Direction::RadialY => "radial_y",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How radial secular frequencies depend on species.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialModel {
    /// Configured radial frequencies are used for every species, except those
    /// listed in the override table (species name → `[ω_x, ω_y]`, rad/s).
    DirectPerSpecies(BTreeMap<String, [f64; 2]>),
    /// RF pseudopotential ∝ 1/m² in ω² plus the static defocusing term ∝ 1/m.
    PseudopotentialScaling,
}

/// Harmonic trap description, referenced to one species.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapConfig {
    reference: Species,
    axial_frequency_ref: f64,
    radial_frequencies_ref: [f64; 2],
    radial_model: RadialModel,
}

/// Secular angular frequencies of one species (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularFrequencies {
    pub axial: f64,
    pub radial_x: f64,
    pub radial_y: f64,
}

impl SecularFrequencies {
    pub fn get(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Axial => self.axial,
            Direction::RadialX => self.radial_x,
            Direction::RadialY => self.radial_y,
        }
    }

    /// Frequencies ordered by Cartesian component (x, y, z).
    pub fn as_xyz(&self) -> [f64; 3] {
        [self.radial_x, self.radial_y, self.axial]
    }
}

fn check_frequency(name: &str, omega: f64) -> Result<()> {
    if omega.is_finite() && omega > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be a positive angular frequency, got {omega}"),
        ))
    }
}

impl TrapConfig {
    pub fn new(
        reference: Species,
        axial_frequency_ref: f64,
        radial_frequencies_ref: [f64; 2],
        radial_model: RadialModel,
    ) -> Result<Self> {
        check_frequency("trap.axial_frequency", axial_frequency_ref)?;
        check_frequency("trap.radial_frequencies[0]", radial_frequencies_ref[0])?;
        check_frequency("trap.radial_frequencies[1]", radial_frequencies_ref[1])?;
        if let RadialModel::DirectPerSpecies(table) = &radial_model {
            for (name, [wx, wy]) in table {
                check_frequency(&format!("trap.radial_overrides.{name}[0]"), *wx)?;
                check_frequency(&format!("trap.radial_overrides.{name}[1]"), *wy)?;
            }
        }
        Ok(Self {
            reference,
            axial_frequency_ref,
            radial_frequencies_ref,
            radial_model,
        })
    }

    pub fn reference(&self) -> &Species {
        &self.reference
    }

    pub fn axial_frequency_ref(&self) -> f64 {
        self.axial_frequency_ref
    }

    pub fn radial_frequencies_ref(&self) -> [f64; 2] {
        self.radial_frequencies_ref
    }

    pub fn radial_model(&self) -> &RadialModel {
        &self.radial_model
    }

    /// Same trap with the reference axial frequency replaced.
    pub fn with_axial_frequency(&self, axial_frequency_ref: f64) -> Result<Self> {
        Self::new(
            self.reference.clone(),
            axial_frequency_ref,
            self.radial_frequencies_ref,
            self.radial_model.clone(),
        )
    }

    /// Natural length ℓ with ℓ³ = C / (m_ref ω_z,ref²).
    pub fn length_scale(&self) -> f64 {
        (COULOMB / (self.reference.mass_kg() * self.axial_frequency_ref.powi(2))).cbrt()
    }

    /// Secular frequencies of `species` in this trap.
    pub fn species_frequencies(&self, species: &Species) -> Result<SecularFrequencies> {
        let ratio = self.reference.mass_u / species.mass_u;
        let wz_ref = self.axial_frequency_ref;
        let axial = wz_ref * ratio.sqrt();
        let [wx, wy] = match &self.radial_model {
            RadialModel::DirectPerSpecies(table) => table
                .get(species.name())
                .copied()
                .unwrap_or(self.radial_frequencies_ref),
            RadialModel::PseudopotentialScaling => {
                let mut out = [0.0; 2];
                for (slot, &wr) in out.iter_mut().zip(&self.radial_frequencies_ref) {
                    let rf_sq = wr * wr + 0.5 * wz_ref * wz_ref;
                    let omega_sq = ratio * ratio * rf_sq - 0.5 * ratio * wz_ref * wz_ref;
                    if omega_sq <= 0.0 {
                        return Err(Error::UnstableSpecies {
                            species: species.name().to_string(),
                            omega_sq,
                        });
                    }
                    *slot = omega_sq.sqrt();
                }
                out
            }
        };
        Ok(SecularFrequencies {
            axial,
            radial_x: wx,
            radial_y: wy,
        })
    }
}

/// Free-function form of [`TrapConfig::length_scale`].
pub fn length_scale(trap: &TrapConfig) -> f64 {
    trap.length_scale()
}

/// Free-function form of [`TrapConfig::species_frequencies`].
pub fn species_frequencies(trap: &TrapConfig, species: &Species) -> Result<SecularFrequencies> {
    trap.species_frequencies(species)
}

/// Ordered ions of a linear chain, left to right along the trap axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesChain {
    ions: Vec<Species>,
}

impl SpeciesChain {
    pub fn new(ions: Vec<Species>) -> Result<Self> {
        if ions.is_empty() {
            return Err(Error::invalid("chain", "must contain at least one ion"));
        }
        Ok(Self { ions })
    }

    pub fn ions(&self) -> &[Species] {
        &self.ions
    }

    pub fn len(&self) -> usize {
        self.ions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ions.is_empty()
    }

    pub fn masses_kg(&self) -> Vec<f64> {
        self.ions.iter().map(Species::mass_kg).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.ions.iter().map(Species::name).collect()
    }

    pub fn reversed(&self) -> Self {
        let mut ions = self.ions.clone();
        ions.reverse();
        Self { ions }
    }
}

/// Per-ion masses and stiffnesses `m_i ω_{d,i}²` for each Cartesian component.
#[derive(Debug, Clone)]
pub(crate) struct IonParams {
    pub masses: Vec<f64>,
    pub stiffness: Vec<[f64; 3]>,
}

impl IonParams {
    pub fn new(chain: &SpeciesChain, trap: &TrapConfig) -> Result<Self> {
        let mut masses = Vec::with_capacity(chain.len());
        let mut stiffness = Vec::with_capacity(chain.len());
        for ion in chain.ions() {
            let m = ion.mass_kg();
            let w = trap.species_frequencies(ion)?.as_xyz();
            masses.push(m);
            stiffness.push([m * w[0] * w[0], m * w[1] * w[1], m * w[2] * w[2]]);
        }
        Ok(Self { masses, stiffness })
    }
}

/// Axial equilibrium of a chain together with its transverse stability.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGeometry {
    /// Axial positions (m), ascending, one per ion in chain order.
    pub axial_positions: Vec<f64>,
    /// Natural length ℓ of the trap (m).
    pub length_scale: f64,
    /// Norm of the residual axial force at the returned positions (N).
    pub residual_gradient_norm: f64,
    /// Smallest eigenvalue of the mass-weighted transverse Hessian per radial
    /// direction (x, y), in rad²/s².
    pub transverse_min_eigenvalues: [f64; 2],
}

impl ChainGeometry {
    /// False when the linear chain is unstable towards a zigzag.
    pub fn is_linear_stable(&self) -> bool {
        self.transverse_min_eigenvalues.iter().all(|&l| l > 0.0)
    }

    /// Full 3-D positions with all ions on the trap axis.
    pub fn positions_3d(&self) -> Vec<[f64; 3]> {
        self.axial_positions.iter().map(|&z| [0.0, 0.0, z]).collect()
    }
}

/// Total potential energy (J): harmonic confinement per ion plus pairwise Coulomb.
///
/// `positions` holds `[x, y, z]` per ion, in chain order.
pub fn potential_energy(chain: &SpeciesChain, trap: &TrapConfig, positions: &[[f64; 3]]) -> Result<f64> {
    if positions.len() != chain.len() {
        return Err(Error::invalid(
            "positions",
            format!("expected {} ions, got {}", chain.len(), positions.len()),
        ));
    }
    let params = IonParams::new(chain, trap)?;
    potential_energy_with(&params, positions)
}

pub(crate) fn potential_energy_with(params: &IonParams, positions: &[[f64; 3]]) -> Result<f64> {
    let mut energy = 0.0;
    for (r, k) in positions.iter().zip(&params.stiffness) {
        energy += 0.5 * (k[0] * r[0] * r[0] + k[1] * r[1] * r[1] + k[2] * r[2] * r[2]);
    }
    for i in 0..positions.len() {
        for j in 0..i {
            let d = distance(&positions[i], &positions[j]);
            if d == 0.0 {
                return Err(Error::CoincidentIons { i: j, j: i });
            }
            energy += COULOMB / d;
        }
    }
    Ok(energy)
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

const MAX_NEWTON_ITERATIONS: usize = 200;
const MAX_DESCENT_ITERATIONS: usize = 20_000;
/// Residual force tolerance in units of C/ℓ².
const FORCE_TOLERANCE: f64 = 1e-12;

/// Dimensionless axial problem: lengths in ℓ, energies in C/ℓ.
struct AxialProblem {
    /// `m_i ω_z,i² / (m_ref ω_z,ref²)`; unity under √m axial scaling.
    curvature: Vec<f64>,
}

impl AxialProblem {
    fn energy(&self, u: &[f64]) -> f64 {
        let mut e: f64 = u.iter().zip(&self.curvature).map(|(x, k)| 0.5 * k * x * x).sum();
        for i in 0..u.len() {
            for j in 0..i {
                e += 1.0 / (u[i] - u[j]).abs();
            }
        }
        e
    }

    fn gradient(&self, u: &[f64]) -> DVector<f64> {
        let n = u.len();
        DVector::from_fn(n, |i, _| {
            let mut g = self.curvature[i] * u[i];
            for j in 0..n {
                if j != i {
                    let d = u[i] - u[j];
                    g -= d.signum() / (d * d);
                }
            }
            g
        })
    }

    fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = u.len();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = self.curvature[i];
            for j in 0..n {
                if j != i {
                    let c = 2.0 / (u[i] - u[j]).abs().powi(3);
                    h[(i, i)] += c;
                    h[(i, j)] = -c;
                }
            }
        }
        h
    }
}

fn strictly_increasing(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] > w[0])
}

/// Evenly spaced starting guess spanning ±(N−1)·0.7/2 in units of ℓ.
pub(crate) fn initial_guess(n: usize) -> Vec<f64> {
    let half = (n as f64 - 1.0) * 0.7 / 2.0;
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n as f64 - 1.0))
        .collect()
}

/// One backtracking step along `dir`; returns the accepted point, if any.
fn line_search(problem: &AxialProblem, u: &[f64], dir: &DVector<f64>, mut step: f64) -> Option<Vec<f64>> {
    let e0 = problem.energy(u);
    let g0 = problem.gradient(u).norm();
    for _ in 0..60 {
        let trial: Vec<f64> = u.iter().zip(dir.iter()).map(|(x, d)| x + step * d).collect();
        if strictly_increasing(&trial) {
            let e1 = problem.energy(&trial);
            if e1 < e0 || problem.gradient(&trial).norm() < g0 {
                return Some(trial);
            }
        }
        step *= 0.5;
    }
    None
}

fn solve_axial(problem: &AxialProblem, n: usize) -> Result<Vec<f64>> {
    let mut u = initial_guess(n);
    let mut descent_budget = MAX_DESCENT_ITERATIONS;
    let mut iterations = 0;
    loop {
        let g = problem.gradient(&u);
        if g.norm() < FORCE_TOLERANCE {
            return Ok(u);
        }
        iterations += 1;
        if iterations > MAX_NEWTON_ITERATIONS {
            break;
        }
        let newton = problem
            .hessian(&u)
            .cholesky()
            .map(|c| -c.solve(&g))
            .and_then(|d| line_search(problem, &u, &d, 1.0));
        match newton {
            Some(next) => u = next,
            None => {
                // Newton failed: take plain gradient-descent steps before retrying.
                let mut moved = false;
                for _ in 0..100 {
                    if descent_budget == 0 {
                        break;
                    }
                    descent_budget -= 1;
                    let g = problem.gradient(&u);
                    if g.norm() < FORCE_TOLERANCE {
                        return Ok(u);
                    }
                    match line_search(problem, &u, &(-&g), 0.1) {
                        Some(next) => {
                            u = next;
                            moved = true;
                        }
                        None => break,
                    }
                }
                if !moved {
                    break;
                }
            }
        }
    }
    Err(Error::NonConvergence {
        what: "axial equilibrium solver".into(),
        iterations,
    })
}

/// Axial equilibrium positions of `chain`, plus transverse stability flags.
///
/// The chain is solved on the trap axis. A zigzag instability does not fail
/// the solve; it shows up as a non-positive entry in
/// [`ChainGeometry::transverse_min_eigenvalues`].
pub fn equilibrium_positions(chain: &SpeciesChain, trap: &TrapConfig) -> Result<ChainGeometry> {
    let params = IonParams::new(chain, trap)?;
    let reference_stiffness = trap.reference().mass_kg() * trap.axial_frequency_ref().powi(2);
    let problem = AxialProblem {
        curvature: params.stiffness.iter().map(|k| k[2] / reference_stiffness).collect(),
    };
    let u = solve_axial(&problem, chain.len())?;
    let ell = trap.length_scale();
    let force_scale = COULOMB / (ell * ell);
    let mut geometry = ChainGeometry {
        axial_positions: u.iter().map(|x| x * ell).collect(),
        length_scale: ell,
        residual_gradient_norm: problem.gradient(&u).norm() * force_scale,
        transverse_min_eigenvalues: [0.0; 2],
    };
    for (slot, dir) in Direction::TRANSVERSE.into_iter().enumerate() {
        let h = normal_modes::hessian_with(&params, &geometry, dir);
        let d = normal_modes::mass_weight(&h, &params.masses);
        let min = SymmetricEigen::new(d)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        geometry.transverse_min_eigenvalues[slot] = min;
    }
    Ok(geometry)
}
