//! Normal modes of a linear chain at its axial equilibrium.
//!
//! The potential is expanded to second order about the linear equilibrium.
//! Axial and transverse motion decouple, so each direction gives an
//! independent N×N problem `D = M^{-1/2} H M^{-1/2}` whose eigenvalues are the
//! squared mode frequencies and whose eigenvectors are the mass-weighted mode
//! vectors `b_m`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chain_model::{ChainGeometry, Direction, IonParams, SpeciesChain, TrapConfig};
use crate::constants::{COULOMB, HBAR};
use crate::{Error, Result};

/// Entries smaller than this fraction of the largest component are ignored
/// when counting sign changes.
pub const SIGN_THRESHOLD: f64 = 1e-6;

/// Hessian of the potential at equilibrium for one direction (J/m²).
pub fn hessian(
    chain: &SpeciesChain,
    trap: &TrapConfig,
    geometry: &ChainGeometry,
    direction: Direction,
) -> Result<DMatrix<f64>> {
    check_geometry(chain, geometry)?;
    let params = IonParams::new(chain, trap)?;
    Ok(hessian_with(&params, geometry, direction))
}

fn check_geometry(chain: &SpeciesChain, geometry: &ChainGeometry) -> Result<()> {
    if geometry.axial_positions.len() != chain.len() {
        return Err(Error::invalid(
            "geometry",
            format!(
                "has {} positions for a chain of {} ions",
                geometry.axial_positions.len(),
                chain.len()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn hessian_with(params: &IonParams, geometry: &ChainGeometry, direction: Direction) -> DMatrix<f64> {
    let z = &geometry.axial_positions;
    let n = z.len();
    let c = direction.component();
    // Coulomb curvature is +2C/d³ along the axis and −C/d³ transverse to it.
    let (diag_sign, coupling) = if direction.is_transverse() {
        (-1.0, 1.0)
    } else {
        (2.0, -2.0)
    };
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = params.stiffness[i][c];
        for k in 0..n {
            if k != i {
                let inv_cube = COULOMB / (z[i] - z[k]).abs().powi(3);
                h[(i, i)] += diag_sign * inv_cube;
                h[(i, k)] = coupling * inv_cube;
            }
        }
    }
    h
}

pub(crate) fn mass_weight(h: &DMatrix<f64>, masses: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] / (masses[i] * masses[j]).sqrt())
}

/// Normal modes along one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub direction: Direction,
    /// Angular frequencies (rad/s), ascending.
    pub frequencies: Vec<f64>,
    /// Column `m` is the mass-weighted eigenvector `b_m`; row `i` is ion `i`.
    pub eigenvectors: DMatrix<f64>,
    pub chain: SpeciesChain,
    pub geometry: ChainGeometry,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Component `b_{ion, mode}`.
    pub fn component(&self, ion: usize, mode: usize) -> f64 {
        self.eigenvectors[(ion, mode)]
    }

    pub fn mode_vector(&self, mode: usize) -> Vec<f64> {
        self.eigenvectors.column(mode).iter().copied().collect()
    }

    /// Largest |BᵀB − I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.eigenvectors.ncols();
        let gram = self.eigenvectors.transpose() * &self.eigenvectors;
        (gram - DMatrix::<f64>::identity(n, n)).amax()
    }
}

/// Solves the mass-weighted eigenproblem for one direction.
///
/// Eigenvector signs are fixed by making the largest-magnitude entry of each
/// column positive (the first such entry on exact ties).
pub fn solve_modes(
    chain: &SpeciesChain,
    trap: &TrapConfig,
    geometry: &ChainGeometry,
    direction: Direction,
) -> Result<ModeSpectrum> {
    check_geometry(chain, geometry)?;
    let params = IonParams::new(chain, trap)?;
    let d = mass_weight(&hessian_with(&params, geometry, direction), &params.masses);
    let n = d.nrows();
    let eig = SymmetricEigen::new(d);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut frequencies = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= 0.0 {
            return Err(Error::ZigzagInstability {
                direction: direction.label().to_string(),
                eigenvalue: lambda,
            });
        }
        frequencies.push(lambda.sqrt());
        let v = eig.eigenvectors.column(k);
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenvectors[(i, col)] = sign * v[i];
        }
    }
    Ok(ModeSpectrum {
        direction,
        frequencies,
        eigenvectors,
        chain: chain.clone(),
        geometry: geometry.clone(),
    })
}

/// Spectra for all three directions of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub axial: ModeSpectrum,
    pub radial_x: ModeSpectrum,
    pub radial_y: ModeSpectrum,
}

impl ModeSet {
    pub fn solve(chain: &SpeciesChain, trap: &TrapConfig, geometry: &ChainGeometry) -> Result<Self> {
        Ok(Self {
            axial: solve_modes(chain, trap, geometry, Direction::Axial)?,
            radial_x: solve_modes(chain, trap, geometry, Direction::RadialX)?,
            radial_y: solve_modes(chain, trap, geometry, Direction::RadialY)?,
        })
    }

    pub fn get(&self, direction: Direction) -> &ModeSpectrum {
        match direction {
            Direction::Axial => &self.axial,
            Direction::RadialX => &self.radial_x,
            Direction::RadialY => &self.radial_y,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModeSpectrum> {
        [&self.axial, &self.radial_x, &self.radial_y].into_iter()
    }

    /// Highest mode angular frequency over all directions.
    pub fn max_frequency(&self) -> f64 {
        self.iter()
            .flat_map(|s| s.frequencies.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn chain(&self) -> &SpeciesChain {
        &self.axial.chain
    }

    pub fn geometry(&self) -> &ChainGeometry {
        &self.axial.geometry
    }
}

/// Qualitative mode shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    ComLike,
    RockingLike,
    ZigzagLike,
    Unclassified,
}

impl ModeKind {
    pub fn label(self) -> &'static str {
        match self {
            ModeKind::ComLike => "COM-like",
            ModeKind::RockingLike => "rocking-like",
            ModeKind::ZigzagLike => "zigzag-like",
            ModeKind::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeLabel {
    pub kind: ModeKind,
    pub sign_changes: usize,
}

/// Labels a mode vector by its number of strict sign changes.
pub fn classify_vector(vector: &[f64]) -> ModeLabel {
    let max = vector.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut sign_changes = 0;
    let mut previous: Option<bool> = None;
    for &x in vector {
        if x.abs() < SIGN_THRESHOLD * max || x == 0.0 {
            continue;
        }
        let positive = x > 0.0;
        if previous.is_some_and(|p| p != positive) {
            sign_changes += 1;
        }
        previous = Some(positive);
    }
    let kind = match sign_changes {
        0 => ModeKind::ComLike,
        1 => ModeKind::RockingLike,
        2 => ModeKind::ZigzagLike,
        _ => ModeKind::Unclassified,
    };
    ModeLabel { kind, sign_changes }
}

pub fn classify(spectrum: &ModeSpectrum, mode_index: usize) -> ModeLabel {
    classify_vector(&spectrum.mode_vector(mode_index))
}

/// Squared eigenvector components `b²_{ion, m}` across all modes of the spectrum.
pub fn participation(spectrum: &ModeSpectrum, ion_index: usize) -> Vec<f64> {
    spectrum.eigenvectors.row(ion_index).iter().map(|b| b * b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambDicke {
    pub ion_index: usize,
    pub mode_index: usize,
    pub eta: f64,
}

/// Lamb-Dicke parameter of `ion_index` in `mode_index` for a beam with
/// wavevector magnitude `k` (rad/m) at direction cosine `projection` to the
/// mode axis.
pub fn lamb_dicke(
    spectrum: &ModeSpectrum,
    ion_index: usize,
    mode_index: usize,
    wavevector: f64,
    projection: f64,
) -> LambDicke {
    let mass = spectrum.chain.ions()[ion_index].mass_kg();
    let omega = spectrum.frequencies[mode_index];
    let b = spectrum.component(ion_index, mode_index);
    let eta = projection.abs() * wavevector.abs() * b.abs() * (HBAR / (2.0 * mass * omega)).sqrt();
    LambDicke {
        ion_index,
        mode_index,
        eta,
    }
}
