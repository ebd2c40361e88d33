//! Energetic figures of merit of the battery state.
//!
//! All functions here work in the energy eigenbasis of the battery, with
//! levels shifted so the ground state sits at zero. Stored energy is then
//! the population-weighted level sum, and the charging quality is measured
//! by the ergotropy: the largest energy extractable by a unitary, obtained
//! by rearranging the state's eigenvalues so the largest population sits on
//! the lowest level (the passive state).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qcore::{hermiticity_violation, trace_of, CMat, DensityMatrix, EigenDecomposition};
use crate::transmon::Spectrum;

/// Below this stored energy (units of `E_C`) the efficiency `ergotropy / E`
/// is reported as undefined rather than as a 0/0 artifact. In practice this
/// only triggers on the initial ground state.
pub const EFFICIENCY_ENERGY_FLOOR: f64 = 1e-12;

/// Ergotropy cannot be negative; values below this floor mean the state or
/// the levels are corrupted and are reported as an error.
pub const ERGOTROPY_FLOOR: f64 = -1e-10;

/// Mean energy of `rho` over the shifted ladder, `sum_m levels[m] rho_mm`,
/// in units of `E_C`.
pub fn stored_energy(rho: &DensityMatrix, spectrum: &Spectrum) -> f64 {
    stored_energy_raw(rho.matrix(), &spectrum.shifted_levels())
}

pub(crate) fn stored_energy_raw(rho: &CMat, shifted_levels: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for m in 0..rho.nrows() {
        acc += shifted_levels[m] * rho[(m, m)].re;
    }
    acc
}

/// Result of the ergotropy rearrangement.
#[derive(Debug, Clone)]
pub struct ErgotropyResult {
    /// Extractable energy in units of `E_C`; non-negative.
    pub ergotropy: f64,
    /// Energy of the passive state in units of `E_C`.
    pub passive_energy: f64,
    /// `permutation[k]` is the level rank the `k`-th state eigenvector
    /// (populations ascending) is sent to when building the passive state.
    pub permutation: Vec<usize>,
}

/// Ergotropy of `rho` on the shifted ladder: mean energy minus the passive
/// energy obtained by pairing populations (descending) with levels
/// (ascending).
pub fn ergotropy(rho: &DensityMatrix, spectrum: &Spectrum) -> Result<ErgotropyResult> {
    let eig = rho.eig();
    ergotropy_from_eig(rho, &eig, &spectrum.shifted_levels())
}

pub(crate) fn ergotropy_from_eig(
    rho: &DensityMatrix,
    rho_eig: &EigenDecomposition,
    shifted_levels: &DVector<f64>,
) -> Result<ErgotropyResult> {
    let d = rho.dim();
    if shifted_levels.len() != d {
        return Err(Error::shape(format!(
            "state dimension {d} does not match {} levels",
            shifted_levels.len()
        )));
    }
    let energy = stored_energy_raw(rho.matrix(), shifted_levels);

    // Populations come out ascending; rank them descending with a stable
    // tie-break on the eigensolver index so the permutation is deterministic.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| rho_eig.values[b].total_cmp(&rho_eig.values[a]).then(a.cmp(&b)));

    let mut passive_energy = 0.0;
    let mut permutation = vec![0usize; d];
    for (rank, &k) in order.iter().enumerate() {
        passive_energy += rho_eig.values[k] * shifted_levels[rank];
        permutation[k] = rank;
    }

    let ergotropy = energy - passive_energy;
    if ergotropy < ERGOTROPY_FLOOR {
        return Err(Error::NegativeErgotropy { value: ergotropy });
    }
    Ok(ErgotropyResult {
        ergotropy: ergotropy.max(0.0),
        passive_energy,
        permutation,
    })
}

/// Charging efficiency `ergotropy / energy`; `None` when the energy is below
/// [`EFFICIENCY_ENERGY_FLOOR`] (undefined, not zero).
pub fn efficiency(ergotropy: f64, energy: f64) -> Result<Option<f64>> {
    if energy <= EFFICIENCY_ENERGY_FLOOR {
        return Ok(None);
    }
    let eta = ergotropy / energy;
    if eta > 1.0 + 1e-9 {
        return Err(Error::param(
            "efficiency",
            format!("ergotropy/energy = {eta} exceeds one beyond tolerance"),
        ));
    }
    Ok(Some(eta))
}

/// Everything the per-collision recorder needs, computed from one
/// eigendecomposition of the state.
#[derive(Debug, Clone)]
pub struct StateObservables {
    /// Shifted mean energy in units of `E_C`.
    pub stored_energy: f64,
    pub ergotropy: f64,
    pub passive_energy: f64,
    pub efficiency: Option<f64>,
    /// tr(rho^2).
    pub purity: f64,
    /// Smallest state eigenvalue (validity diagnostic).
    pub lambda_min: f64,
    /// |tr(rho) - 1| (validity diagnostic).
    pub trace_deviation: f64,
    /// Largest Hermiticity violation entry (validity diagnostic).
    pub hermiticity_deviation: f64,
}

/// Computes all recorded observables and validity diagnostics for a raw
/// state matrix against the shifted ladder.
pub fn observe(rho: &CMat, shifted_levels: &DVector<f64>) -> Result<StateObservables> {
    let trace_deviation = (trace_of(rho) - num_complex::Complex64::new(1.0, 0.0)).norm();
    let hermiticity_deviation = hermiticity_violation(rho);
    let state = DensityMatrix::from_validated(rho.clone());
    let eig = state.eig();
    let lambda_min = eig.values[0];
    let erg = ergotropy_from_eig(&state, &eig, shifted_levels)?;
    let stored = stored_energy_raw(rho, shifted_levels);
    let eta = efficiency(erg.ergotropy, stored)?;
    Ok(StateObservables {
        stored_energy: stored,
        ergotropy: erg.ergotropy,
        passive_energy: erg.passive_energy,
        efficiency: eta,
        purity: state.purity(),
        lambda_min,
        trace_deviation,
        hermiticity_deviation,
    })
}
