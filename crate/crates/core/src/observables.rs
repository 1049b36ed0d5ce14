//! Expectation values computed directly from the factor `V`.

use crate::dm_compress::{gram, FactorMatrix};
use crate::error::{check_modes, Error, Result};
use crate::linalg::{CMat, C64};
use crate::tt::TensorTrain;

/// Single-site reduced density matrix `Tr_{≠site}(V V†)`.
pub fn reduced_density(v: &FactorMatrix, site: usize) -> Result<CMat> {
    let modes = v.modes();
    if site >= modes.len() {
        return Err(Error::InvalidArgument(format!("site {site} out of range for {} sites", modes.len())));
    }
    let n = modes[site];
    let mut rho = CMat::zeros(n, n);
    for col in v.columns() {
        let x = col.canonicalize(site);
        let core = x.core(site);
        let slices: Vec<CMat> = (0..n).map(|i| core.slice(i)).collect();
        for i in 0..n {
            for j in 0..=i {
                let z: C64 = slices[i].iter().zip(slices[j].iter()).map(|(a, b)| a * b.conj()).sum();
                rho[(i, j)] += z;
                if i != j {
                    rho[(j, i)] += z.conj();
                }
            }
        }
    }
    Ok(rho)
}

/// `⟨level|ρ_site|level⟩`.
pub fn site_probability(v: &FactorMatrix, site: usize, level: usize) -> Result<f64> {
    let rho = reduced_density(v, site)?;
    if level >= rho.nrows() {
        return Err(Error::InvalidArgument(format!("level {level} out of range at site {site}")));
    }
    Ok(rho[(level, level)].re)
}

/// `⟨φ|ρ|φ⟩ = Σ_j |⟨v_j, φ⟩|²`.
pub fn population(v: &FactorMatrix, phi: &TensorTrain) -> Result<f64> {
    check_modes(v.modes(), &phi.modes())?;
    let mut p = 0.0;
    for col in v.columns() {
        p += col.inner(phi)?.norm_sqr();
    }
    Ok(p)
}

/// `Σ_ij |⟨v_i, v_j⟩|²`, which is `Tr(ρ²)` for normalized `ρ`.
pub fn purity(v: &FactorMatrix) -> f64 {
    gram(v).iter().map(|z| z.norm_sqr()).sum()
}

/// Expected occupation `Σ_ℓ ℓ ⟨ℓ|ρ_q|ℓ⟩` of subsystem `q`.
pub fn energy_level(v: &FactorMatrix, q: usize) -> Result<f64> {
    let rho = reduced_density(v, q)?;
    Ok((0..rho.nrows()).map(|l| l as f64 * rho[(l, l)].re).sum())
}
