//! Spin operators, states and fidelity measures for the two-level system
//! and the electron⊗nucleus pair.

use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{ComplexMatrix, C_ONE, C_ZERO};

/// Spin-1/2 operator S_x = σ_x/2.
pub fn spin_x() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 1)] = Complex64::new(0.5, 0.0);
    m[(1, 0)] = Complex64::new(0.5, 0.0);
    m
}

/// Spin-1/2 operator S_y = σ_y/2.
pub fn spin_y() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 1)] = Complex64::new(0.0, -0.5);
    m[(1, 0)] = Complex64::new(0.0, 0.5);
    m
}

/// Spin-1/2 operator S_z = σ_z/2.
pub fn spin_z() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m[(0, 0)] = Complex64::new(0.5, 0.0);
    m[(1, 1)] = Complex64::new(-0.5, 0.0);
    m
}

/// Basis ket |idx⟩ in a `dim`-dimensional space.
pub fn basis_ket(dim: usize, idx: usize) -> Vec<Complex64> {
    let mut v = vec![C_ZERO; dim];
    v[idx] = C_ONE;
    v
}

/// Rank-one density matrix |ψ⟩⟨ψ|.
pub fn density_from_ket(psi: &[Complex64]) -> ComplexMatrix {
    let n = psi.len();
    let mut rho = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            rho[(i, j)] = psi[i] * psi[j].conj();
        }
    }
    rho
}

/// Population transferred from basis state `from` to basis state `to` by the
/// unitary `u`: |⟨to|U|from⟩|².
pub fn transfer_population(u: &ComplexMatrix, from: usize, to: usize) -> f64 {
    u[(to, from)].norm_sqr()
}

/// Fidelity between two density matrices, F(ρ,σ) = (Tr√(√ρ σ √ρ))².
/// Symmetric in its arguments; equals ⟨ψ|σ|ψ⟩ when ρ = |ψ⟩⟨ψ|.
pub fn state_fidelity(rho: &ComplexMatrix, sigma: &ComplexMatrix) -> Result<f64> {
    let (vals, vecs) = rho.eigh()?;
    let n = rho.dim();
    // √ρ = V diag(√λ⁺) V†, clamping tiny negative eigenvalues from roundoff.
    let mut sqrt_rho = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = C_ZERO;
            for k in 0..n {
                let lam = vals[k].max(0.0).sqrt();
                acc += vecs[(i, k)] * Complex64::new(lam, 0.0) * vecs[(j, k)].conj();
            }
            sqrt_rho[(i, j)] = acc;
        }
    }
    let inner = sqrt_rho.mul(sigma).mul(&sqrt_rho);
    let (ivals, _) = inner.eigh()?;
    let tr: f64 = ivals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((tr * tr).min(1.0))
}

/// Average fidelity of the gate `u` against the target `target` over pure
/// input states: (|Tr(U† R)|² + d) / (d(d+1)).
pub fn average_gate_fidelity(u: &ComplexMatrix, target: &ComplexMatrix) -> f64 {
    let d = u.dim() as f64;
    let overlap = u.dagger().mul(target).trace().norm_sqr();
    (overlap + d) / (d * (d + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_ops_satisfy_su2_algebra() {
        // [S_x, S_y] = i S_z
        let (sx, sy, sz) = (spin_x(), spin_y(), spin_z());
        let comm = sx.mul(&sy).sub(&sy.mul(&sx));
        let i_sz = sz.scale(Complex64::new(0.0, 1.0));
        assert!(comm.max_abs_diff(&i_sz) < 1e-15);
    }

    #[test]
    fn pure_state_fidelity_is_overlap() {
        let psi = basis_ket(2, 0);
        let mut phi = vec![C_ZERO; 2];
        phi[0] = Complex64::new(0.6, 0.0);
        phi[1] = Complex64::new(0.0, 0.8);
        let rho = density_from_ket(&psi);
        let sigma = density_from_ket(&phi);
        let f = state_fidelity(&rho, &sigma).unwrap();
        assert!((f - 0.36).abs() < 1e-12, "f={f}");
    }

    #[test]
    fn fidelity_is_symmetric_and_unit_on_equal_states() {
        let mut psi = vec![C_ZERO; 4];
        psi[0] = Complex64::new(0.5, 0.0);
        psi[1] = Complex64::new(0.5, 0.0);
        psi[2] = Complex64::new(0.0, 0.5);
        psi[3] = Complex64::new(-0.5, 0.0);
        let rho = density_from_ket(&psi);
        assert!((state_fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);

        let sigma = ComplexMatrix::identity(4).scale(Complex64::new(0.25, 0.0));
        let f1 = state_fidelity(&rho, &sigma).unwrap();
        let f2 = state_fidelity(&sigma, &rho).unwrap();
        assert!((f1 - f2).abs() < 1e-10);
        assert!((f1 - 0.25).abs() < 1e-10, "f1={f1}");
    }

    #[test]
    fn average_gate_fidelity_of_identity_pair() {
        let id = ComplexMatrix::identity(2);
        assert!((average_gate_fidelity(&id, &id) - 1.0).abs() < 1e-15);
    }
}
