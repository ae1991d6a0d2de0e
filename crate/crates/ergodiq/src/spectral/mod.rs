//! Spectral-Galerkin bases, coefficient fields, and low-mode projectors.
//!
//! Two bases are supported:
//!
//! * [`NsBasis`] — Fourier modes `exp(2 pi i k.x)` on the unit 2-D torus for
//!   the vorticity form of the Navier–Stokes equations. The state is the set
//!   of vorticity coefficients on the centered lattice `|k_x|,|k_y| <= m`,
//!   `k != 0`, with the reality condition `w(-k) = conj(w(k))`.
//! * [`CglBasis`] — Dirichlet sine modes `sqrt(2) sin(n pi x)` on `(0,1)` for
//!   the complex Ginzburg–Landau equation, with complex coefficients.
//!
//! Flat mode indices are sorted by Laplacian eigenvalue, so the projector
//! that keeps the first `N` coefficients is exactly the low-frequency cut,
//! and eigenvalue "shells" (groups with equal eigenvalue) are contiguous.
//!
//! Norm conventions: `|u|^2 = sum |u_n|^2` over stored coefficients (for the
//! torus this sums both members of each conjugate pair), `||u||^2 =
//! sum mu_n |u_n|^2`, and `L^p` norms are grid quadratures.
//!
//! Every basis also fixes an isometric real coordinatization ("dofs"):
//! the torus field maps to `sqrt(2) (Re, Im)` of each canonical conjugate
//! representative, the line field to `(Re, Im)` per mode, so that
//! `|u|^2 = sum_d x_d^2` exactly. Noise operators and low-mode inverses work
//! in these coordinates.

mod cgl;
mod field;
mod ns;

pub use cgl::{validate_sigma, CglBasis};
pub use field::SpectralField;
pub use ns::NsBasis;

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Which equation a basis belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EquationKind {
    NavierStokes,
    GinzburgLandau,
}

impl std::fmt::Display for EquationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EquationKind::NavierStokes => write!(f, "ns"),
            EquationKind::GinzburgLandau => write!(f, "cgl"),
        }
    }
}

/// A Galerkin basis: either torus Fourier (vorticity) or line sine modes.
pub enum GalerkinBasis {
    NsTorus(NsBasis),
    CglLine(CglBasis),
}

impl std::fmt::Debug for GalerkinBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GalerkinBasis::NsTorus(b) => write!(f, "NsTorus(grid={}, modes={})", b.grid(), b.mode_count()),
            GalerkinBasis::CglLine(b) => write!(f, "CglLine(modes={}, grid={})", b.mode_count(), b.grid()),
        }
    }
}

impl GalerkinBasis {
    pub fn kind(&self) -> EquationKind {
        match self {
            GalerkinBasis::NsTorus(_) => EquationKind::NavierStokes,
            GalerkinBasis::CglLine(_) => EquationKind::GinzburgLandau,
        }
    }

    /// Number of retained modes (stored complex coefficients).
    pub fn mode_count(&self) -> usize {
        match self {
            GalerkinBasis::NsTorus(b) => b.mode_count(),
            GalerkinBasis::CglLine(b) => b.mode_count(),
        }
    }

    /// Laplacian eigenvalues per flat mode index, nondecreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        match self {
            GalerkinBasis::NsTorus(b) => b.eigenvalues(),
            GalerkinBasis::CglLine(b) => b.eigenvalues(),
        }
    }

    pub fn eigenvalue(&self, n: usize) -> f64 {
        self.eigenvalues()[n]
    }

    /// Lowest eigenvalue (the spectral gap of the full generator).
    pub fn mu_1(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Dimension of the real coordinatization.
    pub fn dof_count(&self) -> usize {
        match self {
            GalerkinBasis::NsTorus(b) => b.mode_count(),
            GalerkinBasis::CglLine(b) => 2 * b.mode_count(),
        }
    }

    /// Real dofs spanned by the first `n_modes` coefficients. For the torus
    /// this requires `n_modes` to be conjugation-closed (whole shells are).
    pub fn low_dof_count(&self, n_modes: usize) -> Result<usize> {
        match self {
            GalerkinBasis::NsTorus(b) => {
                if !b.is_conjugation_closed(n_modes) {
                    return Err(Error::BasisMismatch(format!(
                        "low-mode count {n_modes} splits a conjugate pair; use a shell-closed count"
                    )));
                }
                Ok(n_modes)
            }
            GalerkinBasis::CglLine(_) => Ok(2 * n_modes),
        }
    }

    /// Number of modes contained in the first `shells` eigenvalue shells.
    pub fn shell_mode_count(&self, shells: usize) -> Result<usize> {
        let ends = self.shell_ends();
        if shells == 0 || shells > ends.len() {
            return Err(Error::InvalidConfig(format!(
                "requested {shells} eigenvalue shells; basis has {}",
                ends.len()
            )));
        }
        Ok(ends[shells - 1])
    }

    /// Cumulative mode counts at each shell boundary.
    pub fn shell_ends(&self) -> Vec<usize> {
        let mu = self.eigenvalues();
        let mut ends = Vec::new();
        for n in 0..mu.len() {
            if n + 1 == mu.len() || mu[n + 1] > mu[n] + 1e-9 {
                ends.push(n + 1);
            }
        }
        ends
    }

    /// Isometric real coordinates of a coefficient vector.
    pub fn field_to_dofs(&self, coeffs: &[Complex64]) -> Vec<f64> {
        match self {
            GalerkinBasis::NsTorus(b) => b.field_to_dofs(coeffs),
            GalerkinBasis::CglLine(_) => {
                let mut out = Vec::with_capacity(2 * coeffs.len());
                for c in coeffs {
                    out.push(c.re);
                    out.push(c.im);
                }
                out
            }
        }
    }

    /// Inverse of [`Self::field_to_dofs`].
    pub fn dofs_to_field(&self, dofs: &[f64]) -> Vec<Complex64> {
        match self {
            GalerkinBasis::NsTorus(b) => b.dofs_to_field(dofs),
            GalerkinBasis::CglLine(b) => {
                debug_assert_eq!(dofs.len(), 2 * b.mode_count());
                dofs.chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect()
            }
        }
    }

    /// Structural equality: same kind and same resolution parameters.
    pub fn same_discretization(&self, other: &GalerkinBasis) -> bool {
        match (self, other) {
            (GalerkinBasis::NsTorus(a), GalerkinBasis::NsTorus(b)) => a.grid() == b.grid(),
            (GalerkinBasis::CglLine(a), GalerkinBasis::CglLine(b)) => {
                a.mode_count() == b.mode_count() && a.grid() == b.grid()
            }
            _ => false,
        }
    }

    pub fn as_ns(&self) -> Result<&NsBasis> {
        match self {
            GalerkinBasis::NsTorus(b) => Ok(b),
            _ => Err(Error::BasisMismatch(
                "operation requires the torus vorticity basis".into(),
            )),
        }
    }

    pub fn as_cgl(&self) -> Result<&CglBasis> {
        match self {
            GalerkinBasis::CglLine(b) => Ok(b),
            _ => Err(Error::BasisMismatch(
                "operation requires the line sine basis".into(),
            )),
        }
    }
}

/// Projector onto the first `n_modes` coefficients (low-frequency cut) and
/// its complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projector {
    n_modes: usize,
}

impl Projector {
    pub fn new(n_modes: usize) -> Self {
        Projector { n_modes }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Low-frequency part: keeps coefficients `0..n_modes`, zeroes the rest.
    pub fn apply(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = coeffs.to_vec();
        for c in out.iter_mut().skip(self.n_modes) {
            *c = Complex64::new(0.0, 0.0);
        }
        out
    }

    /// High-frequency complement: `v - P v`.
    pub fn complement(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = coeffs.to_vec();
        let cut = self.n_modes.min(out.len());
        for c in out.iter_mut().take(cut) {
            *c = Complex64::new(0.0, 0.0);
        }
        out
    }

    /// Zero the high-frequency part in place.
    pub fn truncate_in_place(&self, coeffs: &mut [Complex64]) {
        for c in coeffs.iter_mut().skip(self.n_modes) {
            *c = Complex64::new(0.0, 0.0);
        }
    }

    /// Eigenvalue floor of the complement range: the smallest eigenvalue a
    /// mode killed by this projector can have.
    pub fn gap_floor(&self, basis: &GalerkinBasis) -> f64 {
        let mu = basis.eigenvalues();
        if self.n_modes < mu.len() {
            mu[self.n_modes]
        } else {
            f64::INFINITY
        }
    }
}

pub(crate) fn l2_sq(coeffs: &[Complex64]) -> f64 {
    coeffs.iter().map(|c| c.norm_sqr()).sum()
}

pub(crate) fn h1_sq(coeffs: &[Complex64], mu: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(mu)
        .map(|(c, m)| m * c.norm_sqr())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_coeffs(n: usize, seed: u64) -> Vec<Complex64> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 0, "test-coeffs");
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn projector_algebra() {
        let v = random_coeffs(32, 1);
        let p = Projector::new(10);
        let pv = p.apply(&v);
        let ppv = p.apply(&pv);
        let qv = p.complement(&v);
        for n in 0..32 {
            // Idempotence and complement identity P v + Q v = v.
            assert_eq!(pv[n], ppv[n]);
            let sum = pv[n] + qv[n];
            assert_eq!(sum, v[n]);
        }
        // Orthogonality in the coefficient inner product.
        let dot: Complex64 = pv.iter().zip(&qv).map(|(a, b)| a * b.conj()).sum();
        assert_eq!(dot, Complex64::new(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn projector_is_contraction(n_modes in 0usize..40, seed in 0u64..50) {
            let v = random_coeffs(40, seed);
            let p = Projector::new(n_modes);
            let pv = p.apply(&v);
            prop_assert!(l2_sq(&pv) <= l2_sq(&v) + 1e-15);
            // Pythagoras: |Pv|^2 + |Qv|^2 = |v|^2.
            let qv = p.complement(&v);
            prop_assert!((l2_sq(&pv) + l2_sq(&qv) - l2_sq(&v)).abs() < 1e-12);
        }
    }
}
