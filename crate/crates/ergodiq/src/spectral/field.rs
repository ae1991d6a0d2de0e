//! A coefficient vector tied to its basis.

use super::{l2_sq, GalerkinBasis, Projector};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::sync::Arc;

/// A Galerkin state: the retained coefficients of one field, sharing its
/// basis by `Arc` so copies are cheap to hand around.
#[derive(Clone)]
pub struct SpectralField {
    basis: Arc<GalerkinBasis>,
    coeffs: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "SpectralField({:?}, |u| = {:.6e})",
            self.basis,
            self.l2_norm()
        )
    }
}

impl SpectralField {
    pub fn new(basis: Arc<GalerkinBasis>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != basis.mode_count() {
            return Err(Error::dim(basis.mode_count(), coeffs.len(), "field coefficients"));
        }
        Ok(SpectralField { basis, coeffs })
    }

    pub fn zero(basis: Arc<GalerkinBasis>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); basis.mode_count()];
        SpectralField { basis, coeffs }
    }

    pub fn from_dofs(basis: Arc<GalerkinBasis>, dofs: &[f64]) -> Result<Self> {
        if dofs.len() != basis.dof_count() {
            return Err(Error::dim(basis.dof_count(), dofs.len(), "field dofs"));
        }
        let coeffs = basis.dofs_to_field(dofs);
        Ok(SpectralField { basis, coeffs })
    }

    pub fn basis(&self) -> &Arc<GalerkinBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn dofs(&self) -> Vec<f64> {
        self.basis.field_to_dofs(&self.coeffs)
    }

    // ----- norms ------------------------------------------------------------

    pub fn l2_norm_sq(&self) -> f64 {
        l2_sq(&self.coeffs)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Dirichlet energy `sum mu_n |u_n|^2`.
    pub fn h1_norm_sq(&self) -> f64 {
        super::h1_sq(&self.coeffs, self.basis.eigenvalues())
    }

    /// Grid-quadrature `L^p` norm of the synthesized field.
    pub fn lp_norm(&self, p: f64) -> f64 {
        match &*self.basis {
            GalerkinBasis::NsTorus(b) => b.lp_norm(&self.coeffs, p),
            GalerkinBasis::CglLine(b) => b.lp_norm(&self.coeffs, p),
        }
    }

    /// `|P_N u|^2` over the first `n_modes` coefficients.
    pub fn low_l2_norm_sq(&self, n_modes: usize) -> f64 {
        l2_sq(&self.coeffs[..n_modes.min(self.coeffs.len())])
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    // ----- algebra ------------------------------------------------------------

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if self.basis.same_discretization(&other.basis) {
            Ok(())
        } else {
            Err(Error::BasisMismatch(format!(
                "fields live on different discretizations: {:?} vs {:?}",
                self.basis, other.basis
            )))
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        self.check_compatible(other)?;
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= a;
        }
    }

    /// `self - other` as a new field.
    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SpectralField {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    /// `|self - other|` in the coefficient norm.
    pub fn dist_l2(&self, other: &SpectralField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    pub fn project(&self, p: &Projector) -> SpectralField {
        SpectralField {
            basis: self.basis.clone(),
            coeffs: p.apply(&self.coeffs),
        }
    }

    pub fn truncate_in_place(&mut self, p: &Projector) {
        p.truncate_in_place(&mut self.coeffs);
    }

    /// Deviation from the torus reality condition; identically 0 for the
    /// genuinely complex line field.
    pub fn reality_defect(&self) -> f64 {
        match &*self.basis {
            GalerkinBasis::NsTorus(b) => b.reality_defect(&self.coeffs),
            GalerkinBasis::CglLine(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{CglBasis, NsBasis};

    fn cgl_arc(m: usize) -> Arc<GalerkinBasis> {
        Arc::new(GalerkinBasis::CglLine(CglBasis::new(m, 2).unwrap()))
    }

    fn ns_arc(grid: usize) -> Arc<GalerkinBasis> {
        Arc::new(GalerkinBasis::NsTorus(NsBasis::new(grid).unwrap()))
    }

    #[test]
    fn construction_checks_lengths() {
        let b = cgl_arc(4);
        assert!(SpectralField::new(b.clone(), vec![Complex64::new(1.0, 0.0); 4]).is_ok());
        assert!(SpectralField::new(b.clone(), vec![Complex64::new(1.0, 0.0); 5]).is_err());
        assert!(SpectralField::from_dofs(b.clone(), &vec![0.0; 8]).is_ok());
        assert!(SpectralField::from_dofs(b, &vec![0.0; 7]).is_err());
    }

    #[test]
    fn norms_on_hand_built_field() {
        let b = cgl_arc(3);
        let mut f = SpectralField::zero(b);
        f.coeffs_mut()[0] = Complex64::new(3.0, 4.0);
        f.coeffs_mut()[2] = Complex64::new(0.0, 2.0);
        assert!((f.l2_norm_sq() - 29.0).abs() < 1e-14);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((f.h1_norm_sq() - (25.0 * pi2 + 4.0 * 9.0 * pi2)).abs() < 1e-10);
        assert!((f.low_l2_norm_sq(1) - 25.0).abs() < 1e-14);
        assert!(f.is_finite());
        f.coeffs_mut()[1] = Complex64::new(f64::NAN, 0.0);
        assert!(!f.is_finite());
    }

    #[test]
    fn algebra_and_distances() {
        let b = ns_arc(8);
        let dofs_a: Vec<f64> = (0..b.dof_count()).map(|d| (d as f64 * 0.37).sin()).collect();
        let dofs_b: Vec<f64> = (0..b.dof_count()).map(|d| (d as f64 * 0.11).cos()).collect();
        let fa = SpectralField::from_dofs(b.clone(), &dofs_a).unwrap();
        let fb = SpectralField::from_dofs(b.clone(), &dofs_b).unwrap();
        let mut fc = fa.clone();
        fc.add_scaled(-1.0, &fb).unwrap();
        let d = fa.dist_l2(&fb).unwrap();
        assert!((fc.l2_norm() - d).abs() < 1e-12);
        // The dof map is an isometry, so distances agree with dof distances.
        let dof_dist: f64 = dofs_a
            .iter()
            .zip(&dofs_b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!((d - dof_dist).abs() < 1e-12);
        // Reality is preserved by the dof map.
        assert!(fa.reality_defect() < 1e-15);
    }

    #[test]
    fn cross_basis_operations_are_rejected() {
        let fa = SpectralField::zero(ns_arc(8));
        let fb = SpectralField::zero(ns_arc(16));
        let fc = SpectralField::zero(cgl_arc(8));
        assert!(fa.dist_l2(&fb).is_err());
        assert!(fa.dist_l2(&fc).is_err());
        let mut fm = fa.clone();
        assert!(fm.add_scaled(1.0, &fc).is_err());
    }

    #[test]
    fn projection_splits_energy() {
        let b = cgl_arc(6);
        let dofs: Vec<f64> = (0..b.dof_count()).map(|d| 1.0 / (1.0 + d as f64)).collect();
        let f = SpectralField::from_dofs(b, &dofs).unwrap();
        let p = Projector::new(2);
        let low = f.project(&p);
        let mut high = f.clone();
        high.add_scaled(-1.0, &low).unwrap();
        assert!(
            (low.l2_norm_sq() + high.l2_norm_sq() - f.l2_norm_sq()).abs() < 1e-13
        );
        assert!((low.l2_norm_sq() - f.low_l2_norm_sq(2)).abs() < 1e-14);
    }
}
