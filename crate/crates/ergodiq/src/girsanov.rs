//! The binding drift, its noise-space transfer `h`, the information budget
//! (Novikov accumulator with stopping time), and Girsanov log-densities.
//!
//! The auxiliary ("binding") process follows the true dynamics plus a
//! low-mode drift `-delta(u, utilde)` that pulls it toward the target
//! trajectory `u`. Because the noise covers the low modes, that drift can
//! be re-expressed as a shift of the driving Wiener process:
//! `h = -g(utilde) delta`, so that `phi(utilde) h = -delta` exactly. The
//! shifted driver `W + int h dt` is what the second solution is coupled
//! against; Girsanov prices the shift, and the price is kept under a
//! budget `theta` by switching the shift off at the stopping time `tau`
//! where the running integral `int |h|^2 dt` would first exceed it.
//!
//! Conventions: `delta` is the drift as it appears on the left-hand side
//! of the auxiliary equation (`d utilde + F(utilde) dt + delta dt = phi dW`),
//! so integrators must add `-delta`; `h = -g(utilde) delta` lives in the
//! noise space, supported on its invertible low block.

use crate::error::{Error, Result};
use crate::noise::CovarianceModel;
use crate::spectral::{EquationKind, Projector, SpectralField};
use num_complex::Complex64;

/// Equation-specific parameters of the binding drift.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum BindingSpec {
    /// `delta = K P_N (utilde - u)`.
    NavierStokes { k: f64 },
    /// `delta = P_N[(eta + i lambda)(|u|^{2s}u - |ut|^{2s}ut)
    ///           + K |P_N ut|^{2s} P_N(ut - u)]
    ///           + L (1 + |ut|^{2s} + |u|^{2s}) P_N(ut - u)`,
    /// with `|P_N ut|^{2s}` acting pointwise on the grid and the outer
    /// `| . |` norms being state-space norms.
    GinzburgLandau {
        k: f64,
        l: f64,
        eta: f64,
        lambda: f64,
        sigma: f64,
    },
}

impl BindingSpec {
    pub fn kind(&self) -> EquationKind {
        match self {
            BindingSpec::NavierStokes { .. } => EquationKind::NavierStokes,
            BindingSpec::GinzburgLandau { .. } => EquationKind::GinzburgLandau,
        }
    }

    pub fn gain(&self) -> f64 {
        match *self {
            BindingSpec::NavierStokes { k } => k,
            BindingSpec::GinzburgLandau { k, .. } => k,
        }
    }
}

/// One evaluation of the binding drift at a pair of states.
#[derive(Debug, Clone)]
pub struct BindingDrift {
    /// `delta(u, utilde)` in state-dof coordinates (left-hand-side sign;
    /// supported on the low block).
    pub delta_dofs: Vec<f64>,
    /// `h = -g(utilde) delta` in noise-space coordinates (supported on the
    /// invertible block).
    pub h: Vec<f64>,
    /// `|h|^2` in the noise norm — the Novikov integrand.
    pub h_norm_sq: f64,
}

/// Evaluate the binding drift at explicitly given states. Both states must
/// share the model's basis.
pub fn binding_drift(
    u: &SpectralField,
    utilde: &SpectralField,
    model: &CovarianceModel,
    spec: &BindingSpec,
) -> Result<BindingDrift> {
    if spec.kind() != u.basis().kind() {
        return Err(Error::BasisMismatch(format!(
            "binding drift for {:?} applied to a {} basis",
            spec,
            u.basis().kind()
        )));
    }
    let low_dofs = model.low_dof_count();
    let dofs = model.state_dof_count();
    let mut delta = vec![0.0; dofs];
    match *spec {
        BindingSpec::NavierStokes { k } => {
            let ud = u.dofs();
            let td = utilde.dofs();
            for d in 0..low_dofs {
                delta[d] = k * (td[d] - ud[d]);
            }
        }
        BindingSpec::GinzburgLandau {
            k,
            l,
            eta,
            lambda,
            sigma,
        } => {
            let cgl = u.basis().as_cgl()?;
            let n_modes = model.n_low_modes();
            let p = Projector::new(n_modes);
            let coef = Complex64::new(eta, lambda);
            // (eta + i lambda)(|u|^{2s}u - |ut|^{2s}ut), then P_N.
            let f_u = cgl.nonlinearity(u.coeffs(), sigma, coef)?;
            let f_t = cgl.nonlinearity(utilde.coeffs(), sigma, coef)?;
            let mut low = vec![Complex64::new(0.0, 0.0); cgl.mode_count()];
            for n in 0..n_modes {
                low[n] = f_u[n] - f_t[n];
            }
            // K |P_N ut(x)|^{2s} (P_N r)(x), pointwise, then P_N.
            let pt = p.apply(utilde.coeffs());
            let pr: Vec<Complex64> = p
                .apply(utilde.coeffs())
                .iter()
                .zip(p.apply(u.coeffs()).iter())
                .map(|(a, b)| a - b)
                .collect();
            let vt = cgl.synthesize(&pt);
            let vr = cgl.synthesize(&pr);
            let prod: Vec<Complex64> = vt
                .iter()
                .zip(&vr)
                .map(|(a, b)| a.norm_sqr().powf(sigma) * b)
                .collect();
            let k_term = cgl.analyze(&prod);
            for n in 0..n_modes {
                low[n] += k * k_term[n];
            }
            // L (1 + |ut|^{2s} + |u|^{2s}) P_N r, scalar weight.
            let weight = l
                * (1.0
                    + utilde.l2_norm_sq().powf(sigma)
                    + u.l2_norm_sq().powf(sigma));
            for n in 0..n_modes {
                low[n] += weight * pr[n];
            }
            delta = u.basis().field_to_dofs(&low);
            for d in delta.iter_mut().skip(low_dofs) {
                *d = 0.0;
            }
        }
    }
    let mut neg = delta.clone();
    for x in neg.iter_mut() {
        *x = -*x;
    }
    let h = model.pseudo_inverse_apply(&utilde.dofs(), &neg)?;
    let h_norm_sq = CovarianceModel::noise_norm_sq(&h);
    Ok(BindingDrift {
        delta_dofs: delta,
        h,
        h_norm_sq,
    })
}

/// The `Z` weight of the line-equation drift bound `|h|^2 <= C_N Z`:
/// `Z = (||u||^2 + ||ut||^2 + |u|_p^p + |ut|_p^p) |r|^2
///      + (1 + |u|^beta + |ut|^beta) ||r||^2`,
/// `p = 2 sigma + 2`, `beta = 4 sigma + (2 sigma + 2)/(2 - sigma)`.
pub fn drift_bound_weight(u: &SpectralField, utilde: &SpectralField, sigma: f64) -> Result<f64> {
    let p = 2.0 * sigma + 2.0;
    let beta = 4.0 * sigma + p / (2.0 - sigma);
    let r = utilde.sub(u)?;
    let grad = u.h1_norm_sq()
        + utilde.h1_norm_sq()
        + u.lp_norm(p).powf(p)
        + utilde.lp_norm(p).powf(p);
    let amp = 1.0 + u.l2_norm().powf(beta) + utilde.l2_norm().powf(beta);
    Ok(grad * r.l2_norm_sq() + amp * r.h1_norm_sq())
}

/// Window budget `theta = 2 C exp(-gamma * age * T)`: `age` counts windows
/// since the current gluing attempt was anchored.
pub fn theta_for_window(c_hat: f64, gamma_hat: f64, age: usize, window_len: f64) -> f64 {
    2.0 * c_hat * (-gamma_hat * age as f64 * window_len).exp()
}

/// Running information budget for one window. The drift is admitted step
/// by step; the first step whose contribution would push the integral past
/// `theta` trips the accumulator, records `tau`, and is rejected (so the
/// realized integral never exceeds the budget).
#[derive(Debug, Clone)]
pub struct NovikovAccumulator {
    window_start: f64,
    theta: f64,
    integral: f64,
    tripped: bool,
    trip_time: Option<f64>,
}

impl NovikovAccumulator {
    pub fn new(window_start: f64, theta: f64) -> NovikovAccumulator {
        NovikovAccumulator {
            window_start,
            theta,
            integral: 0.0,
            tripped: false,
            trip_time: None,
        }
    }

    /// Offer the step's `|h|^2 dt`; returns true when the drift may act on
    /// this step. After a trip (now or earlier) the drift must be replaced
    /// by zero, and the integral freezes.
    pub fn admit(&mut self, h_norm_sq: f64, dt: f64, t_now: f64) -> bool {
        if self.tripped {
            return false;
        }
        let next = self.integral + h_norm_sq * dt;
        if next > self.theta {
            self.tripped = true;
            self.trip_time = Some(t_now);
            false
        } else {
            self.integral = next;
            true
        }
    }

    pub fn tripped(&self) -> bool {
        self.tripped
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `tau`, when tripped; measured on the same clock as `t_now` passed to
    /// [`Self::admit`].
    pub fn trip_time(&self) -> Option<f64> {
        self.trip_time
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }
}

/// Streaming log-density `sum <h, dW> - 1/2 sum |h|^2 dt` of the shifted
/// driver against the reference driver, evaluated on the realized path.
#[derive(Debug, Clone, Default)]
pub struct GirsanovRecord {
    log_density: f64,
    steps: usize,
}

impl GirsanovRecord {
    pub fn new() -> GirsanovRecord {
        GirsanovRecord::default()
    }

    /// `dw` is the realized reference increment `sqrt(dt) xi` (same layout
    /// as `h`).
    pub fn push(&mut self, h: &[f64], dw: &[f64], dt: f64) {
        let dot: f64 = h.iter().zip(dw).map(|(a, b)| a * b).sum();
        let sq: f64 = h.iter().map(|a| a * a).sum();
        self.log_density += dot - 0.5 * sq * dt;
        self.steps += 1;
    }

    pub fn value(&self) -> f64 {
        self.log_density
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Whole-sequence form of the log-density, for post-hoc evaluation.
pub fn girsanov_log_density(drifts: &[Vec<f64>], increments: &[Vec<f64>], dt: f64) -> Result<f64> {
    if drifts.len() != increments.len() {
        return Err(Error::dim(drifts.len(), increments.len(), "drift/increment sequences"));
    }
    let mut rec = GirsanovRecord::new();
    for (h, dw) in drifts.iter().zip(increments) {
        if h.len() != dw.len() {
            return Err(Error::dim(h.len(), dw.len(), "drift/increment step"));
        }
        rec.push(h, dw, dt);
    }
    Ok(rec.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{CovarianceVariant, ScalarModulation};
    use crate::spectral::{CglBasis, GalerkinBasis, NsBasis};
    use rand::Rng;
    use std::sync::Arc;

    fn ns_model(k_gain: f64) -> (Arc<GalerkinBasis>, CovarianceModel, BindingSpec) {
        let basis = Arc::new(GalerkinBasis::NsTorus(NsBasis::new(8).unwrap()));
        let n_low = basis.shell_mode_count(2).unwrap();
        let model = CovarianceModel::from_scalar_gains(
            basis.clone(),
            n_low,
            1.0,
            0.2,
            2.0,
            ScalarModulation::Reciprocal,
            CovarianceVariant::AdditiveLowPlusMultiplicative,
        )
        .unwrap();
        (basis, model, BindingSpec::NavierStokes { k: k_gain })
    }

    fn cgl_model() -> (Arc<GalerkinBasis>, CovarianceModel, BindingSpec) {
        let basis = Arc::new(GalerkinBasis::CglLine(CglBasis::new(16, 2).unwrap()));
        let model = CovarianceModel::from_scalar_gains(
            basis.clone(),
            4,
            0.5,
            0.1,
            2.0,
            ScalarModulation::SaturatingPower { sigma: 1.0 },
            CovarianceVariant::AdditiveLowPlusMultiplicative,
        )
        .unwrap();
        let spec = BindingSpec::GinzburgLandau {
            k: 2.0,
            l: 0.8,
            eta: 1.0,
            lambda: 1.0,
            sigma: 1.0,
        };
        (basis, model, spec)
    }

    fn random_field(basis: &Arc<GalerkinBasis>, seed: u64, amp: f64) -> SpectralField {
        let mut rng = crate::rng::stream(seed, 0, "girsanov-test");
        let dofs: Vec<f64> = (0..basis.dof_count())
            .map(|_| amp * (rng.random::<f64>() - 0.5))
            .collect();
        SpectralField::from_dofs(basis.clone(), &dofs).unwrap()
    }

    #[test]
    fn drift_vanishes_on_the_diagonal() {
        let (basis, model, spec) = ns_model(50.0);
        let u = random_field(&basis, 1, 2.0);
        let d = binding_drift(&u, &u, &model, &spec).unwrap();
        assert!(d.delta_dofs.iter().all(|&x| x == 0.0));
        assert!(d.h.iter().all(|&x| x == 0.0));
        assert_eq!(d.h_norm_sq, 0.0);

        let (basis, model, spec) = cgl_model();
        let u = random_field(&basis, 2, 1.0);
        let d = binding_drift(&u, &u, &model, &spec).unwrap();
        assert!(d.delta_dofs.iter().all(|&x| x == 0.0));
        assert_eq!(d.h_norm_sq, 0.0);
    }

    #[test]
    fn torus_drift_with_unit_gains_hand_value() {
        // b == 1: h = -K P_N r in the invertible block, |h|^2 = K^2 |P_N r|^2.
        let (basis, model, spec) = ns_model(7.0);
        let u = random_field(&basis, 3, 1.0);
        let t = random_field(&basis, 4, 1.0);
        let d = binding_drift(&u, &t, &model, &spec).unwrap();
        let low = model.low_dof_count();
        let (ud, td) = (u.dofs(), t.dofs());
        let mut pn_r_sq = 0.0;
        for dd in 0..low {
            let r = td[dd] - ud[dd];
            assert_eq!(d.delta_dofs[dd], 7.0 * r);
            assert_eq!(d.h[model.state_dof_count() + dd], -7.0 * r);
            pn_r_sq += r * r;
        }
        assert!(d.delta_dofs[low..].iter().all(|&x| x == 0.0));
        let (h1, _) = model.split(&d.h);
        assert!(h1.iter().all(|&x| x == 0.0));
        assert!((d.h_norm_sq - 49.0 * pn_r_sq).abs() <= 1e-12 * d.h_norm_sq);
    }

    #[test]
    fn drift_transfer_identity() {
        // phi(utilde) h = -delta: the gluing identity, for both equations
        // and both covariance variants.
        for variant in [
            CovarianceVariant::AdditiveLowPlusMultiplicative,
            CovarianceVariant::PerturbedDiagonal { epsilon: 0.3 },
        ] {
            let basis = Arc::new(GalerkinBasis::NsTorus(NsBasis::new(8).unwrap()));
            let n_low = basis.shell_mode_count(2).unwrap();
            let model = CovarianceModel::from_scalar_gains(
                basis.clone(),
                n_low,
                0.7,
                0.2,
                2.0,
                ScalarModulation::Reciprocal,
                variant,
            )
            .unwrap();
            let spec = BindingSpec::NavierStokes { k: 11.0 };
            let u = random_field(&basis, 5, 2.0);
            let t = random_field(&basis, 6, 2.0);
            let d = binding_drift(&u, &t, &model, &spec).unwrap();
            let back = model.apply_phi_vector(&t.dofs(), &d.h).unwrap();
            for (got, want) in back.iter().zip(&d.delta_dofs) {
                assert!((got + want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_drift_reduces_to_nonlinearity_difference_off_the_low_block() {
        // r supported on the high modes: P_N r = 0, so the K and L terms
        // vanish and delta is the projected nonlinearity difference.
        let (basis, model, spec) = cgl_model();
        let n_low = model.n_low_modes();
        let u = random_field(&basis, 7, 1.0);
        let mut t = u.clone();
        for n in n_low..basis.mode_count() {
            t.coeffs_mut()[n] += Complex64::new(0.3, -0.2) / (n as f64 + 1.0);
        }
        let d = binding_drift(&u, &t, &model, &spec).unwrap();
        let cgl = basis.as_cgl().unwrap();
        let coef = Complex64::new(1.0, 1.0);
        let f_u = cgl.nonlinearity(u.coeffs(), 1.0, coef).unwrap();
        let f_t = cgl.nonlinearity(t.coeffs(), 1.0, coef).unwrap();
        let mut expect = vec![Complex64::new(0.0, 0.0); basis.mode_count()];
        for n in 0..n_low {
            expect[n] = f_u[n] - f_t[n];
        }
        let expect_dofs = basis.field_to_dofs(&expect);
        for (got, want) in d.delta_dofs.iter().zip(&expect_dofs) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(d.h_norm_sq > 0.0, "nonlinearity difference must be visible");
    }

    #[test]
    fn line_drift_bound_ratio_is_stable_across_amplitudes() {
        // |h|^2 / Z stays within one bounded band whether the pair is close
        // or far — the computable face of the |h|^2 <= C_N Z bound.
        let (basis, model, spec) = cgl_model();
        let sigma = 1.0;
        let mut worst_small: f64 = 0.0;
        let mut worst_large: f64 = 0.0;
        for trial in 0..60 {
            let u = random_field(&basis, 100 + trial, 1.0);
            let dir = random_field(&basis, 200 + trial, 1.0);
            for (amp, worst) in [(1e-3, &mut worst_small), (1.0, &mut worst_large)] {
                let mut t = u.clone();
                t.add_scaled(amp, &dir).unwrap();
                let d = binding_drift(&u, &t, &model, &spec).unwrap();
                let z = drift_bound_weight(&u, &t, sigma).unwrap();
                assert!(z > 0.0);
                let ratio = d.h_norm_sq / z;
                assert!(ratio.is_finite());
                *worst = worst.max(ratio);
            }
        }
        assert!(worst_small > 0.0 && worst_large > 0.0);
        let spread = (worst_small / worst_large).max(worst_large / worst_small);
        assert!(spread < 20.0, "C_N estimate drifts with amplitude: {spread}");
    }

    #[test]
    fn log_density_zero_drift_and_hand_value() {
        let mut rec = GirsanovRecord::new();
        for _ in 0..100 {
            rec.push(&[0.0, 0.0], &[0.3, -0.1], 0.01);
        }
        assert_eq!(rec.value(), 0.0);

        let ld = girsanov_log_density(&[vec![0.8]], &[vec![0.25]], 0.01).unwrap();
        assert!((ld - (0.8 * 0.25 - 0.5 * 0.64 * 0.01)).abs() < 1e-15);

        assert!(girsanov_log_density(&[vec![1.0]], &[], 0.01).is_err());
        assert!(girsanov_log_density(&[vec![1.0]], &[vec![1.0, 2.0]], 0.01).is_err());
    }

    #[test]
    fn exponential_martingale_moments() {
        // Constant scalar drift h over [0, 1]: E[density] = 1 and
        // E[density^2] = e^{h^2}, each within 4 standard errors.
        let h: f64 = 0.8;
        let dt: f64 = 0.02;
        let steps = 50;
        let n = 20_000;
        let mut rng = crate::rng::stream(11, 0, "girsanov-mc");
        let mut m1 = Vec::with_capacity(n);
        let mut m2 = Vec::with_capacity(n);
        for _ in 0..n {
            let mut rec = GirsanovRecord::new();
            for _ in 0..steps {
                let dw = dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                rec.push(&[h], &[dw], dt);
            }
            let d = rec.value().exp();
            m1.push(d);
            m2.push(d * d);
        }
        let (mean1, se1) = crate::stats::mean_and_se(&m1).unwrap();
        let (mean2, se2) = crate::stats::mean_and_se(&m2).unwrap();
        assert!((mean1 - 1.0).abs() < 4.0 * se1, "mean {mean1} +- {se1}");
        let target = (h * h).exp();
        assert!((mean2 - target).abs() < 4.0 * se2, "second moment {mean2} vs {target}");
    }

    #[test]
    fn importance_sampling_identity() {
        // For a bounded statistic of the endpoint, the density-weighted
        // mean under the shifted driver equals the unshifted mean.
        let h: f64 = 0.6;
        let dt: f64 = 0.05;
        let steps = 20;
        let n = 40_000;
        let mut rng = crate::rng::stream(12, 0, "girsanov-is");
        let f = |w: f64| (w.sin() + 1.0) * 0.5;
        let mut weighted = Vec::with_capacity(n);
        let mut plain = Vec::with_capacity(n);
        for _ in 0..n {
            // Reference endpoint.
            let mut w_ref = 0.0;
            for _ in 0..steps {
                w_ref += dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            plain.push(f(w_ref));
            // Shifted endpoint, reweighted by the inverse density: under
            // the shifted path the statistic times exp(-log-density at the
            // shifted increments) averages to the reference mean.
            let mut rec = GirsanovRecord::new();
            let mut w_shift = 0.0;
            for _ in 0..steps {
                let dw = dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                w_shift += dw + h * dt;
                rec.push(&[h], &[dw + h * dt], dt);
            }
            weighted.push(f(w_shift) * (-rec.value()).exp());
        }
        let (mw, sw) = crate::stats::mean_and_se(&weighted).unwrap();
        let (mp, sp) = crate::stats::mean_and_se(&plain).unwrap();
        let se = (sw * sw + sp * sp).sqrt();
        assert!((mw - mp).abs() < 4.0 * se, "{mw} vs {mp} (se {se})");
    }

    #[test]
    fn novikov_trips_at_the_budget() {
        let theta = 0.1;
        let dt = 0.01;
        let mut acc = NovikovAccumulator::new(5.0, theta);
        let mut t = 5.0;
        let mut applied = 0;
        for _ in 0..40 {
            if acc.admit(1.0, dt, t) {
                applied += 1;
            }
            t += dt;
        }
        assert!(acc.tripped());
        assert_eq!(applied, 10);
        let tau = acc.trip_time().unwrap();
        assert!((tau - (5.0 + theta)).abs() <= dt + 1e-12, "tau = {tau}");
        // The realized integral never exceeds the budget.
        assert!(acc.integral() <= theta + 1e-15);
        // Frozen after the trip.
        assert!(!acc.admit(123.0, dt, t));
        assert!((acc.integral() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn untripped_window_keeps_its_full_integral() {
        let mut acc = NovikovAccumulator::new(0.0, 10.0);
        let mut t = 0.0;
        for _ in 0..100 {
            assert!(acc.admit(0.5, 0.01, t));
            t += 0.01;
        }
        assert!(!acc.tripped());
        assert!((acc.integral() - 0.5).abs() < 1e-12);
        assert_eq!(acc.trip_time(), None);
    }

    #[test]
    fn theta_schedule_is_geometric() {
        let t_window = 1.0;
        let gamma = std::f64::consts::LN_2;
        let t0 = theta_for_window(3.0, gamma, 0, t_window);
        assert_eq!(t0, 6.0);
        for age in 0..6 {
            let a = theta_for_window(3.0, gamma, age, t_window);
            let b = theta_for_window(3.0, gamma, age + 1, t_window);
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }
}
