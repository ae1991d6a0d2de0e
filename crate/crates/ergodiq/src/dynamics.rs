//! Time integration of the true process `u` and the auxiliary binding
//! process `utilde`, with energy ledgers.
//!
//! Scheme: semi-implicit Euler–Maruyama. The stiff linear part (`nu A`,
//! resp. `(eps + i) A`) is implicit — each mode is divided by
//! `1 + dt nu mu_n` (real) or `1 + dt (eps + i) mu_n` (complex) — while the
//! nonlinearity, the binding drift, and the noise are explicit. The
//! implicit linear factor mirrors the `e^{-nu mu_1 t}` Lyapunov contraction
//! unconditionally; the explicit binding drift keeps the drift predictable,
//! so the discrete Girsanov density prices it exactly.

use crate::error::{Error, Result};
use crate::girsanov::{binding_drift, drift_bound_weight, BindingDrift, BindingSpec};
use crate::noise::{CovarianceModel, WienerIncrement};
use crate::spectral::{EquationKind, SpectralField};
use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;

/// Equation-specific coefficients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EquationParams {
    /// `du + nu A u dt + B(u) dt = phi(u) dW` (vorticity form on the torus).
    NavierStokes { nu: f64 },
    /// `du + (eps + i) A u dt + (eta + lambda i)|u|^{2 sigma} u dt = phi(u) dW`
    /// on the interval with Dirichlet conditions.
    GinzburgLandau {
        eps: f64,
        eta: f64,
        lambda: f64,
        sigma: f64,
    },
}

impl EquationParams {
    pub fn kind(&self) -> EquationKind {
        match self {
            EquationParams::NavierStokes { .. } => EquationKind::NavierStokes,
            EquationParams::GinzburgLandau { .. } => EquationKind::GinzburgLandau,
        }
    }

    /// Coefficient of the dissipative linear part (`nu`, resp. `eps`).
    pub fn damping(&self) -> f64 {
        match *self {
            EquationParams::NavierStokes { nu } => nu,
            EquationParams::GinzburgLandau { eps, .. } => eps,
        }
    }

    fn violations(&self, out: &mut Vec<String>) {
        match *self {
            EquationParams::NavierStokes { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    out.push(format!("viscosity must be positive and finite, got {nu}"));
                }
            }
            EquationParams::GinzburgLandau {
                eps,
                eta,
                lambda,
                sigma,
            } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    out.push(format!("eps must be positive and finite, got {eps}"));
                }
                if !(eta > 0.0 && eta.is_finite()) {
                    out.push(format!("eta must be positive and finite, got {eta}"));
                }
                if lambda != 1.0 && lambda != -1.0 {
                    out.push(format!("lambda must be +1 or -1, got {lambda}"));
                }
                if let Err(e) = crate::spectral::validate_sigma(sigma) {
                    out.push(e.to_string());
                }
            }
        }
    }
}

/// Integration parameters shared by all runs of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub equation: EquationParams,
    /// Time step.
    pub dt: f64,
    /// Coupling window length `T`; must be an integer multiple of `dt`.
    pub window_len: f64,
    /// Binding gain `K >= 0`.
    pub binding_gain: f64,
    /// Scalar weight `L` of the line equation's Lipschitz binding term
    /// (estimated from the noise model; zero and unused on the torus).
    pub binding_l: f64,
    /// Abort threshold on `|u|^2`.
    pub blow_up_guard: f64,
    /// Drop the quadratic/power nonlinearity (linear test mode).
    pub linear_only: bool,
}

impl SolverConfig {
    /// Collects every violated precondition into one error.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        self.equation.violations(&mut v);
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("dt must be positive and finite, got {}", self.dt));
        }
        if !(self.window_len > 0.0 && self.window_len.is_finite()) {
            v.push(format!(
                "window length must be positive and finite, got {}",
                self.window_len
            ));
        } else if self.dt > 0.0 {
            let steps = self.window_len / self.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                v.push(format!(
                    "window length {} is not an integer multiple of dt {}",
                    self.window_len, self.dt
                ));
            }
        }
        if !(self.binding_gain >= 0.0 && self.binding_gain.is_finite()) {
            v.push(format!(
                "binding gain must be nonnegative and finite, got {}",
                self.binding_gain
            ));
        } else if self.dt > 0.0 && self.dt * self.binding_gain >= 0.5 {
            v.push(format!(
                "explicit binding drift is unstable: dt*K = {} must stay below 0.5",
                self.dt * self.binding_gain
            ));
        }
        if !(self.binding_l >= 0.0 && self.binding_l.is_finite()) {
            v.push(format!(
                "binding L weight must be nonnegative and finite, got {}",
                self.binding_l
            ));
        }
        if !(self.blow_up_guard > 0.0) {
            v.push(format!(
                "blow-up guard must be positive, got {}",
                self.blow_up_guard
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("\n")))
        }
    }

    pub fn steps_per_window(&self) -> usize {
        (self.window_len / self.dt).round() as usize
    }

    pub fn binding_spec(&self) -> BindingSpec {
        match self.equation {
            EquationParams::NavierStokes { .. } => BindingSpec::NavierStokes {
                k: self.binding_gain,
            },
            EquationParams::GinzburgLandau {
                eta,
                lambda,
                sigma,
                ..
            } => BindingSpec::GinzburgLandau {
                k: self.binding_gain,
                l: self.binding_l,
                eta,
                lambda,
                sigma,
            },
        }
    }
}

/// Running energy `E_u(t) = |u(t)|^2 + damping * int ||u||^2
/// (+ eta * int |u|_{2s+2}^{2s+2} for the line equation)`, together with the
/// discrete Itô companions needed by the growth and reconstruction checks.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    state_norm_sq: f64,
    dissipation: f64,
    martingale: f64,
    hs_integral: f64,
}

impl EnergyLedger {
    pub fn new(initial_norm_sq: f64) -> EnergyLedger {
        EnergyLedger {
            state_norm_sq: initial_norm_sq,
            dissipation: 0.0,
            martingale: 0.0,
            hs_integral: 0.0,
        }
    }

    /// `dissipation_inc` must be the step's nonnegative dissipation quadrature;
    /// `martingale_inc` is `2 <u_n, phi(u_n) dW_n>`; `hs_inc` is
    /// `||phi(u_n)||_HS^2 dt`.
    pub fn push(
        &mut self,
        next_norm_sq: f64,
        dissipation_inc: f64,
        martingale_inc: f64,
        hs_inc: f64,
    ) {
        debug_assert!(dissipation_inc >= 0.0);
        self.state_norm_sq = next_norm_sq;
        self.dissipation += dissipation_inc;
        self.martingale += martingale_inc;
        self.hs_integral += hs_inc;
    }

    /// `E_u(t)`.
    pub fn value(&self) -> f64 {
        self.state_norm_sq + self.dissipation
    }

    pub fn state_norm_sq(&self) -> f64 {
        self.state_norm_sq
    }

    pub fn dissipation(&self) -> f64 {
        self.dissipation
    }

    /// Running `sum 2 <u_n, phi(u_n) dW_n>`.
    pub fn martingale(&self) -> f64 {
        self.martingale
    }

    /// Running `sum ||phi(u_n)||_HS^2 dt`.
    pub fn hs_integral(&self) -> f64 {
        self.hs_integral
    }
}

/// Semi-implicit Euler–Maruyama integrator for one (equation, noise model,
/// step size) triple. Owns the noise model; all methods are `&self`, so one
/// stepper can drive many concurrent paths.
pub struct Stepper {
    model: CovarianceModel,
    cfg: SolverConfig,
    /// Per-mode reciprocal of the implicit linear factor.
    implicit: Vec<Complex64>,
}

impl Stepper {
    pub fn new(model: CovarianceModel, cfg: SolverConfig) -> Result<Stepper> {
        cfg.validate()?;
        if model.basis().kind() != cfg.equation.kind() {
            return Err(Error::BasisMismatch(format!(
                "equation {:?} does not match the noise model's {} basis",
                cfg.equation,
                model.basis().kind()
            )));
        }
        let implicit = match cfg.equation {
            EquationParams::NavierStokes { nu } => model
                .basis()
                .eigenvalues()
                .iter()
                .map(|&mu| Complex64::new(1.0 / (1.0 + cfg.dt * nu * mu), 0.0))
                .collect(),
            EquationParams::GinzburgLandau { eps, .. } => model
                .basis()
                .eigenvalues()
                .iter()
                .map(|&mu| (Complex64::new(1.0, 0.0) + cfg.dt * mu * Complex64::new(eps, 1.0)).inv())
                .collect(),
        };
        Ok(Stepper {
            model,
            cfg,
            implicit,
        })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// Explicit nonlinear drift (right-hand-side sign) in coefficient space.
    fn nonlinear_drift(&self, u: &SpectralField) -> Result<Vec<Complex64>> {
        let n = u.basis().mode_count();
        if self.cfg.linear_only {
            return Ok(vec![Complex64::new(0.0, 0.0); n]);
        }
        match self.cfg.equation {
            EquationParams::NavierStokes { .. } => {
                let mut b = u.basis().as_ns()?.advection(u.coeffs())?;
                for x in b.iter_mut() {
                    *x = -*x;
                }
                Ok(b)
            }
            EquationParams::GinzburgLandau {
                eta, lambda, sigma, ..
            } => {
                let coef = -Complex64::new(eta, lambda);
                u.basis().as_cgl()?.nonlinearity(u.coeffs(), sigma, coef)
            }
        }
    }

    /// One step from `u` with noise term `noise_dofs` (already `phi * dW`)
    /// and an optional additional right-hand-side drift in dof coordinates.
    fn advance(
        &self,
        u: &SpectralField,
        noise_dofs: &[f64],
        added_drift_dofs: Option<&[f64]>,
        step: usize,
        time: f64,
    ) -> Result<SpectralField> {
        let basis = u.basis();
        let mut next = self.nonlinear_drift(u)?;
        if let Some(extra) = added_drift_dofs {
            let extra_coeffs = basis.dofs_to_field(extra);
            for (d, e) in next.iter_mut().zip(&extra_coeffs) {
                *d += e;
            }
        }
        let noise_coeffs = basis.dofs_to_field(noise_dofs);
        for ((x, u_n), w_n) in next.iter_mut().zip(u.coeffs()).zip(&noise_coeffs) {
            *x = u_n + self.cfg.dt * *x + w_n;
        }
        for (x, f) in next.iter_mut().zip(&self.implicit) {
            *x *= f;
        }
        let out = SpectralField::new(basis.clone(), next)?;
        let norm_sq = out.l2_norm_sq();
        if !norm_sq.is_finite() || norm_sq > self.cfg.blow_up_guard {
            return Err(Error::BlowUp {
                step,
                time,
                norm_sq,
                guard: self.cfg.blow_up_guard,
            });
        }
        Ok(out)
    }

    /// One step of the true process: linear part implicit, nonlinearity and
    /// noise `phi(u) dW` explicit. Deterministic given inputs.
    pub fn step_primary(
        &self,
        u: &SpectralField,
        inc: &WienerIncrement,
        step: usize,
        time: f64,
    ) -> Result<SpectralField> {
        let noise = self.model.apply_phi(&u.dofs(), inc)?;
        self.advance(u, &noise, None, step, time)
    }

    /// One step of the auxiliary process bound to the same-time state
    /// `u_ref` of the true process: the equation-specific binding drift is
    /// subtracted, and the noise term uses `phi(utilde)` — with the *same*
    /// increment that drove `u_ref`. Returns the drift evaluation so
    /// callers can reuse `h` without recomputing it.
    pub fn step_auxiliary(
        &self,
        u_ref: &SpectralField,
        utilde: &SpectralField,
        inc: &WienerIncrement,
        step: usize,
        time: f64,
    ) -> Result<(SpectralField, BindingDrift)> {
        let spec = self.cfg.binding_spec();
        let drift = binding_drift(u_ref, utilde, &self.model, &spec)?;
        let mut added = drift.delta_dofs.clone();
        for x in added.iter_mut() {
            *x = -*x;
        }
        let noise = self.model.apply_phi(&utilde.dofs(), inc)?;
        let next = self.advance(utilde, &noise, Some(&added), step, time)?;
        Ok((next, drift))
    }

    /// The step's dissipation quadrature (right endpoint) for the energy
    /// ledger: `damping ||u||^2 dt (+ eta |u|_{2s+2}^{2s+2} dt)`.
    pub fn dissipation_increment(&self, next: &SpectralField) -> f64 {
        match self.cfg.equation {
            EquationParams::NavierStokes { nu } => nu * next.h1_norm_sq() * self.cfg.dt,
            EquationParams::GinzburgLandau {
                eps, eta, sigma, ..
            } => {
                let p = 2.0 * sigma + 2.0;
                (eps * next.h1_norm_sq() + eta * next.lp_norm(p).powf(p)) * self.cfg.dt
            }
        }
    }

    /// Exponential weight rate of the gap statistic
    /// `(e^{rho t} |r|^2 + int_0^t e^{rho s} w ds)^eps`:
    /// the vorticity equation uses `rho = 1`, the amplitude equation
    /// `rho = eps mu_1 / 8`.
    pub fn fp_rate(&self) -> f64 {
        match self.cfg.equation {
            EquationParams::NavierStokes { .. } => 1.0,
            EquationParams::GinzburgLandau { eps, .. } => eps * self.model.basis().mu_1() / 8.0,
        }
    }

    /// Integrand weight `w` of the gap statistic: the gradient of the gap
    /// for the vorticity equation, the full drift-bound weight `Z` for the
    /// amplitude equation.
    pub fn fp_weight(&self, u: &SpectralField, ut: &SpectralField) -> Result<f64> {
        match self.cfg.equation {
            EquationParams::NavierStokes { .. } => Ok(ut.sub(u)?.h1_norm_sq()),
            EquationParams::GinzburgLandau { sigma, .. } => drift_bound_weight(u, ut, sigma),
        }
    }
}

/// One recorded trajectory row (decimated).
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u_norm_sq: f64,
    pub u_h1_sq: f64,
    pub r_norm_sq: f64,
    pub energy_u: f64,
    pub energy_ut: f64,
    pub h_integral: f64,
    /// `int_0^t e^{rho s} w ds` at full step resolution, the integral term
    /// of the gap statistic (see [`Stepper::fp_rate`]).
    pub fp_exp_integral: f64,
}

/// Output of [`run_coupled_pair`].
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub rows: Vec<TrajectoryRow>,
    pub final_u: SpectralField,
    pub final_ut: SpectralField,
    pub ledger_u: EnergyLedger,
    pub ledger_ut: EnergyLedger,
    /// `int_0^horizon |h|^2 dt` (no budget applied here).
    pub h_integral: f64,
    pub steps: usize,
}

/// Supplies the shared Wiener increment for each step.
pub enum Driving<'a> {
    /// Sample from the model under this stream.
    Stream(&'a mut ChaCha12Rng),
    /// Deterministic runs: every increment is zero.
    Zero,
}

impl Driving<'_> {
    fn next(&mut self, model: &CovarianceModel, dt: f64) -> WienerIncrement {
        match self {
            Driving::Stream(rng) => model.sample_increment(dt, rng),
            Driving::Zero => WienerIncrement {
                dt,
                xi: vec![0.0; model.noise_dim()],
            },
        }
    }
}

/// Advance the pair `(u, utilde)` under one shared Wiener stream, recording
/// both energy ledgers, the running `|r|^2 = |utilde - u|^2`, and the
/// running Novikov integrand integral `int |h|^2 dt`. Rows are recorded at
/// `t = 0` and every `record_every` steps (plus the final step).
pub fn run_coupled_pair(
    stepper: &Stepper,
    u0: &SpectralField,
    ut0: &SpectralField,
    horizon: f64,
    record_every: usize,
    drive: &mut Driving,
) -> Result<CoupledRun> {
    u0.check_compatible(ut0)?;
    let dt = stepper.dt();
    let steps_f = horizon / dt;
    if !(horizon > 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is not a positive integer multiple of dt {dt}"
        )));
    }
    let steps = steps_f.round() as usize;
    let every = record_every.max(1);
    let mut u = u0.clone();
    let mut ut = ut0.clone();
    let mut ledger_u = EnergyLedger::new(u.l2_norm_sq());
    let mut ledger_ut = EnergyLedger::new(ut.l2_norm_sq());
    let mut h_integral = 0.0;
    let fp_rate = stepper.fp_rate();
    let mut fp_exp_integral = 0.0;
    let mut rows = Vec::with_capacity(steps / every + 2);
    let record =
        |rows: &mut Vec<TrajectoryRow>, t: f64, u: &SpectralField, ut: &SpectralField, lu: &EnergyLedger, lt: &EnergyLedger, h: f64, fp: f64| -> Result<()> {
            rows.push(TrajectoryRow {
                t,
                u_norm_sq: u.l2_norm_sq(),
                u_h1_sq: u.h1_norm_sq(),
                r_norm_sq: ut.sub(u)?.l2_norm_sq(),
                energy_u: lu.value(),
                energy_ut: lt.value(),
                h_integral: h,
                fp_exp_integral: fp,
            });
            Ok(())
        };
    record(&mut rows, 0.0, &u, &ut, &ledger_u, &ledger_ut, 0.0, 0.0)?;
    for n in 0..steps {
        let t = n as f64 * dt;
        let inc = drive.next(stepper.model(), dt);
        let u_dofs = u.dofs();
        let ut_dofs = ut.dofs();
        let noise_u = stepper.model().apply_phi(&u_dofs, &inc)?;
        let noise_ut = stepper.model().apply_phi(&ut_dofs, &inc)?;
        let next_u = stepper.step_primary(&u, &inc, n, t)?;
        let (next_ut, drift) = stepper.step_auxiliary(&u, &ut, &inc, n, t)?;
        h_integral += drift.h_norm_sq * dt;
        let mart_u = 2.0 * dot(&u_dofs, &noise_u);
        let mart_ut = 2.0 * dot(&ut_dofs, &noise_ut);
        ledger_u.push(
            next_u.l2_norm_sq(),
            stepper.dissipation_increment(&next_u),
            mart_u,
            stepper.model().hs_norm_sq(&u_dofs) * dt,
        );
        ledger_ut.push(
            next_ut.l2_norm_sq(),
            stepper.dissipation_increment(&next_ut),
            mart_ut,
            stepper.model().hs_norm_sq(&ut_dofs) * dt,
        );
        u = next_u;
        ut = next_ut;
        fp_exp_integral += (fp_rate * (t + dt)).exp() * stepper.fp_weight(&u, &ut)? * dt;
        if (n + 1) % every == 0 || n + 1 == steps {
            record(&mut rows, t + dt, &u, &ut, &ledger_u, &ledger_ut, h_integral, fp_exp_integral)?;
        }
    }
    Ok(CoupledRun {
        rows,
        final_u: u,
        final_ut: ut,
        ledger_u,
        ledger_ut,
        h_integral,
        steps,
    })
}

/// Advance two *independent* copies of the true process (separate Wiener
/// streams, no binding), recording the same row schema as
/// [`run_coupled_pair`]; the contrast run for the gap-decay diagnostics.
pub fn run_independent_pair(
    stepper: &Stepper,
    u0: &SpectralField,
    ut0: &SpectralField,
    horizon: f64,
    record_every: usize,
    rng_u: &mut ChaCha12Rng,
    rng_ut: &mut ChaCha12Rng,
) -> Result<CoupledRun> {
    u0.check_compatible(ut0)?;
    let dt = stepper.dt();
    let steps_f = horizon / dt;
    if !(horizon > 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is not a positive integer multiple of dt {dt}"
        )));
    }
    let steps = steps_f.round() as usize;
    let every = record_every.max(1);
    let mut u = u0.clone();
    let mut ut = ut0.clone();
    let mut ledger_u = EnergyLedger::new(u.l2_norm_sq());
    let mut ledger_ut = EnergyLedger::new(ut.l2_norm_sq());
    let fp_rate = stepper.fp_rate();
    let mut fp_exp_integral = 0.0;
    let mut rows = Vec::with_capacity(steps / every + 2);
    let record = |rows: &mut Vec<TrajectoryRow>,
                  t: f64,
                  u: &SpectralField,
                  ut: &SpectralField,
                  lu: &EnergyLedger,
                  lt: &EnergyLedger,
                  fp: f64|
     -> Result<()> {
        rows.push(TrajectoryRow {
            t,
            u_norm_sq: u.l2_norm_sq(),
            u_h1_sq: u.h1_norm_sq(),
            r_norm_sq: ut.sub(u)?.l2_norm_sq(),
            energy_u: lu.value(),
            energy_ut: lt.value(),
            h_integral: 0.0,
            fp_exp_integral: fp,
        });
        Ok(())
    };
    record(&mut rows, 0.0, &u, &ut, &ledger_u, &ledger_ut, 0.0)?;
    for n in 0..steps {
        let t = n as f64 * dt;
        let inc_u = stepper.model().sample_increment(dt, rng_u);
        let inc_ut = stepper.model().sample_increment(dt, rng_ut);
        let u_dofs = u.dofs();
        let ut_dofs = ut.dofs();
        let noise_u = stepper.model().apply_phi(&u_dofs, &inc_u)?;
        let noise_ut = stepper.model().apply_phi(&ut_dofs, &inc_ut)?;
        let next_u = stepper.step_primary(&u, &inc_u, n, t)?;
        let next_ut = stepper.step_primary(&ut, &inc_ut, n, t)?;
        ledger_u.push(
            next_u.l2_norm_sq(),
            stepper.dissipation_increment(&next_u),
            2.0 * dot(&u_dofs, &noise_u),
            stepper.model().hs_norm_sq(&u_dofs) * dt,
        );
        ledger_ut.push(
            next_ut.l2_norm_sq(),
            stepper.dissipation_increment(&next_ut),
            2.0 * dot(&ut_dofs, &noise_ut),
            stepper.model().hs_norm_sq(&ut_dofs) * dt,
        );
        u = next_u;
        ut = next_ut;
        fp_exp_integral += (fp_rate * (t + dt)).exp() * stepper.fp_weight(&u, &ut)? * dt;
        if (n + 1) % every == 0 || n + 1 == steps {
            record(&mut rows, t + dt, &u, &ut, &ledger_u, &ledger_ut, fp_exp_integral)?;
        }
    }
    Ok(CoupledRun {
        rows,
        final_u: u,
        final_ut: ut,
        ledger_u,
        ledger_ut,
        h_integral: 0.0,
        steps,
    })
}

/// Output of [`run_single`].
#[derive(Debug, Clone)]
pub struct SingleRun {
    /// `(t, |u|^2, E_u(t))` at recorded times.
    pub rows: Vec<(f64, f64, f64)>,
    pub final_state: SpectralField,
    pub ledger: EnergyLedger,
    pub steps: usize,
}

/// Advance the true process alone, recording `|u(t)|^2` and the energy.
pub fn run_single(
    stepper: &Stepper,
    u0: &SpectralField,
    horizon: f64,
    record_every: usize,
    drive: &mut Driving,
) -> Result<SingleRun> {
    let dt = stepper.dt();
    let steps_f = horizon / dt;
    if !(horizon > 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is not a positive integer multiple of dt {dt}"
        )));
    }
    let steps = steps_f.round() as usize;
    let every = record_every.max(1);
    let mut u = u0.clone();
    let mut ledger = EnergyLedger::new(u.l2_norm_sq());
    let mut rows = Vec::with_capacity(steps / every + 2);
    rows.push((0.0, u.l2_norm_sq(), ledger.value()));
    for n in 0..steps {
        let t = n as f64 * dt;
        let inc = drive.next(stepper.model(), dt);
        let u_dofs = u.dofs();
        let noise = stepper.model().apply_phi(&u_dofs, &inc)?;
        let next = stepper.step_primary(&u, &inc, n, t)?;
        ledger.push(
            next.l2_norm_sq(),
            stepper.dissipation_increment(&next),
            2.0 * dot(&u_dofs, &noise),
            stepper.model().hs_norm_sq(&u_dofs) * dt,
        );
        u = next;
        if (n + 1) % every == 0 || n + 1 == steps {
            rows.push((t + dt, u.l2_norm_sq(), ledger.value()));
        }
    }
    Ok(SingleRun {
        rows,
        final_state: u,
        ledger,
        steps,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
