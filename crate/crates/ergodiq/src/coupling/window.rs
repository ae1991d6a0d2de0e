//! The triplet construction over one coupling window.
//!
//! Window inputs: the pair of states `(u1, u2)` at the window start. The
//! binding process `utilde` is launched *at* `u2` and bound to `u1`'s
//! trajectory; `(u1, utilde)` evolve under one shared Wiener stream `W1`,
//! while `u2` is driven by `W2` whose increments are reflection-maximally
//! coupled, step by step, against the shifted increments
//! `dW1 + h_eff dt` — `h_eff` being the binding drift transfer while the
//! Novikov budget admits it and zero afterwards (the stopped shift).
//!
//! While every increment so far has met and the budget is untripped,
//! `u2 == utilde` holds exactly: on the meet event `u2`'s increment *is*
//! the shifted increment, and `phi(utilde) h = -delta` turns the shift into
//! the binding drift, so both states follow the same recursion. The window
//! couples (`utilde = u2` on the whole window) exactly when all increments
//! meet and the budget never trips; on the first miss or trip, `u2`
//! separates and is integrated from its own increments thereafter (still
//! coupled step-wise, which preserves its marginal law).

use crate::coupling::gaussian::reflect_couple_given;
use crate::dynamics::Stepper;
use crate::error::{Error, Result};
use crate::girsanov::{GirsanovRecord, NovikovAccumulator};
use crate::noise::WienerIncrement;
use crate::spectral::SpectralField;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// One scripted step of window randomness: the standardized shared-noise
/// draw and the accept variate of the reflection coupling.
#[derive(Debug, Clone)]
pub struct ScriptedStep {
    pub xi: Vec<f64>,
    pub uniform: f64,
}

/// Source of window randomness. The per-step draw order is fixed: the
/// `noise_dim` standard normals of the shared increment, then one accept
/// uniform.
pub enum WindowDrive<'a> {
    Rng(&'a mut ChaCha12Rng),
    Script(&'a [ScriptedStep]),
}

impl WindowDrive<'_> {
    fn next(&mut self, step: usize, noise_dim: usize) -> Result<(Vec<f64>, f64)> {
        match self {
            WindowDrive::Rng(rng) => {
                let xi: Vec<f64> = (0..noise_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let uniform: f64 = rng.random();
                Ok((xi, uniform))
            }
            WindowDrive::Script(steps) => {
                let s = steps.get(step).ok_or_else(|| {
                    Error::InvalidConfig(format!("script exhausted at step {step}"))
                })?;
                if s.xi.len() != noise_dim {
                    return Err(Error::dim(noise_dim, s.xi.len(), "scripted noise draw"));
                }
                Ok((s.xi.clone(), s.uniform))
            }
        }
    }
}

/// Timing and budget of one window.
#[derive(Debug, Clone, Copy)]
pub struct WindowParams {
    /// Absolute start time `kT`.
    pub start: f64,
    /// Steps in the window (`T/dt`).
    pub steps: usize,
    /// Novikov budget `theta_k` for this window.
    pub theta: f64,
}

/// Everything the ladder and the diagnostics need from one window.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub u1: SpectralField,
    pub u2: SpectralField,
    pub utilde: SpectralField,
    /// `utilde = u2` held on the whole window: every increment met and the
    /// budget never tripped.
    pub coupled: bool,
    pub all_met: bool,
    pub tripped: bool,
    pub trip_time: Option<f64>,
    /// Admitted `int |h_eff|^2 dt` (never exceeds `theta`).
    pub h_integral: f64,
    /// Girsanov log-density of the stopped shift over the window.
    pub log_density: f64,
    /// Per-step `|h_eff|^2` (zero from the trip onward), for audits.
    pub h_norm_sq_steps: Vec<f64>,
}

/// Run one window of the triplet construction.
pub fn triplet_window(
    stepper: &Stepper,
    u1_start: &SpectralField,
    u2_start: &SpectralField,
    params: &WindowParams,
    drive: &mut WindowDrive,
) -> Result<WindowOutcome> {
    u1_start.check_compatible(u2_start)?;
    let model = stepper.model();
    let dt = stepper.dt();
    let sqrt_dt = dt.sqrt();
    let noise_dim = model.noise_dim();
    let zeros = vec![0.0; noise_dim];
    let mut u1 = u1_start.clone();
    let mut ut = u2_start.clone();
    let mut u2 = u2_start.clone();
    let mut glued = true;
    let mut all_met = true;
    let mut nov = NovikovAccumulator::new(params.start, params.theta);
    let mut record = GirsanovRecord::new();
    let mut h_steps = Vec::with_capacity(params.steps);
    for n in 0..params.steps {
        let t = params.start + n as f64 * dt;
        let (xi, uniform) = drive.next(n, noise_dim)?;
        let inc1 = WienerIncrement { dt, xi };
        // Shared-noise pair: drift evaluated at the step-start states, so
        // h is predictable and the discrete change of measure is exact.
        let next_u1 = stepper.step_primary(&u1, &inc1, n, t)?;
        let (next_ut, drift) = stepper.step_auxiliary(&u1, &ut, &inc1, n, t)?;
        let admitted = nov.admit(drift.h_norm_sq, dt, t);
        let h_eff: &[f64] = if admitted { &drift.h } else { &zeros };
        let dw1: Vec<f64> = inc1.xi.iter().map(|x| sqrt_dt * x).collect();
        record.push(h_eff, &dw1, dt);
        h_steps.push(if admitted { drift.h_norm_sq } else { 0.0 });
        // Couple dW2 against the shifted increment dW1 + h_eff dt; in
        // standardized coordinates the separation is sqrt(dt) h_eff.
        let a: Vec<f64> = h_eff.iter().map(|h| sqrt_dt * h).collect();
        let (xi2, met) = reflect_couple_given(&inc1.xi, &a, uniform);
        all_met &= met;
        if glued && met && admitted {
            // u2's increment is the shifted one, and the shift realizes the
            // binding drift: u2 continues to coincide with utilde.
        } else {
            if glued {
                u2 = ut.clone();
                glued = false;
            }
            let inc2 = WienerIncrement { dt, xi: xi2 };
            u2 = stepper.step_primary(&u2, &inc2, n, t)?;
        }
        u1 = next_u1;
        ut = next_ut;
    }
    if glued {
        u2 = ut.clone();
    }
    let coupled = glued;
    debug_assert_eq!(coupled, all_met && !nov.tripped());
    Ok(WindowOutcome {
        u1,
        u2,
        utilde: ut,
        coupled,
        all_met,
        tripped: nov.tripped(),
        trip_time: nov.trip_time(),
        h_integral: nov.integral(),
        log_density: record.value(),
        h_norm_sq_steps: h_steps,
    })
}
