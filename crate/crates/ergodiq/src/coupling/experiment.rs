//! The two-copy mixing experiment: an ensemble of window-coupled pairs,
//! each running the glued triplet construction window after window with the
//! ladder bookkeeping, aggregated into the series and counters the rate
//! diagnostics consume.

use rayon::prelude::*;

use crate::coupling::ladder::{CouplingLedger, LadderTimes, WindowRecord};
use crate::coupling::window::{triplet_window, WindowDrive, WindowParams};
use crate::diagnostics::{fit_log_linear, RateFit};
use crate::dynamics::Stepper;
use crate::error::{Error, Result};
use crate::girsanov::theta_for_window;
use crate::rng::stream;
use crate::spectral::SpectralField;
use crate::stats::mean_and_se;

/// Ensemble and budget-schedule parameters of a mixing run. The dynamics,
/// coupling gain, and window length live in the solver config of the
/// stepper this is paired with.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MixingConfig {
    /// Number of independent pair trajectories.
    pub ensemble: usize,
    /// Number of coupling windows per trajectory.
    pub n_windows: usize,
    /// Budget scale: the 90th-percentile pilot drift cost.
    pub c_hat: f64,
    /// Budget decay rate per unit of anchored age.
    pub gamma_hat: f64,
    /// Energy threshold of the small ball: a window starts "in the ball"
    /// when `H(u1) + H(u2) <= 2 ball_radius`.
    pub ball_radius: f64,
    /// Master seed; path `p` draws from the stream `(seed, p, "coupling")`.
    pub master_seed: u64,
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.ensemble < 2 {
            problems.push(format!("ensemble must be at least 2, got {}", self.ensemble));
        }
        if self.n_windows == 0 {
            problems.push("n_windows must be positive".to_string());
        }
        if !(self.c_hat > 0.0 && self.c_hat.is_finite()) {
            problems.push(format!("c_hat must be positive and finite, got {}", self.c_hat));
        }
        if !(self.gamma_hat >= 0.0 && self.gamma_hat.is_finite()) {
            problems.push(format!(
                "gamma_hat must be nonnegative and finite, got {}",
                self.gamma_hat
            ));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            problems.push(format!(
                "ball_radius must be positive and finite, got {}",
                self.ball_radius
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }
}

/// Everything a mixing run produces, per path and aggregated.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MixingReport {
    /// Window length in time units.
    pub window_len: f64,
    pub n_windows: usize,
    /// Paths that finished; failed paths are listed in `failures`.
    pub ensemble: usize,
    /// Window-boundary times `0, L, 2L, ...` (length `n_windows + 1`).
    pub times: Vec<f64>,
    /// MC mean of `|u_1 - u_2| ^ 1` at each boundary, with standard error.
    pub mean_distance: Vec<f64>,
    pub se_distance: Vec<f64>,
    /// Ensemble samples of the scalar observable `|u_2|^2` at each
    /// boundary, for distributional comparisons against a reference run.
    pub observable: Vec<Vec<f64>>,
    /// Fraction of paths glued over each window.
    pub coupled_fraction: Vec<f64>,
    /// Windows started inside the small ball, summed over paths.
    pub ball_entries: usize,
    /// Empirical coupling probability conditional on a ball start.
    pub coupled_given_ball: f64,
    /// Complete per-window ledger of every finished path.
    pub window_records: Vec<Vec<WindowRecord>>,
    /// Anchor `l_0` at the final window, per path (`None` = unanchored).
    pub l0_final: Vec<Option<usize>>,
    pub ladders: Vec<LadderTimes>,
    /// First window index of the run of coupled windows reaching the
    /// horizon, per path.
    pub coupling_times: Vec<Option<usize>>,
    /// Fraction of paths whose ladder settled (reached a terminal level).
    pub settled_fraction: f64,
    /// `H(u_0^1) + H(u_0^2)`, the initial-data factor of the envelope.
    pub h0_sum: f64,
    /// Log-linear decay fit of the mean-distance series.
    pub fit: RateFit,
    /// `(path index, error)` for paths that blew up or otherwise failed.
    pub failures: Vec<(usize, String)>,
    pub ball_radius: f64,
}

struct PathOutcome {
    distances: Vec<f64>,
    observables: Vec<f64>,
    records: Vec<WindowRecord>,
    ladder: LadderTimes,
    l0_final: Option<usize>,
    coupling_time: Option<usize>,
}

fn run_one_path(
    stepper: &Stepper,
    u1_start: &SpectralField,
    u2_start: &SpectralField,
    cfg: &MixingConfig,
    path: usize,
) -> Result<PathOutcome> {
    let mut rng = stream(cfg.master_seed, path as u64, "coupling");
    let window_len = stepper.config().window_len;
    let steps = stepper.config().steps_per_window();
    let mut u1 = u1_start.clone();
    let mut u2 = u2_start.clone();
    let mut ledger = CouplingLedger::new(window_len)?;
    let mut distances = Vec::with_capacity(cfg.n_windows + 1);
    let mut observables = Vec::with_capacity(cfg.n_windows + 1);
    distances.push(u1.dist_l2(&u2)?.min(1.0));
    observables.push(u2.l2_norm_sq());
    for w in 0..cfg.n_windows {
        let ball = u1.l2_norm_sq() + u2.l2_norm_sq() <= 2.0 * cfg.ball_radius;
        let (_, age) = ledger.start_window(ball);
        let theta = theta_for_window(cfg.c_hat, cfg.gamma_hat, age, window_len);
        let params = WindowParams {
            start: w as f64 * window_len,
            steps,
            theta,
        };
        let outcome = triplet_window(stepper, &u1, &u2, &params, &mut WindowDrive::Rng(&mut rng))?;
        ledger.finish_window(
            outcome.coupled,
            outcome.all_met,
            outcome.tripped,
            outcome.h_integral,
            outcome.log_density,
            theta,
        );
        u1 = outcome.u1;
        u2 = outcome.u2;
        distances.push(u1.dist_l2(&u2)?.min(1.0));
        observables.push(u2.l2_norm_sq());
    }
    let final_ball = u1.l2_norm_sq() + u2.l2_norm_sq() <= 2.0 * cfg.ball_radius;
    ledger.close(final_ball);
    let ladder = ledger.ladder();
    Ok(PathOutcome {
        distances,
        observables,
        l0_final: ledger.l0(cfg.n_windows - 1),
        coupling_time: ledger.coupling_time(),
        records: ledger.records().to_vec(),
        ladder,
    })
}

/// Run the full two-copy experiment: `cfg.ensemble` independent pairs from
/// `(u1_0, u2_0)`, each coupled window by window. Paths run in parallel and
/// are merged in path order, so the report is a pure function of
/// `(stepper, initial pair, cfg)`. Individual path failures (blow-ups) are
/// recorded and excluded from the aggregates; the run errors out only when
/// fewer than two paths survive.
pub fn mixing_experiment(
    stepper: &Stepper,
    u1_0: &SpectralField,
    u2_0: &SpectralField,
    cfg: &MixingConfig,
) -> Result<MixingReport> {
    cfg.validate()?;
    stepper.config().validate()?;
    u1_0.check_compatible(u2_0)?;
    let window_len = stepper.config().window_len;
    let results: Vec<(usize, Result<PathOutcome>)> = (0..cfg.ensemble)
        .into_par_iter()
        .map(|p| (p, run_one_path(stepper, u1_0, u2_0, cfg, p)))
        .collect();
    let mut paths = Vec::with_capacity(cfg.ensemble);
    let mut failures = Vec::new();
    for (p, res) in results {
        match res {
            Ok(out) => paths.push(out),
            Err(e) => failures.push((p, e.to_string())),
        }
    }
    if paths.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "only {} of {} mixing paths survived; first failure: {}",
            paths.len(),
            cfg.ensemble,
            failures
                .first()
                .map(|(p, e)| format!("path {p}: {e}"))
                .unwrap_or_default()
        )));
    }
    let n_boundaries = cfg.n_windows + 1;
    let times: Vec<f64> = (0..n_boundaries).map(|i| i as f64 * window_len).collect();
    let mut mean_distance = Vec::with_capacity(n_boundaries);
    let mut se_distance = Vec::with_capacity(n_boundaries);
    let mut observable = Vec::with_capacity(n_boundaries);
    let mut buf = vec![0.0; paths.len()];
    for i in 0..n_boundaries {
        for (p, out) in paths.iter().enumerate() {
            buf[p] = out.distances[i];
        }
        let (m, se) = mean_and_se(&buf)?;
        mean_distance.push(m);
        se_distance.push(se);
        observable.push(paths.iter().map(|out| out.observables[i]).collect());
    }
    let mut coupled_fraction = vec![0.0; cfg.n_windows];
    let mut ball_entries = 0usize;
    let mut coupled_in_ball = 0usize;
    for out in &paths {
        for rec in &out.records {
            if rec.coupled {
                coupled_fraction[rec.index] += 1.0;
            }
            if rec.ball_at_start {
                ball_entries += 1;
                if rec.coupled {
                    coupled_in_ball += 1;
                }
            }
        }
    }
    for c in &mut coupled_fraction {
        *c /= paths.len() as f64;
    }
    let coupled_given_ball = if ball_entries == 0 {
        0.0
    } else {
        coupled_in_ball as f64 / ball_entries as f64
    };
    let settled_fraction =
        paths.iter().filter(|out| out.ladder.k0.is_some()).count() as f64 / paths.len() as f64;
    let horizon = *times.last().unwrap();
    let fit = fit_log_linear(&times, &mean_distance, (0.2 * horizon, horizon))?;
    Ok(MixingReport {
        window_len,
        n_windows: cfg.n_windows,
        ensemble: paths.len(),
        times,
        mean_distance,
        se_distance,
        observable,
        coupled_fraction,
        ball_entries,
        coupled_given_ball,
        window_records: paths.iter().map(|out| out.records.clone()).collect(),
        l0_final: paths.iter().map(|out| out.l0_final).collect(),
        ladders: paths.iter().map(|out| out.ladder.clone()).collect(),
        coupling_times: paths.iter().map(|out| out.coupling_time).collect(),
        settled_fraction,
        h0_sum: u1_0.l2_norm_sq() + u2_0.l2_norm_sq(),
        fit,
        failures,
        ball_radius: cfg.ball_radius,
    })
}
