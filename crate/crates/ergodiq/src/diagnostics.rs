//! Statistical estimators that confront simulation output with the
//! checkable inequalities and rates: log-linear rate fits with confidence
//! bands, the gap-decay statistic with its bounded/decaying verdicts, an
//! order-statistics Wasserstein-1 distance on scalar observables, and the
//! report assembly for the mixing experiment.
//!
//! None of the rates is compared against a theoretical value — the
//! constants in the convergence theorems are non-constructive — so every
//! verdict here is a sign, monotonicity, or contrast check.

use crate::coupling::MixingReport;
use crate::dynamics::CoupledRun;
use crate::error::{Error, Result};
use crate::stats::{mean_and_se, ols_line};

/// Two-sided 97.5% Student-t quantiles for small degrees of freedom; the
/// normal 1.96 beyond the table.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t_quantile_975(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= T_975.len() {
        T_975[df - 1]
    } else {
        1.96
    }
}

/// Values at or below this are treated as machine zero: a series that never
/// rises above it is flagged degenerate instead of fitted.
const MACHINE_ZERO: f64 = 1e-10;

/// A fitted exponential decay `value ~ C e^{-rate t}` from log-linear OLS.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    /// Decay rate (positive means the series decays).
    pub rate: f64,
    /// Intercept of the log fit (`ln C`).
    pub intercept: f64,
    /// RMS residual of the log fit.
    pub residual: f64,
    /// 95% half-width on the rate.
    pub half_width: f64,
    /// Fit window actually used, `[t_lo, t_hi]`.
    pub window: (f64, f64),
    /// Points used in the fit.
    pub points: usize,
    /// Series at machine zero or too few usable points; the other fields
    /// are placeholders in that case.
    pub degenerate: bool,
}

impl RateFit {
    fn degenerate_at(window: (f64, f64), points: usize) -> RateFit {
        RateFit {
            rate: 0.0,
            intercept: 0.0,
            residual: 0.0,
            half_width: f64::INFINITY,
            window,
            points,
            degenerate: true,
        }
    }

    /// Positive rate whose 95% band excludes zero.
    pub fn decay_confirmed(&self) -> bool {
        !self.degenerate && self.rate > 0.0 && self.rate - self.half_width > 0.0
    }

    /// The fit cannot confirm decay: degenerate, nonpositive, or the band
    /// reaches zero.
    pub fn decay_rejected_or_open(&self) -> bool {
        !self.decay_confirmed()
    }
}

/// Log-linear OLS of `values` over the times inside `window` (clamped to
/// the data range). Nonpositive values are skipped; a series that never
/// exceeds the machine-zero floor, or leaves fewer than 3 usable points, is
/// flagged degenerate rather than fitted.
pub fn fit_log_linear(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::dim(times.len(), values.len(), "rate-fit series"));
    }
    if times.is_empty() {
        return Err(Error::DegenerateSample("rate fit of empty series".into()));
    }
    let t_min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = window.0.max(t_min);
    let hi = window.1.min(t_max);
    if !(lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "fit window [{}, {}] does not intersect the data range [{t_min}, {t_max}]",
            window.0, window.1
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut peak: f64 = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        if t < lo || t > hi {
            continue;
        }
        peak = peak.max(v);
        if v > 0.0 {
            xs.push(t);
            ys.push(v.ln());
        }
    }
    if peak <= MACHINE_ZERO || xs.len() < 3 {
        return Ok(RateFit::degenerate_at((lo, hi), xs.len()));
    }
    let (slope, intercept, slope_se) = ols_line(&xs, &ys)?;
    let residual = {
        let ss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
            .sum();
        (ss / xs.len() as f64).sqrt()
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        residual,
        half_width: t_quantile_975(xs.len().saturating_sub(2)) * slope_se,
        window: (lo, hi),
        points: xs.len(),
        degenerate: false,
    })
}

/// Order-statistics Wasserstein-1 distance between two empirical laws of a
/// scalar observable: the integral of `|F_a^{-1} - F_b^{-1}|` over the
/// merged quantile grid, exact for the empirical measures.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSample(
            "wasserstein distance of an empty sample".into(),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample(
            "wasserstein distance with non-finite entries".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    // Segment boundaries live on the exact grid of multiples of
    // 1/(na nb), compared as integers to avoid float drift.
    let mut acc = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut u: u128 = 0;
    while ia < na && ib < nb {
        let next_a = ((ia + 1) * nb) as u128;
        let next_b = ((ib + 1) * na) as u128;
        let next = next_a.min(next_b);
        acc += (next - u) as f64 * (sa[ia] - sb[ib]).abs();
        u = next;
        if next_a == next {
            ia += 1;
        }
        if next_b == next {
            ib += 1;
        }
    }
    Ok(acc / (na as f64 * nb as f64))
}

/// Ensemble summary of the gap statistic
/// `(e^{rho t} |r(t)|^2 + int_0^t e^{rho s} w ds)^eps`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FoiasProdiReport {
    pub times: Vec<f64>,
    /// MC mean and standard error of the statistic.
    pub mean_statistic: Vec<f64>,
    pub se_statistic: Vec<f64>,
    /// MC mean and standard error of the bare gap `|r(t)|^{2 eps}`.
    pub mean_gap: Vec<f64>,
    pub se_gap: Vec<f64>,
    pub statistic_initial: f64,
    pub statistic_sup: f64,
    /// Supremum within `bound_factor` of the initial value: the statistic
    /// stayed bounded, which is the proposition's content.
    pub bounded: bool,
    pub bound_factor: f64,
    /// Log-linear decay fit of the bare-gap series.
    pub fit: RateFit,
    pub paths: usize,
    pub eps_exp: f64,
}

/// Compute the gap statistic across an ensemble of pair runs sharing the
/// same initial pair and time grid. `fp_rate` must be the rate the runs
/// accumulated their weighted integral with; `fit_drop_frac` of the horizon
/// is discarded before fitting the gap decay.
pub fn foias_prodi_statistic(
    runs: &[CoupledRun],
    eps_exp: f64,
    fp_rate: f64,
    bound_factor: f64,
    fit_drop_frac: f64,
) -> Result<FoiasProdiReport> {
    if runs.len() < 100 {
        return Err(Error::InvalidConfig(format!(
            "gap statistic needs at least 100 paths, got {}",
            runs.len()
        )));
    }
    if !(eps_exp > 0.0 && eps_exp <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "statistic exponent must lie in (0, 1], got {eps_exp}"
        )));
    }
    if !(0.0..1.0).contains(&fit_drop_frac) {
        return Err(Error::InvalidConfig(format!(
            "fit_drop_frac must lie in [0, 1), got {fit_drop_frac}"
        )));
    }
    let grid: Vec<f64> = runs[0].rows.iter().map(|r| r.t).collect();
    let r0 = runs[0].rows[0].r_norm_sq;
    for (p, run) in runs.iter().enumerate() {
        if run.rows.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "path {p} was recorded on a different grid"
            )));
        }
        let dr = (run.rows[0].r_norm_sq - r0).abs();
        if dr > 1e-9 * r0.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "path {p} starts from a different gap: {} vs {r0}",
                run.rows[0].r_norm_sq
            )));
        }
    }
    let nt = grid.len();
    let mut mean_statistic = Vec::with_capacity(nt);
    let mut se_statistic = Vec::with_capacity(nt);
    let mut mean_gap = Vec::with_capacity(nt);
    let mut se_gap = Vec::with_capacity(nt);
    let mut stat_buf = vec![0.0; runs.len()];
    let mut gap_buf = vec![0.0; runs.len()];
    for i in 0..nt {
        let t = grid[i];
        for (p, run) in runs.iter().enumerate() {
            let row = &run.rows[i];
            stat_buf[p] = ((fp_rate * t).exp() * row.r_norm_sq + row.fp_exp_integral).powf(eps_exp);
            gap_buf[p] = row.r_norm_sq.powf(eps_exp);
        }
        let (m, se) = mean_and_se(&stat_buf)?;
        mean_statistic.push(m);
        se_statistic.push(se);
        let (mg, seg) = mean_and_se(&gap_buf)?;
        mean_gap.push(mg);
        se_gap.push(seg);
    }
    let statistic_initial = mean_statistic[0];
    let statistic_sup = mean_statistic.iter().cloned().fold(0.0, f64::max);
    let bounded = statistic_sup <= bound_factor * statistic_initial + 1e-30;
    let horizon = *grid.last().unwrap();
    let fit = fit_log_linear(&grid, &mean_gap, (fit_drop_frac * horizon, horizon))?;
    Ok(FoiasProdiReport {
        times: grid,
        mean_statistic,
        se_statistic,
        mean_gap,
        se_gap,
        statistic_initial,
        statistic_sup,
        bounded,
        bound_factor,
        fit,
        paths: runs.len(),
        eps_exp,
    })
}

/// The second Lyapunov inequality at a stopped time:
/// `E[e^{-alpha tau} H(u(tau))] <= H(u_0) + C_alpha`, with
/// `C_alpha = B_0 / alpha` from the Ito energy display.
#[derive(Debug, Clone)]
pub struct StoppingCheck {
    pub alpha: f64,
    pub c_alpha: f64,
    pub h0: f64,
    /// `(tau, H(u(tau)))` per path.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StoppingVerdict {
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn lyapunov_stopping_check(check: &StoppingCheck) -> Result<StoppingVerdict> {
    if !(check.alpha > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "stopping check needs alpha > 0, got {}",
            check.alpha
        )));
    }
    let vals: Vec<f64> = check
        .samples
        .iter()
        .map(|&(tau, h)| (-check.alpha * tau).exp() * h)
        .collect();
    let (lhs_mean, lhs_se) = mean_and_se(&vals)?;
    let bound = check.h0 + check.c_alpha;
    Ok(StoppingVerdict {
        lhs_mean,
        lhs_se,
        // MC slack: the inequality is on the true mean.
        pass: lhs_mean <= bound + 3.0 * lhs_se,
        bound,
    })
}

/// Rate verdicts assembled from a mixing run and a stationary-proxy
/// reference.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MixingRateReport {
    /// Fit of `E(|u_1 - u_2| ^ 1)` over the fit window.
    pub distance_fit: RateFit,
    /// Fit of `W_1(observable law at t, reference law)`.
    pub w1_fit: RateFit,
    pub w1_series: Vec<f64>,
    /// Envelope `C e^{-rate t} (1 + H(u_0^1) + H(u_0^2))` with
    /// `C = e^{intercept + 2 residual} / (1 + H_0)`: whether it dominates
    /// the mean-distance series on the fit window.
    pub envelope_constant: f64,
    pub envelope_dominates: bool,
    /// Integrated autocorrelation time of the reference series, in samples.
    pub reference_tau_int: f64,
    pub stopping: Option<StoppingVerdict>,
}

/// Integrated autocorrelation time (in sample units): `1 + 2 sum rho_k`
/// with the sum cut at the first nonpositive autocorrelation.
fn integrated_autocorr_time(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 8 {
        return Err(Error::DegenerateSample(format!(
            "autocorrelation time of {n} samples"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        // A constant series mixes instantly for this purpose.
        return Ok(1.0);
    }
    let mut tau = 1.0;
    for k in 1..n / 2 {
        let mut cov = 0.0;
        for i in 0..n - k {
            cov += (series[i] - mean) * (series[i + k] - mean);
        }
        cov /= (n - k) as f64;
        let rho = cov / var;
        if rho <= 0.0 {
            break;
        }
        tau += 2.0 * rho;
    }
    Ok(tau)
}

/// Assemble the rate verdicts for a completed mixing run. `reference` is a
/// long single-path sample of the same scalar observable recorded in the
/// report (burn-in already discarded); it is rejected when shorter than
/// 50 autocorrelation times. `fit_drop_frac` of the horizon is discarded
/// before fitting.
pub fn mixing_rate_report(
    mixing: &MixingReport,
    reference: &[f64],
    fit_drop_frac: f64,
    stopping: Option<&StoppingCheck>,
) -> Result<MixingRateReport> {
    let tau_int = integrated_autocorr_time(reference)?;
    if (reference.len() as f64) < 50.0 * tau_int {
        return Err(Error::InvalidConfig(format!(
            "reference run too short: {} samples against an autocorrelation time of {tau_int:.1}",
            reference.len()
        )));
    }
    let horizon = *mixing.times.last().ok_or_else(|| {
        Error::DegenerateSample("mixing report with no recorded boundaries".into())
    })?;
    let window = (fit_drop_frac * horizon, horizon);
    let distance_fit = fit_log_linear(&mixing.times, &mixing.mean_distance, window)?;
    let mut w1_series = Vec::with_capacity(mixing.observable.len());
    for samples in &mixing.observable {
        w1_series.push(wasserstein_1d(samples, reference)?);
    }
    let w1_fit = fit_log_linear(&mixing.times, &w1_series, window)?;
    let h0 = 1.0 + mixing.h0_sum;
    let (envelope_constant, envelope_dominates) = if distance_fit.degenerate {
        (0.0, false)
    } else {
        let c = (distance_fit.intercept + 2.0 * distance_fit.residual).exp() / h0;
        let dominates = mixing
            .times
            .iter()
            .zip(&mixing.mean_distance)
            .filter(|(t, _)| **t >= window.0 && **t <= window.1)
            .all(|(t, d)| c * (-distance_fit.rate * t).exp() * h0 >= *d - 1e-12);
        (c, dominates)
    };
    let stopping = match stopping {
        Some(check) => Some(lyapunov_stopping_check(check)?),
        None => None,
    };
    Ok(MixingRateReport {
        distance_fit,
        w1_fit,
        w1_series,
        envelope_constant,
        envelope_dominates,
        reference_tau_int: tau_int,
        stopping,
    })
}
