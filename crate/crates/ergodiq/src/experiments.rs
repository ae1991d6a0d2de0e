//! Experiment drivers behind the CLI subcommands. Each command takes a
//! validated [`RunConfig`] and an output directory, runs its ensemble in
//! parallel with per-path derived streams, and writes a fixed artifact set:
//! the effective config (verbatim TOML), `manifest.json`, full-precision
//! CSV series, a JSON report, and a `failures.csv` ledger of aborted paths.
//!
//! Everything written except `manifest.json` (which carries wall time) is a
//! pure function of the config, so a rerun with the same config and seed
//! reproduces the artifacts byte for byte.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{fnv1a64, RunConfig};
use crate::coupling::{mixing_experiment, MixingConfig, MixingReport, WindowRecord};
use crate::diagnostics::{
    fit_log_linear, foias_prodi_statistic, lyapunov_stopping_check, mixing_rate_report,
    FoiasProdiReport, MixingRateReport, StoppingCheck, StoppingVerdict,
};
use crate::dynamics::{
    run_coupled_pair, run_independent_pair, run_single, CoupledRun, Driving, SingleRun, Stepper,
};
use crate::error::{Error, Result};
use crate::noise::CovarianceModel;
use crate::rng::stream;
use crate::spectral::{EquationKind, SpectralField};
use crate::stats::{mean_and_se, percentile};
use rand::Rng;
use rand_distr::StandardNormal;

/// Reference run for distributional comparisons is this many times longer
/// than the ensemble horizon.
const REFERENCE_HORIZON_FACTOR: f64 = 20.0;
/// Leading fraction of the reference run discarded as burn-in.
const REFERENCE_BURN_IN: f64 = 0.2;
/// The gap statistic counts as bounded while its supremum stays within
/// this factor of its initial value.
const GAP_BOUND_FACTOR: f64 = 4.0;

/// What a command hands back to the CLI: verdict lines for the terminal
/// and the aborted-path count that decides the partial-failure exit.
#[derive(Debug)]
pub struct CommandSummary {
    pub command: &'static str,
    pub out_dir: PathBuf,
    pub path_failures: usize,
    pub notes: Vec<String>,
}

/// A random smooth field: dof `n` is `amplitude * xi_n / (1 + mu_n)^s`
/// under the `(seed, path, tag)` stream.
pub fn random_smooth_field(
    model: &CovarianceModel,
    seed: u64,
    path: u64,
    tag: &'static str,
    amplitude: f64,
    smoothness: f64,
) -> Result<SpectralField> {
    let basis = model.basis();
    let mut rng = stream(seed, path, tag);
    let eigen = basis.eigenvalues();
    let dofs: Vec<f64> = (0..basis.dof_count())
        .map(|d| {
            let mode = match basis.kind() {
                EquationKind::NavierStokes => d,
                EquationKind::GinzburgLandau => d / 2,
            };
            let xi: f64 = rng.sample::<f64, _>(StandardNormal);
            amplitude * xi / (1.0 + eigen[mode]).powf(smoothness)
        })
        .collect();
    let field = SpectralField::from_dofs(basis.clone(), &dofs)?;
    Ok(field)
}

/// The pair of initial states every pair experiment starts from: the
/// primary state and its perturbed copy.
pub fn initial_pair(cfg: &RunConfig, model: &CovarianceModel) -> Result<(SpectralField, SpectralField)> {
    let u0 = random_smooth_field(
        model,
        cfg.run.seed,
        0,
        "init",
        cfg.run.initial_amplitude,
        cfg.run.initial_smoothness,
    )?;
    let mut v0 = u0.clone();
    if cfg.run.perturbation_amplitude > 0.0 {
        let pert = random_smooth_field(
            model,
            cfg.run.seed,
            1,
            "perturbation",
            cfg.run.perturbation_amplitude,
            cfg.run.initial_smoothness,
        )?;
        v0.add_scaled(1.0, &pert)?;
    }
    Ok((u0, v0))
}

/// Rate of the linear energy decay: damping coefficient times the
/// smallest eigenvalue.
fn dissipation_rate(stepper: &Stepper) -> f64 {
    stepper.config().equation.damping() * stepper.model().basis().mu_1()
}

// ---------------------------------------------------------------------
// Artifact plumbing.

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips the exact binary value.
    format!("{v}")
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

/// Create the output directory and drop the effective config into it.
fn prepare_out_dir(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml_string()?)
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    package: &'a str,
    version: &'a str,
    profile: &'a str,
    threads: usize,
    wall_time_secs: f64,
}

fn write_manifest(cfg: &RunConfig, out_dir: &Path, command: &str, started: Instant) -> Result<()> {
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            command,
            config_hash: format!("{:016x}", cfg.config_hash()?),
            seed: cfg.run.seed,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            profile: if cfg!(debug_assertions) { "debug" } else { "release" },
            threads: rayon::current_num_threads(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    )
}

fn write_failures(out_dir: &Path, failures: &[(usize, String)]) -> Result<()> {
    let rows: Vec<Vec<String>> = failures
        .iter()
        .map(|(p, e)| vec![p.to_string(), csv_quote(e)])
        .collect();
    write_csv(&out_dir.join("failures.csv"), &["path", "error"], &rows)
}

/// Split indexed results into ordered successes and a failure ledger.
fn partition_results<T>(results: Vec<(usize, Result<T>)>) -> (Vec<T>, Vec<(usize, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((p, e.to_string())),
        }
    }
    (ok, failed)
}

// ---------------------------------------------------------------------
// Budget calibration.

/// Pilot estimates feeding the budget schedule: `c_hat` is the 90th
/// percentile of the one-window drift cost `int |h|^2 dt` over the pilot
/// ensemble, and `gamma_hat` is half the fitted decay rate of the pilot's
/// mean squared gap (the budget should shrink no faster than the coupling
/// it pays for).
#[derive(Debug, Clone, serde::Serialize)]
pub struct BudgetCalibration {
    pub c_hat: f64,
    pub gamma_hat: f64,
    pub pilot_paths: usize,
    pub pilot_failures: usize,
    pub gap_rate: f64,
}

pub fn calibrate_budget(
    stepper: &Stepper,
    u0: &SpectralField,
    ut0: &SpectralField,
    seed: u64,
    pilot_paths: usize,
) -> Result<BudgetCalibration> {
    let window = stepper.config().window_len;
    let steps = stepper.config().steps_per_window();
    let every = (steps / 20).max(1);
    let results: Vec<(usize, Result<CoupledRun>)> = (0..pilot_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(seed, p as u64, "pilot");
            (
                p,
                run_coupled_pair(stepper, u0, ut0, window, every, &mut Driving::Stream(&mut rng)),
            )
        })
        .collect();
    let (runs, failed) = partition_results(results);
    if runs.len() < pilot_paths.div_ceil(2) {
        return Err(Error::DegenerateSample(format!(
            "budget pilot lost {} of {pilot_paths} paths",
            failed.len()
        )));
    }
    let costs: Vec<f64> = runs.iter().map(|r| r.h_integral).collect();
    let c_hat = percentile(&costs, 0.9)?;
    if !(c_hat > 0.0) {
        return Err(Error::DegenerateSample(
            "budget pilot produced zero drift cost; the copies are already glued".into(),
        ));
    }
    let grid: Vec<f64> = runs[0].rows.iter().map(|r| r.t).collect();
    let mut gap_mean = vec![0.0; grid.len()];
    for run in &runs {
        for (g, row) in gap_mean.iter_mut().zip(&run.rows) {
            *g += row.r_norm_sq;
        }
    }
    for g in &mut gap_mean {
        *g /= runs.len() as f64;
    }
    let fit = fit_log_linear(&grid, &gap_mean, (0.2 * window, window))?;
    let gap_rate = if fit.degenerate { 0.0 } else { fit.rate.max(0.0) };
    Ok(BudgetCalibration {
        c_hat,
        gamma_hat: gap_rate / 2.0,
        pilot_paths: runs.len(),
        pilot_failures: failed.len(),
        gap_rate,
    })
}

/// Assemble the mixing parameters, running the pilot when the config asks
/// for calibration.
fn mixing_parameters(
    cfg: &RunConfig,
    stepper: &Stepper,
    u0: &SpectralField,
    ut0: &SpectralField,
) -> Result<(MixingConfig, Option<BudgetCalibration>)> {
    let (c_hat, gamma_hat, calibration) = if cfg.coupling.calibrate {
        let cal = calibrate_budget(stepper, u0, ut0, cfg.run.seed, cfg.coupling.pilot_paths)?;
        (cal.c_hat, cal.gamma_hat, Some(cal))
    } else {
        (cfg.coupling.c_hat, cfg.coupling.gamma_hat, None)
    };
    Ok((
        MixingConfig {
            ensemble: cfg.run.paths,
            n_windows: cfg.n_windows()?,
            c_hat,
            gamma_hat,
            ball_radius: cfg.coupling.ball_radius,
            master_seed: cfg.run.seed,
        },
        calibration,
    ))
}

// ---------------------------------------------------------------------
// Dissipation envelope.

#[derive(serde::Serialize)]
struct LyapunovReport {
    u0_norm_sq: f64,
    b0: f64,
    c1: f64,
    linear_rate: f64,
    recorded_times: usize,
    envelope_violations: usize,
    worst_excess: f64,
    stopping: StoppingVerdict,
    path_failures: usize,
}

pub fn cmd_lyapunov(cfg: &RunConfig, out_dir: &Path) -> Result<CommandSummary> {
    let started = Instant::now();
    cfg.validate()?;
    prepare_out_dir(cfg, out_dir)?;
    let stepper = cfg.build_stepper()?;
    let model = stepper.model();
    let u0 = random_smooth_field(
        model,
        cfg.run.seed,
        0,
        "init",
        cfg.run.initial_amplitude,
        cfg.run.initial_smoothness,
    )?;
    let results: Vec<(usize, Result<SingleRun>)> = (0..cfg.run.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(cfg.run.seed, p as u64, "envelope");
            (
                p,
                run_single(
                    &stepper,
                    &u0,
                    cfg.run.horizon,
                    cfg.run.record_every,
                    &mut Driving::Stream(&mut rng),
                ),
            )
        })
        .collect();
    let (runs, failures) = partition_results(results);
    if runs.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "only {} envelope paths survived",
            runs.len()
        )));
    }
    let rate = dissipation_rate(&stepper);
    let b0 = model.b0_bound();
    let c1 = b0 / rate;
    let u0_sq = u0.l2_norm_sq();
    let grid: Vec<f64> = runs[0].rows.iter().map(|r| r.0).collect();
    let mut csv_rows = Vec::with_capacity(grid.len());
    let mut violations = 0usize;
    let mut worst_excess: f64 = f64::NEG_INFINITY;
    let mut buf = vec![0.0; runs.len()];
    for (i, &t) in grid.iter().enumerate() {
        for (p, run) in runs.iter().enumerate() {
            buf[p] = run.rows[i].1;
        }
        let (mean, se) = mean_and_se(&buf)?;
        let envelope = (-rate * t).exp() * u0_sq + c1;
        let excess = mean - envelope - 3.0 * se;
        worst_excess = worst_excess.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
        csv_rows.push(vec![
            fmt_f64(t),
            fmt_f64(mean),
            fmt_f64(se),
            fmt_f64(envelope),
        ]);
    }
    write_csv(
        &out_dir.join("lyapunov.csv"),
        &["t", "mean_norm_sq", "se_norm_sq", "envelope"],
        &csv_rows,
    )?;
    // Stopped-time check at the ball-entry time: alpha is the linear rate,
    // and the Ito energy display gives the additive constant b0 / alpha.
    let samples: Vec<(f64, f64)> = runs
        .iter()
        .map(|run| {
            run.rows
                .iter()
                .find(|r| r.1 <= cfg.coupling.ball_radius)
                .map(|r| (r.0, r.1))
                .unwrap_or_else(|| {
                    let last = run.rows.last().unwrap();
                    (last.0, last.1)
                })
        })
        .collect();
    let stopping = lyapunov_stopping_check(&StoppingCheck {
        alpha: rate,
        c_alpha: b0 / rate,
        h0: u0_sq,
        samples,
    })?;
    let report = LyapunovReport {
        u0_norm_sq: u0_sq,
        b0,
        c1,
        linear_rate: rate,
        recorded_times: grid.len(),
        envelope_violations: violations,
        worst_excess,
        stopping: stopping.clone(),
        path_failures: failures.len(),
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_failures(out_dir, &failures)?;
    write_manifest(cfg, out_dir, "lyapunov", started)?;
    let notes = vec![
        if violations == 0 {
            format!(
                "energy envelope holds at all {} recorded times (worst slack {:.3e})",
                grid.len(),
                -worst_excess
            )
        } else {
            format!("energy envelope VIOLATED at {violations} of {} times", grid.len())
        },
        format!(
            "stopped-energy bound: mean {:.6} vs bound {:.6} -> {}",
            stopping.lhs_mean,
            stopping.bound,
            if stopping.pass { "ok" } else { "VIOLATED" }
        ),
    ];
    Ok(CommandSummary {
        command: "lyapunov",
        out_dir: out_dir.to_path_buf(),
        path_failures: failures.len(),
        notes,
    })
}

// ---------------------------------------------------------------------
// Gap contrast: bound pair vs independent control vs linear rate.

#[derive(serde::Serialize)]
struct GapContrastReport {
    bound: FoiasProdiReport,
    control: FoiasProdiReport,
    linear_rate: f64,
    linear_expected: f64,
    linear_rel_err: f64,
    path_failures: usize,
}

pub fn cmd_foiasprodi(cfg: &RunConfig, out_dir: &Path) -> Result<CommandSummary> {
    let started = Instant::now();
    cfg.validate()?;
    prepare_out_dir(cfg, out_dir)?;
    let stepper = cfg.build_stepper()?;
    let (u0, ut0) = initial_pair(cfg, stepper.model())?;
    let results: Vec<(usize, Result<CoupledRun>)> = (0..cfg.run.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(cfg.run.seed, p as u64, "gap-bound");
            (
                p,
                run_coupled_pair(
                    &stepper,
                    &u0,
                    &ut0,
                    cfg.run.horizon,
                    cfg.run.record_every,
                    &mut Driving::Stream(&mut rng),
                ),
            )
        })
        .collect();
    let (bound_runs, mut failures) = partition_results(results);
    // Control: no binding, independent drivers.
    let mut ctrl_cfg = cfg.clone();
    ctrl_cfg.solver.binding_gain = 0.0;
    ctrl_cfg.solver.binding_l = 0.0;
    let ctrl_stepper = ctrl_cfg.build_stepper()?;
    let ctrl_results: Vec<(usize, Result<CoupledRun>)> = (0..cfg.run.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng_u = stream(cfg.run.seed, p as u64, "gap-ctrl-u");
            let mut rng_t = stream(cfg.run.seed, p as u64, "gap-ctrl-t");
            (
                p,
                run_independent_pair(
                    &ctrl_stepper,
                    &u0,
                    &ut0,
                    cfg.run.horizon,
                    cfg.run.record_every,
                    &mut rng_u,
                    &mut rng_t,
                ),
            )
        })
        .collect();
    let (ctrl_runs, ctrl_failures) = partition_results(ctrl_results);
    failures.extend(ctrl_failures.into_iter().map(|(p, e)| (p + cfg.run.paths, e)));
    let bound = foias_prodi_statistic(
        &bound_runs,
        cfg.coupling.eps_exp,
        stepper.fp_rate(),
        GAP_BOUND_FACTOR,
        cfg.coupling.fit_drop_frac,
    )?;
    let control = foias_prodi_statistic(
        &ctrl_runs,
        cfg.coupling.eps_exp,
        ctrl_stepper.fp_rate(),
        GAP_BOUND_FACTOR,
        cfg.coupling.fit_drop_frac,
    )?;
    // Linear check: nonlinearity off, no noise; the gap must decay at the
    // slowest closed-form rate of whatever binding term is linear in the
    // gap. On the torus that is the plain low-mode gain K; on the line the
    // K-term carries a |P_N ut|^{2 sigma} factor that dies with the
    // unforced states, so the Lipschitz gain L is the linear handle and K
    // is switched off.
    let mut lin_cfg = cfg.clone();
    lin_cfg.solver.linear_only = true;
    let linear_expected = match cfg.equation {
        crate::dynamics::EquationParams::NavierStokes { .. } => {
            lin_cfg.solver.binding_l = 0.0;
            2.0 * (dissipation_rate(&stepper) + cfg.solver.binding_gain)
        }
        crate::dynamics::EquationParams::GinzburgLandau { .. } => {
            lin_cfg.solver.binding_gain = 0.0;
            2.0 * (dissipation_rate(&stepper) + cfg.solver.binding_l)
        }
    };
    let lin_stepper = lin_cfg.build_stepper()?;
    let lin_run = run_coupled_pair(
        &lin_stepper,
        &u0,
        &ut0,
        cfg.run.horizon,
        cfg.run.record_every,
        &mut Driving::Zero,
    )?;
    let lin_grid: Vec<f64> = lin_run.rows.iter().map(|r| r.t).collect();
    let lin_gap: Vec<f64> = lin_run.rows.iter().map(|r| r.r_norm_sq).collect();
    let lin_fit = fit_log_linear(
        &lin_grid,
        &lin_gap,
        (cfg.coupling.fit_drop_frac.max(0.2) * cfg.run.horizon, cfg.run.horizon),
    )?;
    let linear_rel_err = (lin_fit.rate - linear_expected).abs() / linear_expected;
    // Artifacts.
    let series_csv = |report: &FoiasProdiReport| -> Vec<Vec<String>> {
        report
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                vec![
                    fmt_f64(t),
                    fmt_f64(report.mean_statistic[i]),
                    fmt_f64(report.se_statistic[i]),
                    fmt_f64(report.mean_gap[i]),
                    fmt_f64(report.se_gap[i]),
                ]
            })
            .collect()
    };
    let header = ["t", "mean_statistic", "se_statistic", "mean_gap", "se_gap"];
    write_csv(&out_dir.join("gap_bound.csv"), &header, &series_csv(&bound))?;
    write_csv(&out_dir.join("gap_control.csv"), &header, &series_csv(&control))?;
    write_csv(
        &out_dir.join("gap_linear.csv"),
        &["t", "gap_sq"],
        &lin_grid
            .iter()
            .zip(&lin_gap)
            .map(|(&t, &g)| vec![fmt_f64(t), fmt_f64(g)])
            .collect::<Vec<_>>(),
    )?;
    let report = GapContrastReport {
        bound: bound.clone(),
        control: control.clone(),
        linear_rate: lin_fit.rate,
        linear_expected,
        linear_rel_err,
        path_failures: failures.len(),
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_failures(out_dir, &failures)?;
    write_manifest(cfg, out_dir, "foiasprodi", started)?;
    let notes = vec![
        format!(
            "bound pair: statistic {} (sup/initial = {:.3}), gap rate {:.3} +- {:.3} -> {}",
            if bound.bounded { "bounded" } else { "UNBOUNDED" },
            bound.statistic_sup / bound.statistic_initial.max(1e-300),
            bound.fit.rate,
            bound.fit.half_width,
            if bound.fit.decay_confirmed() { "decay confirmed" } else { "decay NOT confirmed" }
        ),
        format!(
            "control pair: gap rate {:.3} +- {:.3} -> {}",
            control.fit.rate,
            control.fit.half_width,
            if control.fit.decay_confirmed() {
                "decay confirmed (unexpected)"
            } else {
                "no decay, as expected"
            }
        ),
        format!(
            "linear check: fitted {:.3} vs expected {:.3} (rel err {:.3})",
            lin_fit.rate, linear_expected, linear_rel_err
        ),
    ];
    Ok(CommandSummary {
        command: "foiasprodi",
        out_dir: out_dir.to_path_buf(),
        path_failures: failures.len(),
        notes,
    })
}

// ---------------------------------------------------------------------
// Density-budget audit.

#[derive(serde::Serialize)]
struct GirsanovReport {
    windows_total: usize,
    windows_untripped: usize,
    mean_exp_log_density: f64,
    se_exp_log_density: f64,
    martingale_ok: bool,
    mean_budget_statistic: f64,
    se_budget_statistic: f64,
    budget_ok: bool,
    calibration: Option<BudgetCalibration>,
    path_failures: usize,
}

fn window_rows(records: &[Vec<WindowRecord>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (path, recs) in records.iter().enumerate() {
        for r in recs {
            rows.push(vec![
                path.to_string(),
                r.index.to_string(),
                (r.ball_at_start as u8).to_string(),
                r.age.to_string(),
                fmt_f64(r.theta),
                (r.coupled as u8).to_string(),
                (r.all_met as u8).to_string(),
                (r.tripped as u8).to_string(),
                fmt_f64(r.h_integral),
                fmt_f64(r.log_density),
            ]);
        }
    }
    rows
}

const WINDOW_HEADER: [&str; 10] = [
    "path",
    "window",
    "ball_at_start",
    "age",
    "theta",
    "coupled",
    "all_met",
    "tripped",
    "h_integral",
    "log_density",
];

pub fn cmd_girsanov_check(cfg: &RunConfig, out_dir: &Path) -> Result<CommandSummary> {
    let started = Instant::now();
    cfg.validate()?;
    prepare_out_dir(cfg, out_dir)?;
    let stepper = cfg.build_stepper()?;
    let (u0, ut0) = initial_pair(cfg, stepper.model())?;
    let (mix_cfg, calibration) = mixing_parameters(cfg, &stepper, &u0, &ut0)?;
    let mixing = mixing_experiment(&stepper, &u0, &ut0, &mix_cfg)?;
    // The exponential of the stopped log-density is a unit-mean
    // martingale on every window, tripped or not.
    let mut exp_ld = Vec::new();
    let mut budget_stat = Vec::new();
    for recs in &mixing.window_records {
        for r in recs {
            exp_ld.push(r.log_density.exp());
            if !r.tripped {
                budget_stat.push((2.0 * r.log_density - 2.0 * r.theta).exp());
            }
        }
    }
    let (mean_ld, se_ld) = mean_and_se(&exp_ld)?;
    let martingale_ok = (mean_ld - 1.0).abs() <= 4.0 * se_ld;
    let (mean_bs, se_bs) = mean_and_se(&budget_stat)?;
    let budget_ok = mean_bs <= 1.0 + 4.0 * se_bs;
    write_csv(
        &out_dir.join("girsanov_windows.csv"),
        &WINDOW_HEADER,
        &window_rows(&mixing.window_records),
    )?;
    let report = GirsanovReport {
        windows_total: exp_ld.len(),
        windows_untripped: budget_stat.len(),
        mean_exp_log_density: mean_ld,
        se_exp_log_density: se_ld,
        martingale_ok,
        mean_budget_statistic: mean_bs,
        se_budget_statistic: se_bs,
        budget_ok,
        calibration,
        path_failures: mixing.failures.len(),
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_failures(out_dir, &mixing.failures)?;
    write_manifest(cfg, out_dir, "girsanov-check", started)?;
    let notes = vec![
        format!(
            "martingale mean over {} windows: {:.6} +- {:.6} -> {}",
            report.windows_total,
            mean_ld,
            se_ld,
            if martingale_ok { "ok" } else { "VIOLATED" }
        ),
        format!(
            "budget statistic over {} untripped windows: {:.6} +- {:.6} (bound 1) -> {}",
            report.windows_untripped,
            mean_bs,
            se_bs,
            if budget_ok { "ok" } else { "VIOLATED" }
        ),
    ];
    Ok(CommandSummary {
        command: "girsanov-check",
        out_dir: out_dir.to_path_buf(),
        path_failures: mixing.failures.len(),
        notes,
    })
}

// ---------------------------------------------------------------------
// Two-copy mixing.

#[derive(serde::Serialize)]
struct MixingCommandReport {
    mixing: MixingReport,
    rates: MixingRateReport,
    calibration: Option<BudgetCalibration>,
    reference_samples: usize,
}

/// Long single-path reference sample of the scalar observable `|u|^2` at
/// window-boundary spacing, burn-in removed.
fn reference_observable(cfg: &RunConfig, stepper: &Stepper, u0: &SpectralField) -> Result<Vec<f64>> {
    let horizon = REFERENCE_HORIZON_FACTOR * cfg.run.horizon;
    let mut rng = stream(cfg.run.seed, 0, "reference");
    let run = run_single(
        stepper,
        u0,
        horizon,
        stepper.config().steps_per_window(),
        &mut Driving::Stream(&mut rng),
    )?;
    let skip = ((run.rows.len() as f64) * REFERENCE_BURN_IN) as usize;
    Ok(run.rows.iter().skip(skip).map(|r| r.1).collect())
}

pub fn cmd_mixing(cfg: &RunConfig, out_dir: &Path) -> Result<CommandSummary> {
    let started = Instant::now();
    cfg.validate()?;
    prepare_out_dir(cfg, out_dir)?;
    let stepper = cfg.build_stepper()?;
    let (u0, ut0) = initial_pair(cfg, stepper.model())?;
    let (mix_cfg, calibration) = mixing_parameters(cfg, &stepper, &u0, &ut0)?;
    let mixing = mixing_experiment(&stepper, &u0, &ut0, &mix_cfg)?;
    let reference = reference_observable(cfg, &stepper, &u0)?;
    let rates = mixing_rate_report(&mixing, &reference, cfg.coupling.fit_drop_frac, None)?;
    let series_rows: Vec<Vec<String>> = mixing
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            vec![
                fmt_f64(t),
                fmt_f64(mixing.mean_distance[i]),
                fmt_f64(mixing.se_distance[i]),
                fmt_f64(rates.w1_series[i]),
                fmt_f64(if i == 0 { f64::NAN } else { mixing.coupled_fraction[i - 1] }),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("mixing_series.csv"),
        &["t", "mean_distance", "se_distance", "w1_to_reference", "coupled_fraction"],
        &series_rows,
    )?;
    write_csv(
        &out_dir.join("mixing_windows.csv"),
        &WINDOW_HEADER,
        &window_rows(&mixing.window_records),
    )?;
    // Anchor distribution at the final window (-1 encodes "unanchored").
    let mut anchor_counts: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
    for l0 in &mixing.l0_final {
        *anchor_counts.entry(l0.map_or(-1, |v| v as i64)).or_default() += 1;
    }
    write_csv(
        &out_dir.join("anchor_distribution.csv"),
        &["anchor_window", "paths"],
        &anchor_counts
            .iter()
            .map(|(k, v)| vec![k.to_string(), v.to_string()])
            .collect::<Vec<_>>(),
    )?;
    let report = MixingCommandReport {
        rates,
        calibration,
        reference_samples: reference.len(),
        mixing,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_failures(out_dir, &report.mixing.failures)?;
    write_manifest(cfg, out_dir, "mixing", started)?;
    let mixing = &report.mixing;
    let rates = &report.rates;
    let notes = vec![
        format!(
            "distance rate {:.4} +- {:.4} -> {}",
            rates.distance_fit.rate,
            rates.distance_fit.half_width,
            if rates.distance_fit.decay_confirmed() {
                "decay confirmed"
            } else {
                "decay NOT confirmed"
            }
        ),
        format!(
            "envelope constant {:.4}, dominates fit window: {}",
            rates.envelope_constant, rates.envelope_dominates
        ),
        format!(
            "coupling probability per ball entry: {:.4} over {} entries",
            mixing.coupled_given_ball, mixing.ball_entries
        ),
        format!(
            "ladders settled on {:.1}% of paths; W1 rate {:.4} +- {:.4}",
            100.0 * mixing.settled_fraction,
            rates.w1_fit.rate,
            rates.w1_fit.half_width
        ),
    ];
    Ok(CommandSummary {
        command: "mixing",
        out_dir: out_dir.to_path_buf(),
        path_failures: mixing.failures.len(),
        notes,
    })
}

// ---------------------------------------------------------------------
// Coupling sweep over (gain, low-mode cutoff, window length).

#[derive(serde::Serialize)]
struct SweepCell {
    binding_gain: f64,
    low_modes: usize,
    window_len: f64,
    n_windows: usize,
    coupled_given_ball: f64,
    ball_entries: usize,
    settled_fraction: f64,
    distance_rate: f64,
    distance_rate_half_width: f64,
    rate_degenerate: bool,
    path_failures: usize,
}

pub fn cmd_couple_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<CommandSummary> {
    let started = Instant::now();
    cfg.validate()?;
    let sweep = cfg.sweep.clone().ok_or_else(|| {
        Error::InvalidConfig("the sweep command needs a [sweep] section".into())
    })?;
    prepare_out_dir(cfg, out_dir)?;
    let mut cells = Vec::new();
    let mut total_failures = 0usize;
    for &gain in &sweep.gains {
        for &low in &sweep.low_mode_counts {
            for &window in &sweep.window_lens {
                let mut cell_cfg = cfg.clone();
                cell_cfg.solver.binding_gain = gain;
                cell_cfg.grid.low_modes = low;
                cell_cfg.solver.window_len = window;
                cell_cfg.validate()?;
                let stepper = cell_cfg.build_stepper()?;
                let (u0, ut0) = initial_pair(&cell_cfg, stepper.model())?;
                let cell_seed = fnv1a64(
                    format!("{}/{gain}/{low}/{window}", cfg.run.seed).as_bytes(),
                ) & (i64::MAX as u64);
                let mix_cfg = MixingConfig {
                    ensemble: cell_cfg.run.paths,
                    n_windows: cell_cfg.n_windows()?,
                    c_hat: cell_cfg.coupling.c_hat,
                    gamma_hat: cell_cfg.coupling.gamma_hat,
                    ball_radius: cell_cfg.coupling.ball_radius,
                    master_seed: cell_seed,
                };
                let mixing = mixing_experiment(&stepper, &u0, &ut0, &mix_cfg)?;
                total_failures += mixing.failures.len();
                cells.push(SweepCell {
                    binding_gain: gain,
                    low_modes: low,
                    window_len: window,
                    n_windows: mix_cfg.n_windows,
                    coupled_given_ball: mixing.coupled_given_ball,
                    ball_entries: mixing.ball_entries,
                    settled_fraction: mixing.settled_fraction,
                    distance_rate: mixing.fit.rate,
                    distance_rate_half_width: mixing.fit.half_width,
                    rate_degenerate: mixing.fit.degenerate,
                    path_failures: mixing.failures.len(),
                });
            }
        }
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                fmt_f64(c.binding_gain),
                c.low_modes.to_string(),
                fmt_f64(c.window_len),
                c.n_windows.to_string(),
                fmt_f64(c.coupled_given_ball),
                c.ball_entries.to_string(),
                fmt_f64(c.settled_fraction),
                fmt_f64(c.distance_rate),
                fmt_f64(c.distance_rate_half_width),
                (c.rate_degenerate as u8).to_string(),
                c.path_failures.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("sweep.csv"),
        &[
            "binding_gain",
            "low_modes",
            "window_len",
            "n_windows",
            "coupled_given_ball",
            "ball_entries",
            "settled_fraction",
            "distance_rate",
            "distance_rate_half_width",
            "rate_degenerate",
            "path_failures",
        ],
        &rows,
    )?;
    write_json(&out_dir.join("report.json"), &cells)?;
    write_failures(out_dir, &[])?;
    write_manifest(cfg, out_dir, "couple-sweep", started)?;
    let best = cells
        .iter()
        .max_by(|a, b| a.coupled_given_ball.total_cmp(&b.coupled_given_ball))
        .unwrap();
    let notes = vec![format!(
        "{} cells; best ball-coupling {:.4} at gain {}, low modes {}, window {}",
        cells.len(),
        best.coupled_given_ball,
        best.binding_gain,
        best.low_modes,
        best.window_len
    )];
    Ok(CommandSummary {
        command: "couple-sweep",
        out_dir: out_dir.to_path_buf(),
        path_failures: total_failures,
        notes,
    })
}
