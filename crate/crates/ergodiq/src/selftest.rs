//! Fast named checks of the library's exactly-known identities, run by the
//! `selftest` subcommand before trusting any long experiment: transform
//! round trips, orthogonality of the advection term, the right-inverse
//! identity behind the binding drift, coupling laws with closed-form
//! answers, the density martingale, budget-schedule shape, ladder replay,
//! and the diagnostic fits on synthetic input. Every check uses only the
//! public API and has a deterministic or statistically safe verdict.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use crate::coupling::{
    gaussian_meet_probability, maximal_coupling_discrete, overlap_mass, reflect_couple_given,
    tv_distance, CouplingLedger, DiscreteMeasure, LadderTimes,
};
use crate::diagnostics::{fit_log_linear, wasserstein_1d};
use crate::girsanov::{theta_for_window, GirsanovRecord};
use crate::noise::{CovarianceModel, CovarianceVariant, ScalarModulation};
use crate::rng::stream;
use crate::spectral::{CglBasis, GalerkinBasis, NsBasis, Projector};
use crate::stats::{mean_and_se, normal_cdf};

type CheckResult = std::result::Result<(), String>;

fn fail(msg: String) -> CheckResult {
    Err(msg)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> CheckResult {
    if cond {
        Ok(())
    } else {
        fail(msg())
    }
}

fn random_ns_coeffs(basis: &NsBasis, seed: u64, tag: &'static str) -> Vec<Complex64> {
    let mut rng = stream(seed, 0, tag);
    let dofs: Vec<f64> = (0..basis.mode_count())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    basis.dofs_to_field(&dofs)
}

fn l2_sq(coeffs: &[Complex64]) -> f64 {
    coeffs.iter().map(|c| c.norm_sqr()).sum()
}

// ---------------------------------------------------------------------
// Spectral identities.

fn check_transforms_invert() -> CheckResult {
    let ns = NsBasis::new(8)?;
    for seed in 0..10u64 {
        let w = random_ns_coeffs(&ns, seed, "selftest-roundtrip");
        let phys = ns.to_physical(&w);
        let quad: f64 = phys.iter().map(|v| v.norm_sqr()).sum::<f64>()
            / (ns.pad_size() * ns.pad_size()) as f64;
        let scale = 1.0 + l2_sq(&w);
        ensure((quad - l2_sq(&w)).abs() <= 1e-10 * scale, || {
            format!("torus grid energy drifts from coefficient energy by {:e}", (quad - l2_sq(&w)).abs())
        })?;
        let back = ns.to_spectral(&phys);
        let worst = w
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max);
        ensure(worst <= 1e-10, || format!("torus transform round trip defect {worst:e}"))?;
        let dofs = ns.field_to_dofs(&w);
        let sum_sq: f64 = dofs.iter().map(|x| x * x).sum();
        ensure((sum_sq - l2_sq(&w)).abs() <= 1e-10 * scale, || {
            "dof packing is not an isometry".into()
        })?;
    }
    let cgl = CglBasis::new(16, 2)?;
    let mut rng = stream(7, 0, "selftest-cgl-roundtrip");
    let coeffs: Vec<Complex64> = (0..cgl.mode_count())
        .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let back = cgl.analyze(&cgl.synthesize(&coeffs));
    let worst = coeffs
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0_f64, f64::max);
    ensure(worst <= 1e-10, || format!("interval transform round trip defect {worst:e}"))
}

fn check_advection_orthogonality() -> CheckResult {
    let ns = NsBasis::new(8)?;
    for seed in 0..20u64 {
        let w = random_ns_coeffs(&ns, seed, "selftest-pairing");
        let b = ns.advection(&w)?;
        let pairing: f64 = w.iter().zip(&b).map(|(a, c)| (a.conj() * c).re).sum();
        let scale = 1.0 + l2_sq(&w).powf(1.5);
        ensure(pairing.abs() <= 1e-10 * scale, || {
            format!("advection pairing should vanish, got {pairing:e}")
        })?;
        let dense = ns.advection_dense_reference(&w);
        let worst = b
            .iter()
            .zip(&dense)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0_f64, f64::max);
        ensure(worst <= 1e-10 * scale, || {
            format!("pseudo-spectral advection drifts from the dense sum by {worst:e}")
        })?;
    }
    Ok(())
}

fn check_projector_algebra() -> CheckResult {
    let ns = NsBasis::new(8)?;
    let basis = GalerkinBasis::NsTorus(NsBasis::new(8)?);
    let w = random_ns_coeffs(&ns, 3, "selftest-projector");
    let p = Projector::new(12);
    let once = p.apply(&w);
    let twice = p.apply(&once);
    ensure(once == twice, || "projector is not idempotent".into())?;
    let mut sum = vec![Complex64::new(0.0, 0.0); w.len()];
    let comp = p.complement(&w);
    for i in 0..w.len() {
        sum[i] = once[i] + comp[i];
    }
    ensure(sum == w, || "projector and complement do not partition the field".into())?;
    let cross: f64 = once.iter().zip(&comp).map(|(a, b)| (a.conj() * b).re).sum();
    ensure(cross.abs() <= 1e-12 * (1.0 + l2_sq(&w)), || {
        "projector ranges are not orthogonal".into()
    })?;
    let floor = p.gap_floor(&basis);
    ensure(floor >= basis.eigenvalue(11), || "gap floor below the retained block".into())?;
    // Energy in the complement pays at least the gap floor in H1.
    let tail_l2: f64 = comp.iter().map(|c| c.norm_sqr()).sum();
    let tail_h1: f64 = comp
        .iter()
        .enumerate()
        .map(|(n, c)| basis.eigenvalue(n) * c.norm_sqr())
        .sum();
    ensure(tail_h1 + 1e-12 >= floor * tail_l2, || "spectral gap inequality fails".into())
}

fn check_right_inverse_identity() -> CheckResult {
    let basis = Arc::new(GalerkinBasis::NsTorus(NsBasis::new(8)?));
    let n_low = basis.shell_mode_count(2)?;
    for variant in [
        CovarianceVariant::AdditiveLowPlusMultiplicative,
        CovarianceVariant::PerturbedDiagonal { epsilon: 0.05 },
    ] {
        let model = CovarianceModel::from_scalar_gains(
            basis.clone(),
            n_low,
            0.7,
            0.3,
            2.0,
            ScalarModulation::Reciprocal,
            variant,
        )?;
        let low_dofs = model.low_dof_count();
        let mut rng = stream(11, 0, "selftest-inverse");
        for _ in 0..25 {
            let u: Vec<f64> = (0..model.state_dof_count())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let v: Vec<f64> = (0..model.state_dof_count())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let g = model.pseudo_inverse_apply(&u, &v)?;
            let phig = model.apply_phi_vector(&u, &g)?;
            for d in 0..model.state_dof_count() {
                let want = if d < low_dofs { v[d] } else { 0.0 };
                if (phig[d] - want).abs() > 1e-12 * (1.0 + want.abs()) {
                    return fail(format!(
                        "right inverse misses dof {d}: {} vs {want} ({variant:?})",
                        phig[d]
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Coupling laws.

fn check_discrete_maximal_coupling() -> CheckResult {
    let a = DiscreteMeasure::new(vec![0.5, 0.2, 0.2, 0.1])?;
    let b = DiscreteMeasure::new(vec![0.1, 0.3, 0.2, 0.4])?;
    let tv = tv_distance(&a, &b)?;
    ensure((tv - 0.4).abs() <= 1e-12, || format!("hand-computed TV 0.4, got {tv}"))?;
    let olap = overlap_mass(&a, &b, &[0, 1, 2, 3])?;
    ensure((olap - (1.0 - tv)).abs() <= 1e-12, || "overlap mass must complement TV".into())?;
    let mut rng = stream(13, 0, "selftest-discrete");
    let n = 40_000usize;
    let mut mismatch = 0usize;
    let mut marginal_a = vec![0usize; 4];
    let mut marginal_b = vec![0usize; 4];
    for _ in 0..n {
        let (x, y) = maximal_coupling_discrete(&a, &b, &mut rng)?;
        if x != y {
            mismatch += 1;
        }
        marginal_a[x] += 1;
        marginal_b[y] += 1;
    }
    let freq = mismatch as f64 / n as f64;
    let se = (tv * (1.0 - tv) / n as f64).sqrt();
    ensure((freq - tv).abs() <= 5.0 * se, || {
        format!("mismatch frequency {freq:.4} leaves 5 SE of TV {tv}")
    })?;
    for (i, (&ca, &cb)) in marginal_a.iter().zip(&marginal_b).enumerate() {
        let (pa, pb) = (a.probs()[i], b.probs()[i]);
        let sea = (pa * (1.0 - pa) / n as f64).sqrt();
        let seb = (pb * (1.0 - pb) / n as f64).sqrt();
        ensure((ca as f64 / n as f64 - pa).abs() <= 5.0 * sea, || {
            format!("first marginal off at atom {i}")
        })?;
        ensure((cb as f64 / n as f64 - pb).abs() <= 5.0 * seb, || {
            format!("second marginal off at atom {i}")
        })?;
    }
    Ok(())
}

fn check_reflection_meet_rate() -> CheckResult {
    let mut rng = stream(17, 0, "selftest-reflect");
    let dim = 3usize;
    let a = vec![0.8, -0.4, 0.2];
    let sep = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let want = gaussian_meet_probability(sep, 1.0);
    let closed = 2.0 * normal_cdf(-sep / 2.0);
    ensure((want - closed).abs() <= 1e-14, || "meet probability disagrees with 2 Phi(-|a|/2)".into())?;
    let n = 40_000usize;
    let mut met = 0usize;
    for _ in 0..n {
        let xi: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let u: f64 = rng.random::<f64>();
        let (_, meet) = reflect_couple_given(&xi, &a, u);
        if meet {
            met += 1;
        }
    }
    let freq = met as f64 / n as f64;
    let se = (want * (1.0 - want) / n as f64).sqrt();
    ensure((freq - want).abs() <= 5.0 * se, || {
        format!("reflection meet frequency {freq:.4} leaves 5 SE of {want:.4}")
    })
}

fn check_density_martingale() -> CheckResult {
    let dt = 0.01;
    let steps = 10usize;
    let h = vec![0.6, -0.3];
    let h_sq_t: f64 = h.iter().map(|x| x * x).sum::<f64>() * dt * steps as f64;
    let mut rng = stream(19, 0, "selftest-girsanov");
    let n = 30_000usize;
    let mut weights = Vec::with_capacity(n);
    let mut squares = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rec = GirsanovRecord::new();
        for _ in 0..steps {
            let dw: Vec<f64> = h
                .iter()
                .map(|_| rng.sample::<f64, _>(StandardNormal) * dt.sqrt())
                .collect();
            rec.push(&h, &dw, dt);
        }
        let w = rec.value().exp();
        weights.push(w);
        squares.push(w * w);
    }
    let (mean, se) = mean_and_se(&weights).map_err(|e| e.to_string())?;
    ensure((mean - 1.0).abs() <= 5.0 * se, || {
        format!("density mean {mean:.4} leaves 5 SE of 1")
    })?;
    let (mean2, se2) = mean_and_se(&squares).map_err(|e| e.to_string())?;
    let want2 = h_sq_t.exp();
    ensure((mean2 - want2).abs() <= 5.0 * se2, || {
        format!("density second moment {mean2:.4} leaves 5 SE of {want2:.4}")
    })
}

fn check_budget_schedule() -> CheckResult {
    let (c, g, t) = (3.0, 0.4, 0.25);
    ensure((theta_for_window(c, g, 0, t) - 2.0 * c).abs() <= 1e-12, || {
        "fresh-anchor budget must be twice the pilot cost".into()
    })?;
    for age in 0..20 {
        let now = theta_for_window(c, g, age, t);
        let next = theta_for_window(c, g, age + 1, t);
        ensure(next < now && next > 0.0, || {
            format!("budget schedule must decay strictly to zero, broke at age {age}")
        })?;
        let want = 2.0 * c * (-g * age as f64 * t).exp();
        ensure((now - want).abs() <= 1e-12 * want, || {
            format!("budget at age {age} drifts from its closed form")
        })?;
    }
    Ok(())
}

fn check_ladder_replay() -> CheckResult {
    // Literal set-minimum transcription of the anchor definition.
    fn l0_literal(ball: &[bool], coupled: &[bool], k: usize) -> Option<usize> {
        (0..=k).find(|&l| ball[l] && (l..k).all(|w| coupled[w]))
    }
    let scripted = |ball: &[bool], coupled: &[bool]| -> CouplingLedger {
        let mut ledger = CouplingLedger::new(1.0).unwrap();
        for (w, &c) in coupled.iter().enumerate() {
            ledger.start_window(ball[w]);
            ledger.finish_window(c, c, false, 0.0, 0.0, 1.0);
        }
        ledger.close(ball[coupled.len()]);
        ledger
    };
    // Hand-worked case: glue breaks at window 3, ball re-entry at 5.
    let ball = [true, true, true, true, false, true, true, true, true];
    let coupled = [true, true, true, false, true, true, true, true];
    let ledger = scripted(&ball, &coupled);
    let times = ledger.ladder();
    let want = LadderTimes {
        deltas: vec![0, 5],
        sigmas: vec![4],
        k0: Some(1),
        anchor: Some(5),
        dead: false,
    };
    ensure(times == want, || format!("hand-worked ladder mismatch: {times:?}"))?;
    // Exhaustive short masks against the literal anchor.
    for mask in 0u32..64 {
        let coupled: Vec<bool> = (0..6).map(|w| mask >> w & 1 == 1).collect();
        let ball = vec![true; 7];
        let ledger = scripted(&ball, &coupled);
        for k in 0..=6 {
            if ledger.l0(k) != l0_literal(&ball, &coupled, k) {
                return fail(format!("anchor replay differs at boundary {k}, mask {mask:06b}"));
            }
        }
        let times = ledger.ladder();
        if let Some(k0) = times.k0 {
            ensure(times.anchor == ledger.l0(6), || "settled anchor is not the terminal l0".into())?;
            ensure(k0 + 1 == times.deltas.len(), || "k0 must index the last delta".into())?;
        } else {
            ensure(times.dead || !coupled[5], || {
                format!("open ladder without an excuse on mask {mask:06b}")
            })?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Diagnostics on synthetic input.

fn check_wasserstein_closed_forms() -> CheckResult {
    let w = wasserstein_1d(&[0.0; 8], &[0.75; 8]).map_err(|e| e.to_string())?;
    ensure((w - 0.75).abs() <= 1e-12, || "point masses at distance 0.75".into())?;
    let a = [1.0, 2.0, 5.0];
    let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
    let w = wasserstein_1d(&a, &b).map_err(|e| e.to_string())?;
    ensure((w - 0.5).abs() <= 1e-12, || "shift by 0.5 must cost exactly 0.5".into())?;
    let w = wasserstein_1d(&[0.0], &[0.0, 1.0]).map_err(|e| e.to_string())?;
    ensure((w - 0.5).abs() <= 1e-12, || "half an atom moves by 1".into())?;
    let w = wasserstein_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).map_err(|e| e.to_string())?;
    ensure(w.abs() <= 1e-12, || "permuted samples are the same measure".into())
}

fn check_normal_cdf_reference_values() -> CheckResult {
    // (x, Phi(x)) to 1e-8, standard table values.
    let table = [
        (0.0, 0.5),
        (1.0, 0.841_344_746_1),
        (-1.0, 0.158_655_253_9),
        (1.959_963_985, 0.975),
        (-2.575_829_304, 0.005),
        (3.0, 0.998_650_101_97),
    ];
    for (x, want) in table {
        let got = normal_cdf(x);
        ensure((got - want).abs() <= 1e-8, || {
            format!("Phi({x}) = {got:.10}, reference {want:.10}")
        })?;
    }
    Ok(())
}

fn check_rate_fit_on_exact_decay() -> CheckResult {
    let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
    let values: Vec<f64> = times.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
    let fit = fit_log_linear(&times, &values, (0.0, 6.0)).map_err(|e| e.to_string())?;
    ensure((fit.rate - 2.0).abs() <= 1e-9, || format!("fitted rate {} off 2", fit.rate))?;
    ensure((fit.intercept - 3.0_f64.ln()).abs() <= 1e-9, || "intercept off ln 3".into())?;
    ensure(fit.decay_confirmed(), || "exact decay must be confirmed".into())?;
    let flat = vec![1.0; times.len()];
    let fit = fit_log_linear(&times, &flat, (0.0, 6.0)).map_err(|e| e.to_string())?;
    ensure(!fit.decay_confirmed(), || "flat series must not certify decay".into())
}

/// Run every check, printing one verdict line each; returns the number of
/// failures (0 means the battery passed).
pub fn run_all() -> usize {
    let checks: &[(&str, fn() -> CheckResult)] = &[
        ("transforms-invert", check_transforms_invert),
        ("advection-orthogonality", check_advection_orthogonality),
        ("projector-algebra", check_projector_algebra),
        ("noise-right-inverse", check_right_inverse_identity),
        ("discrete-maximal-coupling", check_discrete_maximal_coupling),
        ("reflection-meet-rate", check_reflection_meet_rate),
        ("density-martingale", check_density_martingale),
        ("budget-schedule", check_budget_schedule),
        ("ladder-replay", check_ladder_replay),
        ("wasserstein-closed-forms", check_wasserstein_closed_forms),
        ("normal-cdf-reference", check_normal_cdf_reference_values),
        ("rate-fit-exact-decay", check_rate_fit_on_exact_decay),
    ];
    let mut failures = 0usize;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures == 0 {
        println!("selftest: all {} checks passed", checks.len());
    } else {
        println!("selftest: {failures} of {} checks FAILED", checks.len());
    }
    failures
}
