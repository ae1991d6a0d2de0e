//! Reflection-maximal coupling of isotropic Gaussian increments.
//!
//! For `N(m1, v I)` against `N(m2, v I)` the reflection coupling is maximal:
//! given the first draw `x`, the second equals `x` with probability
//! `min(1, phi_{m2}(x)/phi_{m1}(x))` and is otherwise the reflection of `x`
//! across the hyperplane separating the means. The meet probability is
//! `2 Phi(-|m1 - m2| / (2 sqrt(v)))`.
//!
//! The window iteration uses the conditional form: the first increment is
//! already realized as `sqrt(dt) xi` plus a known drift, and only the
//! accept/reflect decision remains to be drawn.

use crate::error::{Error, Result};
use crate::stats::normal_cdf;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Conditional reflection step in normalized coordinates. `xi` is the
/// standardized first draw (so the first increment is `m1 + sqrt(v) xi`),
/// `a = (m1 - m2)/sqrt(v)` the standardized mean separation, and `uniform`
/// the accept variate. Returns the standardized second draw and whether the
/// outputs met (met means the two increments are bitwise the same point).
pub fn reflect_couple_given(xi: &[f64], a: &[f64], uniform: f64) -> (Vec<f64>, bool) {
    let a_sq: f64 = a.iter().map(|x| x * x).sum();
    if a_sq == 0.0 {
        return (xi.to_vec(), true);
    }
    let dot: f64 = xi.iter().zip(a).map(|(x, y)| x * y).sum();
    // Accept with min(1, phi(xi + a)/phi(xi)) = min(1, e^{-<xi,a> - |a|^2/2}).
    if uniform <= (-dot - 0.5 * a_sq).exp() {
        let met: Vec<f64> = xi.iter().zip(a).map(|(x, y)| x + y).collect();
        (met, true)
    } else {
        let scale = 2.0 * dot / a_sq;
        let refl: Vec<f64> = xi.iter().zip(a).map(|(x, y)| x - scale * y).collect();
        (refl, false)
    }
}

/// The closed-form meet probability `2 Phi(-|m1 - m2| / (2 sqrt(var)))`.
pub fn gaussian_meet_probability(sep: f64, var: f64) -> f64 {
    2.0 * normal_cdf(-sep.abs() / (2.0 * var.sqrt()))
}

/// One draw from the reflection-maximal coupling of `N(m1, var I)` and
/// `N(m2, var I)`. Returns `(w1, w2)`; `w1 == w2` is the meet event.
pub fn maximal_coupling_gaussian_step(
    m1: &[f64],
    m2: &[f64],
    var: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m1.len() != m2.len() {
        return Err(Error::dim(m1.len(), m2.len(), "coupled mean vectors"));
    }
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "shared variance must be positive and finite, got {var}"
        )));
    }
    let sd = var.sqrt();
    let xi: Vec<f64> = (0..m1.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let uniform: f64 = rng.random();
    let a: Vec<f64> = m1.iter().zip(m2).map(|(x, y)| (x - y) / sd).collect();
    let (xi2, met) = reflect_couple_given(&xi, &a, uniform);
    let w1: Vec<f64> = m1.iter().zip(&xi).map(|(m, x)| m + sd * x).collect();
    let w2: Vec<f64> = if met {
        w1.clone()
    } else {
        m2.iter().zip(&xi2).map(|(m, x)| m + sd * x).collect()
    };
    Ok((w1, w2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_and_se;

    fn rng(seed: u64) -> ChaCha12Rng {
        crate::rng::stream(seed, 0, "gaussian-test")
    }

    #[test]
    fn equal_means_always_meet() {
        let mut r = rng(1);
        let m = vec![0.3, -1.2, 0.7];
        for _ in 0..200 {
            let (w1, w2) = maximal_coupling_gaussian_step(&m, &m, 0.01, &mut r).unwrap();
            assert_eq!(w1, w2);
        }
    }

    #[test]
    fn dimension_and_variance_validation() {
        let mut r = rng(2);
        assert!(maximal_coupling_gaussian_step(&[0.0], &[0.0, 1.0], 1.0, &mut r).is_err());
        assert!(maximal_coupling_gaussian_step(&[0.0], &[1.0], 0.0, &mut r).is_err());
        assert!(maximal_coupling_gaussian_step(&[0.0], &[1.0], f64::NAN, &mut r).is_err());
    }

    #[test]
    fn meet_probability_matches_the_reflection_formula() {
        // 1-D separation 2 sqrt(dt): P(meet) = 2 Phi(-1) ~ 0.3173.
        let dt: f64 = 0.04;
        let sep = 2.0 * dt.sqrt();
        let want = gaussian_meet_probability(sep, dt);
        assert!((want - 0.31731050786291415).abs() < 1e-15);
        let mut r = rng(3);
        let n = 100_000;
        let mut meets = 0usize;
        for _ in 0..n {
            let (w1, w2) = maximal_coupling_gaussian_step(&[sep], &[0.0], dt, &mut r).unwrap();
            if w1 == w2 {
                meets += 1;
            }
        }
        let hat = meets as f64 / n as f64;
        assert!((hat - want).abs() < 0.01, "meet rate {hat} vs {want}");
    }

    #[test]
    fn both_marginals_have_exact_moments() {
        let mut r = rng(4);
        let m1 = vec![0.5, -0.25];
        let m2 = vec![-0.1, 0.3];
        let var = 0.09;
        let n = 60_000;
        let mut s1 = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut s2 = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let (w1, w2) = maximal_coupling_gaussian_step(&m1, &m2, var, &mut r).unwrap();
            for d in 0..2 {
                s1[d].push(w1[d]);
                s2[d].push(w2[d]);
            }
        }
        for d in 0..2 {
            let (mean1, se1) = mean_and_se(&s1[d]).unwrap();
            let (mean2, se2) = mean_and_se(&s2[d]).unwrap();
            assert!((mean1 - m1[d]).abs() < 4.0 * se1, "first marginal mean, dim {d}");
            assert!((mean2 - m2[d]).abs() < 4.0 * se2, "second marginal mean, dim {d}");
            let var1: f64 =
                s1[d].iter().map(|x| (x - mean1) * (x - mean1)).sum::<f64>() / (n as f64 - 1.0);
            let var2: f64 =
                s2[d].iter().map(|x| (x - mean2) * (x - mean2)).sum::<f64>() / (n as f64 - 1.0);
            // SE of a normal sample variance: var * sqrt(2/(n-1)).
            let vse = var * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((var1 - var).abs() < 4.0 * vse, "first marginal variance, dim {d}");
            assert!((var2 - var).abs() < 4.0 * vse, "second marginal variance, dim {d}");
        }
    }

    #[test]
    fn meets_dominate_any_other_coupling_rate() {
        // The meet rate equals 1 - TV for shifted normals; check the
        // squared-density bound TV <= (1/2) sqrt(E[(dL1/dL2)^2] - 1)
        // numerically across separations.
        for sep in [0.1, 0.5, 1.0, 1.5, 2.0, 2.5] {
            let tv = 1.0 - gaussian_meet_probability(sep, 1.0);
            let second_moment = (sep * sep) as f64;
            let bound = 0.5 * (second_moment.exp() - 1.0).sqrt();
            assert!(tv <= bound + 1e-12, "sep {sep}: TV {tv} > bound {bound}");
        }
    }

    #[test]
    fn conditional_form_has_exact_conditional_meet_rate() {
        // Given xi, the accept probability is e^{-<xi,a>-|a|^2/2} ^ 1; the
        // unconditional meet rate integrates to 2 Phi(-|a|/2).
        let mut r = rng(5);
        let a = vec![0.8, -0.6];
        let a_norm = f64::sqrt(a[0] * a[0] + a[1] * a[1]);
        let want = 2.0 * normal_cdf(-a_norm / 2.0);
        let n = 200_000;
        let mut meets = 0usize;
        for _ in 0..n {
            let xi: Vec<f64> = (0..2).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let u: f64 = r.random();
            let (_, met) = reflect_couple_given(&xi, &a, u);
            if met {
                meets += 1;
            }
        }
        let hat = meets as f64 / n as f64;
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((hat - want).abs() < 4.0 * se, "{hat} vs {want}");
    }

    #[test]
    fn reflection_preserves_the_standard_normal_law() {
        // The reflected branch must leave the second marginal standard
        // normal: moment checks on the combined output.
        let mut r = rng(6);
        let a = vec![1.2];
        let n = 120_000;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: Vec<f64> = vec![r.sample::<f64, _>(StandardNormal)];
            let u: f64 = r.random();
            let (xi2, _) = reflect_couple_given(&xi, &a, u);
            out.push(xi2[0]);
        }
        let (mean, se) = mean_and_se(&out).unwrap();
        assert!(mean.abs() < 4.0 * se);
        let var: f64 = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() < 4.0 * (2.0 / (n as f64 - 1.0)).sqrt());
        // Symmetry of tails.
        let hi = out.iter().filter(|&&x| x > 1.0).count() as f64 / n as f64;
        let lo = out.iter().filter(|&&x| x < -1.0).count() as f64 / n as f64;
        let p = 1.0 - normal_cdf(1.0);
        let pse = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hi - p).abs() < 4.0 * pse, "upper tail {hi} vs {p}");
        assert!((lo - p).abs() < 4.0 * pse, "lower tail {lo} vs {p}");
    }
}
