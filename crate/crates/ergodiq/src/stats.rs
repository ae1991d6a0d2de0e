//! Small numerical utilities shared across modules: the standard normal CDF,
//! sample summaries, percentiles, a dense linear solve for low-dimensional
//! blocks, and an ordinary least-squares line fit.

use crate::error::{Error, Result};

/// Standard normal CDF, double-precision rational approximation (absolute
/// error below 1e-14 across the real line).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    let c = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_475 {
            let mut b = 3.526_249_659_989_11e-2 * z + 0.700_383_064_443_688;
            b = b * z + 6.373_962_203_531_65;
            b = b * z + 33.912_866_078_383;
            b = b * z + 112.079_291_497_871;
            b = b * z + 221.213_596_169_931;
            b = b * z + 220.206_867_912_376;
            let mut d = 8.838_834_764_831_84e-2 * z + 1.755_667_163_182_64;
            d = d * z + 16.064_177_579_207;
            d = d * z + 86.780_732_202_946_1;
            d = d * z + 296.564_248_779_674;
            d = d * z + 637.333_633_378_831;
            d = d * z + 793.826_512_519_948;
            d = d * z + 440.413_735_824_752;
            e * b / d
        } else {
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / (b * 2.506_628_274_631_000_5)
        }
    };
    if x > 0.0 {
        1.0 - c
    } else {
        c
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::DegenerateSample("mean of empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, f64::INFINITY));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Percentile by linear interpolation on the sorted sample, q in [0, 1].
pub fn percentile(xs: &[f64], q: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::DegenerateSample("percentile of empty sample".into()));
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample in percentile"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(v[lo] * (1.0 - frac) + v[hi] * frac)
}

/// 99th-percentile quantiles of the chi-square distribution for 1..=15
/// degrees of freedom (standard table values), used by goodness-of-fit
/// screens on categorical marginals.
pub const CHI2_Q99: [f64; 15] = [
    6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209, 24.725, 26.217,
    27.688, 29.141, 30.578,
];

/// Solve `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`. Errors when the pivot falls
/// below `1e-12 * max|a|` (treated as singular).
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::dim(n * n, a.len(), "dense solve matrix"));
    }
    if b.len() != n {
        return Err(Error::dim(n, b.len(), "dense solve rhs"));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        if m[piv * n + col].abs() < 1e-12 * scale {
            return Err(Error::LowModeInversion(format!(
                "singular block: pivot {:.3e} at column {col}",
                m[piv * n + col]
            )));
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Ordinary least squares fit `y = slope * x + intercept`.
/// Returns `(slope, intercept, slope_se)` with the textbook standard error
/// from the residual variance.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::dim(xs.len(), ys.len(), "ols sample lengths"));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateSample(
            "ols fit needs at least 3 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateSample("ols fit with constant x".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let slope_se = (ss_res / (n - 2.0) / sxx).sqrt();
    Ok((slope, intercept, slope_se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_frozen_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_07).abs() < 1e-12);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-12);
        assert!((normal_cdf(-6.0) - 9.865_876_450_376_946e-10).abs() < 1e-18);
        // Symmetry.
        for x in [0.3, 1.7, 4.2] {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
        }
        // Reference value for a mean-gap-2*sqrt(dt) increment coupling.
        assert!((2.0 * normal_cdf(-1.0) - 0.317_310_507_862_914_15).abs() < 1e-12);
    }

    #[test]
    fn mean_se_matches_hand_computation() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m - 2.5).abs() < 1e-15);
        // var = (2.25+0.25+0.25+2.25)/3 = 5/3; se = sqrt(5/12).
        assert!((se - (5.0_f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn solve_dense_roundtrip() {
        let a = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let xs = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|c| a[r * 3 + c] * xs[c]).sum())
            .collect();
        let sol = solve_dense(&a, &b, 3).unwrap();
        for (s, x) in sol.iter().zip(xs.iter()) {
            assert!((s - x).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_dense_rejects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(solve_dense(&a, &[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -3.5 * x + 0.7).collect();
        let (slope, intercept, se) = ols_line(&xs, &ys).unwrap();
        assert!((slope + 3.5).abs() < 1e-12);
        assert!((intercept - 0.7).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert!((percentile(&xs, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((percentile(&xs, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((percentile(&xs, 0.5).unwrap() - 2.5).abs() < 1e-15);
    }
}
