//! Dirichlet sine basis for the complex Ginzburg-Landau equation on (0, 1).
//!
//! Basis functions `e_n(x) = sqrt(2) sin(n pi x)`, `n = 1..=M`, with
//! `-Laplace` eigenvalues `mu_n = n^2 pi^2`. Nonlinear terms are evaluated
//! by collocation on the interior nodes `x_j = j/G`, `j = 1..G-1`, of an
//! oversampled grid `G = oversample * M`, using the discrete quadrature
//! `integral f ~ (1/G) sum_j f(x_j)`. That quadrature integrates sine
//! polynomials of harmonic degree `< 2G` exactly and makes analysis the
//! transpose of synthesis, so `analyze . synthesize = identity` whenever
//! `G - 1 >= M`.
//!
//! The power nonlinearity `|u|^{2 sigma} u` is not band-limited for
//! fractional `sigma`; accuracy is checked against a finer collocation of
//! the same modal space (see [`CglBasis::nonlinearity_reference`]).

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Admissible nonlinearity powers: `sigma > 0` and `sigma * d < 2` with
/// `d = 1` here, i.e. `sigma` in (0, 2). The moment and absorbing-ball
/// estimates used elsewhere are valid exactly on this range.
pub fn validate_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 && sigma < 2.0 {
        Ok(())
    } else {
        Err(Error::Subcriticality { sigma })
    }
}

pub struct CglBasis {
    mode_count: usize,
    oversample: usize,
    grid: usize,
    eigenvalues: Vec<f64>,
    /// Row-major `(grid - 1) x mode_count` synthesis matrix,
    /// `synth[j][m] = sqrt(2) sin((m+1) pi (j+1) / grid)`.
    synth: Vec<f64>,
}

impl CglBasis {
    pub fn new(mode_count: usize, oversample: usize) -> Result<CglBasis> {
        if mode_count == 0 {
            return Err(Error::InvalidConfig("mode count must be positive".into()));
        }
        if oversample < 2 {
            return Err(Error::InvalidConfig(format!(
                "collocation oversample must be >= 2, got {oversample}"
            )));
        }
        let grid = oversample * mode_count;
        let eigenvalues: Vec<f64> = (1..=mode_count)
            .map(|n| (n as f64 * std::f64::consts::PI).powi(2))
            .collect();
        let mut synth = Vec::with_capacity((grid - 1) * mode_count);
        for j in 1..grid {
            for n in 1..=mode_count {
                let arg = (n * j) as f64 * std::f64::consts::PI / grid as f64;
                synth.push(std::f64::consts::SQRT_2 * arg.sin());
            }
        }
        Ok(CglBasis {
            mode_count,
            oversample,
            grid,
            eigenvalues,
            synth,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Values at the interior collocation nodes `x_j = j/G`, `j = 1..G-1`.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(coeffs.len(), self.mode_count);
        let m = self.mode_count;
        self.synth
            .chunks_exact(m)
            .map(|row| {
                row.iter()
                    .zip(coeffs)
                    .map(|(&s, &c)| s * c)
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// Modal coefficients of grid values: `(1/G) * synth^T v`. Exact for
    /// functions in the modal span; otherwise the discrete projection.
    pub fn analyze(&self, values: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.grid - 1);
        let m = self.mode_count;
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for (row, &v) in self.synth.chunks_exact(m).zip(values) {
            for (o, &s) in out.iter_mut().zip(row) {
                *o += s * v;
            }
        }
        let norm = 1.0 / self.grid as f64;
        for o in &mut out {
            *o *= norm;
        }
        out
    }

    /// Collocation evaluation of `coef * |u|^{2 sigma} u`, projected back
    /// onto the retained modes.
    pub fn nonlinearity(
        &self,
        coeffs: &[Complex64],
        sigma: f64,
        coef: Complex64,
    ) -> Result<Vec<Complex64>> {
        validate_sigma(sigma)?;
        if coeffs.len() != self.mode_count {
            return Err(Error::dim(self.mode_count, coeffs.len(), "modal coefficients"));
        }
        let mut vals = self.synthesize(coeffs);
        for v in vals.iter_mut() {
            *v = coef * v.norm_sqr().powf(sigma) * *v;
        }
        Ok(self.analyze(&vals))
    }

    /// Same computation on a collocation grid `factor` times finer (same
    /// modal space). Verification reference; never used by integrators.
    pub fn nonlinearity_reference(
        &self,
        coeffs: &[Complex64],
        sigma: f64,
        coef: Complex64,
        factor: usize,
    ) -> Result<Vec<Complex64>> {
        let fine = CglBasis::new(self.mode_count, self.oversample * factor.max(2))?;
        fine.nonlinearity(coeffs, sigma, coef)
    }

    /// `L^p` norm by node quadrature (weight `1/G`, zero Dirichlet ends).
    pub fn lp_norm(&self, coeffs: &[Complex64], p: f64) -> f64 {
        let vals = self.synthesize(coeffs);
        let mean: f64 =
            vals.iter().map(|v| v.norm().powf(p)).sum::<f64>() / self.grid as f64;
        mean.powf(1.0 / p)
    }
}
