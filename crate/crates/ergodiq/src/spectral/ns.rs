//! Torus Fourier basis for the 2-D vorticity equation.
//!
//! The scalar vorticity field `w(x) = sum_k w_k exp(2 pi i k.x)` lives on the
//! unit torus. Retained wavenumbers fill the centered lattice
//! `|k_x|, |k_y| <= m`, `k != 0`, where `m = grid/2 - 1`; the Nyquist rows of
//! the nominal `grid x grid` resolution are dropped so conjugate symmetry is
//! exact. The divergence-free velocity is recovered mode-by-mode from the
//! streamfunction,
//!
//! ```text
//!   u_k = i (k_y, -k_x) w_k / (2 pi |k|^2),
//! ```
//!
//! and the advection nonlinearity `B(w) = P_M (u . grad w)` is evaluated
//! pseudo-spectrally on a zero-padded grid large enough (`pad >= 3m + 1`)
//! that quadratic products are alias-free: the retained coefficients equal
//! the exact convolution sum, which is also what keeps the enstrophy pairing
//! `(w, B(w)) = 0` at round-off level.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

pub struct NsBasis {
    grid: usize,
    max_wave: i32,
    modes: Vec<(i32, i32)>,
    index: HashMap<(i32, i32), usize>,
    eigenvalues: Vec<f64>,
    conj_index: Vec<usize>,
    /// Flat indices of canonical conjugate representatives
    /// (`k_y > 0`, or `k_y == 0 && k_x > 0`), ascending.
    canonical: Vec<usize>,
    /// Rank of each mode's canonical representative in `canonical`.
    pair_rank: Vec<usize>,
    pad: usize,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl NsBasis {
    /// Build the basis for a nominal `grid x grid` resolution (even,
    /// at least 4). Retains `(2m+1)^2 - 1` modes with `m = grid/2 - 1`.
    pub fn new(grid: usize) -> Result<NsBasis> {
        if grid < 4 || grid % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "torus grid must be even and >= 4, got {grid}"
            )));
        }
        let m = (grid / 2 - 1) as i32;
        let mut modes = Vec::new();
        for ky in -m..=m {
            for kx in -m..=m {
                if kx != 0 || ky != 0 {
                    modes.push((kx, ky));
                }
            }
        }
        modes.sort_by_key(|&(kx, ky)| (kx * kx + ky * ky, ky, kx));
        let index: HashMap<(i32, i32), usize> =
            modes.iter().enumerate().map(|(n, &k)| (k, n)).collect();
        let eigenvalues: Vec<f64> = modes
            .iter()
            .map(|&(kx, ky)| TWO_PI * TWO_PI * ((kx * kx + ky * ky) as f64))
            .collect();
        let conj_index: Vec<usize> = modes.iter().map(|&(kx, ky)| index[&(-kx, -ky)]).collect();
        let canonical: Vec<usize> = (0..modes.len())
            .filter(|&n| {
                let (kx, ky) = modes[n];
                ky > 0 || (ky == 0 && kx > 0)
            })
            .collect();
        let mut pair_rank = vec![0usize; modes.len()];
        for (rank, &n) in canonical.iter().enumerate() {
            pair_rank[n] = rank;
            pair_rank[conj_index[n]] = rank;
        }
        // Alias-free padding for quadratic products: pad >= 3m + 1.
        let pad = (4 * m.max(1)) as usize;
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(pad);
        let fft_inv = planner.plan_fft_inverse(pad);
        Ok(NsBasis {
            grid,
            max_wave: m,
            modes,
            index,
            eigenvalues,
            conj_index,
            canonical,
            pair_rank,
            pad,
            fft_fwd,
            fft_inv,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn max_wave(&self) -> i32 {
        self.max_wave
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Lattice wavenumber of flat index `n`.
    pub fn wavenumber(&self, n: usize) -> (i32, i32) {
        self.modes[n]
    }

    /// Flat index of a lattice wavenumber, if retained.
    pub fn index_of(&self, kx: i32, ky: i32) -> Option<usize> {
        self.index.get(&(kx, ky)).copied()
    }

    /// Flat index of `-k` for flat index `n`.
    pub fn conjugate_index(&self, n: usize) -> usize {
        self.conj_index[n]
    }

    /// True when the first `n_modes` flat indices are closed under `k -> -k`.
    pub fn is_conjugation_closed(&self, n_modes: usize) -> bool {
        (0..n_modes.min(self.modes.len())).all(|n| self.conj_index[n] < n_modes)
    }

    /// Largest deviation from the reality condition `w(-k) = conj w(k)`.
    pub fn reality_defect(&self, coeffs: &[Complex64]) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| (coeffs[self.conj_index[n]] - c.conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Enforce the reality condition by averaging each conjugate pair.
    pub fn symmetrize(&self, coeffs: &mut [Complex64]) {
        for &n in &self.canonical {
            let j = self.conj_index[n];
            let avg = 0.5 * (coeffs[n] + coeffs[j].conj());
            coeffs[n] = avg;
            coeffs[j] = avg.conj();
        }
    }

    // ----- real coordinatization ------------------------------------------

    /// `sqrt(2) (Re, Im)` of each canonical representative; an isometry for
    /// real fields: `sum_k |w_k|^2 = sum_d x_d^2`.
    pub fn field_to_dofs(&self, coeffs: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.modes.len());
        let s = std::f64::consts::SQRT_2;
        let mut out = Vec::with_capacity(self.modes.len());
        for &n in &self.canonical {
            out.push(s * coeffs[n].re);
            out.push(s * coeffs[n].im);
        }
        out
    }

    pub fn dofs_to_field(&self, dofs: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(dofs.len(), self.modes.len());
        let inv_s = 1.0 / std::f64::consts::SQRT_2;
        let mut out = vec![Complex64::new(0.0, 0.0); self.modes.len()];
        for (rank, &n) in self.canonical.iter().enumerate() {
            let c = Complex64::new(dofs[2 * rank] * inv_s, dofs[2 * rank + 1] * inv_s);
            out[n] = c;
            out[self.conj_index[n]] = c.conj();
        }
        out
    }

    /// Dof indices `(re, im)` of the canonical pair containing mode `n`.
    pub fn dof_indices_of_mode(&self, n: usize) -> (usize, usize) {
        let r = self.pair_rank[n];
        (2 * r, 2 * r + 1)
    }

    // ----- transforms ------------------------------------------------------

    /// Side length of the zero-padded transform grid (quadrature weight is
    /// `1/pad_size()^2` per node).
    pub fn pad_size(&self) -> usize {
        self.pad
    }

    fn bucket(&self, kx: i32, ky: i32) -> usize {
        let p = self.pad as i32;
        let bx = ((kx % p) + p) % p;
        let by = ((ky % p) + p) % p;
        (by * p + bx) as usize
    }

    fn fft2d(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let p = self.pad;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(p) {
            fft.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); p];
        for x in 0..p {
            for y in 0..p {
                col[y] = buf[y * p + x];
            }
            fft.process_with_scratch(&mut col, &mut scratch);
            for y in 0..p {
                buf[y * p + x] = col[y];
            }
        }
    }

    /// Synthesize physical values on the padded grid from per-mode
    /// coefficients given by `f(flat index)`.
    fn phys_from(&self, f: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.pad * self.pad];
        for (n, &(kx, ky)) in self.modes.iter().enumerate() {
            buf[self.bucket(kx, ky)] = f(n);
        }
        self.fft2d(&mut buf, &self.fft_inv);
        buf
    }

    /// Physical grid values of a coefficient vector (padded grid, row-major).
    pub fn to_physical(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.phys_from(|n| coeffs[n])
    }

    /// Retained-mode coefficients of a physical-grid function.
    pub fn to_spectral(&self, phys: &[Complex64]) -> Vec<Complex64> {
        let mut buf = phys.to_vec();
        self.fft2d(&mut buf, &self.fft_fwd);
        let norm = 1.0 / (self.pad * self.pad) as f64;
        self.modes
            .iter()
            .map(|&(kx, ky)| buf[self.bucket(kx, ky)] * norm)
            .collect()
    }

    /// Velocity coefficients `(u1_k, u2_k)` recovered from vorticity.
    pub fn velocity_coeff(&self, n: usize, w: Complex64) -> (Complex64, Complex64) {
        let (kx, ky) = self.modes[n];
        let k_sq = (kx * kx + ky * ky) as f64;
        let factor = Complex64::new(0.0, 1.0) / (TWO_PI * k_sq);
        (factor * ky as f64 * w, -factor * kx as f64 * w)
    }

    /// Advection nonlinearity `B(w) = P_M (u . grad w)`, alias-free.
    pub fn advection(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        if coeffs.len() != self.modes.len() {
            return Err(Error::dim(self.modes.len(), coeffs.len(), "vorticity coefficients"));
        }
        let u1 = self.phys_from(|n| self.velocity_coeff(n, coeffs[n]).0);
        let u2 = self.phys_from(|n| self.velocity_coeff(n, coeffs[n]).1);
        let wx = self.phys_from(|n| {
            let (kx, _) = self.modes[n];
            Complex64::new(0.0, TWO_PI * kx as f64) * coeffs[n]
        });
        let wy = self.phys_from(|n| {
            let (_, ky) = self.modes[n];
            Complex64::new(0.0, TWO_PI * ky as f64) * coeffs[n]
        });
        let mut prod = vec![Complex64::new(0.0, 0.0); self.pad * self.pad];
        for j in 0..prod.len() {
            prod[j] = u1[j] * wx[j] + u2[j] * wy[j];
        }
        Ok(self.to_spectral(&prod))
    }

    /// Dense `O(M^2)` convolution-sum reference for [`Self::advection`]:
    /// `B_k = sum_{p+q=k} (p_x q_y - p_y q_x) / |p|^2 w_p w_q`, summing over
    /// retained lattice pairs only. Used by verification suites; never by
    /// the integrators.
    pub fn advection_dense_reference(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.modes.len()];
        for (np, &(px, py)) in self.modes.iter().enumerate() {
            let p_sq = (px * px + py * py) as f64;
            for (nq, &(qx, qy)) in self.modes.iter().enumerate() {
                let k = (px + qx, py + qy);
                if let Some(nk) = self.index.get(&k) {
                    let wedge = (px * qy - py * qx) as f64;
                    out[*nk] += wedge / p_sq * coeffs[np] * coeffs[nq];
                }
            }
        }
        out
    }

    /// `L^p` norm of the physical field by grid quadrature on the padded
    /// lattice (cell weight `1/pad^2`).
    pub fn lp_norm(&self, coeffs: &[Complex64], p: f64) -> f64 {
        let phys = self.to_physical(coeffs);
        let mean: f64 = phys.iter().map(|v| v.norm().powf(p)).sum::<f64>()
            / (self.pad * self.pad) as f64;
        mean.powf(1.0 / p)
    }
}
