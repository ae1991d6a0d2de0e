//! Run configuration: one TOML document that pins *every* knob of a run —
//! equation, basis size, covariance, integrator, ensemble, and coupling
//! budget. Nothing numerical is defaulted in code; each shipped default
//! lives in a named preset file under `presets/`, checked in and embedded.
//!
//! Validation is collective: `validate` reports every violated
//! precondition at once, not just the first.

use std::sync::Arc;

use crate::dynamics::{EquationParams, SolverConfig, Stepper};
use crate::error::{Error, Result};
use crate::noise::{CovarianceModel, CovarianceVariant, ScalarModulation};
use crate::spectral::{CglBasis, EquationKind, GalerkinBasis, NsBasis};

/// Spectral truncation sizes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Torus: nominal grid per side (retains `(resolution - 1)^2 - 1`
    /// modes). Line: retained sine-mode count.
    pub resolution: usize,
    /// Collocation oversampling for the line basis; ignored on the torus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oversample: Option<usize>,
    /// Low-mode count `N` covered by the invertible noise block and the
    /// binding projection. Must be shell-closed on the torus and at most a
    /// quarter of the retained modes.
    pub low_modes: usize,
}

/// Covariance gains and shape.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Low-block diagonal gain `b` (must be positive: the low block is
    /// what the coupling inverts).
    pub low_gain: f64,
    /// High-tail gain scale `c0`; tail gains are `c0 (d+1)^{-decay}`.
    pub high_gain: f64,
    /// Polynomial tail decay; must exceed 1/2.
    pub decay: f64,
    pub modulation: ScalarModulation,
    pub variant: CovarianceVariant,
}

/// Integrator and binding parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    /// Coupling window length; must be an integer multiple of `dt`.
    pub window_len: f64,
    /// Binding gain `K`.
    pub binding_gain: f64,
    /// Lipschitz compensation weight `L` of the line binding drift
    /// (unused on the torus).
    pub binding_l: f64,
    pub blow_up_guard: f64,
    pub linear_only: bool,
}

/// Ensemble layout and initial data.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; per-path streams are derived from it. Kept within the
    /// signed-integer range so the TOML round trip is lossless.
    pub seed: u64,
    pub paths: usize,
    /// Total simulated time per path.
    pub horizon: f64,
    /// Record every this many steps.
    pub record_every: usize,
    /// Initial data is a random smooth field: dof `n` is
    /// `amplitude * xi_n / (1 + mu_n)^{smoothness}`.
    pub initial_amplitude: f64,
    pub initial_smoothness: f64,
    /// Amplitude of the second copy's offset in pair experiments.
    pub perturbation_amplitude: f64,
}

/// Coupling-budget schedule and gap-statistic parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// Budget scale; replaced by the pilot's 90th percentile when
    /// `calibrate` is set.
    pub c_hat: f64,
    /// Budget decay per unit of anchored age; replaced by half the pilot's
    /// fitted gap rate when `calibrate` is set.
    pub gamma_hat: f64,
    /// Small-ball energy threshold.
    pub ball_radius: f64,
    /// Gap-statistic exponent in (0, 1].
    pub eps_exp: f64,
    /// Fraction of the horizon dropped before rate fits.
    pub fit_drop_frac: f64,
    pub calibrate: bool,
    pub pilot_paths: usize,
}

/// Parameter grid for the sweep command.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gains: Vec<f64>,
    pub low_mode_counts: Vec<usize>,
    pub window_lens: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub equation: EquationParams,
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub coupling: CouplingSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Checked-in presets, embedded so the binary can run without the files
/// and written beside it so users can copy and edit them.
pub const PRESETS: [(&str, &str); 8] = [
    ("ns_lyapunov", include_str!("../presets/ns_lyapunov.toml")),
    ("cgl_lyapunov", include_str!("../presets/cgl_lyapunov.toml")),
    ("ns_foiasprodi", include_str!("../presets/ns_foiasprodi.toml")),
    ("cgl_foiasprodi", include_str!("../presets/cgl_foiasprodi.toml")),
    ("ns_girsanov", include_str!("../presets/ns_girsanov.toml")),
    ("ns_mixing", include_str!("../presets/ns_mixing.toml")),
    ("cgl_mixing", include_str!("../presets/cgl_mixing.toml")),
    ("ns_sweep", include_str!("../presets/ns_sweep.toml")),
];

/// 64-bit FNV-1a, used for the config fingerprint in run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        for (n, text) in PRESETS {
            if n == name {
                return RunConfig::from_toml_str(text);
            }
        }
        Err(Error::InvalidConfig(format!(
            "unknown preset '{name}'; available: {}",
            PRESETS.map(|(n, _)| n).join(", ")
        )))
    }

    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config serialize error: {e}")))
    }

    pub fn config_hash(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_toml_string()?.as_bytes()))
    }

    /// Apply one `path.to.field=value` override. The value is parsed as a
    /// TOML literal (string, number, boolean, array, or inline table);
    /// anything that fails to parse is taken as a bare string. Unknown
    /// paths and type mismatches are reported through the re-parse.
    pub fn set_override(&mut self, spec: &str) -> Result<()> {
        let (path, raw) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override '{spec}' is not of the form key.path=value"))
        })?;
        let path = path.trim();
        if path.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "override '{spec}' has an empty key path"
            )));
        }
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut doc = toml::Value::try_from(&*self)
            .map_err(|e| Error::InvalidConfig(format!("config serialize error: {e}")))?;
        let mut cursor = &mut doc;
        let segments: Vec<&str> = path.split('.').collect();
        for seg in &segments[..segments.len() - 1] {
            let table = cursor.as_table_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override path '{path}': '{seg}' is not a table"))
            })?;
            cursor = table
                .entry(seg.to_string())
                .or_insert(toml::Value::Table(toml::Table::new()));
        }
        let table = cursor.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override path '{path}' does not end in a table"))
        })?;
        table.insert(segments[segments.len() - 1].to_string(), value);
        *self = doc
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("override '{spec}' rejected: {e}")))?;
        Ok(())
    }

    /// Check every precondition and report all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        match self.equation {
            EquationParams::NavierStokes { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    problems.push(format!("equation.nu must be positive and finite, got {nu}"));
                }
            }
            EquationParams::GinzburgLandau {
                eps,
                eta,
                lambda,
                sigma,
            } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    problems.push(format!("equation.eps must be positive and finite, got {eps}"));
                }
                if !(eta > 0.0 && eta.is_finite()) {
                    problems.push(format!("equation.eta must be positive and finite, got {eta}"));
                }
                if !lambda.is_finite() {
                    problems.push(format!("equation.lambda must be finite, got {lambda}"));
                }
                if !(sigma > 0.0 && sigma < 2.0) {
                    problems.push(format!("equation.sigma must lie in (0, 2), got {sigma}"));
                }
            }
        }
        let basis = self.build_basis();
        match &basis {
            Err(e) => problems.push(format!("grid: {e}")),
            Ok(b) => {
                if let Err(e) = b.low_dof_count(self.grid.low_modes) {
                    problems.push(format!("grid.low_modes: {e}"));
                }
                if self.grid.low_modes == 0 {
                    problems.push("grid.low_modes must be positive".into());
                }
                if 4 * self.grid.low_modes > b.mode_count() {
                    problems.push(format!(
                        "grid.low_modes = {} exceeds a quarter of the {} retained modes",
                        self.grid.low_modes,
                        b.mode_count()
                    ));
                }
            }
        }
        if self.equation.kind() == EquationKind::GinzburgLandau && self.grid.oversample.is_none() {
            problems.push("grid.oversample is required for the line equation".into());
        }
        if !(self.noise.low_gain > 0.0 && self.noise.low_gain.is_finite()) {
            problems.push(format!(
                "noise.low_gain must be positive and finite (the low block must be invertible), got {}",
                self.noise.low_gain
            ));
        }
        if !(self.noise.high_gain >= 0.0 && self.noise.high_gain.is_finite()) {
            problems.push(format!(
                "noise.high_gain must be nonnegative and finite, got {}",
                self.noise.high_gain
            ));
        }
        if !(self.noise.decay > 0.5) {
            problems.push(format!(
                "noise.decay must exceed 1/2 for a square-summable tail, got {}",
                self.noise.decay
            ));
        }
        if let ScalarModulation::SaturatingPower { sigma } = self.noise.modulation {
            if !(sigma > 0.0 && sigma.is_finite()) {
                problems.push(format!(
                    "noise.modulation.sigma must be positive and finite, got {sigma}"
                ));
            }
        }
        if let CovarianceVariant::PerturbedDiagonal { epsilon } = self.noise.variant {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                problems.push(format!(
                    "noise.variant.epsilon must be nonnegative and finite, got {epsilon}"
                ));
            }
        }
        if !(self.solver.dt > 0.0 && self.solver.dt.is_finite()) {
            problems.push(format!("solver.dt must be positive and finite, got {}", self.solver.dt));
        }
        if !(self.solver.window_len > 0.0 && self.solver.window_len.is_finite()) {
            problems.push(format!(
                "solver.window_len must be positive and finite, got {}",
                self.solver.window_len
            ));
        } else if self.solver.dt > 0.0 {
            let steps = self.solver.window_len / self.solver.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
                problems.push(format!(
                    "solver.window_len = {} is not a positive integer multiple of dt = {}",
                    self.solver.window_len, self.solver.dt
                ));
            }
        }
        if !(self.solver.binding_gain >= 0.0 && self.solver.binding_gain.is_finite()) {
            problems.push(format!(
                "solver.binding_gain must be nonnegative and finite, got {}",
                self.solver.binding_gain
            ));
        } else if self.solver.dt * self.solver.binding_gain >= 0.5 {
            problems.push(format!(
                "explicit binding needs dt * binding_gain < 0.5, got {}",
                self.solver.dt * self.solver.binding_gain
            ));
        }
        if !(self.solver.binding_l >= 0.0 && self.solver.binding_l.is_finite()) {
            problems.push(format!(
                "solver.binding_l must be nonnegative and finite, got {}",
                self.solver.binding_l
            ));
        }
        if !(self.solver.blow_up_guard > 0.0) {
            problems.push(format!(
                "solver.blow_up_guard must be positive, got {}",
                self.solver.blow_up_guard
            ));
        }
        if self.run.seed > i64::MAX as u64 {
            problems.push(format!(
                "run.seed must fit a signed 64-bit value for the TOML round trip, got {}",
                self.run.seed
            ));
        }
        if self.run.paths < 2 {
            problems.push(format!("run.paths must be at least 2, got {}", self.run.paths));
        }
        if !(self.run.horizon > 0.0 && self.run.horizon.is_finite()) {
            problems.push(format!(
                "run.horizon must be positive and finite, got {}",
                self.run.horizon
            ));
        }
        if self.run.record_every == 0 {
            problems.push("run.record_every must be positive".into());
        }
        for (name, v) in [
            ("run.initial_amplitude", self.run.initial_amplitude),
            ("run.initial_smoothness", self.run.initial_smoothness),
            ("run.perturbation_amplitude", self.run.perturbation_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        if !(self.coupling.c_hat > 0.0 && self.coupling.c_hat.is_finite()) {
            problems.push(format!(
                "coupling.c_hat must be positive and finite, got {}",
                self.coupling.c_hat
            ));
        }
        if !(self.coupling.gamma_hat >= 0.0 && self.coupling.gamma_hat.is_finite()) {
            problems.push(format!(
                "coupling.gamma_hat must be nonnegative and finite, got {}",
                self.coupling.gamma_hat
            ));
        }
        if !(self.coupling.ball_radius > 0.0 && self.coupling.ball_radius.is_finite()) {
            problems.push(format!(
                "coupling.ball_radius must be positive and finite, got {}",
                self.coupling.ball_radius
            ));
        }
        if !(self.coupling.eps_exp > 0.0 && self.coupling.eps_exp <= 1.0) {
            problems.push(format!(
                "coupling.eps_exp must lie in (0, 1], got {}",
                self.coupling.eps_exp
            ));
        }
        if !(0.0..1.0).contains(&self.coupling.fit_drop_frac) {
            problems.push(format!(
                "coupling.fit_drop_frac must lie in [0, 1), got {}",
                self.coupling.fit_drop_frac
            ));
        }
        if self.coupling.calibrate && self.coupling.pilot_paths < 10 {
            problems.push(format!(
                "coupling.pilot_paths must be at least 10 when calibrating, got {}",
                self.coupling.pilot_paths
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.gains.is_empty()
                || sweep.low_mode_counts.is_empty()
                || sweep.window_lens.is_empty()
            {
                problems.push("sweep lists must all be nonempty".into());
            }
            for &k in &sweep.gains {
                if !(k >= 0.0 && k.is_finite()) {
                    problems.push(format!("sweep gain {k} must be nonnegative and finite"));
                } else if self.solver.dt * k >= 0.5 {
                    problems.push(format!(
                        "sweep gain {k} violates dt * gain < 0.5 at dt = {}",
                        self.solver.dt
                    ));
                }
            }
            if let Ok(b) = &basis {
                for &n in &sweep.low_mode_counts {
                    if b.low_dof_count(n).is_err() || 4 * n > b.mode_count() || n == 0 {
                        problems.push(format!(
                            "sweep low-mode count {n} is not a valid cutoff for {} modes",
                            b.mode_count()
                        ));
                    }
                }
            }
            for &t in &sweep.window_lens {
                let steps = t / self.solver.dt;
                if !(t > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                    problems.push(format!(
                        "sweep window length {t} is not a positive integer multiple of dt"
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }

    pub fn build_basis(&self) -> Result<Arc<GalerkinBasis>> {
        let basis = match self.equation.kind() {
            EquationKind::NavierStokes => GalerkinBasis::NsTorus(NsBasis::new(self.grid.resolution)?),
            EquationKind::GinzburgLandau => GalerkinBasis::CglLine(CglBasis::new(
                self.grid.resolution,
                self.grid.oversample.ok_or_else(|| {
                    Error::InvalidConfig("grid.oversample is required for the line equation".into())
                })?,
            )?),
        };
        Ok(Arc::new(basis))
    }

    pub fn build_model(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_scalar_gains(
            self.build_basis()?,
            self.grid.low_modes,
            self.noise.low_gain,
            self.noise.high_gain,
            self.noise.decay,
            self.noise.modulation,
            self.noise.variant,
        )
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            equation: self.equation,
            dt: self.solver.dt,
            window_len: self.solver.window_len,
            binding_gain: self.solver.binding_gain,
            binding_l: self.solver.binding_l,
            blow_up_guard: self.solver.blow_up_guard,
            linear_only: self.solver.linear_only,
        }
    }

    pub fn build_stepper(&self) -> Result<Stepper> {
        Stepper::new(self.build_model()?, self.solver_config())
    }

    /// Number of whole coupling windows in the horizon; errors when the
    /// horizon is not an integer number of windows.
    pub fn n_windows(&self) -> Result<usize> {
        let w = self.run.horizon / self.solver.window_len;
        if (w - w.round()).abs() > 1e-9 * w.max(1.0) || w.round() < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "run.horizon = {} is not a positive integer number of windows of length {}",
                self.run.horizon, self.solver.window_len
            )));
        }
        Ok(w.round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_validates_and_builds() {
        for (name, text) in PRESETS {
            let cfg = RunConfig::from_toml_str(text)
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            let stepper = cfg
                .build_stepper()
                .unwrap_or_else(|e| panic!("preset {name} stepper: {e}"));
            assert!(
                4 * cfg.grid.low_modes <= stepper.model().basis().mode_count(),
                "preset {name} low-mode cutoff too large"
            );
            assert!(cfg.solver.dt * cfg.solver.binding_gain < 0.5, "preset {name}");
            cfg.n_windows().unwrap_or_else(|e| panic!("preset {name}: {e}"));
            // The on-disk copy is the embedded copy.
            let disk = std::fs::read_to_string(
                std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                    .join("presets")
                    .join(format!("{name}.toml")),
            )
            .unwrap_or_else(|e| panic!("preset file {name}.toml: {e}"));
            assert_eq!(disk, text, "embedded and on-disk preset {name} differ");
        }
        assert!(RunConfig::preset("ns_mixing").is_ok());
        assert!(RunConfig::preset("no_such").is_err());
    }

    #[test]
    fn validation_reports_every_violation_at_once() {
        let mut cfg = RunConfig::preset("ns_mixing").unwrap();
        cfg.solver.dt = -1.0;
        cfg.solver.blow_up_guard = 0.0;
        cfg.grid.low_modes = 1000;
        cfg.run.paths = 1;
        cfg.run.record_every = 0;
        cfg.coupling.eps_exp = 2.0;
        cfg.coupling.ball_radius = -0.5;
        cfg.noise.decay = 0.1;
        let msg = match cfg.validate() {
            Err(Error::InvalidConfig(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        };
        for needle in [
            "solver.dt",
            "solver.blow_up_guard",
            "low_modes",
            "run.paths",
            "run.record_every",
            "coupling.eps_exp",
            "coupling.ball_radius",
            "noise.decay",
        ] {
            assert!(msg.contains(needle), "missing '{needle}' in: {msg}");
        }
    }

    #[test]
    fn torus_low_cutoff_must_close_shells() {
        let mut cfg = RunConfig::preset("ns_mixing").unwrap();
        cfg.grid.low_modes = 5;
        let msg = format!("{}", cfg.validate().unwrap_err());
        assert!(msg.contains("conjugate") || msg.contains("shell"), "got: {msg}");
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut cfg = RunConfig::preset("ns_mixing").unwrap();
        cfg.set_override("solver.dt=0.00125").unwrap();
        assert_eq!(cfg.solver.dt, 0.00125);
        cfg.set_override("equation.nu=0.7").unwrap();
        match cfg.equation {
            EquationParams::NavierStokes { nu } => assert_eq!(nu, 0.7),
            _ => panic!("equation kind changed"),
        }
        cfg.set_override("run.paths=32").unwrap();
        assert_eq!(cfg.run.paths, 32);
        cfg.set_override("coupling.calibrate=false").unwrap();
        assert!(!cfg.coupling.calibrate);
        cfg.set_override("noise.modulation={ kind = \"constant\" }").unwrap();
        assert_eq!(cfg.noise.modulation, ScalarModulation::Constant);
        // Unknown fields and malformed specs are rejected.
        assert!(cfg.set_override("solver.dtt=0.1").is_err());
        assert!(cfg.set_override("nonsense").is_err());
        assert!(cfg.set_override("=3").is_err());
        // Type mismatches are rejected.
        assert!(cfg.set_override("run.paths=oops").is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::preset("ns_mixing").unwrap();
        let mut b = RunConfig::preset("ns_mixing").unwrap();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.set_override("run.seed=123456").unwrap();
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
        // The TOML round trip is exact.
        let text = a.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(a.config_hash().unwrap(), back.config_hash().unwrap());
    }

    #[test]
    fn sweep_grid_is_validated_cell_by_cell() {
        let mut cfg = RunConfig::preset("ns_sweep").unwrap();
        assert!(cfg.sweep.is_some());
        cfg.sweep = Some(SweepSection {
            gains: vec![10.0, 1.0e4],
            low_mode_counts: vec![8, 5, 9999],
            window_lens: vec![0.25, 0.1234],
        });
        let msg = format!("{}", cfg.validate().unwrap_err());
        assert!(msg.contains("10000") || msg.contains("1e4") || msg.contains("sweep gain"));
        assert!(msg.contains("9999"));
        assert!(msg.contains("0.1234"));
    }
}
