//! Spectral-Galerkin machinery for exponential mixing of dissipative SPDEs
//! with state-dependent (multiplicative) noise.
//!
//! The crate simulates two truncated SPDEs — the 2-D Navier–Stokes vorticity
//! equation on the torus and the complex Ginzburg–Landau equation on an
//! interval — driven by noise that covers the low frequencies, and provides
//! the probabilistic machinery used to verify exponential mixing for them:
//!
//! * an auxiliary process bound to the target trajectory by a low-mode
//!   drift, with the Girsanov log-density of that drift tracked exactly and
//!   stopped before a fixed information budget is exceeded
//!   ([`girsanov`], [`dynamics`]);
//! * step-level maximal couplings of the driving increments so the shifted
//!   and unshifted drivers agree with the largest possible probability
//!   ([`coupling`]);
//! * window/ladder bookkeeping that turns per-window coupling successes
//!   into a mixing-rate estimate, plus diagnostic statistics (Lyapunov
//!   drift, decay-rate fits, distributional distances) ([`coupling`],
//!   [`diagnostics`]).
//!
//! Numerical experiments are configured with TOML presets and exposed
//! through the `ergodiq` CLI.

pub mod config;
pub mod coupling;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod girsanov;
pub mod noise;
pub mod rng;
pub mod selftest;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
