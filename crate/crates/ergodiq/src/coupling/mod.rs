//! Coupling machinery: exact maximal couplers for discrete and Gaussian
//! laws, the per-window triplet construction, the window-indexed ladder
//! bookkeeping, and the ensemble mixing experiment built from them.

mod discrete;
mod experiment;
mod gaussian;
mod ladder;
mod window;

pub use experiment::{mixing_experiment, MixingConfig, MixingReport};

pub use discrete::{
    density_moment, maximal_coupling_discrete, overlap_mass, tv_distance, DiscreteMeasure,
};
pub use gaussian::{gaussian_meet_probability, maximal_coupling_gaussian_step, reflect_couple_given};
pub use ladder::{CouplingLedger, LadderTimes, WindowRecord};
pub use window::{triplet_window, ScriptedStep, WindowDrive, WindowOutcome, WindowParams};
