//! Material-point laboratory for elasto-plastic sand surrogates.
//!
//! The crate provides a ground-truth WG constitutive model with implicit
//! stress integration, a synthetic data generator, a small dense neural
//! network engine, three surrogate architectures (parallel, serial and the
//! physics-informed EPNN), training and evaluation routines, and a recall
//! mode simulator that drives trained models along strain paths.

pub mod arch;
pub mod datagen;
pub mod error;
pub mod mech;
pub mod nn;
pub mod plot;
pub mod recall;
pub mod train;
pub mod wg;

pub use error::{Error, Result};
pub use mech::{stress_invariants, strain_invariants, void_ratio_increment, PrincipalVec3, StrainInvariants, StressInvariants};
pub use wg::{integrate_step, IntegratorTolerances, MaterialState, StepResult, WgParams};
