//! Numerical core for state-dependent seismic fragility analysis.
//!
//! The crate covers the full chain from stochastic input to fragility
//! estimates:
//!
//! * [`gm`] — site-based stochastic ground-motion model (modulated,
//!   filtered white noise) and random seismic-sequence assembly,
//! * [`structure`] — nonlinear time-history integration of a shear-type
//!   MDoF system with Bouc-Wen hysteresis, carrying damage across a
//!   sequence of events,
//! * [`im`] — the 41-component intensity-measure vector, marginal
//!   distribution fits and the IM correlation map,
//! * [`pca`] — correlation-matrix PCA producing low-dimensional pseudo-IM
//!   inputs,
//! * [`pce`] — sparse polynomial chaos expansion surrogates (subspace
//!   pursuit solver, bootstrap replication, error estimators),
//! * [`fragility`] — transition clustering, IM efficiency ranking,
//!   nonparametric state-dependent fragility curves and KS/KL validation
//!   metrics.
//!
//! All randomness flows through explicit seeds (see [`seeds`]); identical
//! seeds and configuration reproduce identical outputs bit-for-bit.

pub mod error;
pub mod fragility;
pub mod gm;
pub mod im;
pub mod pca;
pub mod pce;
pub mod seeds;
pub mod stats;
pub mod structure;

pub use error::{Error, Result};
