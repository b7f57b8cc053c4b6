//! Core library for plant simulation, actuator fingerprinting, attack
//! detection and command watermarking.
//!
//! The crate is organised around a data path that mirrors a water-treatment
//! testbed deployment:
//!
//! ```text
//! plantsim ──> timeseries (historian CSV) ──> fingerprint ──> classify
//!     │                                          │
//!     │                                          └──> detect (CUSUM)
//!     └──> watermark (command delays, replay checks, randomness audits)
//!
//! lti / sysid: state-space models, estimator gains and data-driven
//! identification used by the residual-based watermark verifier.
//! ```
//!
//! Every stochastic routine takes an explicit RNG or seed; two runs with the
//! same seed produce bit-identical outputs.

pub mod classify;
pub mod detect;
pub mod fingerprint;
pub mod lti;
pub mod plantsim;
pub mod rng;
pub mod sysid;
pub mod timeseries;
pub mod watermark;
