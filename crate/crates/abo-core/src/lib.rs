//! Asynchronous Bayesian optimization for mixed integer/real/categorical
//! parameter spaces, with transfer learning from previous search histories.
//!
//! The crate is organized around a small number of building blocks:
//!
//! * [`space`] — parameter spaces, configurations, and their unit-cube encoding
//! * [`surrogate`] — random-forest, Gaussian-process, and random surrogate models
//! * [`acquisition`] — LCB ranking and constant-liar batch generation (ask/tell)
//! * [`transfer`] — informative prior samplers (top-quantile TVAE, Gaussian)
//! * [`workloads`] — synthetic and replay evaluation targets
//! * [`executor`] — the asynchronous manager/worker search driver
//! * [`metrics`] — best-trace, speedup, and improvement-factor reports

pub mod acquisition;
pub mod executor;
pub mod metrics;
pub mod space;
pub mod surrogate;
pub mod transfer;
pub mod workloads;

pub use space::{Configuration, EncodedVector, ParamValue, Parameter, ParameterSpace};
