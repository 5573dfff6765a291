//! Superstar-firm spillover pipeline.
//!
//! Firm-year panel handling and a heterogeneous-firm model with spillovers.
//! On top of those sit proxy-variable production functions, spillover
//! measures, shift-share instruments, fixed-effects 2SLS and productivity
//! decompositions.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bartik;
pub mod decomposition;
pub mod econometrics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod spillovers;
pub mod tfp;

pub use error::{Error, Result};
