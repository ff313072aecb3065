//! Optimal transport on the line through a toll point with bounded flux.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constraint;
pub mod density;
pub mod error;
pub mod flow;
pub mod oracle;
pub mod planner;
pub mod quadrature;
pub mod radial;
pub mod saturation;
pub mod unconstrained;

pub use density::{build_density, Density1D, DensitySpec};
pub use error::{Error, Result};
pub use unconstrained::{optimal_map, prolong_map, wasserstein2_sq, TransportMap};
