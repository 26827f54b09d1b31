//! Explicit, norm-certified ReLU network constructions.
//!
//! The crate compiles smooth function oracles and compositional (DAG)
//! function descriptions into explicit ReLU networks, tracks the
//! multiplicative Frobenius measure κ of every construction, and verifies
//! approximation and norm bounds empirically.

pub mod dag_compiler;
pub mod error;
pub mod holder_compiler;
pub mod net_algebra;
pub mod net_ir;
pub mod par;
pub mod primitives;
pub mod stats_lab;
pub mod verify;

pub use error::{Error, Result};
