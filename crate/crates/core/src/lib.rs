//! Throw-and-recover flight stack for quadrotors with unknown parameters:
//! rigid-body simulator, identification by recursive least squares, INDI
//! control with pole-placement tuning, and a Monte-Carlo harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod excitation;
pub mod filters;
pub mod harness;
pub mod ident;
pub mod indi;
pub mod outer;
pub mod rls;
pub mod sim;

pub use error::{ControlError, FilterError, HarnessError, IdentError, RlsError, SimError};
