//! Elastostatic (Lamé) layer potentials, periodic boundary-integral cell solves
//! and finite-difference homogenization checks in perforated planar domains.

pub mod bie;
pub mod cell;
pub mod error;
pub mod geometry;
pub mod homogenize;
pub mod kernels;
pub mod rates;
pub mod special;
pub mod studies;

pub use error::{Error, Result};
pub use geometry::{Curve, CurveKind, LameParams, Panelization, PerforationSpec};
