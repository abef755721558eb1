//! Adaptive isogeometric Poisson solver on (partially) defeatured geometries.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod adaptivity;
pub mod assembly;
pub mod discretization;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod hiermesh;
pub mod linalg;
pub mod presets;
pub mod quadrature;
pub mod splinecore;

pub use error::{Error, Result};
