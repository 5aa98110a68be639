//! Sub-Riemannian geometry of non-horizontal submanifolds in Carnot groups.
//!
//! The crate is `no_std` (it needs `alloc`). Points of a group are carried in
//! exponential coordinates, algebra elements as coefficient vectors in the
//! graded basis `e_1..e_n`, and all indices in the public API are 0-based.
//!
//! - [`algebra`]: structure constants, validation, metric extension.
//! - [`heisenberg`]: group law, geodesics, CC distance, metric factor.
//! - [`frames`]: adapted frames, connection forms, `H`, `σ`, μ-density.
//! - [`variation`]: μ-measure, first variation, minimality residuals.
//! - [`surfaces`]: explicit constructions in the Heisenberg groups.
#![no_std]
// `!(a <= b)` guards are deliberate: they also reject NaN.
#![allow(clippy::needless_range_loop, clippy::many_single_char_names, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod algebra;
mod error;
pub mod frames;
pub mod heisenberg;
mod linalg;
pub mod quadrature;
pub mod surfaces;
pub mod variation;

pub use algebra::{AlgebraVector, HigherMetric, StratifiedAlgebra, ValidationReport, Violation, ViolationKind};
pub use error::{Error, Result};
pub use frames::{AdaptedFrame, FrameField, FrameOptions, Gauge, Immersion, MuDensity, ShapeData, StructuralResiduals};
pub use heisenberg::{GeodesicState, HPoint};
pub use quadrature::QuadratureGrid;
pub use variation::VariationFamily;

pub use nalgebra::{DMatrix, DVector};
