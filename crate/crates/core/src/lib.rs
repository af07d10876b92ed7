//! Coronary artery digital twins as data: synthesis, graphs, physics, learning.
//!
//! The crate is organized as a pipeline:
//!
//! * [`geometry`] — centerlines, orthonormal frames, cross-sections, and the
//!   assembled [`geometry::DigitalTwin`].
//! * [`augment`] — anatomy-aware recombination of donor centerlines and radius
//!   profiles into synthetic twins.
//! * [`graph`] — conversion of a twin into the boundary-point vascular graph.
//! * [`hemo`] — reduced-order 1D hemodynamics: pressure-drop laws, pressure
//!   profiles, and FFR curves.
//! * [`loss`] — physics-consistency losses (momentum residual, global and
//!   windowed pressure-drop terms) with analytic gradients.
//! * [`nn`] — a hierarchical graph encoder with Top-K pooling and centerline
//!   aggregation, trained by plain gradient descent on the physics losses.
//! * [`metrics`] — ROC/PR/decision-curve evaluation of binary classifiers.
//! * [`io`] — versioned twin files, graph export, PLY point clouds.

pub mod augment;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod hemo;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};

/// 1 mmHg in dyne/cm² (CGS pressure unit used throughout).
pub const MMHG: f64 = 1333.22;
