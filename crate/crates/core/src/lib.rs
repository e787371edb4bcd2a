//! Pore-scale reactive transport in a channel with half-disk obstacles and
//! identification of adsorption/desorption rates from breakthrough curves.
//!
//! The pipeline is: [`geometry`] and [`mesh`] build a tagged triangulation,
//! [`stokes`] computes a Taylor–Hood velocity field, [`transport`] integrates
//! the concentration with surface kinetics and records breakthrough curves,
//! and [`identification`] evaluates residuals over parameter space.

pub mod contour;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod identification;
pub mod fem;
pub mod mesh;
pub mod par;
pub mod sobol;
pub mod sparse;
pub mod stokes;
pub mod transport;

pub use error::{Error, Result};
