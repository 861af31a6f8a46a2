//! Two-dimensional Finsler geometry toolkit built around one construction:
//! take a metric patch on a disc, encode it as a family of signed-distance
//! functions (an enveloping function), taper the family into a flat reference
//! far from the patch, and wrap the result onto a torus whose geodesic flow
//! has no conjugate points.
//!
//! The crate is organized bottom-up:
//!
//! * [`norms`] - Minkowski norms on the plane, their duals, and convexity checks
//! * [`geodesics`] - norm fields, the geodesic spray, shooting and boundary-value distances
//! * [`envelope`] - enveloping functions: construction, checks, and metric recovery
//! * [`glue`] - bump tapering, flat extension, periodization, and the full pipeline
//! * [`verify`] - conjugate-point scans, calibration and isometry sweeps
//! * [`cli`] - the `finsler` command-line front end

pub mod cli;
pub mod envelope;
pub mod error;
pub mod expr;
pub mod geodesics;
pub mod geom;
pub mod glue;
pub mod interp;
pub mod norms;
pub mod rng;
pub mod specs;
pub mod verify;

pub use error::{FinslerError, Result};
pub use geom::{Covector, Mat2, Vec2};
