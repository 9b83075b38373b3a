//! Singularity, cusp and node analysis for planar 3-RPR parallel manipulators
//! in fixed-rho1 slices.
//!
//! The workspace slice lives on the (theta1, alpha) torus, the joint slice in
//! the (rho2, rho3) plane. The crate traces the singular curves, projects them
//! into the joint slice, detects cusps and nodes on the projection, builds the
//! characteristic curves and basic regions of each aspect, and verifies that
//! cusp images are tangency points and node images are crossing points between
//! singular and characteristic curves.

pub mod error;
pub mod math;
pub mod tol;

pub mod model;

pub mod atlas;
pub mod charsurf;
pub mod continuation;
pub mod jointspace;
pub mod kinematics;
pub mod plot;
pub mod singularity;
pub mod verify;

pub use error::{Error, Result};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
