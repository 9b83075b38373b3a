//! Central numeric tolerances.
//!
//! The three tiers are deliberately separated by at least two orders of
//! magnitude: Newton convergence (1e-12), solution dedup (1e-6) and
//! singularity thresholding (1e-8 on the normalized determinant).

/// Newton step-norm convergence threshold (radians on the torus).
pub const NEWTON_TOL: f64 = 1e-12;

/// Maximum Newton iterations for the forward-kinematics corrector.
pub const NEWTON_MAX_ITER: usize = 50;

/// Torus-metric distance below which two forward-kinematics solutions are
/// considered the same root.
pub const DEDUPE_TOL: f64 = 1e-6;

/// Threshold on the leg-line determinant below which a configuration is
/// classified as singular.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Normalized joint-space image speed below which a point on the projected
/// singular curve qualifies as a cusp.
pub const CUSP_TOL: f64 = 1e-6;

/// Arc length (joint-space units) around a cusp excluded from node detection.
pub const CUSP_EXCLUSION: f64 = 1e-3;

/// Minimum crossing angle for a node to count as transversal (1 degree).
pub const NODE_ANGLE_MIN: f64 = 1.0 * std::f64::consts::PI / 180.0;

/// Maximum angle between singular and characteristic tangents at a cusp image
/// for the tangency check to pass (2 degrees).
pub const TANGENCY_TOL: f64 = 2.0 * std::f64::consts::PI / 180.0;

/// Minimum crossing angle at a node image (5 degrees).
pub const TRANSVERSAL_MIN: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Curve-to-point matching radius, in grid cells.
pub const MATCH_TOL_CELLS: f64 = 2.0;

/// Residual bound for samples of traced singular curves.
pub const LEVELSET_RESIDUAL: f64 = 1e-9;

/// Torus radius around the singular double solution that is discarded when
/// collecting characteristic-curve preimages.
pub const SINGULAR_DISCARD: f64 = 0.02;

/// Radius used to cluster forward-kinematics solutions into distinct images
/// at cusp and node locations.
pub const IMAGE_CLUSTER_RADIUS: f64 = 0.1;

/// Joint-space nudge applied to split coalescing roots before clustering.
pub const IMAGE_NUDGE: f64 = 1e-5;

/// Two continuation branches closer than this are treated as coalesced.
pub const COALESCE_JOIN: f64 = 1e-5;
