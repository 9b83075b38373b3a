//! Classification and verification of the images of cusps and nodes.
//!
//! Every cusp of the projected singular curve has one image that is a point
//! of tangency between the singular curve and a characteristic curve, and
//! further images that are cusps of characteristic curves. Every node has two
//! images where a characteristic curve crosses the singular curve
//! transversally, and possibly further images where two characteristic curves
//! cross each other. This module computes those image sets by forward
//! kinematics, locates the curve branches passing through each image, and
//! measures the tangency and crossing angles.

use std::f64::consts::TAU;

use crate::charsurf::{CharCurve, CharKind};
use crate::error::{Error, Result};
use crate::jointspace::{CuspPoint, NodePoint};
use crate::kinematics::{FkSolver, SlicePose};
use crate::math::{angle_diff, line_angle, torus_dist, Vec2};
use crate::singularity::{aspect_of, AspectLabel, CurvePair, LevelSet, TracedCurve};
use crate::tol;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ImageClass {
    /// Image of the cusp where the triple solution lives: the singular curve
    /// and a characteristic curve are tangent here.
    TripleTangency,
    /// Other image of a cusp: a characteristic curve has a cusp here.
    CharCusp,
    /// Image of a node on the singular curve: a characteristic curve crosses
    /// the singular curve here.
    SingularCrossing,
    /// Other image of a node: two characteristic curves cross here.
    CharCrossing,
}

/// One image of a cusp or node, with the curve branches meeting there.
#[derive(Clone, Debug)]
pub struct ImagePoint {
    pub pose: SlicePose,
    pub class: ImageClass,
    /// Ids of the curves with a branch through the point (one entry per
    /// branch pass, so an id can repeat).
    pub curves: Vec<String>,
    /// Tangency angle (`TripleTangency`) or crossing angle (`*Crossing`),
    /// in radians. `None` for `CharCusp`.
    pub angle: Option<f64>,
}

/// All images of one cusp or node.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub label: String,
    pub images: Vec<ImagePoint>,
}

/// Point census over the whole slice.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct Census {
    pub cusps: usize,
    pub nodes: usize,
    pub tangency_points: usize,
    pub char_cusps: usize,
    pub singular_crossings: usize,
    pub char_crossings: usize,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub cusp_sets: Vec<ImageSet>,
    pub node_sets: Vec<ImageSet>,
    pub census: Census,
    /// Human-readable check failures; empty when everything verified.
    pub failures: Vec<String>,
}

impl VerificationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// Number of distinct images per cusp, sorted ascending.
    pub fn cusp_image_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cusp_sets.iter().map(|s| s.images.len()).collect();
        v.sort_unstable();
        v
    }

    /// Number of distinct images per node, sorted ascending.
    pub fn node_image_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.node_sets.iter().map(|s| s.images.len()).collect();
        v.sort_unstable();
        v
    }
}

/// One branch of a curve passing near a point.
struct BranchPass {
    tangent: Vec2,
}

/// Distinct image poses of a cusp: the triple pose plus the simple forward
/// kinematics solutions away from it.
pub fn cusp_image_poses(solver: &FkSolver, cusp: &CuspPoint) -> Result<Vec<SlicePose>> {
    let set = solver.solve(cusp.location.x, cusp.location.y)?;
    let mut out = vec![cusp.triple_pose];
    for c in &set.solutions {
        if c.pose.torus_dist(&cusp.triple_pose) > tol::IMAGE_CLUSTER_RADIUS
            && out.iter().all(|p| c.pose.torus_dist(p) > tol::IMAGE_CLUSTER_RADIUS)
        {
            out.push(c.pose);
        }
    }
    Ok(out)
}

/// Distinct image poses of a node: the two double poses plus the simple
/// solutions away from them.
pub fn node_image_poses(solver: &FkSolver, node: &NodePoint) -> Result<Vec<SlicePose>> {
    let set = solver.solve(node.location.x, node.location.y)?;
    let mut out = vec![node.pair_poses.0, node.pair_poses.1];
    for c in &set.solutions {
        if out.iter().all(|p| c.pose.torus_dist(p) > tol::IMAGE_CLUSTER_RADIUS) {
            out.push(c.pose);
        }
    }
    Ok(out)
}

/// Verify the tangency/crossing structure of every cusp and node image and
/// assemble the slice census. `match_tol` is the curve-to-point matching
/// radius in workspace units (use `tol::MATCH_TOL_CELLS` grid cells).
pub fn verify_slice(
    solver: &FkSolver,
    pairs: &[CurvePair],
    cusps: &[CuspPoint],
    nodes: &[NodePoint],
    chars: &[CharCurve],
    grid_n: usize,
) -> Result<VerificationReport> {
    let match_tol = tol::MATCH_TOL_CELLS * TAU / grid_n as f64;
    let level = LevelSet { mech: &solver.mech, rho1: solver.rho1 };
    let mut failures = Vec::new();
    let mut census = Census {
        cusps: cusps.len(),
        nodes: nodes.len(),
        ..Census::default()
    };

    let singular_of = |id: &str| pairs.iter().map(|p| &p.workspace).find(|w| w.id == id);
    let char_of_aspect = |aspect: AspectLabel| {
        chars
            .iter()
            .filter(move |c| c.kind == CharKind::NonsingularImage && c.aspect == aspect)
    };

    let mut cusp_sets = Vec::new();
    for cusp in cusps {
        let mut images = Vec::new();
        for (k, pose) in cusp_image_poses(solver, cusp)?.into_iter().enumerate() {
            let p = Vec2::new(pose.theta1, pose.alpha);
            if k == 0 {
                // Tangency between the singular curve and the characteristic
                // curve(s) ending on the triple pose.
                // The pose lies exactly on the level set, so its tangent is
                // available analytically; the polyline is too curved here for
                // a local fit.
                let ws = singular_of(&cusp.curve_id).expect("source curve");
                let (_, d) = ws.nearest_sample(p);
                if d > match_tol {
                    failures.push(format!("{}: singular curve misses tangency point", cusp.label));
                    continue;
                }
                let st = level.tangent(p.x, p.y);
                let mut curves = vec![ws.id.clone()];
                let mut worst: Option<f64> = None;
                for c in char_of_aspect(cusp.aspect) {
                    for pass in branch_passes(&c.samples, p, match_tol) {
                        let a = line_angle(st, pass.tangent);
                        worst = Some(worst.map_or(a, |w: f64| w.max(a)));
                        curves.push(c.id.clone());
                    }
                }
                match worst {
                    None => failures.push(format!(
                        "{}: no characteristic curve at tangency point",
                        cusp.label
                    )),
                    Some(a) if a > tol::TANGENCY_TOL => failures.push(format!(
                        "{}: tangency angle {:.3} deg exceeds tolerance",
                        cusp.label,
                        a.to_degrees()
                    )),
                    _ => {}
                }
                census.tangency_points += 1;
                images.push(ImagePoint {
                    pose,
                    class: ImageClass::TripleTangency,
                    curves,
                    angle: worst,
                });
            } else {
                // A characteristic curve has a cusp here; this image can live
                // in either aspect.
                let aspect = aspect_of(&solver.mech, &pose)?;
                let curves: Vec<String> = char_of_aspect(aspect)
                    .filter(|c| !branch_passes(&c.samples, p, match_tol).is_empty())
                    .map(|c| c.id.clone())
                    .collect();
                if curves.is_empty() {
                    failures.push(format!(
                        "{}: no characteristic curve at cusp image ({:.3},{:.3})",
                        cusp.label, p.x, p.y
                    ));
                }
                census.char_cusps += 1;
                images.push(ImagePoint {
                    pose,
                    class: ImageClass::CharCusp,
                    curves,
                    angle: None,
                });
            }
        }
        cusp_sets.push(ImageSet { label: cusp.label.clone(), images });
    }

    let mut node_sets = Vec::new();
    for node in nodes {
        let mut images = Vec::new();
        for (k, pose) in node_image_poses(solver, node)?.into_iter().enumerate() {
            let p = Vec2::new(pose.theta1, pose.alpha);
            if k < 2 {
                // The double pose lies on the singular curve; a characteristic
                // curve crosses it here.
                let sid = if k == 0 { &node.curves.0 } else { &node.curves.1 };
                let ws = singular_of(sid).expect("source curve");
                let (_, d) = ws.nearest_sample(p);
                if d > match_tol {
                    failures.push(format!("{}: singular curve misses double pose", node.label));
                    continue;
                }
                // In the workspace the crossing curve's tangent here is the
                // kernel direction of the fold, which can come arbitrarily
                // close to the singular-curve tangent (it coincides exactly
                // at cusps). The robust crossing angle is the one between the
                // two image branches in the joint slice: the node angle.
                let mut curves = vec![ws.id.clone()];
                let mut found = 0usize;
                for aspect in [AspectLabel::Wa1, AspectLabel::Wa2] {
                    for c in char_of_aspect(aspect) {
                        if !branch_passes(&c.samples, p, match_tol).is_empty() {
                            curves.push(c.id.clone());
                            found += 1;
                        }
                    }
                }
                if found == 0 {
                    failures.push(format!(
                        "{}: no characteristic curve at double pose",
                        node.label
                    ));
                } else if node.angle < tol::TRANSVERSAL_MIN {
                    failures.push(format!(
                        "{}: singular crossing angle {:.3} deg below minimum",
                        node.label,
                        node.angle.to_degrees()
                    ));
                }
                census.singular_crossings += 1;
                images.push(ImagePoint {
                    pose,
                    class: ImageClass::SingularCrossing,
                    curves,
                    angle: Some(node.angle),
                });
            } else {
                // Two characteristic curves of one aspect cross here.
                let aspect = aspect_of(&solver.mech, &pose)?;
                let mut curves = Vec::new();
                let mut passes = Vec::new();
                for c in char_of_aspect(aspect) {
                    for pass in branch_passes(&c.samples, p, match_tol) {
                        curves.push(c.id.clone());
                        passes.push(pass);
                    }
                }
                let mut angle: Option<f64> = None;
                for i in 0..passes.len() {
                    for j in i + 1..passes.len() {
                        let a = line_angle(passes[i].tangent, passes[j].tangent);
                        angle = Some(angle.map_or(a, |w: f64| w.max(a)));
                    }
                }
                if passes.len() < 2 {
                    failures.push(format!(
                        "{}: {} characteristic branch(es) at crossing image ({:.3},{:.3})",
                        node.label,
                        passes.len(),
                        p.x,
                        p.y
                    ));
                } else if angle.unwrap_or(0.0) < tol::TRANSVERSAL_MIN {
                    failures.push(format!(
                        "{}: characteristic crossing angle {:.3} deg below minimum",
                        node.label,
                        angle.unwrap_or(0.0).to_degrees()
                    ));
                }
                census.char_crossings += 1;
                images.push(ImagePoint {
                    pose,
                    class: ImageClass::CharCrossing,
                    curves,
                    angle,
                });
            }
        }
        node_sets.push(ImageSet { label: node.label.clone(), images });
    }

    Ok(VerificationReport { cusp_sets, node_sets, census, failures })
}

/// Angle between two curves at a shared point, with the pass/fail verdict
/// against `tol`. Both curves must pass within `radius` of the point; the
/// angle is the worst (largest) one over all branch pairs, unoriented in
/// [0, pi/2].
pub fn check_tangency(
    a: &TracedCurve,
    b: &TracedCurve,
    point: Vec2,
    radius: f64,
    tol: f64,
) -> Result<(f64, bool)> {
    let pa = branch_passes(a, point, radius);
    let pb = branch_passes(b, point, radius);
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::MissingCurve { x: point.x, y: point.y });
    }
    let mut worst = 0.0f64;
    for i in &pa {
        for j in &pb {
            worst = worst.max(line_angle(i.tangent, j.tangent));
        }
    }
    Ok((worst, worst < tol))
}

/// All branches of a polyline passing within `radius` of `p`, each with a
/// locally fitted tangent.
fn branch_passes(curve: &TracedCurve, p: Vec2, radius: f64) -> Vec<BranchPass> {
    let n = curve.len();
    let mut near: Vec<usize> = (0..n)
        .filter(|&i| {
            let s = curve.sample(i).point;
            torus_dist((s.x, s.y), (p.x, p.y)) <= radius
        })
        .collect();
    if near.is_empty() {
        return Vec::new();
    }
    // Group contiguous index runs; each run is one branch pass.
    near.sort_unstable();
    let mut groups: Vec<Vec<usize>> = vec![vec![near[0]]];
    for &i in &near[1..] {
        if i - *groups.last().unwrap().last().unwrap() <= 5 {
            groups.last_mut().unwrap().push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    // On a closed curve the first and last runs may be one pass over the seam.
    if curve.closed && groups.len() > 1 {
        let first = groups.first().unwrap();
        let last = groups.last().unwrap();
        if first[0] + (n - 1 - *last.last().unwrap()) <= 5 {
            let last = groups.pop().unwrap();
            groups[0].splice(0..0, last);
        }
    }
    groups
        .into_iter()
        .filter_map(|g| {
            let center = *g
                .iter()
                .min_by(|&&a, &&b| {
                    let pa = curve.sample(a).point;
                    let pb = curve.sample(b).point;
                    torus_dist((pa.x, pa.y), (p.x, p.y))
                        .total_cmp(&torus_dist((pb.x, pb.y), (p.x, p.y)))
                })
                .unwrap();
            fit_tangent(curve, center, p)
        })
        .collect()
}

/// Tangent of the curve at its closest approach to `p`, from a local least
/// squares quadratic fit around sample `center` in chordal parameterization.
fn fit_tangent(curve: &TracedCurve, center: usize, p: Vec2) -> Option<BranchPass> {
    let n = curve.len();
    let half = 2i64;
    if n < 4 {
        return None;
    }
    let mut idxs = Vec::new();
    if curve.closed {
        for d in -half..=half {
            let i = center as i64 + d;
            idxs.push(i.rem_euclid(curve.seg_count() as i64) as usize);
        }
        idxs.dedup();
    } else {
        // Near an end, keep the window size by shifting it inward.
        let lo = (center as i64 - half).clamp(0, (n as i64 - 2 * half - 1).max(0)) as usize;
        idxs.extend(lo..(lo + 2 * half as usize + 1).min(n));
    }
    // Unwrap the window onto the plane around p.
    let pts: Vec<Vec2> = idxs
        .iter()
        .map(|&i| {
            let s = curve.sample(i).point;
            Vec2::new(p.x + angle_diff(s.x, p.x), p.y + angle_diff(s.y, p.y))
        })
        .collect();
    let mut t = vec![0.0; pts.len()];
    for k in 1..pts.len() {
        t[k] = t[k - 1] + pts[k].dist(pts[k - 1]);
    }
    // Parameter of the closest approach, from the polyline projection.
    let mut t0 = 0.0;
    let mut dist = f64::INFINITY;
    for k in 0..pts.len() - 1 {
        let ab = pts[k + 1] - pts[k];
        let f = ((p - pts[k]).dot(ab) / ab.norm_sq().max(1e-300)).clamp(0.0, 1.0);
        let d = p.dist(pts[k] + ab * f);
        if d < dist {
            dist = d;
            t0 = t[k] + ab.norm() * f;
        }
    }
    if dist > 2.0 * (t[pts.len() - 1] - t[0]) {
        return None;
    }
    // Quadratic least squares in (t - t0) for each coordinate.
    let mut m = [[0.0f64; 3]; 3];
    let mut bx = [0.0f64; 3];
    let mut by = [0.0f64; 3];
    for k in 0..pts.len() {
        let u = t[k] - t0;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            bx[i] += basis[i] * pts[k].x;
            by[i] += basis[i] * pts[k].y;
        }
    }
    let cx = solve3(m, bx)?;
    let cy = solve3(m, by)?;
    let tangent = Vec2::new(cx[1], cy[1]);
    if tangent.norm() < 1e-12 {
        return None;
    }
    Some(BranchPass { tangent: tangent.normalize() })
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut s = b[col];
        for k in col + 1..3 {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::charsurf::characteristic_curves;
    use crate::jointspace::{detect_cusps, detect_nodes};
    use crate::kinematics::{FkOptions, Mechanism};
    use crate::model::{EdgeAssignment, ManipulatorGeometry};
    use crate::singularity::{singular_curve_pairs, CurveDomain, CurveSample};

    fn line(id: &str, from: Vec2, to: Vec2, n: usize) -> TracedCurve {
        let samples = (0..n)
            .map(|k| {
                let f = k as f64 / (n - 1) as f64;
                CurveSample {
                    point: from + (to - from) * f,
                    tangent: (to - from).normalize(),
                }
            })
            .collect();
        TracedCurve { domain: CurveDomain::WorkspaceSlice, samples, closed: false, id: id.into() }
    }

    #[test]
    fn identical_curves_are_tangent() {
        let a = line("a", Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0), 9);
        let (angle, pass) = check_tangency(&a, &a, Vec2::new(1.5, 1.5), 0.1, 0.01).unwrap();
        assert!(angle < 1e-9, "angle {angle}");
        assert!(pass);
    }

    #[test]
    fn orthogonal_lines_fail_tangency() {
        let a = line("a", Vec2::new(1.0, 1.5), Vec2::new(2.0, 1.5), 9);
        let b = line("b", Vec2::new(1.5, 1.0), Vec2::new(1.5, 2.0), 9);
        let (angle, pass) = check_tangency(&a, &b, Vec2::new(1.5, 1.5), 0.1, 0.01).unwrap();
        assert!((angle - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "angle {angle}");
        assert!(!pass);
    }

    #[test]
    fn missing_curve_is_an_error() {
        let a = line("a", Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0), 9);
        let b = line("b", Vec2::new(4.0, 4.0), Vec2::new(5.0, 4.0), 9);
        let err = check_tangency(&a, &b, Vec2::new(1.5, 1.5), 0.1, 0.01).unwrap_err();
        assert!(matches!(err, Error::MissingCurve { .. }));
    }

    fn report() -> &'static VerificationReport {
        static REP: OnceLock<VerificationReport> = OnceLock::new();
        REP.get_or_init(|| {
            let geom = ManipulatorGeometry::new(
                Vec2::new(0.0, 0.0),
                Vec2::new(15.91, 0.0),
                Vec2::new(0.0, 10.0),
                17.04,
                16.54,
                20.84,
                EdgeAssignment::default(),
            )
            .unwrap();
            let mech = Mechanism::new(geom);
            let grid = 256;
            let (pairs, _) = singular_curve_pairs(&mech, 17.0, grid).unwrap();
            let solver = FkSolver::new(mech, 17.0, FkOptions::default());
            let (cusps, _) = detect_cusps(&solver, &pairs).unwrap();
            let (nodes, _) = detect_nodes(&solver, &pairs, &cusps).unwrap();
            let mut chars = Vec::new();
            for aspect in [AspectLabel::Wa1, AspectLabel::Wa2] {
                let (cs, _) =
                    characteristic_curves(&solver, &pairs, aspect, &cusps, &nodes).unwrap();
                chars.extend(cs);
            }
            verify_slice(&solver, &pairs, &cusps, &nodes, &chars, grid).unwrap()
        })
    }

    #[test]
    fn reference_slice_census() {
        let rep = report();
        assert!(rep.ok(), "failures: {:?}", rep.failures);
        let c = rep.census;
        assert_eq!(
            (c.cusps, c.nodes, c.tangency_points, c.char_cusps, c.singular_crossings, c.char_crossings),
            (6, 6, 6, 8, 12, 6)
        );
        assert_eq!(rep.cusp_image_counts(), vec![2, 2, 2, 2, 2, 4]);
        assert_eq!(rep.node_image_counts(), vec![2, 2, 2, 4, 4, 4]);
    }

    #[test]
    fn tangency_and_crossing_angles_are_separated() {
        let rep = report();
        for set in &rep.cusp_sets {
            for img in &set.images {
                if img.class == ImageClass::TripleTangency {
                    let a = img.angle.expect("tangency angle");
                    assert!(a < tol::TANGENCY_TOL, "{}: {:.3} deg", set.label, a.to_degrees());
                }
            }
        }
        for set in &rep.node_sets {
            for img in &set.images {
                if matches!(img.class, ImageClass::SingularCrossing | ImageClass::CharCrossing) {
                    let a = img.angle.expect("crossing angle");
                    assert!(a > tol::TRANSVERSAL_MIN, "{}: {:.3} deg", set.label, a.to_degrees());
                }
            }
        }
    }

    #[test]
    fn singular_crossings_mix_both_aspects() {
        // At the reduced fixture grid one very short characteristic fragment
        // can stay untraced; at the default resolution every crossing carries
        // curves from both aspects (checked by the acceptance suite).
        let rep = report();
        let mut crossings = 0;
        let mut mixed = 0;
        for set in &rep.node_sets {
            for img in &set.images {
                if img.class == ImageClass::SingularCrossing {
                    crossings += 1;
                    let wa1 = img.curves.iter().any(|c| c.starts_with("Sc1-"));
                    let wa2 = img.curves.iter().any(|c| c.starts_with("Sc2-"));
                    if wa1 && wa2 {
                        mixed += 1;
                    }
                }
            }
        }
        assert_eq!(crossings, 12);
        assert!(mixed >= 10, "only {mixed}/12 crossings carry both aspects");
    }
}
