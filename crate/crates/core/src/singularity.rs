//! Singularity condition, aspects, and tracing of the singular curves on the
//! (theta1, alpha) torus.
//!
//! A configuration is singular when the three leg lines are concurrent or all
//! parallel. That condition is the vanishing of the determinant of the three
//! normalized homogeneous line coordinates, which is what `singular_value`
//! returns; its sign partitions the slice into the two aspects.

use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::kinematics::{Mechanism, SlicePose};
use crate::math::{angle_diff, wrap_angle, Vec2};
use crate::tol;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AspectLabel {
    Wa1,
    Wa2,
    Singular,
}

impl std::fmt::Display for AspectLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AspectLabel::Wa1 => write!(f, "WA1"),
            AspectLabel::Wa2 => write!(f, "WA2"),
            AspectLabel::Singular => write!(f, "SINGULAR"),
        }
    }
}

/// Threshold the determinant sign into an aspect label.
pub fn aspect_label(det: f64) -> AspectLabel {
    if det.abs() < tol::SINGULAR_TOL {
        AspectLabel::Singular
    } else if det > 0.0 {
        AspectLabel::Wa1
    } else {
        AspectLabel::Wa2
    }
}

/// Determinant of the normalized leg-line coordinates at a pose.
///
/// Row i holds (u, v, w) of the line through A_i and B_i with u^2 + v^2 = 1;
/// the determinant vanishes exactly when the three lines are concurrent or
/// all parallel. Row normalization makes the value invariant under leg
/// lengthening, so its sign is continuous on each aspect.
pub fn singular_value(mech: &Mechanism, pose: &SlicePose) -> Result<f64> {
    let (b1, b2, b3) = mech.platform_points(pose);
    let anchors = [mech.geometry.a1, mech.geometry.a2, mech.geometry.a3];
    let tips = [b1, b2, b3];
    let mut rows = [[0.0f64; 3]; 3];
    for i in 0..3 {
        let d = tips[i] - anchors[i];
        let n = d.norm();
        if n < 1e-12 {
            return Err(Error::ZeroLengthLeg { leg: i + 1 });
        }
        let e = d / n;
        // Normal (u, v) and offset w of the line u*x + v*y + w = 0.
        rows[i] = [-e.y, e.x, e.y * anchors[i].x - e.x * anchors[i].y];
    }
    let det = rows[0][0] * (rows[1][1] * rows[2][2] - rows[1][2] * rows[2][1])
        - rows[0][1] * (rows[1][0] * rows[2][2] - rows[1][2] * rows[2][0])
        + rows[0][2] * (rows[1][0] * rows[2][1] - rows[1][1] * rows[2][0]);
    Ok(det)
}

/// Aspect of a pose.
pub fn aspect_of(mech: &Mechanism, pose: &SlicePose) -> Result<AspectLabel> {
    Ok(aspect_label(singular_value(mech, pose)?))
}

/// The singular level set of one slice, with gradient and projection helpers.
pub struct LevelSet<'a> {
    pub mech: &'a Mechanism,
    pub rho1: f64,
}

impl<'a> LevelSet<'a> {
    pub fn new(mech: &'a Mechanism, rho1: f64) -> Self {
        LevelSet { mech, rho1 }
    }

    pub fn pose(&self, theta1: f64, alpha: f64) -> SlicePose {
        SlicePose::new(theta1, alpha, self.rho1)
    }

    pub fn value(&self, theta1: f64, alpha: f64) -> f64 {
        singular_value(self.mech, &self.pose(theta1, alpha)).unwrap_or(f64::NAN)
    }

    /// Central-difference gradient of the determinant.
    pub fn grad(&self, theta1: f64, alpha: f64) -> Vec2 {
        let h = 1e-5;
        Vec2::new(
            (self.value(theta1 + h, alpha) - self.value(theta1 - h, alpha)) / (2.0 * h),
            (self.value(theta1, alpha + h) - self.value(theta1, alpha - h)) / (2.0 * h),
        )
    }

    /// Project a point onto the zero set along the gradient direction.
    pub fn project(&self, theta1: f64, alpha: f64) -> SlicePose {
        let mut t = theta1;
        let mut a = alpha;
        for _ in 0..60 {
            let s = self.value(t, a);
            if s.abs() < 1e-13 {
                break;
            }
            let g = self.grad(t, a);
            let g2 = g.norm_sq();
            if g2 < 1e-20 {
                break;
            }
            t -= s * g.x / g2;
            a -= s * g.y / g2;
        }
        self.pose(t, a)
    }

    /// Unit tangent of the level set (rotated gradient; orientation arbitrary).
    pub fn tangent(&self, theta1: f64, alpha: f64) -> Vec2 {
        self.grad(theta1, alpha).rot90().normalize()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CurveDomain {
    WorkspaceSlice,
    JointSlice,
}

#[derive(Clone, Copy, Debug)]
pub struct CurveSample {
    pub point: Vec2,
    pub tangent: Vec2,
}

/// Ordered polyline with tangents, in either the workspace or joint slice.
#[derive(Clone, Debug)]
pub struct TracedCurve {
    pub domain: CurveDomain,
    pub samples: Vec<CurveSample>,
    pub closed: bool,
    pub id: String,
}

impl TracedCurve {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of polyline segments (wraps around for closed curves).
    pub fn seg_count(&self) -> usize {
        if self.closed {
            self.samples.len()
        } else {
            self.samples.len().saturating_sub(1)
        }
    }

    pub fn sample(&self, i: usize) -> &CurveSample {
        &self.samples[i % self.samples.len()]
    }

    /// Linear interpolation at arc parameter `s` in segment-index units.
    /// Workspace curves interpolate on the torus.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.seg_count() as f64;
        let s = if self.closed { s.rem_euclid(n) } else { s.clamp(0.0, n) };
        let i = (s.floor() as usize).min(self.seg_count() - 1);
        let f = s - i as f64;
        let p0 = self.sample(i).point;
        let p1 = self.sample(i + 1).point;
        match self.domain {
            CurveDomain::WorkspaceSlice => {
                let d = Vec2::new(angle_diff(p1.x, p0.x), angle_diff(p1.y, p0.y));
                Vec2::new(wrap_angle(p0.x + d.x * f), wrap_angle(p0.y + d.y * f))
            }
            CurveDomain::JointSlice => p0 + (p1 - p0) * f,
        }
    }

    /// Total polyline length (torus-aware for workspace curves).
    pub fn arc_length(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.seg_count() {
            total += self.seg_length(i);
        }
        total
    }

    pub fn seg_length(&self, i: usize) -> f64 {
        let p0 = self.sample(i).point;
        let p1 = self.sample(i + 1).point;
        match self.domain {
            CurveDomain::WorkspaceSlice => {
                angle_diff(p1.x, p0.x).hypot(angle_diff(p1.y, p0.y))
            }
            CurveDomain::JointSlice => p0.dist(p1),
        }
    }

    /// Distance from a point to the nearest sample.
    pub fn nearest_sample(&self, p: Vec2) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, s) in self.samples.iter().enumerate() {
            let d = match self.domain {
                CurveDomain::WorkspaceSlice => crate::math::torus_dist((p.x, p.y), (s.point.x, s.point.y)),
                CurveDomain::JointSlice => p.dist(s.point),
            };
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// A workspace singular curve together with its joint-space image, sample for
/// sample (sample i of `image` is the image of sample i of `workspace`).
#[derive(Clone, Debug)]
pub struct CurvePair {
    pub workspace: TracedCurve,
    pub image: TracedCurve,
}

/// Output of the slice tracer.
pub struct TraceResult {
    pub curves: Vec<TracedCurve>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
struct EdgeKey {
    /// 0 = theta-direction edge, 1 = alpha-direction edge.
    kind: u8,
    i: usize,
    j: usize,
}

/// Trace the zero set of the singular determinant on the torus with marching
/// squares at `grid_n` cells per axis, refining every crossing onto the zero
/// set by bisection along the grid edge.
pub fn trace_singular_curves(mech: &Mechanism, rho1: f64, grid_n: usize) -> Result<TraceResult> {
    let level = LevelSet::new(mech, rho1);
    let n = grid_n;
    let h = TAU / n as f64;
    let mut values = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = level.value(i as f64 * h, j as f64 * h);
            if !v.is_finite() {
                return Err(Error::numerical("trace_singular_curves", "determinant undefined on grid (zero-length leg)"));
            }
            if v == 0.0 {
                v = 1e-300; // break exact-zero corner ties toward positive
            }
            values[i * n + j] = v;
        }
    }
    let val = |i: usize, j: usize| values[(i % n) * n + (j % n)];

    // Refine every sign-changing grid edge onto the zero set by bisection.
    let mut edge_points: HashMap<EdgeKey, Vec2> = HashMap::new();
    let crossed = |kind: u8, i: usize, j: usize| -> Option<EdgeKey> {
        let (v0, v1) = match kind {
            0 => (val(i, j), val(i + 1, j)),
            _ => (val(i, j), val(i, j + 1)),
        };
        if v0 * v1 < 0.0 {
            Some(EdgeKey { kind, i: i % n, j: j % n })
        } else {
            None
        }
    };
    for i in 0..n {
        for j in 0..n {
            for kind in 0..2u8 {
                if let Some(key) = crossed(kind, i, j) {
                    if edge_points.contains_key(&key) {
                        continue;
                    }
                    let (t0, a0) = (i as f64 * h, j as f64 * h);
                    let eval = |u: f64| match kind {
                        0 => level.value(t0 + u * h, a0),
                        _ => level.value(t0, a0 + u * h),
                    };
                    let mut lo = 0.0;
                    let mut hi = 1.0;
                    let mut flo = eval(lo);
                    for _ in 0..45 {
                        let mid = 0.5 * (lo + hi);
                        let fm = eval(mid);
                        if flo * fm <= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                            flo = fm;
                        }
                    }
                    let u = 0.5 * (lo + hi);
                    let p = match kind {
                        0 => Vec2::new(wrap_angle(t0 + u * h), wrap_angle(a0)),
                        _ => Vec2::new(wrap_angle(t0), wrap_angle(a0 + u * h)),
                    };
                    edge_points.insert(key, p);
                }
            }
        }
    }

    // Cell classification: connect crossed edges pairwise inside each cell.
    let mut adjacency: HashMap<EdgeKey, Vec<EdgeKey>> = HashMap::new();
    let mut ambiguous_cells = 0usize;
    for i in 0..n {
        for j in 0..n {
            let bottom = crossed(0, i, j);
            let top = crossed(0, i, j + 1);
            let left = crossed(1, i, j);
            let right = crossed(1, i + 1, j);
            let mut present: Vec<EdgeKey> = [bottom, right, top, left].into_iter().flatten().collect();
            match present.len() {
                0 => continue,
                2 => {
                    let b = present.pop().unwrap();
                    let a = present.pop().unwrap();
                    adjacency.entry(a).or_default().push(b);
                    adjacency.entry(b).or_default().push(a);
                }
                4 => {
                    // Saddle cell: resolve the pairing with a center sample.
                    ambiguous_cells += 1;
                    let center = level.value((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                    let (b, r, t, l) = (bottom.unwrap(), right.unwrap(), top.unwrap(), left.unwrap());
                    let s00 = val(i, j);
                    let pairs = if center * s00 > 0.0 {
                        // Positive region joins (i,j)-(i+1,j+1) diagonally.
                        [(b, r), (t, l)]
                    } else {
                        [(b, l), (t, r)]
                    };
                    for (a, b) in pairs {
                        adjacency.entry(a).or_default().push(b);
                        adjacency.entry(b).or_default().push(a);
                    }
                }
                k => {
                    return Err(Error::numerical(
                        "trace_singular_curves",
                        format!("cell ({i}, {j}) has {k} crossed edges; grid too coarse"),
                    ));
                }
            }
        }
    }

    // Walk the degree-2 adjacency graph into closed curves.
    let mut keys: Vec<EdgeKey> = adjacency.keys().copied().collect();
    keys.sort();
    let mut visited: HashMap<EdgeKey, bool> = keys.iter().map(|k| (*k, false)).collect();
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for &start in &keys {
        if visited[&start] {
            continue;
        }
        let mut chain = vec![start];
        visited.insert(start, true);
        let mut prev = start;
        let mut neighbors = adjacency[&start].clone();
        neighbors.sort();
        let mut cur = neighbors[0];
        while cur != start {
            visited.insert(cur, true);
            chain.push(cur);
            let next = adjacency[&cur]
                .iter()
                .copied()
                .find(|&k| k != prev)
                .ok_or_else(|| Error::numerical("trace_singular_curves", "open level-set chain on torus"))?;
            prev = cur;
            cur = next;
        }
        let id = format!("S{}", curves.len());
        let mut samples: Vec<CurveSample> = Vec::with_capacity(chain.len());
        for k in &chain {
            let p = edge_points[k];
            samples.push(CurveSample {
                point: p,
                tangent: level.tangent(p.x, p.y),
            });
        }
        // Orient tangents along the traversal direction.
        let m = samples.len();
        for idx in 0..m {
            let p0 = samples[idx].point;
            let p1 = samples[(idx + 1) % m].point;
            let chord = Vec2::new(angle_diff(p1.x, p0.x), angle_diff(p1.y, p0.y));
            if samples[idx].tangent.dot(chord) < 0.0 {
                samples[idx].tangent = -samples[idx].tangent;
            }
        }
        curves.push(TracedCurve {
            domain: CurveDomain::WorkspaceSlice,
            samples,
            closed: true,
            id,
        });
    }
    if ambiguous_cells > 0 {
        warnings.push(format!("{ambiguous_cells} ambiguous marching-squares cells resolved by center sampling"));
    }
    // Deterministic ordering: longest curve first, ties by first point.
    curves.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| (a.samples[0].point.x, a.samples[0].point.y).partial_cmp(&(b.samples[0].point.x, b.samples[0].point.y)).unwrap())
    });
    for (i, c) in curves.iter_mut().enumerate() {
        c.id = format!("S{i}");
    }
    Ok(TraceResult { curves, warnings })
}

/// Push a workspace curve through the inverse kinematics into the joint slice.
/// Tangents are pushed forward by the IK differential; sample i of the result
/// is the image of sample i of the input.
pub fn map_curve_to_jointspace(mech: &Mechanism, rho1: f64, curve: &TracedCurve) -> Result<TracedCurve> {
    let mut samples = Vec::with_capacity(curve.len());
    for s in &curve.samples {
        let pose = SlicePose::new(s.point.x, s.point.y, rho1);
        let joint = mech.inverse_kinematics(&pose);
        let j = mech.ik_jacobian(&pose)?;
        let pushed = j.mul_vec(s.tangent);
        samples.push(CurveSample {
            point: Vec2::new(joint.rho2, joint.rho3),
            tangent: pushed.normalize(),
        });
    }
    Ok(TracedCurve {
        domain: CurveDomain::JointSlice,
        samples,
        closed: curve.closed,
        id: format!("{}img", curve.id),
    })
}

/// Trace and project in one call.
pub fn singular_curve_pairs(mech: &Mechanism, rho1: f64, grid_n: usize) -> Result<(Vec<CurvePair>, Vec<String>)> {
    let traced = trace_singular_curves(mech, rho1, grid_n)?;
    let mut pairs = Vec::with_capacity(traced.curves.len());
    for c in traced.curves {
        let image = map_curve_to_jointspace(mech, rho1, &c)?;
        pairs.push(CurvePair { workspace: c, image });
    }
    Ok((pairs, traced.warnings))
}
