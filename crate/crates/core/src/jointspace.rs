//! Analysis of the projected singular curves in the (rho2, rho3) slice:
//! cusp detection, node detection, the solution-count region map, and the
//! labeling of curve segments by the solution pair lost across them.

use crate::continuation::{continue_solutions, BranchOrigin, ContinuationOptions, EventKind};
use crate::error::{Error, Result};
use crate::kinematics::{FkSolver, SlicePose};
use crate::math::{line_angle, torus_dist, Vec2};
use crate::singularity::{aspect_of, AspectLabel, CurvePair, LevelSet, TracedCurve};
use crate::tol;

/// A cusp of the projected singular curve: three solutions coalesce there.
#[derive(Clone, Debug)]
pub struct CuspPoint {
    /// (rho2, rho3) location in the joint slice.
    pub location: Vec2,
    /// Id of the source workspace singular curve.
    pub curve_id: String,
    /// Arc position on the source curve, in segment-index units.
    pub source_param: f64,
    /// The coalescing triple solution.
    pub triple_pose: SlicePose,
    /// Aspect of the same-aspect pair the cusp connects.
    pub aspect: AspectLabel,
    /// Unit direction in the joint slice pointing into the cuspidal wedge
    /// (the side with two extra solutions).
    pub wedge_dir: Vec2,
    pub label: String,
}

/// A transversal self- or mutual intersection of projected singular curves:
/// two pairs of solutions coalesce simultaneously.
#[derive(Clone, Debug)]
pub struct NodePoint {
    /// (rho2, rho3) location in the joint slice.
    pub location: Vec2,
    /// Ids of the two source workspace curves (equal for a self-intersection).
    pub curves: (String, String),
    /// Arc positions of the two branches on their source curves.
    pub params: (f64, f64),
    /// The two coalescing double solutions.
    pub pair_poses: (SlicePose, SlicePose),
    /// Unit image tangents of the two crossing branches.
    pub tangents: (Vec2, Vec2),
    /// Unoriented crossing angle, in (0, pi/2].
    pub angle: f64,
    pub label: String,
}

/// Connected component of constant solution count in the joint slice.
#[derive(Clone, Debug)]
pub struct Region {
    pub label: usize,
    pub count: usize,
    pub representative: Vec2,
    pub cells: usize,
}

/// Per-cell solution counts over a rectangular (rho2, rho3) window, with
/// connected components of equal count labeled. Cells flagged near-singular
/// (or with an odd raw count, which only happens on top of a curve) are
/// boundary cells and belong to no region.
#[derive(Clone, Debug)]
pub struct RegionMap {
    /// rho2 min/max, rho3 min/max.
    pub window: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Raw FK count per cell, row-major with rho2 fastest.
    pub counts: Vec<i32>,
    /// Region label per cell; -1 marks boundary cells.
    pub labels: Vec<i32>,
    pub regions: Vec<Region>,
}

impl RegionMap {
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        let dx = (self.window[1] - self.window[0]) / self.nx as f64;
        let dy = (self.window[3] - self.window[2]) / self.ny as f64;
        Vec2::new(
            self.window[0] + (ix as f64 + 0.5) * dx,
            self.window[2] + (iy as f64 + 0.5) * dy,
        )
    }

    /// Count of the cell containing `p`, or None outside the window.
    pub fn count_at(&self, p: Vec2) -> Option<i32> {
        let fx = (p.x - self.window[0]) / (self.window[1] - self.window[0]);
        let fy = (p.y - self.window[2]) / (self.window[3] - self.window[2]);
        if !(0.0..1.0).contains(&fx) || !(0.0..1.0).contains(&fy) {
            return None;
        }
        let ix = (fx * self.nx as f64) as usize;
        let iy = (fy * self.ny as f64) as usize;
        Some(self.counts[iy * self.nx + ix])
    }
}

/// One arc of a projected singular curve between consecutive cusps/nodes.
/// Crossing it from the high-count side loses exactly one mirrored pair.
#[derive(Clone, Debug)]
pub struct SegmentLabel {
    pub curve_id: String,
    /// Arc interval in segment-index units; the end may exceed the sample
    /// count when the interval wraps around a closed curve.
    pub s_range: (f64, f64),
    pub hi_count: usize,
    pub lo_count: usize,
    /// Pose where the lost pair coincides (on the workspace singular curve).
    pub loss_pose: SlicePose,
    /// The two coalescing solutions, sampled on the high-count side.
    pub lost_pair: (SlicePose, SlicePose),
    pub lost_aspects: (AspectLabel, AspectLabel),
    /// Stable role index (1-based, deterministic enumeration order).
    pub role: usize,
    pub label: String,
}

/// Image point and oriented image velocity of the singular curve at arc
/// position `s`, per unit workspace arc length. `t_ref` disambiguates the
/// level-set tangent orientation.
fn image_velocity(
    level: &LevelSet,
    ws: &TracedCurve,
    s: f64,
    t_ref: Vec2,
) -> Result<(SlicePose, Vec2)> {
    let w = ws.point_at(s);
    let pose = level.project(w.x, w.y);
    let mut t = level.tangent(pose.theta1, pose.alpha);
    if t.dot(t_ref) < 0.0 {
        t = -t;
    }
    let j = level.mech.ik_jacobian(&pose)?;
    Ok((pose, j.mul_vec(t)))
}

fn image_of(level: &LevelSet, pose: &SlicePose) -> Vec2 {
    let jt = level.mech.inverse_kinematics(pose);
    Vec2::new(jt.rho2, jt.rho3)
}

/// Detect all cusps on the projected singular curves.
///
/// A cusp is where the joint-space velocity of the projection vanishes; the
/// coarse scan watches the per-sample image velocity for a direction
/// reversal, then golden-section search refines the speed minimum to below
/// 1e-10 in arc parameter. Each candidate is verified by forward kinematics:
/// nudged into the cuspidal wedge, the slice must carry a cluster of three
/// solutions around the triple pose. Candidates failing verification are
/// excluded and reported in the warnings.
pub fn detect_cusps(
    solver: &FkSolver,
    pairs: &[CurvePair],
) -> Result<(Vec<CuspPoint>, Vec<String>)> {
    let mech = &solver.mech;
    let level = LevelSet::new(mech, solver.rho1);
    let mut cusps = Vec::new();
    let mut warnings = Vec::new();

    for pair in pairs {
        let ws = &pair.workspace;
        let n = ws.seg_count();
        if n < 8 {
            continue;
        }
        // Sample tangents are oriented along the traversal, so the image
        // velocity field is continuous along the curve and reverses exactly
        // at a cusp.
        let m = if ws.closed { n + 1 } else { ws.len() };
        let mut vels = Vec::with_capacity(m);
        for i in 0..m {
            let samp = ws.sample(i);
            let pose = SlicePose::new(samp.point.x, samp.point.y, solver.rho1);
            vels.push(mech.ik_jacobian(&pose)?.mul_vec(samp.tangent));
        }
        for i in 1..m {
            if vels[i].dot(vels[i - 1]) < 0.0 {
                match refine_cusp(solver, &level, ws, i) {
                    Ok(c) => {
                        let dup = cusps
                            .iter()
                            .any(|e: &CuspPoint| e.triple_pose.torus_dist(&c.triple_pose) < 1e-6);
                        if !dup {
                            cusps.push(c);
                        }
                    }
                    Err(e) => warnings.push(format!(
                        "suspect cusp near {} sample {} excluded: {e}",
                        ws.id, i
                    )),
                }
            }
        }
    }
    cusps.sort_by(|a, b| {
        (a.curve_id.as_str(), a.source_param)
            .partial_cmp(&(b.curve_id.as_str(), b.source_param))
            .unwrap()
    });
    for (k, c) in cusps.iter_mut().enumerate() {
        c.label = format!("CP{}", k + 1);
    }
    Ok((cusps, warnings))
}

/// Refine the cusp bracketed by samples i-1 and i and verify it.
fn refine_cusp(
    solver: &FkSolver,
    level: &LevelSet,
    ws: &TracedCurve,
    i: usize,
) -> Result<CuspPoint> {
    let t_ref = ws.sample(i - 1).tangent;
    let speed = |s: f64| -> Result<f64> {
        image_velocity(level, ws, s, t_ref).map(|(_, v)| v.norm())
    };

    // Golden-section search; the image speed is V-shaped around the cusp.
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = ((i - 1) as f64, i as f64);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = speed(c)?;
    let mut fd = speed(d)?;
    for _ in 0..75 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = speed(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = speed(d)?;
        }
    }
    let s = 0.5 * (a + b);

    let (pose, v) = image_velocity(level, ws, s, t_ref)?;
    if v.norm() > tol::CUSP_TOL {
        return Err(Error::numerical(
            "cusp refinement",
            format!("residual image speed {:.3e} above tolerance", v.norm()),
        ));
    }
    let location = image_of(level, &pose);

    // The wedge axis points from the tip toward the midpoint of the two fold
    // branches. Symmetric offsets cancel the odd term of the local model only
    // partially (the arc parameter is not symmetric in the normal form), so a
    // Richardson step removes the remaining linear error.
    let im = |d: f64| -> Result<Vec2> {
        Ok(image_of(level, &image_velocity(level, ws, s + d, t_ref)?.0))
    };
    let eps = 0.75;
    let m1 = (im(eps)? + im(-eps)?) * 0.5 - location;
    let m2 = (im(2.0 * eps)? + im(-2.0 * eps)?) * 0.5 - location;
    let wedge_dir = (m1 * 8.0 - m2).normalize();

    // Triple-coalescence check: just inside the wedge the three merging
    // solutions separate like the cube root of the nudge.
    let mut aspect = None;
    for nudge in [1e-3, 1e-4, 3e-3, 1e-2, 1e-5] {
        let p = location + wedge_dir * nudge;
        let set = solver.solve(p.x, p.y)?;
        let cluster: Vec<&SlicePose> = set
            .solutions
            .iter()
            .map(|c| &c.pose)
            .filter(|q| pose.torus_dist(q) < tol::IMAGE_CLUSTER_RADIUS)
            .collect();
        if cluster.len() == 3 {
            let mut wa1 = 0;
            for q in &cluster {
                if aspect_of(&solver.mech, q)? == AspectLabel::Wa1 {
                    wa1 += 1;
                }
            }
            aspect = Some(if wa1 >= 2 {
                AspectLabel::Wa1
            } else {
                AspectLabel::Wa2
            });
            break;
        }
    }
    let aspect = aspect.ok_or_else(|| {
        Error::numerical(
            "cusp verification",
            "no triple solution cluster inside the wedge",
        )
    })?;

    Ok(CuspPoint {
        location,
        curve_id: ws.id.clone(),
        source_param: s,
        triple_pose: pose,
        aspect,
        wedge_dir,
        label: String::new(),
    })
}

/// Proper intersection of segments p..p+r and q..q+s, as parameters (u, v).
fn seg_intersect(p: Vec2, r: Vec2, q: Vec2, s: Vec2) -> Option<(f64, f64)> {
    let denom = r.cross(s);
    if denom.abs() < 1e-15 {
        return None;
    }
    let u = (q - p).cross(s) / denom;
    let v = (q - p).cross(r) / denom;
    if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
        Some((u, v))
    } else {
        None
    }
}

/// Solve a 4x4 linear system in place by Gaussian elimination with partial
/// pivoting. Returns None when the matrix is numerically singular.
fn solve4(mut m: [[f64; 5]; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..5 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = m[row][4];
        for k in row + 1..4 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Polish a node candidate: both points on the singular set and their joint
/// images coincident. Newton on (S(a), S(b), g(a) - g(b)) in the four torus
/// coordinates.
fn refine_node(level: &LevelSet, mut wa: Vec2, mut wb: Vec2) -> Option<(SlicePose, SlicePose)> {
    let mech = level.mech;
    let rho1 = level.rho1;
    let resid = |wa: Vec2, wb: Vec2| -> [f64; 4] {
        let ga = mech.inverse_kinematics(&SlicePose::new(wa.x, wa.y, rho1));
        let gb = mech.inverse_kinematics(&SlicePose::new(wb.x, wb.y, rho1));
        [
            level.value(wa.x, wa.y),
            level.value(wb.x, wb.y),
            ga.rho2 - gb.rho2,
            ga.rho3 - gb.rho3,
        ]
    };
    let h = 1e-7;
    for _ in 0..40 {
        let f = resid(wa, wb);
        let mut m = [[0.0; 5]; 4];
        for (col, (dwa, dwb)) in [
            (Vec2::new(h, 0.0), Vec2::ZERO),
            (Vec2::new(0.0, h), Vec2::ZERO),
            (Vec2::ZERO, Vec2::new(h, 0.0)),
            (Vec2::ZERO, Vec2::new(0.0, h)),
        ]
        .into_iter()
        .enumerate()
        {
            let fp = resid(wa + dwa, wb + dwb);
            for row in 0..4 {
                m[row][col] = (fp[row] - f[row]) / h;
            }
        }
        for row in 0..4 {
            m[row][4] = -f[row];
        }
        let dx = solve4(m)?;
        let step = dx.iter().map(|d| d * d).sum::<f64>().sqrt();
        let damp = if step > 0.1 { 0.1 / step } else { 1.0 };
        wa = wa + Vec2::new(dx[0], dx[1]) * damp;
        wb = wb + Vec2::new(dx[2], dx[3]) * damp;
        if step < 1e-13 {
            break;
        }
    }
    let f = resid(wa, wb);
    if f[0].abs() < 1e-10 && f[1].abs() < 1e-10 && f[2].hypot(f[3]) < 1e-8 {
        Some((
            SlicePose::new(wa.x, wa.y, rho1),
            SlicePose::new(wb.x, wb.y, rho1),
        ))
    } else {
        None
    }
}

/// Detect all transversal self- and mutual intersections of the projected
/// singular curves.
///
/// Candidate crossings come from bounding-box-culled segment-pair tests on
/// the image polylines; each candidate is polished by a Newton iteration
/// keeping both source points on the singular set with coincident images,
/// then filtered for transversality and verified by forward kinematics
/// (two double-solution clusters in the highest-count quadrant).
pub fn detect_nodes(
    solver: &FkSolver,
    pairs: &[CurvePair],
    cusps: &[CuspPoint],
) -> Result<(Vec<NodePoint>, Vec<String>)> {
    let level = LevelSet::new(&solver.mech, solver.rho1);
    let mut warnings = Vec::new();

    // Flat list of image segments with bounding boxes.
    struct Seg {
        curve: usize,
        idx: usize,
        p0: Vec2,
        p1: Vec2,
        lo: Vec2,
        hi: Vec2,
    }
    let mut segs = Vec::new();
    for (c, pair) in pairs.iter().enumerate() {
        let img = &pair.image;
        for i in 0..img.seg_count() {
            let p0 = img.sample(i).point;
            let p1 = img.sample(i + 1).point;
            segs.push(Seg {
                curve: c,
                idx: i,
                p0,
                p1,
                lo: Vec2::new(p0.x.min(p1.x), p0.y.min(p1.y)),
                hi: Vec2::new(p0.x.max(p1.x), p0.y.max(p1.y)),
            });
        }
    }

    let mut nodes: Vec<NodePoint> = Vec::new();
    for a in 0..segs.len() {
        for b in a + 1..segs.len() {
            let (sa, sb) = (&segs[a], &segs[b]);
            if sa.curve == sb.curve {
                let n = pairs[sa.curve].image.seg_count();
                let gap = (sb.idx - sa.idx).min(n - (sb.idx - sa.idx));
                if gap <= 2 {
                    continue;
                }
            }
            if sa.lo.x > sb.hi.x || sb.lo.x > sa.hi.x || sa.lo.y > sb.hi.y || sb.lo.y > sa.hi.y {
                continue;
            }
            let Some((u, v)) = seg_intersect(sa.p0, sa.p1 - sa.p0, sb.p0, sb.p1 - sb.p0) else {
                continue;
            };
            let pa = sa.idx as f64 + u;
            let pb = sb.idx as f64 + v;
            let wa = pairs[sa.curve].workspace.point_at(pa);
            let wb = pairs[sb.curve].workspace.point_at(pb);
            // A crossing whose two source points nearly coincide is a
            // discretization artifact at a fold, not a node.
            if torus_dist((wa.x, wa.y), (wb.x, wb.y)) < 0.05 {
                continue;
            }
            let cross_pt = sa.p0 + (sa.p1 - sa.p0) * u;
            if cusps
                .iter()
                .any(|c| c.location.dist(cross_pt) < 10.0 * tol::CUSP_EXCLUSION)
            {
                continue;
            }
            let Some((pose_a, pose_b)) = refine_node(&level, wa, wb) else {
                warnings.push(format!(
                    "node candidate near ({:.3}, {:.3}) failed refinement",
                    cross_pt.x, cross_pt.y
                ));
                continue;
            };
            if pose_a.torus_dist(&pose_b) < 0.02 {
                continue;
            }
            let ta = level.tangent(pose_a.theta1, pose_a.alpha);
            let tb = level.tangent(pose_b.theta1, pose_b.alpha);
            let ua = solver.mech.ik_jacobian(&pose_a)?.mul_vec(ta).normalize();
            let ub = solver.mech.ik_jacobian(&pose_b)?.mul_vec(tb).normalize();
            let angle = line_angle(ua, ub);
            if angle < tol::NODE_ANGLE_MIN {
                continue;
            }
            let location = (image_of(&level, &pose_a) + image_of(&level, &pose_b)) * 0.5;
            let dup = nodes.iter().any(|n| {
                n.location.dist(location) < 1e-5
                    && ((n.pair_poses.0.torus_dist(&pose_a) < 1e-3
                        && n.pair_poses.1.torus_dist(&pose_b) < 1e-3)
                        || (n.pair_poses.0.torus_dist(&pose_b) < 1e-3
                            && n.pair_poses.1.torus_dist(&pose_a) < 1e-3))
            });
            if dup {
                continue;
            }
            let mut node = NodePoint {
                location,
                curves: (pairs[sa.curve].workspace.id.clone(), pairs[sb.curve].workspace.id.clone()),
                params: (pa, pb),
                pair_poses: (pose_a, pose_b),
                tangents: (ua, ub),
                angle,
                label: String::new(),
            };
            if !verify_node_pairs(solver, &node)? {
                warnings.push(format!(
                    "node candidate at ({:.3}, {:.3}) failed the two-pair check",
                    location.x, location.y
                ));
                continue;
            }
            if node.curves.0 == node.curves.1 && node.params.0 > node.params.1 {
                // Canonical order for self-intersections.
                node.params = (node.params.1, node.params.0);
                node.pair_poses = (node.pair_poses.1, node.pair_poses.0);
                node.tangents = (node.tangents.1, node.tangents.0);
            }
            nodes.push(node);
        }
    }
    nodes.sort_by(|a, b| {
        (a.curves.0.as_str(), a.params.0)
            .partial_cmp(&(b.curves.0.as_str(), b.params.0))
            .unwrap()
    });
    for (k, n) in nodes.iter_mut().enumerate() {
        n.label = format!("N{}", k + 1);
    }
    Ok((nodes, warnings))
}

/// FK check of the node invariant: in the quadrant with the most solutions,
/// each of the two folded pairs resolves into two nearby solutions.
fn verify_node_pairs(solver: &FkSolver, node: &NodePoint) -> Result<bool> {
    let (u1, u2) = node.tangents;
    let dirs = [
        (u1 + u2).normalize(),
        (u2 - u1).normalize(),
        -(u1 + u2).normalize(),
        (u1 - u2).normalize(),
    ];
    for dir in dirs {
        let p = node.location + dir * 1e-3;
        let set = solver.solve(p.x, p.y)?;
        let near_a = set
            .solutions
            .iter()
            .filter(|c| c.pose.torus_dist(&node.pair_poses.0) < tol::IMAGE_CLUSTER_RADIUS)
            .count();
        let near_b = set
            .solutions
            .iter()
            .filter(|c| c.pose.torus_dist(&node.pair_poses.1) < tol::IMAGE_CLUSTER_RADIUS)
            .count();
        if near_a == 2 && near_b == 2 {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Solution counts in the four quadrants around a node, sampled along the
/// tangent bisectors (cyclic order). Tries a few radii and returns the first
/// sampling consistent with the generic (n, n-2, n-4, n-2) distribution;
/// otherwise the counts at the smallest radius.
pub fn node_quadrant_counts(solver: &FkSolver, node: &NodePoint) -> Result<[usize; 4]> {
    let (u1, u2) = node.tangents;
    let dirs = [
        (u1 + u2).normalize(),
        (u2 - u1).normalize(),
        -(u1 + u2).normalize(),
        (u1 - u2).normalize(),
    ];
    let mut last = [0usize; 4];
    for r in [0.05, 0.025, 0.0125, 0.006] {
        for (k, dir) in dirs.iter().enumerate() {
            let p = node.location + *dir * r;
            last[k] = solver.solve(p.x, p.y)?.count();
        }
        if quadrant_pattern_ok(&last) {
            return Ok(last);
        }
    }
    Ok(last)
}

/// True when the counts match (n, n-2, n-4, n-2) for some n >= 4, up to
/// cyclic rotation.
pub fn quadrant_pattern_ok(counts: &[usize; 4]) -> bool {
    for k in 0..4 {
        let c = [
            counts[k],
            counts[(k + 1) % 4],
            counts[(k + 2) % 4],
            counts[(k + 3) % 4],
        ];
        let n = c[0];
        if n >= 4 && c == [n, n - 2, n - 4, n - 2] {
            return true;
        }
    }
    false
}

/// Per-cell FK counts over a joint-slice window with connected-component
/// labeling of the constant-count regions.
pub fn count_solutions_map(
    solver: &FkSolver,
    window: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<RegionMap> {
    if window[0] >= window[1] || window[2] >= window[3] {
        return Err(Error::validation("window", "bounds must be ordered"));
    }
    let mut counts = vec![0i32; nx * ny];
    let mut boundary = vec![false; nx * ny];
    let mut map = RegionMap {
        window,
        nx,
        ny,
        counts: Vec::new(),
        labels: vec![-1; nx * ny],
        regions: Vec::new(),
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let p = map.cell_center(ix, iy);
            let set = solver.solve(p.x, p.y)?;
            let c = set.count();
            counts[iy * nx + ix] = c as i32;
            // Odd raw counts only occur on top of a curve, where a double
            // solution resolves unreliably.
            boundary[iy * nx + ix] = set.near_singular || c % 2 == 1;
        }
    }
    map.counts = counts;

    let mut next = 0usize;
    let mut queue = Vec::new();
    for start in 0..nx * ny {
        if boundary[start] || map.labels[start] >= 0 {
            continue;
        }
        let count = map.counts[start];
        map.labels[start] = next as i32;
        queue.push(start);
        let mut cells = 0usize;
        while let Some(cell) = queue.pop() {
            cells += 1;
            let (ix, iy) = (cell % nx, cell / nx);
            let mut neigh = Vec::with_capacity(4);
            if ix > 0 {
                neigh.push(cell - 1);
            }
            if ix + 1 < nx {
                neigh.push(cell + 1);
            }
            if iy > 0 {
                neigh.push(cell - nx);
            }
            if iy + 1 < ny {
                neigh.push(cell + nx);
            }
            for n in neigh {
                if !boundary[n] && map.labels[n] < 0 && map.counts[n] == count {
                    map.labels[n] = next as i32;
                    queue.push(n);
                }
            }
        }
        map.regions.push(Region {
            label: next,
            count: count as usize,
            representative: map.cell_center(start % nx, start / nx),
            cells,
        });
        next += 1;
    }
    Ok(map)
}

/// Split each image curve at its cusps and nodes and identify, for every
/// resulting segment, the mirrored solution pair lost when crossing it.
///
/// Each segment is probed with a short transversal continuation path from
/// the high-count side; the probe must record exactly one coalescence, else
/// it is shrunk and retried. On success the labels of adjacent cusps and
/// nodes are rewritten in terms of the segment roles.
pub fn label_segments(
    solver: &FkSolver,
    pairs: &[CurvePair],
    cusps: &mut [CuspPoint],
    nodes: &mut [NodePoint],
) -> Result<(Vec<SegmentLabel>, Vec<String>)> {
    let level = LevelSet::new(&solver.mech, solver.rho1);
    let mut warnings = Vec::new();
    let mut segments = Vec::new();

    for pair in pairs {
        let ws = &pair.workspace;
        let n = ws.seg_count() as f64;
        let mut cuts: Vec<f64> = cusps
            .iter()
            .filter(|c| c.curve_id == ws.id)
            .map(|c| c.source_param)
            .collect();
        for node in nodes.iter() {
            if node.curves.0 == ws.id {
                cuts.push(node.params.0);
            }
            if node.curves.1 == ws.id {
                cuts.push(node.params.1);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

        let ranges: Vec<(f64, f64)> = if cuts.is_empty() {
            vec![(0.0, n)]
        } else if ws.closed {
            (0..cuts.len())
                .map(|k| {
                    let a = cuts[k];
                    let b = if k + 1 < cuts.len() { cuts[k + 1] } else { cuts[0] + n };
                    (a, b)
                })
                .collect()
        } else {
            let mut r = vec![(0.0, cuts[0])];
            for k in 0..cuts.len() - 1 {
                r.push((cuts[k], cuts[k + 1]));
            }
            r.push((*cuts.last().unwrap(), n));
            r.retain(|(a, b)| b - a > 1e-6);
            r
        };

        for (a, b) in ranges {
            match probe_segment(solver, &level, ws, 0.5 * (a + b)) {
                Ok(seg) => segments.push(SegmentLabel {
                    curve_id: ws.id.clone(),
                    s_range: (a, b),
                    role: 0,
                    label: String::new(),
                    ..seg
                }),
                Err(e) => warnings.push(format!(
                    "probe failure on {} [{:.2}, {:.2}]: {e}",
                    ws.id, a, b
                )),
            }
        }
    }

    segments.sort_by(|x, y| {
        (x.curve_id.as_str(), x.s_range.0)
            .partial_cmp(&(y.curve_id.as_str(), y.s_range.0))
            .unwrap()
    });
    for (k, seg) in segments.iter_mut().enumerate() {
        seg.role = k + 1;
        seg.label = format!("C{}", k + 1);
    }

    // Rewrite cusp and node labels in terms of the adjacent segment roles.
    for cusp in cusps.iter_mut() {
        let roles = adjacent_roles(&segments, &cusp.curve_id, cusp.source_param);
        if let [k, m] = roles[..] {
            cusp.label = format!("CP{}-{}", k.min(m), k.max(m));
        }
    }
    for node in nodes.iter_mut() {
        let r0 = adjacent_roles(&segments, &node.curves.0, node.params.0);
        let r1 = adjacent_roles(&segments, &node.curves.1, node.params.1);
        if let (Some(h), Some(k)) = (r0.iter().min(), r1.iter().min()) {
            node.label = format!("N{}-{}", h.min(k), h.max(k));
        }
    }
    Ok((segments, warnings))
}

/// Roles of the segments whose interval ends or begins at arc position `s`.
fn adjacent_roles(segments: &[SegmentLabel], curve_id: &str, s: f64) -> Vec<usize> {
    let mut roles = Vec::new();
    for seg in segments.iter().filter(|g| g.curve_id == curve_id) {
        if (seg.s_range.0 - s).abs() < 1e-6 || (seg.s_range.1 - s).abs() < 1e-6 {
            roles.push(seg.role);
        }
    }
    roles
}

/// Fire a transversal continuation probe across the curve at arc position
/// `s_mid` and record the coalescing pair.
fn probe_segment(
    solver: &FkSolver,
    level: &LevelSet,
    ws: &TracedCurve,
    s_mid: f64,
) -> Result<SegmentLabel> {
    let w = ws.point_at(s_mid);
    let pose = level.project(w.x, w.y);
    let t = level.tangent(pose.theta1, pose.alpha);
    let u = solver.mech.ik_jacobian(&pose)?.mul_vec(t).normalize();
    let nrm = u.rot90();
    let p = image_of(level, &pose);

    let mut r = 0.06;
    let mut last_err = None;
    for _ in 0..6 {
        let pa = p + nrm * r;
        let pb = p - nrm * r;
        let ca = solver.solve(pa.x, pa.y)?.count();
        let cb = solver.solve(pb.x, pb.y)?.count();
        if ca == cb {
            r *= 0.5;
            continue;
        }
        let (hi, lo, hi_count, lo_count) = if ca > cb {
            (pa, pb, ca, cb)
        } else {
            (pb, pa, cb, ca)
        };
        let start = solver.solve(hi.x, hi.y)?;
        let path = |t: f64| (hi.x + (lo.x - hi.x) * t, hi.y + (lo.y - hi.y) * t);
        let opts = ContinuationOptions {
            initial_step: 0.02,
            ..ContinuationOptions::default()
        };
        let res = match continue_solutions(solver, path, &start, opts) {
            Ok(res) => res,
            Err(e) => {
                last_err = Some(e);
                r *= 0.5;
                continue;
            }
        };
        let coal: Vec<_> = res
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Coalescence)
            .collect();
        if coal.len() != 1 {
            // Probe crossed more than one segment; shrink and retry.
            r *= 0.5;
            continue;
        }
        let ev = coal[0];
        let start_of = |id: usize| -> Option<usize> {
            res.branches.iter().find(|b| b.id == id).and_then(|b| match b.origin {
                BranchOrigin::Start(i) => Some(i),
                BranchOrigin::Born(_) => None,
            })
        };
        let (Some(i), Some(j)) = (start_of(ev.branch_ids.0), start_of(ev.branch_ids.1)) else {
            return Err(Error::numerical("segment probe", "coalescing pair not from start set"));
        };
        return Ok(SegmentLabel {
            curve_id: String::new(),
            s_range: (0.0, 0.0),
            hi_count,
            lo_count,
            loss_pose: ev.location,
            lost_pair: (start.solutions[i].pose, start.solutions[j].pose),
            lost_aspects: (start.solutions[i].aspect, start.solutions[j].aspect),
            role: 0,
            label: String::new(),
        });
    }
    Err(last_err.unwrap_or_else(|| {
        Error::numerical("segment probe", "no single-coalescence transversal found")
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{FkOptions, FkSolver, Mechanism};
    use crate::model::{EdgeAssignment, ManipulatorGeometry};
    use crate::singularity::singular_curve_pairs;
    use std::sync::OnceLock;

    struct Fixture {
        solver: FkSolver,
        pairs: Vec<CurvePair>,
        cusps: Vec<CuspPoint>,
        nodes: Vec<NodePoint>,
    }

    fn fixture() -> &'static Fixture {
        static FIX: OnceLock<Fixture> = OnceLock::new();
        FIX.get_or_init(|| {
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
            let (pairs, _) = singular_curve_pairs(&mech, 17.0, 256).unwrap();
            let solver = FkSolver::new(mech, 17.0, FkOptions::default());
            let (cusps, _) = detect_cusps(&solver, &pairs).unwrap();
            let (nodes, _) = detect_nodes(&solver, &pairs, &cusps).unwrap();
            Fixture { solver, pairs, cusps, nodes }
        })
    }

    #[test]
    fn reference_slice_has_six_cusps() {
        let fix = fixture();
        assert_eq!(fix.cusps.len(), 6);
        for (i, a) in fix.cusps.iter().enumerate() {
            for b in &fix.cusps[i + 1..] {
                assert!(a.triple_pose.torus_dist(&b.triple_pose) > 0.1);
            }
        }
        assert!(fix.cusps.iter().any(|c| c.aspect == AspectLabel::Wa1));
        assert!(fix.cusps.iter().any(|c| c.aspect == AspectLabel::Wa2));
    }

    #[test]
    fn cusp_image_velocity_vanishes() {
        let fix = fixture();
        let level = LevelSet::new(&fix.solver.mech, fix.solver.rho1);
        for c in &fix.cusps {
            let ws = fix
                .pairs
                .iter()
                .map(|p| &p.workspace)
                .find(|w| w.id == c.curve_id)
                .unwrap();
            let i = c.source_param.floor() as usize;
            let t_ref = ws.sample(i).tangent;
            let (_, v) = image_velocity(&level, ws, c.source_param, t_ref).unwrap();
            assert!(v.norm() < tol::CUSP_TOL, "speed {} at {}", v.norm(), c.label);
        }
    }

    #[test]
    fn reference_slice_has_six_transversal_nodes() {
        let fix = fixture();
        assert_eq!(fix.nodes.len(), 6);
        let mech = &fix.solver.mech;
        for n in &fix.nodes {
            assert!(n.angle > tol::NODE_ANGLE_MIN);
            let ga = mech.inverse_kinematics(&n.pair_poses.0);
            let gb = mech.inverse_kinematics(&n.pair_poses.1);
            let gap = (ga.rho2 - gb.rho2).hypot(ga.rho3 - gb.rho3);
            assert!(gap < 1e-8, "image gap {gap} at {}", n.label);
            assert!(n.pair_poses.0.torus_dist(&n.pair_poses.1) > 0.02);
        }
    }

    #[test]
    fn node_quadrants_follow_generic_distribution() {
        let fix = fixture();
        for n in &fix.nodes {
            let q = node_quadrant_counts(&fix.solver, n).unwrap();
            assert!(quadrant_pattern_ok(&q), "{}: {q:?}", n.label);
        }
    }

    #[test]
    fn quadrant_pattern_matches_rotations_only() {
        assert!(quadrant_pattern_ok(&[6, 4, 2, 4]));
        assert!(quadrant_pattern_ok(&[4, 6, 4, 2]));
        assert!(quadrant_pattern_ok(&[4, 2, 0, 2]));
        assert!(!quadrant_pattern_ok(&[6, 4, 4, 2]));
        assert!(!quadrant_pattern_ok(&[2, 2, 2, 2]));
        assert!(!quadrant_pattern_ok(&[6, 2, 4, 4]));
    }

    #[test]
    fn disjoint_arcs_yield_no_intersection() {
        assert!(seg_intersect(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 0.0)
        )
        .is_none());
        let hit = seg_intersect(
            Vec2::new(0.0, -1.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(2.0, 0.0),
        )
        .unwrap();
        assert!((hit.0 - 0.5).abs() < 1e-12 && (hit.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn count_map_matches_known_points() {
        let fix = fixture();
        let map = count_solutions_map(&fix.solver, [12.0, 22.0, 12.0, 22.0], 10, 10).unwrap();
        assert_eq!(map.count_at(Vec2::new(15.0, 15.0)), Some(6));
        assert_eq!(map.count_at(Vec2::new(13.25, 20.39)), Some(4));
        assert_eq!(map.count_at(Vec2::new(100.0, 100.0)), None);
        for r in &map.regions {
            assert!(r.count % 2 == 0 && r.count <= 6);
        }
        let far = count_solutions_map(&fix.solver, [70.0, 72.0, 70.0, 72.0], 2, 2).unwrap();
        assert!(far.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn segments_lose_one_mirrored_pair() {
        let fix = fixture();
        let mut cusps = fix.cusps.clone();
        let mut nodes = fix.nodes.clone();
        let (segs, warns) =
            label_segments(&fix.solver, &fix.pairs, &mut cusps, &mut nodes).unwrap();
        assert!(warns.is_empty(), "{warns:?}");
        assert_eq!(segs.len(), 2 * fix.cusps.len() + fix.nodes.len());
        for s in &segs {
            assert_eq!(s.hi_count - s.lo_count, 2, "{}", s.label);
            assert_ne!(s.lost_aspects.0, s.lost_aspects.1, "{}", s.label);
            assert!(s.lost_pair.0.torus_dist(&s.lost_pair.1) > 1e-3);
        }
        for c in &cusps {
            assert!(c.label.starts_with("CP"));
        }
        for n in &nodes {
            assert!(n.label.starts_with('N') && n.label.contains('-'));
        }
    }
}
