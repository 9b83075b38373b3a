//! Characteristic curves and the decomposition of each aspect into basic
//! regions, together with their joint-space images (basic components).
//!
//! A characteristic curve is the nonsingular part of the preimage of the
//! image of a singular curve: for every sample on a singular curve, forward
//! kinematics at its joint image yields the other assembly modes, which chain
//! together sample-by-sample into curves in the workspace slice.

use std::f64::consts::TAU;

use crate::error::Result;
use crate::jointspace::{CuspPoint, NodePoint};
use crate::kinematics::{FkSolver, Mechanism, SlicePose};
use crate::math::{angle_diff, torus_dist, wrap_angle, Vec2};
use crate::singularity::{aspect_of, AspectLabel, CurveDomain, CurvePair, CurveSample, TracedCurve};
use crate::tol;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CharKind {
    /// The singular workspace curve itself (the double solution moves here).
    SingularImage,
    /// A nonsingular preimage branch inside one aspect.
    NonsingularImage,
}

/// One curve of the characteristic set of an aspect.
#[derive(Clone, Debug)]
pub struct CharCurve {
    pub samples: TracedCurve,
    /// Aspect of the interior samples; `Singular` for a singular image.
    pub aspect: AspectLabel,
    /// Id of the source singular curve.
    pub source_curve: String,
    pub kind: CharKind,
    pub id: String,
    /// Filled by the region decomposition for nonsingular images.
    pub bounded_region: Option<String>,
}

/// Maximal connected component of an aspect minus its characteristic curves.
#[derive(Clone, Debug)]
pub struct BasicRegion {
    pub id: String,
    pub aspect: AspectLabel,
    pub representative: SlicePose,
    pub cell_count: usize,
    /// Ids of the curves bounding this region.
    pub boundary: Vec<String>,
}

/// Grid decomposition of the workspace slice into basic regions.
#[derive(Clone, Debug)]
pub struct RegionDecomposition {
    pub grid_n: usize,
    pub rho1: f64,
    /// Region index per torus cell (row-major, theta1 fastest); -1 on curves.
    pub labels: Vec<i32>,
    pub regions: Vec<BasicRegion>,
    /// The rasterized curves, kept for resolving poses inside curve cells.
    pub curves: Vec<TracedCurve>,
}

/// Joint-space image of one basic region.
#[derive(Clone, Debug)]
pub struct BasicComponent {
    pub region_id: String,
    /// Images of a subsample of the region's cell centers.
    pub samples: Vec<Vec2>,
}

/// The singular curves wrapped as members of the characteristic set.
pub fn singular_images(pairs: &[CurvePair]) -> Vec<CharCurve> {
    pairs
        .iter()
        .map(|p| CharCurve {
            samples: p.workspace.clone(),
            aspect: AspectLabel::Singular,
            source_curve: p.workspace.id.clone(),
            kind: CharKind::SingularImage,
            id: format!("{}s", p.workspace.id),
            bounded_region: None,
        })
        .collect()
}

struct Chain {
    pts: Vec<(Vec2, usize)>,
    misses: usize,
}

/// Trace the characteristic curves of one aspect.
///
/// For every singular-curve sample, all forward-kinematics solutions at its
/// joint image are computed; the near-double singular pair is discarded and
/// the solutions in the requested aspect are linked sample-to-sample into
/// chains by nearest-neighbor matching. Chains survive short gaps (the
/// solution count changes at images of cusps and nodes), and the exact
/// special-point poses from the detected cusps and nodes are appended to
/// chain endpoints that stop next to them, so the curves close up at
/// tangency, char-cusp and crossing points.
pub fn characteristic_curves(
    solver: &FkSolver,
    pairs: &[CurvePair],
    aspect: AspectLabel,
    cusps: &[CuspPoint],
    nodes: &[NodePoint],
) -> Result<(Vec<CharCurve>, Vec<String>)> {
    let mech = &solver.mech;
    let mut warnings = Vec::new();
    let specials = special_points(solver, aspect, cusps, nodes)?;
    let mut curves = Vec::new();

    for pair in pairs {
        let ws = &pair.workspace;
        let img = &pair.image;
        let n = ws.seg_count();
        if n < 8 {
            continue;
        }
        let count = if ws.closed { n } else { ws.len() };
        let h = ws.arc_length() / n as f64;
        let link_tol = (6.0 * h).max(0.05);

        let mut active: Vec<Chain> = Vec::new();
        let mut done: Vec<Chain> = Vec::new();
        for i in 0..count {
            let w = ws.sample(i).point;
            let q = img.sample(i).point;
            let set = solver.solve(q.x, q.y)?;
            let mut pts: Vec<Vec2> = set
                .solutions
                .iter()
                .filter(|c| c.aspect == aspect)
                .map(|c| Vec2::new(c.pose.theta1, c.pose.alpha))
                .filter(|p| torus_dist((p.x, p.y), (w.x, w.y)) >= tol::SINGULAR_DISCARD)
                .collect();

            // Greedy nearest-neighbor assignment of new points to chain tails.
            let mut cand: Vec<(f64, usize, usize)> = Vec::new();
            for (ci, chain) in active.iter().enumerate() {
                let tail = chain.pts.last().unwrap().0;
                for (pi, p) in pts.iter().enumerate() {
                    let d = torus_dist((tail.x, tail.y), (p.x, p.y));
                    if d < link_tol * (1 + chain.misses) as f64 {
                        cand.push((d, ci, pi));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut chain_used = vec![false; active.len()];
            let mut pt_used = vec![false; pts.len()];
            for (_, ci, pi) in cand {
                if chain_used[ci] || pt_used[pi] {
                    continue;
                }
                chain_used[ci] = true;
                pt_used[pi] = true;
                active[ci].pts.push((pts[pi], i));
                active[ci].misses = 0;
            }
            // Retire chains that missed too many samples in a row.
            let mut k = 0;
            while k < active.len() {
                if !chain_used[k] {
                    active[k].misses += 1;
                    if active[k].misses > 3 {
                        done.push(active.swap_remove(k));
                        chain_used.swap_remove(k);
                        continue;
                    }
                }
                k += 1;
            }
            for (pi, p) in pts.drain(..).enumerate() {
                if !pt_used[pi] {
                    active.push(Chain { pts: vec![(p, i)], misses: 0 });
                }
            }
        }
        done.append(&mut active);
        done.retain(|c| c.pts.len() >= 4);

        // Stitch chains split by the traversal seam or by short gaps.
        merge_chains(&mut done, link_tol);

        // Where a branch moves faster than link_tol per source sample the
        // per-sample matching loses it; continue each chain end with adaptive
        // sub-sample steps to recover those sections.
        for ci in 0..done.len() {
            for at_tail in [false, true] {
                let ends: Vec<Vec2> = done
                    .iter()
                    .enumerate()
                    .flat_map(|(cj, c)| {
                        if cj == ci {
                            vec![]
                        } else {
                            vec![c.pts[0].0, c.pts.last().unwrap().0]
                        }
                    })
                    .collect();
                let ext = extend_chain_end(solver, ws, img, aspect, &done[ci].pts, at_tail, &ends, link_tol)?;
                if at_tail {
                    done[ci].pts.extend(ext);
                } else {
                    for p in ext {
                        done[ci].pts.insert(0, p);
                    }
                }
            }
        }
        merge_chains(&mut done, link_tol);

        // The end extension can retrace a section already covered by another
        // fragment with offset sub-sample steps; drop chains that mostly lie
        // on a longer chain's polyline.
        drop_duplicate_chains(&mut done);

        // Fast-moving branches leave long chords; subdivide them on the
        // image curve so the polyline stays close to the true curve.
        for chain in &mut done {
            densify_chain(solver, ws, img, chain, aspect, 0.05)?;
        }

        // Put the exact special poses on the polylines. Forward kinematics
        // cannot separate nearly multiple solutions closer than the cube root
        // of its residual tolerance, so chains stop (or leave a sampling gap)
        // well short of the coalescence point; the gap is
        // resolution-independent. Ends snap from further away than interior
        // gaps, which sit between samples on both sides.
        insert_specials(&mut done, &specials, 0.15, 0.08);

        let before = done.len();
        done.retain(|c| c.pts.len() >= 4);
        if done.len() < before {
            warnings.push(format!(
                "{}: {} short characteristic fragments dropped",
                ws.id,
                before - done.len()
            ));
        }
        for chain in done.drain(..) {
            curves.push(build_char_curve(mech, solver.rho1, ws, chain, aspect, link_tol));
        }
    }

    curves.sort_by(|a, b| {
        (b.samples.len(), &a.source_curve).cmp(&(a.samples.len(), &b.source_curve))
    });
    let tag = match aspect {
        AspectLabel::Wa1 => 1,
        AspectLabel::Wa2 => 2,
        AspectLabel::Singular => 0,
    };
    for (k, c) in curves.iter_mut().enumerate() {
        c.id = format!("Sc{}-{}", tag, k + 1);
    }
    Ok((curves, warnings))
}

/// Exact poses where characteristic chains of this aspect terminate: cusp
/// triple poses, char-cusp images, node double poses, and char-crossing
/// images.
fn special_points(
    solver: &FkSolver,
    aspect: AspectLabel,
    cusps: &[CuspPoint],
    nodes: &[NodePoint],
) -> Result<Vec<Vec2>> {
    let mut specials = Vec::new();
    for c in cusps {
        specials.push(Vec2::new(c.triple_pose.theta1, c.triple_pose.alpha));
        let set = solver.solve(c.location.x, c.location.y)?;
        for s in &set.solutions {
            if s.pose.torus_dist(&c.triple_pose) > tol::IMAGE_CLUSTER_RADIUS
                && s.aspect == aspect
            {
                specials.push(Vec2::new(s.pose.theta1, s.pose.alpha));
            }
        }
    }
    for n in nodes {
        specials.push(Vec2::new(n.pair_poses.0.theta1, n.pair_poses.0.alpha));
        specials.push(Vec2::new(n.pair_poses.1.theta1, n.pair_poses.1.alpha));
    }
    Ok(specials)
}

/// Drop chains that duplicate a longer chain's coverage. Two distinct
/// same-aspect branches this close along most of their length would have to
/// hug the singular set, which the discard radius already excludes, so a
/// sustained overlap always means the same branch was traced twice.
fn drop_duplicate_chains(chains: &mut Vec<Chain>) {
    chains.sort_by(|a, b| b.pts.len().cmp(&a.pts.len()));
    let mut keep: Vec<Chain> = Vec::new();
    'outer: for chain in chains.drain(..) {
        for other in &keep {
            let close = chain
                .pts
                .iter()
                .filter(|(p, _)| polyline_dist(&other.pts, *p) < 0.03)
                .count();
            if close * 10 >= chain.pts.len() * 7 {
                continue 'outer;
            }
        }
        keep.push(chain);
    }
    *chains = keep;
}

/// Torus distance from a point to a chain's polyline.
fn polyline_dist(pts: &[(Vec2, usize)], p: Vec2) -> f64 {
    let mut best = f64::MAX;
    for w in pts.windows(2) {
        let a = w[0].0;
        let b = w[1].0;
        let ab = Vec2::new(angle_diff(b.x, a.x), angle_diff(b.y, a.y));
        let ap = Vec2::new(angle_diff(p.x, a.x), angle_diff(p.y, a.y));
        let f = (ap.dot(ab) / ab.norm_sq().max(1e-300)).clamp(0.0, 1.0);
        best = best.min((ap - ab * f).norm());
    }
    best
}

/// Merge chains whose endpoints meet (the traversal seam of a closed source
/// curve splits chains arbitrarily).
fn merge_chains(chains: &mut Vec<Chain>, link_tol: f64) {
    let dist = |a: Vec2, b: Vec2| torus_dist((a.x, a.y), (b.x, b.y));
    loop {
        // tail(i) -> head(j), with optional reversal of j.
        let mut best: Option<(f64, usize, usize, bool)> = None;
        for i in 0..chains.len() {
            for j in 0..chains.len() {
                if i == j {
                    continue;
                }
                let ti = chains[i].pts.last().unwrap().0;
                let hj = chains[j].pts[0].0;
                let tj = chains[j].pts.last().unwrap().0;
                for (d, rev) in [(dist(ti, hj), false), (dist(ti, tj), true)] {
                    if d < link_tol && best.map_or(true, |b| d < b.0) {
                        best = Some((d, i, j, rev));
                    }
                }
            }
        }
        let Some((_, i, j, rev)) = best else { break };
        let mut add = chains.remove(j);
        let i = if i > j { i - 1 } else { i };
        if rev {
            add.pts.reverse();
        }
        chains[i].pts.extend(add.pts);
    }
}

/// Splice the exact special poses into the chains passing through them.
/// Distinct branches can run closer together than the insertion tolerance,
/// so a special is only spliced into the chains that compete with the very
/// nearest one (several curves do legitimately meet at a crossing point).
fn insert_specials(chains: &mut [Chain], specials: &[Vec2], end_tol: f64, interior_tol: f64) {
    enum Site {
        Head,
        Tail,
        Interior(usize),
    }
    for sp in specials {
        let mut hits: Vec<(f64, usize, Site)> = Vec::new();
        for (ci, chain) in chains.iter().enumerate() {
            let m = chain.pts.len();
            if chain
                .pts
                .iter()
                .any(|(p, _)| torus_dist((p.x, p.y), (sp.x, sp.y)) < 1e-9)
            {
                hits.push((0.0, ci, Site::Interior(usize::MAX)));
                continue;
            }
            let d_head = torus_dist((chain.pts[0].0.x, chain.pts[0].0.y), (sp.x, sp.y));
            let d_tail =
                torus_dist((chain.pts[m - 1].0.x, chain.pts[m - 1].0.y), (sp.x, sp.y));
            let mut best: Option<(f64, usize)> = None;
            for k in 0..m - 1 {
                let a = chain.pts[k].0;
                let b = chain.pts[k + 1].0;
                let ab = Vec2::new(angle_diff(b.x, a.x), angle_diff(b.y, a.y));
                let ap = Vec2::new(angle_diff(sp.x, a.x), angle_diff(sp.y, a.y));
                let f = (ap.dot(ab) / ab.norm_sq().max(1e-300)).clamp(0.0, 1.0);
                let d = (ap - ab * f).norm();
                if best.map_or(true, |b| d < b.0) {
                    best = Some((d, k));
                }
            }
            if let Some((d, k)) = best {
                if d < interior_tol && d <= d_head.min(d_tail) {
                    hits.push((d, ci, Site::Interior(k)));
                    continue;
                }
            }
            if d_head < end_tol && d_head <= d_tail {
                hits.push((d_head, ci, Site::Head));
            } else if d_tail < end_tol {
                hits.push((d_tail, ci, Site::Tail));
            }
        }
        let Some(d_best) = hits.iter().map(|h| h.0).min_by(f64::total_cmp) else {
            continue;
        };
        for (d, ci, site) in hits {
            if d > 2.0 * d_best + 0.01 {
                continue;
            }
            let chain = &mut chains[ci];
            match site {
                Site::Interior(usize::MAX) => {}
                Site::Interior(k) => {
                    let src = chain.pts[k].1;
                    chain.pts.insert(k + 1, (*sp, src));
                }
                Site::Head => chain.pts.insert(0, (*sp, chain.pts[0].1)),
                Site::Tail => chain.pts.push((*sp, chain.pts[chain.pts.len() - 1].1)),
            }
        }
    }
}

/// Continue a chain past its end along the image parameterization, halving
/// the source step whenever the branch jumps further than `link_tol`. Stops
/// at a coalescence (step underflow), at another chain's end, or when closing
/// onto the chain's own opposite end.
fn extend_chain_end(
    solver: &FkSolver,
    ws: &TracedCurve,
    img: &TracedCurve,
    aspect: AspectLabel,
    pts: &[(Vec2, usize)],
    at_tail: bool,
    other_ends: &[Vec2],
    link_tol: f64,
) -> Result<Vec<(Vec2, usize)>> {
    let n = ws.seg_count();
    let (end, inner) = if at_tail {
        (pts[pts.len() - 1], pts[pts.len() - 2])
    } else {
        (pts[0], pts[1])
    };
    // Source direction of travel at this end, seam-aware.
    let mut d = end.1 as f64 - inner.1 as f64;
    if ws.closed && d.abs() > n as f64 / 2.0 {
        d -= d.signum() * n as f64;
    }
    let dir = if d == 0.0 { if at_tail { 1.0 } else { -1.0 } } else { d.signum() };
    let own_far = if at_tail { pts[0].0 } else { pts[pts.len() - 1].0 };

    let mut out = Vec::new();
    let mut p_cur = end.0;
    let mut s_cur = end.1 as f64;
    let mut ds = 1.0;
    // Tight acceptance radius and direction continuity keep the extension
    // from hopping onto a nearby branch at a close approach.
    let accept_r = 0.6 * link_tol;
    let mut prev_dir: Option<Vec2> = None;
    while ds >= 1.0 / 64.0 && out.len() < 2 * n {
        let s_next = s_cur + dir * ds;
        if !ws.closed && !(0.0..=n as f64).contains(&s_next) {
            break;
        }
        let q = img.point_at(s_next);
        let w = ws.point_at(s_next);
        let set = solver.solve(q.x, q.y)?;
        let best = set
            .solutions
            .iter()
            .filter(|c| c.aspect == aspect)
            .map(|c| Vec2::new(c.pose.theta1, c.pose.alpha))
            .filter(|p| torus_dist((p.x, p.y), (w.x, w.y)) >= tol::SINGULAR_DISCARD)
            .filter(|p| {
                let step = Vec2::new(angle_diff(p.x, p_cur.x), angle_diff(p.y, p_cur.y));
                match prev_dir {
                    Some(d) if step.norm() > 0.01 => d.dot(step.normalize()) > -0.5,
                    _ => true,
                }
            })
            .map(|p| (torus_dist((p.x, p.y), (p_cur.x, p_cur.y)), p))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match best {
            Some((d, p)) if d <= accept_r => {
                // A first step landing back inside the chain means the travel
                // direction was wrong; leave the end alone.
                if out.is_empty()
                    && torus_dist((p.x, p.y), (inner.0.x, inner.0.y)) < 0.5 * link_tol
                {
                    return Ok(Vec::new());
                }
                let step = Vec2::new(angle_diff(p.x, p_cur.x), angle_diff(p.y, p_cur.y));
                if step.norm() > 0.01 {
                    prev_dir = Some(step.normalize());
                }
                p_cur = p;
                s_cur = s_next;
                out.push((p, s_next.rem_euclid(n as f64).round() as usize % n));
                let stop = other_ends
                    .iter()
                    .chain(std::iter::once(&own_far))
                    .any(|e| torus_dist((p.x, p.y), (e.x, e.y)) < 0.5 * link_tol);
                if stop {
                    break;
                }
                if d < 0.5 * accept_r {
                    ds = (ds * 1.6).min(1.0);
                }
            }
            _ => ds *= 0.5,
        }
    }
    Ok(out)
}

/// Insert intermediate chain points by solving forward kinematics at
/// subdivided image parameters wherever consecutive points are far apart.
fn densify_chain(
    solver: &FkSolver,
    ws: &TracedCurve,
    img: &TracedCurve,
    chain: &mut Chain,
    aspect: AspectLabel,
    max_gap: f64,
) -> Result<()> {
    let n = ws.seg_count();
    let mut out = Vec::with_capacity(chain.pts.len());
    for k in 0..chain.pts.len() {
        out.push(chain.pts[k]);
        if k + 1 == chain.pts.len() {
            continue;
        }
        let (pa, sa) = chain.pts[k];
        let (pb, sb) = chain.pts[k + 1];
        let gap = torus_dist((pa.x, pa.y), (pb.x, pb.y));
        if gap <= max_gap || sa == sb {
            continue;
        }
        let (mut a, mut b) = (sa as f64, sb as f64);
        if ws.closed {
            // Seam-aware source interval.
            let half = n as f64 / 2.0;
            if b - a > half {
                a += n as f64;
            } else if a - b > half {
                b += n as f64;
            }
        }
        let steps = (gap / max_gap).ceil() as usize;
        let d = Vec2::new(angle_diff(pb.x, pa.x), angle_diff(pb.y, pa.y));
        for j in 1..steps {
            let f = j as f64 / steps as f64;
            let s = a + (b - a) * f;
            let q = img.point_at(s);
            let w = ws.point_at(s);
            let guide = Vec2::new(wrap_angle(pa.x + d.x * f), wrap_angle(pa.y + d.y * f));
            let set = solver.solve(q.x, q.y)?;
            let best = set
                .solutions
                .iter()
                .filter(|c| c.aspect == aspect)
                .map(|c| Vec2::new(c.pose.theta1, c.pose.alpha))
                .filter(|p| torus_dist((p.x, p.y), (w.x, w.y)) >= tol::SINGULAR_DISCARD)
                .min_by(|u, v| {
                    torus_dist((u.x, u.y), (guide.x, guide.y))
                        .total_cmp(&torus_dist((v.x, v.y), (guide.x, guide.y)))
                });
            if let Some(p) = best {
                if torus_dist((p.x, p.y), (guide.x, guide.y)) < gap {
                    out.push((p, s.round() as usize % n));
                }
            }
        }
    }
    chain.pts = out;
    Ok(())
}

fn build_char_curve(
    mech: &Mechanism,
    rho1: f64,
    ws: &TracedCurve,
    chain: Chain,
    aspect: AspectLabel,
    link_tol: f64,
) -> CharCurve {
    let m = chain.pts.len();
    let closed = m > 8
        && torus_dist(
            (chain.pts[0].0.x, chain.pts[0].0.y),
            (chain.pts[m - 1].0.x, chain.pts[m - 1].0.y),
        ) < link_tol;
    let mut samples = Vec::with_capacity(m);
    for (k, (p, src)) in chain.pts.iter().enumerate() {
        let pose = SlicePose::new(p.x, p.y, rho1);
        // Pushforward of the source tangent through g, pulled back at the
        // preimage point: J(p) t_p = J(w) t_w.
        let tangent = (|| {
            let sw = ws.sample(*src);
            let wpose = SlicePose::new(sw.point.x, sw.point.y, rho1);
            let rhs = mech.ik_jacobian(&wpose).ok()?.mul_vec(sw.tangent);
            mech.ik_jacobian(&pose).ok()?.solve(rhs)
        })();
        let chord = {
            let (a, b) = if k + 1 < m {
                (chain.pts[k].0, chain.pts[k + 1].0)
            } else {
                (chain.pts[k - 1].0, chain.pts[k].0)
            };
            Vec2::new(angle_diff(b.x, a.x), angle_diff(b.y, a.y))
        };
        let mut t = match tangent {
            Some(t) if t.norm() > 1e-12 => t.normalize(),
            _ => chord.normalize(),
        };
        if t.dot(chord) < 0.0 {
            t = -t;
        }
        samples.push(CurveSample { point: Vec2::new(p.x, p.y), tangent: t });
    }
    CharCurve {
        samples: TracedCurve {
            domain: CurveDomain::WorkspaceSlice,
            samples,
            closed,
            id: String::new(),
        },
        aspect,
        source_curve: ws.id.clone(),
        kind: CharKind::NonsingularImage,
        id: String::new(),
        bounded_region: None,
    }
}

/// Rasterize every curve and flood-fill the complement into basic regions.
pub fn decompose_basic_regions(
    mech: &Mechanism,
    rho1: f64,
    grid_n: usize,
    singular: &[CurvePair],
    chars: &[CharCurve],
) -> Result<RegionDecomposition> {
    let h = TAU / grid_n as f64;
    let cell_of = |x: f64, y: f64| -> usize {
        let ix = (wrap_angle(x).rem_euclid(TAU) / h) as usize % grid_n;
        let iy = (wrap_angle(y).rem_euclid(TAU) / h) as usize % grid_n;
        iy * grid_n + ix
    };
    // curve_mark[cell] = index+1 of the first curve crossing the cell.
    let mut curve_mark = vec![0u32; grid_n * grid_n];
    let mut curve_ids = Vec::new();
    {
        let mark = |curve: &TracedCurve, idx: u32, curve_mark: &mut Vec<u32>| {
            for i in 0..curve.seg_count() {
                let a = curve.sample(i).point;
                let b = curve.sample(i + 1).point;
                let d = Vec2::new(angle_diff(b.x, a.x), angle_diff(b.y, a.y));
                let steps = (d.norm() / (0.4 * h)).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let f = s as f64 / steps as f64;
                    let c = cell_of(a.x + d.x * f, a.y + d.y * f);
                    if curve_mark[c] == 0 {
                        curve_mark[c] = idx + 1;
                    }
                }
            }
        };
        for pair in singular {
            curve_ids.push(pair.workspace.id.clone());
            mark(&pair.workspace, (curve_ids.len() - 1) as u32, &mut curve_mark);
        }
        for c in chars {
            curve_ids.push(c.id.clone());
            mark(&c.samples, (curve_ids.len() - 1) as u32, &mut curve_mark);
        }
    }

    let mut labels = vec![-1i32; grid_n * grid_n];
    let mut regions: Vec<(usize, Vec<usize>)> = Vec::new(); // (seed cell, cells)
    let mut stack = Vec::new();
    for start in 0..grid_n * grid_n {
        if curve_mark[start] != 0 || labels[start] >= 0 {
            continue;
        }
        let idx = regions.len() as i32;
        labels[start] = idx;
        stack.push(start);
        let mut cells = Vec::new();
        while let Some(cell) = stack.pop() {
            cells.push(cell);
            let (ix, iy) = (cell % grid_n, cell / grid_n);
            for (nx, ny) in [
                ((ix + 1) % grid_n, iy),
                ((ix + grid_n - 1) % grid_n, iy),
                (ix, (iy + 1) % grid_n),
                (ix, (iy + grid_n - 1) % grid_n),
            ] {
                let nc = ny * grid_n + nx;
                if curve_mark[nc] == 0 && labels[nc] < 0 {
                    labels[nc] = idx;
                    stack.push(nc);
                }
            }
        }
        regions.push((start, cells));
    }

    // Slivers from rasterization clutter are noise, not basic regions.
    regions.retain(|(_, cells)| {
        if cells.len() < 8 {
            for &c in cells {
                labels[c] = -1;
            }
            false
        } else {
            true
        }
    });
    for (idx, (_, cells)) in regions.iter().enumerate() {
        for &c in cells {
            labels[c] = idx as i32;
        }
    }

    // Interior representative, aspect, and boundary curves per region.
    let mut out = Vec::new();
    let mut counters = [0usize; 3];
    for (ri, (seed, cells)) in regions.iter().enumerate() {
        let interior = cells
            .iter()
            .copied()
            .find(|&cell| {
                let (ix, iy) = (cell % grid_n, cell / grid_n);
                [
                    ((ix + 1) % grid_n, iy),
                    ((ix + grid_n - 1) % grid_n, iy),
                    (ix, (iy + 1) % grid_n),
                    (ix, (iy + grid_n - 1) % grid_n),
                ]
                .iter()
                .all(|&(nx, ny)| labels[ny * grid_n + nx] == ri as i32)
            })
            .unwrap_or(*seed);
        let rep = SlicePose::new(
            (interior % grid_n) as f64 * h + 0.5 * h,
            (interior / grid_n) as f64 * h + 0.5 * h,
            rho1,
        );
        let aspect = aspect_of(mech, &rep)?;
        let mut boundary: Vec<String> = Vec::new();
        for &cell in cells {
            let (ix, iy) = (cell % grid_n, cell / grid_n);
            for (nx, ny) in [
                ((ix + 1) % grid_n, iy),
                ((ix + grid_n - 1) % grid_n, iy),
                (ix, (iy + 1) % grid_n),
                (ix, (iy + grid_n - 1) % grid_n),
            ] {
                let m = curve_mark[ny * grid_n + nx];
                if m != 0 {
                    let id = &curve_ids[(m - 1) as usize];
                    if !boundary.contains(id) {
                        boundary.push(id.clone());
                    }
                }
            }
        }
        boundary.sort();
        let tag = match aspect {
            AspectLabel::Wa1 => 1,
            AspectLabel::Wa2 => 2,
            AspectLabel::Singular => 0,
        };
        counters[tag] += 1;
        out.push(BasicRegion {
            id: format!("WAb{}-{}", tag, counters[tag]),
            aspect,
            representative: rep,
            cell_count: cells.len(),
            boundary,
        });
    }
    let mut curves = Vec::new();
    for pair in singular {
        curves.push(pair.workspace.clone());
    }
    for c in chars {
        let mut t = c.samples.clone();
        t.id = c.id.clone();
        curves.push(t);
    }
    Ok(RegionDecomposition { grid_n, rho1, labels, regions: out, curves })
}

impl RegionDecomposition {
    fn label_at(&self, x: f64, y: f64) -> i32 {
        let h = TAU / self.grid_n as f64;
        let ix = (x.rem_euclid(TAU) / h) as usize % self.grid_n;
        let iy = (y.rem_euclid(TAU) / h) as usize % self.grid_n;
        self.labels[iy * self.grid_n + ix]
    }

    /// Region index of the cell containing the pose. A pose inside the raster
    /// band of a curve is resolved by stepping off the nearest curve segment
    /// perpendicularly, staying on the pose's side of the curve.
    pub fn region_of_pose(&self, pose: &SlicePose) -> Option<usize> {
        let l = self.label_at(pose.theta1, pose.alpha);
        if l >= 0 {
            return Some(l as usize);
        }
        let p = Vec2::new(pose.theta1, pose.alpha);
        let mut best: Option<(f64, Vec2, f64)> = None; // (dist, seg dir, side)
        for curve in &self.curves {
            for i in 0..curve.seg_count() {
                let a = curve.sample(i).point;
                let b = curve.sample(i + 1).point;
                let ab = Vec2::new(angle_diff(b.x, a.x), angle_diff(b.y, a.y));
                let ap = Vec2::new(angle_diff(p.x, a.x), angle_diff(p.y, a.y));
                let t = (ap.dot(ab) / ab.norm_sq().max(1e-300)).clamp(0.0, 1.0);
                let off = ap - ab * t;
                let d = off.norm();
                if best.map_or(true, |b| d < b.0) {
                    best = Some((d, ab, ab.cross(ap)));
                }
            }
        }
        let (_, dir, side) = best?;
        if dir.norm() < 1e-12 {
            return None;
        }
        // Perpendicular on the pose's side of the segment.
        let mut n = Vec2::new(-dir.y, dir.x).normalize();
        if side < 0.0 {
            n = -n;
        }
        let h = TAU / self.grid_n as f64;
        for k in 1..=8 {
            let step = 0.5 * h * k as f64;
            let l = self.label_at(p.x + n.x * step, p.y + n.y * step);
            if l >= 0 {
                return Some(l as usize);
            }
        }
        None
    }

    /// Indices of the basic regions whose components contain the joint point
    /// (pullback test: one region per forward-kinematics solution).
    pub fn regions_containing(&self, solver: &FkSolver, p: Vec2) -> Result<Vec<usize>> {
        let set = solver.solve(p.x, p.y)?;
        let mut out = Vec::new();
        for c in &set.solutions {
            if let Some(r) = self.region_of_pose(&c.pose) {
                if !out.contains(&r) {
                    out.push(r);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Joint-space images of the basic regions.
pub fn basic_components(mech: &Mechanism, decomp: &RegionDecomposition) -> Vec<BasicComponent> {
    let h = TAU / decomp.grid_n as f64;
    let stride = (decomp.grid_n / 128).max(1);
    let mut samples: Vec<Vec<Vec2>> = vec![Vec::new(); decomp.regions.len()];
    for iy in (0..decomp.grid_n).step_by(stride) {
        for ix in (0..decomp.grid_n).step_by(stride) {
            let l = decomp.labels[iy * decomp.grid_n + ix];
            if l < 0 {
                continue;
            }
            let pose = SlicePose::new(
                ix as f64 * h + 0.5 * h,
                iy as f64 * h + 0.5 * h,
                decomp.rho1,
            );
            let jt = mech.inverse_kinematics(&pose);
            samples[l as usize].push(Vec2::new(jt.rho2, jt.rho3));
        }
    }
    decomp
        .regions
        .iter()
        .zip(samples)
        .map(|(r, s)| BasicComponent { region_id: r.id.clone(), samples: s })
        .collect()
}

/// Tag each nonsingular curve with a region it bounds.
pub fn attach_bounded_regions(chars: &mut [CharCurve], decomp: &RegionDecomposition) {
    for c in chars.iter_mut() {
        if c.kind != CharKind::NonsingularImage {
            continue;
        }
        if let Some(r) = decomp
            .regions
            .iter()
            .find(|r| r.boundary.iter().any(|b| b == &c.id))
        {
            c.bounded_region = Some(r.id.clone());
        }
    }
}

/// Pointwise membership residual: smallest joint-space distance from g(p) to
/// the image polyline of any singular curve.
pub fn membership_residual(mech: &Mechanism, pairs: &[CurvePair], pose: &SlicePose) -> f64 {
    let jt = mech.inverse_kinematics(pose);
    let p = Vec2::new(jt.rho2, jt.rho3);
    let mut best = f64::INFINITY;
    for pair in pairs {
        let img = &pair.image;
        for i in 0..img.seg_count() {
            let a = img.sample(i).point;
            let b = img.sample(i + 1).point;
            let ab = b - a;
            let t = ((p - a).dot(ab) / ab.norm_sq().max(1e-300)).clamp(0.0, 1.0);
            best = best.min(p.dist(a + ab * t));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jointspace::{detect_cusps, detect_nodes};
    use crate::kinematics::{FkOptions, FkSolver, Mechanism};
    use crate::model::{EdgeAssignment, ManipulatorGeometry};
    use crate::singularity::{singular_curve_pairs, singular_value};
    use std::sync::OnceLock;

    struct Fixture {
        solver: FkSolver,
        pairs: Vec<CurvePair>,
        chars1: Vec<CharCurve>,
        chars2: Vec<CharCurve>,
        decomp: RegionDecomposition,
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
            let (chars1, w1) =
                characteristic_curves(&solver, &pairs, AspectLabel::Wa1, &cusps, &nodes).unwrap();
            let (chars2, w2) =
                characteristic_curves(&solver, &pairs, AspectLabel::Wa2, &cusps, &nodes).unwrap();
            assert!(w1.is_empty(), "{w1:?}");
            assert!(w2.is_empty(), "{w2:?}");
            let mut all = chars1.clone();
            all.extend(chars2.iter().cloned());
            let decomp =
                decompose_basic_regions(&solver.mech, 17.0, 256, &pairs, &all).unwrap();
            Fixture { solver, pairs, chars1, chars2, decomp }
        })
    }

    #[test]
    fn singular_images_wrap_the_traced_curves() {
        let fix = fixture();
        let imgs = singular_images(&fix.pairs);
        assert_eq!(imgs.len(), fix.pairs.len());
        assert_eq!(imgs[0].kind, CharKind::SingularImage);
        assert_eq!(imgs[0].id, format!("{}s", fix.pairs[0].workspace.id));
        assert_eq!(imgs[0].samples.len(), fix.pairs[0].workspace.len());
    }

    #[test]
    fn char_curves_exist_in_both_aspects() {
        let fix = fixture();
        let big = |cs: &[CharCurve]| cs.iter().filter(|c| c.samples.len() >= 50).count();
        assert_eq!(big(&fix.chars1), 5);
        assert_eq!(big(&fix.chars2), 5);
        for c in fix.chars1.iter().chain(&fix.chars2) {
            assert!(c.samples.len() >= 4);
            assert_eq!(c.kind, CharKind::NonsingularImage);
            assert_eq!(c.source_curve, "S0");
        }
    }

    #[test]
    fn char_samples_stay_in_aspect_and_on_the_image() {
        let fix = fixture();
        let mech = &fix.solver.mech;
        for (aspect, chars) in
            [(AspectLabel::Wa1, &fix.chars1), (AspectLabel::Wa2, &fix.chars2)]
        {
            for c in chars {
                assert_eq!(c.aspect, aspect);
                let n = c.samples.len();
                for k in 2..n.saturating_sub(2) {
                    let p = c.samples.sample(k).point;
                    let pose = SlicePose::new(p.x, p.y, 17.0);
                    // Exact special poses spliced into the interior sit on the
                    // singular curve itself; everything else must stay inside
                    // the aspect.
                    let lab = aspect_of(mech, &pose).unwrap();
                    if lab != aspect {
                        let det = singular_value(mech, &pose).unwrap();
                        assert!(det.abs() < 1e-6, "{} sample {k}: off-aspect, det {det:.2e}", c.id);
                    }
                    let r = membership_residual(mech, &fix.pairs, &pose);
                    assert!(r < 5e-3, "{} sample {k}: residual {r:.2e}", c.id);
                }
            }
        }
    }

    #[test]
    fn count_six_domain_pulls_back_to_three_regions_per_aspect() {
        let fix = fixture();
        let rs = fix
            .decomp
            .regions_containing(&fix.solver, Vec2::new(15.0, 15.0))
            .unwrap();
        assert_eq!(rs.len(), 6);
        let wa1 = rs
            .iter()
            .filter(|&&r| fix.decomp.regions[r].aspect == AspectLabel::Wa1)
            .count();
        assert_eq!(wa1, 3);
        assert_eq!(rs.len() - wa1, 3);
    }

    #[test]
    fn count_four_domain_pulls_back_to_four_regions() {
        let fix = fixture();
        let rs = fix
            .decomp
            .regions_containing(&fix.solver, Vec2::new(13.25, 20.39))
            .unwrap();
        assert_eq!(rs.len(), 4);
    }

    #[test]
    fn regions_partition_the_aspects() {
        let fix = fixture();
        assert!(fix.decomp.regions.len() >= 8);
        for r in &fix.decomp.regions {
            assert!(r.aspect != AspectLabel::Singular, "{} on the curve", r.id);
            assert_eq!(aspect_of(&fix.solver.mech, &r.representative).unwrap(), r.aspect);
            assert!(!r.boundary.is_empty(), "{} has no boundary", r.id);
        }
        // Every non-curve cell belongs to exactly one region.
        let counted: usize = fix.decomp.regions.iter().map(|r| r.cell_count).sum();
        let labeled = fix.decomp.labels.iter().filter(|&&l| l >= 0).count();
        assert_eq!(counted, labeled);
    }

    #[test]
    fn components_map_back_into_their_region() {
        let fix = fixture();
        let comps = basic_components(&fix.solver.mech, &fix.decomp);
        assert_eq!(comps.len(), fix.decomp.regions.len());
        for (ri, comp) in comps.iter().enumerate() {
            assert!(!comp.samples.is_empty(), "{} empty", comp.region_id);
            // Spot-check: pulling the image of the representative back through
            // forward kinematics recovers a pose inside the same region.
            let rep = &fix.decomp.regions[ri].representative;
            let jt = fix.solver.mech.inverse_kinematics(rep);
            let set = fix.solver.solve(jt.rho2, jt.rho3).unwrap();
            let hit = set
                .solutions
                .iter()
                .any(|c| fix.decomp.region_of_pose(&c.pose) == Some(ri));
            assert!(hit, "{} not recovered", comp.region_id);
        }
    }

    #[test]
    fn bounded_regions_attach_to_large_curves() {
        let fix = fixture();
        let mut all = fix.chars1.clone();
        all.extend(fix.chars2.iter().cloned());
        attach_bounded_regions(&mut all, &fix.decomp);
        for c in &all {
            if c.samples.len() >= 50 {
                assert!(c.bounded_region.is_some(), "{} unattached", c.id);
            }
        }
    }
}
