//! Numerical continuation of direct-kinematics solution branches along a
//! joint-space path at fixed rho1.
//!
//! Branches are stepped with an adaptive corrector (the Newton iteration of
//! the slice residual system, started from the previous pose). Two branches
//! merging on the singular locus produce a COALESCENCE event and terminate;
//! crossing back into a higher-count domain produces BIRTH events. For closed
//! paths the induced permutation of the starting solutions is reported.

use crate::error::{Error, Result};
use crate::kinematics::{FkSolver, JointCoords, SlicePose, SolutionSet};
use crate::singularity::{aspect_of, AspectLabel};
use crate::tol;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EventKind {
    Coalescence,
    Birth,
}

#[derive(Clone, Debug)]
pub struct BranchEvent {
    pub t: f64,
    pub kind: EventKind,
    pub branch_ids: (usize, usize),
    pub location: SlicePose,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BranchOrigin {
    /// Index into the starting solution set.
    Start(usize),
    /// Created by the birth event with this index into `events`.
    Born(usize),
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub id: usize,
    pub origin: BranchOrigin,
    pub pose: SlicePose,
    pub alive: bool,
    /// Aspect shortly before the branch ended (or currently, if alive).
    pub aspect: AspectLabel,
    /// Path parameter where the branch ended (1.0 for survivors).
    pub end_t: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ContinuationOptions {
    pub initial_step: f64,
    pub min_step: f64,
    /// Detect branches born along the path (needed for closed loops).
    pub track_births: bool,
    /// Treat the path as closed and report the induced permutation.
    pub closed: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            initial_step: 0.01,
            min_step: 1e-11,
            track_births: false,
            closed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContinuationResult {
    pub branches: Vec<Branch>,
    pub events: Vec<BranchEvent>,
    /// For closed paths: permutation of start indices; `perm[i]` is the start
    /// solution where the branch that began at start solution i arrives.
    pub permutation: Option<Vec<usize>>,
}

/// Maximum pose motion accepted in a single corrector step; larger jumps mean
/// the corrector landed on a different branch.
const MAX_BRANCH_STEP: f64 = 0.35;

pub fn continue_solutions<F>(solver: &FkSolver, path: F, start: &SolutionSet, opts: ContinuationOptions) -> Result<ContinuationResult>
where
    F: Fn(f64) -> (f64, f64),
{
    let mech = &solver.mech;
    let mut branches: Vec<Branch> = start
        .solutions
        .iter()
        .enumerate()
        .map(|(i, s)| Branch {
            id: i,
            origin: BranchOrigin::Start(i),
            pose: s.pose,
            alive: true,
            aspect: s.aspect,
            end_t: 0.0,
        })
        .collect();
    let mut events: Vec<BranchEvent> = Vec::new();
    let mut t = 0.0f64;
    let mut dt = opts.initial_step;
    let mut last_birth_check = 0.0f64;

    while t < 1.0 {
        let t2 = (t + dt).min(1.0);
        let (r2, r3) = path(t2);
        let joint = JointCoords::new(solver.rho1, r2, r3);
        // Trial-correct every alive branch at t2.
        let mut trial: Vec<(usize, SlicePose)> = Vec::new();
        let mut ok = true;
        for b in branches.iter().filter(|b| b.alive) {
            match solver.newton(b.pose, &joint) {
                Some(p) if p.torus_dist(&b.pose) <= MAX_BRANCH_STEP => trial.push((b.id, p)),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            // Reject steps where two branches collapsed onto one root.
            'outer: for a in 0..trial.len() {
                for c in (a + 1)..trial.len() {
                    if trial[a].1.torus_dist(&trial[c].1) < solver.opts.dedupe_tol {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            for (id, p) in &trial {
                let b = &mut branches[*id];
                b.pose = *p;
                b.end_t = t2;
                let aspect = aspect_of(mech, p)?;
                if aspect != AspectLabel::Singular {
                    b.aspect = aspect;
                }
            }
            t = t2;
            // Immediate coalescence: a pair already closer than the join radius.
            kill_joined_pairs(solver, &mut branches, &mut events, t, tol::COALESCE_JOIN);
            if dt < opts.initial_step {
                dt = (dt * 2.0).min(opts.initial_step);
            }
            if opts.track_births && (t - last_birth_check >= 0.02 || t >= 1.0) {
                detect_births(solver, &path, &mut branches, &mut events, last_birth_check, t)?;
                last_birth_check = t;
            }
            continue;
        }
        // Step failed: shrink, or declare a coalescence if a pair has closed in.
        dt *= 0.5;
        if dt < opts.min_step {
            let close = closest_alive_pair(&branches);
            match close {
                Some((i, j, d)) if d < 1e-4 => {
                    emit_coalescence(solver, &mut branches, &mut events, t, i, j)?;
                    dt = opts.initial_step;
                }
                Some((_, _, d)) => {
                    return Err(Error::StepFailure {
                        t,
                        msg: format!("adaptive refinement exhausted with closest pair at distance {d:.3e}"),
                    });
                }
                None => {
                    return Err(Error::StepFailure {
                        t,
                        msg: "adaptive refinement exhausted with no coalescing pair".into(),
                    });
                }
            }
        }
    }

    let permutation = if opts.closed {
        Some(loop_permutation(solver, start, &branches, &events)?)
    } else {
        None
    };
    Ok(ContinuationResult {
        branches,
        events,
        permutation,
    })
}

fn closest_alive_pair(branches: &[Branch]) -> Option<(usize, usize, f64)> {
    let alive: Vec<&Branch> = branches.iter().filter(|b| b.alive).collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..alive.len() {
        for b in (a + 1)..alive.len() {
            let d = alive[a].pose.torus_dist(&alive[b].pose);
            if best.map_or(true, |(_, _, bd)| d < bd) {
                best = Some((alive[a].id, alive[b].id, d));
            }
        }
    }
    best
}

fn kill_joined_pairs(solver: &FkSolver, branches: &mut [Branch], events: &mut Vec<BranchEvent>, t: f64, radius: f64) {
    loop {
        let close = closest_alive_pair(branches);
        match close {
            Some((i, j, d)) if d < radius => {
                let _ = emit_coalescence(solver, branches, events, t, i, j);
            }
            _ => break,
        }
    }
}

fn emit_coalescence(solver: &FkSolver, branches: &mut [Branch], events: &mut Vec<BranchEvent>, t: f64, i: usize, j: usize) -> Result<()> {
    let pa = branches[i].pose;
    let pb = branches[j].pose;
    let dt2 = crate::math::angle_diff(pb.theta1, pa.theta1);
    let da2 = crate::math::angle_diff(pb.alpha, pa.alpha);
    let mid = SlicePose::new(pa.theta1 + 0.5 * dt2, pa.alpha + 0.5 * da2, solver.rho1);
    branches[i].alive = false;
    branches[j].alive = false;
    branches[i].end_t = t;
    branches[j].end_t = t;
    events.push(BranchEvent {
        t,
        kind: EventKind::Coalescence,
        branch_ids: (i, j),
        location: mid,
    });
    Ok(())
}

/// Compare the live branch set against a fresh forward-kinematics solve and
/// spawn branches for unmatched roots, bisecting for the birth parameter.
fn detect_births<F>(solver: &FkSolver, path: &F, branches: &mut Vec<Branch>, events: &mut Vec<BranchEvent>, t_lo: f64, t: f64) -> Result<()>
where
    F: Fn(f64) -> (f64, f64),
{
    let (r2, r3) = path(t);
    let set = solver.solve(r2, r3)?;
    let unmatched: Vec<SlicePose> = set
        .solutions
        .iter()
        .map(|s| s.pose)
        .filter(|p| {
            !branches
                .iter()
                .filter(|b| b.alive)
                .any(|b| b.pose.torus_dist(p) < 1e-3)
        })
        .collect();
    if unmatched.is_empty() {
        return Ok(());
    }
    // Localize the birth parameter: earliest t where the extra roots exist.
    let mut lo = t_lo;
    let mut hi = t;
    let expected = unmatched.len();
    for _ in 0..25 {
        let mid = 0.5 * (lo + hi);
        let (r2, r3) = path(mid);
        let set_mid = solver.solve(r2, r3)?;
        // Branch poses are held at parameter t; within the short birth-check
        // window they move little, so a loose radius suffices.
        let extra = set_mid
            .solutions
            .iter()
            .filter(|s| {
                !branches
                    .iter()
                    .filter(|b| b.alive)
                    .any(|b| b.pose.torus_dist(&s.pose) < 0.15)
            })
            .count();
        if extra >= expected {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t_birth = hi;
    // Pair unmatched roots mutually (a birth creates a mirrored pair).
    let mut remaining: Vec<SlicePose> = unmatched;
    while remaining.len() >= 2 {
        let p0 = remaining.remove(0);
        let (k, _) = remaining
            .iter()
            .enumerate()
            .map(|(k, p)| (k, p0.torus_dist(p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let p1 = remaining.remove(k);
        let event_index = events.len();
        let id0 = branches.len();
        let id1 = branches.len() + 1;
        let dt2 = crate::math::angle_diff(p1.theta1, p0.theta1);
        let da2 = crate::math::angle_diff(p1.alpha, p0.alpha);
        let mid = SlicePose::new(p0.theta1 + 0.5 * dt2, p0.alpha + 0.5 * da2, solver.rho1);
        events.push(BranchEvent {
            t: t_birth,
            kind: EventKind::Birth,
            branch_ids: (id0, id1),
            location: mid,
        });
        for p in [p0, p1] {
            let aspect = aspect_of(&solver.mech, &p)?;
            branches.push(Branch {
                id: branches.len(),
                origin: BranchOrigin::Born(event_index),
                pose: p,
                alive: true,
                aspect,
                end_t: t,
            });
        }
    }
    if remaining.len() == 1 {
        return Err(Error::numerical("continuation", "odd number of newborn branches"));
    }
    Ok(())
}

/// Permutation of start solutions induced by a closed path. Surviving branches
/// map their origin to the start solution nearest their final pose; branches
/// lost at coalescences are paired with branches born later in the same
/// aspect, in event order.
fn loop_permutation(solver: &FkSolver, start: &SolutionSet, branches: &[Branch], events: &[BranchEvent]) -> Result<Vec<usize>> {
    let n = start.solutions.len();
    let match_start = |pose: &SlicePose| -> Result<usize> {
        let (best, d) = start
            .solutions
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.pose.torus_dist(pose)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if d > 1e-5 {
            return Err(Error::numerical(
                "continuation",
                format!("closed-path endpoint {d:.3e} away from every start solution"),
            ));
        }
        Ok(best)
    };
    let mut perm = vec![usize::MAX; n];
    // Survivors that started at t = 0.
    let mut born_ends: Vec<(f64, AspectLabel, usize)> = Vec::new(); // (birth t, aspect, end index)
    for b in branches.iter().filter(|b| b.alive) {
        let end = match_start(&b.pose)?;
        match b.origin {
            BranchOrigin::Start(i) => perm[i] = end,
            BranchOrigin::Born(e) => born_ends.push((events[e].t, b.aspect, end)),
        }
    }
    // Branches lost mid-path, in death order.
    let mut dead: Vec<(f64, AspectLabel, usize)> = branches
        .iter()
        .filter_map(|b| match (b.alive, b.origin) {
            (false, BranchOrigin::Start(i)) => Some((b.end_t, b.aspect, i)),
            _ => None,
        })
        .collect();
    dead.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    born_ends.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for aspect in [AspectLabel::Wa1, AspectLabel::Wa2] {
        let d: Vec<usize> = dead.iter().filter(|x| x.1 == aspect).map(|x| x.2).collect();
        let e: Vec<usize> = born_ends.iter().filter(|x| x.1 == aspect).map(|x| x.2).collect();
        if d.len() != e.len() {
            return Err(Error::numerical(
                "continuation",
                format!("unbalanced deaths ({}) and births ({}) in {aspect}", d.len(), e.len()),
            ));
        }
        for (i, end) in d.into_iter().zip(e) {
            perm[i] = end;
        }
    }
    // A dead branch that was never rebalanced, or a double assignment, means
    // the match radius failed.
    let mut seen = vec![false; n];
    for &p in &perm {
        if p == usize::MAX || seen[p] {
            return Err(Error::numerical("continuation", "endpoint matching did not produce a permutation"));
        }
        seen[p] = true;
    }
    let _ = solver;
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{FkOptions, FkSolver, Mechanism};
    use crate::math::Vec2;
    use crate::model::{EdgeAssignment, ManipulatorGeometry};

    fn reference_solver() -> FkSolver {
        let g = ManipulatorGeometry::new(
            Vec2::new(0.0, 0.0),
            Vec2::new(15.91, 0.0),
            Vec2::new(0.0, 10.0),
            17.04,
            16.54,
            20.84,
            EdgeAssignment::default(),
        )
        .unwrap();
        FkSolver::new(Mechanism::new(g), 17.0, FkOptions::default())
    }

    #[test]
    fn straight_path_loses_one_mirrored_pair() {
        let solver = reference_solver();
        let start = solver.solve(15.0, 15.0).unwrap();
        assert_eq!(start.count(), 6);
        let path = |t: f64| (15.0 + t * (13.25 - 15.0), 15.0 + t * (20.39 - 15.0));
        let result = continue_solutions(&solver, path, &start, ContinuationOptions::default()).unwrap();
        assert_eq!(result.events.len(), 1, "events: {:?}", result.events);
        assert_eq!(result.events[0].kind, EventKind::Coalescence);
        let alive = result.branches.iter().filter(|b| b.alive).count();
        assert_eq!(alive, 4);
        // The lost pair is one solution from each aspect.
        let dead: Vec<&Branch> = result.branches.iter().filter(|b| !b.alive).collect();
        assert_eq!(dead.len(), 2);
        assert_ne!(dead[0].aspect, dead[1].aspect);
        // They coincide at the crossing.
        assert!(dead[0].pose.torus_dist(&dead[1].pose) < 1e-4);
        // Final count agrees with a direct solve.
        let end = solver.solve(13.25, 20.39).unwrap();
        assert_eq!(end.count(), 4);
        // Mirrored pair: opposite determinant signs just before the merge.
        assert_ne!(dead[0].aspect, dead[1].aspect);
    }

    #[test]
    fn trivial_loop_is_identity() {
        let solver = reference_solver();
        let start = solver.solve(15.0, 15.0).unwrap();
        // Small loop well inside the 6-solution domain.
        let path = |t: f64| {
            let a = std::f64::consts::TAU * t;
            (15.0 + 0.3 * a.cos() - 0.3, 15.0 + 0.3 * a.sin())
        };
        let opts = ContinuationOptions {
            closed: true,
            track_births: true,
            ..Default::default()
        };
        let result = continue_solutions(&solver, path, &start, opts).unwrap();
        assert!(result.events.is_empty());
        let perm = result.permutation.unwrap();
        assert_eq!(perm, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn path_concatenation_composes_permutations() {
        let solver = reference_solver();
        let start = solver.solve(15.0, 15.0).unwrap();
        // Two trivial loops traversed in sequence: identity o identity.
        let path = |t: f64| {
            let phase = if t < 0.5 { 2.0 * t } else { 2.0 * (t - 0.5) };
            let a = std::f64::consts::TAU * phase;
            (15.0 + 0.2 * a.cos() - 0.2, 15.0 + 0.2 * a.sin())
        };
        let opts = ContinuationOptions {
            closed: true,
            track_births: true,
            ..Default::default()
        };
        let result = continue_solutions(&solver, path, &start, opts).unwrap();
        assert_eq!(result.permutation.unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }
}
