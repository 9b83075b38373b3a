//! Acceptance suite for the reference slice (rho1 = 17).
//!
//! Each criterion is one test and prints a single PASS line when it holds;
//! a failed assertion marks the criterion failed. The heavy slice analyses
//! at grid 512 and 1024 are shared between criteria through lazy fixtures.

use std::f64::consts::TAU;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triplanar::charsurf::{characteristic_curves, CharCurve};
use triplanar::continuation::{continue_solutions, ContinuationOptions, EventKind};
use triplanar::jointspace::{
    detect_cusps, detect_nodes, node_quadrant_counts, quadrant_pattern_ok, CuspPoint, NodePoint,
};
use triplanar::kinematics::{FkOptions, FkSolver, JointCoords, Mechanism, SlicePose};
use triplanar::math::Vec2;
use triplanar::model::{EdgeAssignment, ManipulatorGeometry};
use triplanar::singularity::{singular_curve_pairs, AspectLabel, CurvePair};
use triplanar::verify::{verify_slice, ImageClass, VerificationReport};

fn mechanism() -> Mechanism {
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
    Mechanism::new(geom)
}

fn solver() -> &'static FkSolver {
    static S: OnceLock<FkSolver> = OnceLock::new();
    S.get_or_init(|| FkSolver::new(mechanism(), 17.0, FkOptions::default()))
}

struct SliceFixture {
    pairs: Vec<CurvePair>,
    cusps: Vec<CuspPoint>,
    nodes: Vec<NodePoint>,
    chars: Vec<CharCurve>,
    report: VerificationReport,
    /// Time for tracing plus cusp detection.
    trace_time: Duration,
    /// Time for the full pipeline including verification.
    total_time: Duration,
}

fn analyze_at(grid_n: usize) -> SliceFixture {
    let solver = solver();
    let t0 = Instant::now();
    let (pairs, _) = singular_curve_pairs(&solver.mech, 17.0, grid_n).unwrap();
    let (cusps, _) = detect_cusps(solver, &pairs).unwrap();
    let trace_time = t0.elapsed();
    let (nodes, _) = detect_nodes(solver, &pairs, &cusps).unwrap();
    let mut chars = Vec::new();
    for aspect in [AspectLabel::Wa1, AspectLabel::Wa2] {
        let (cs, _) = characteristic_curves(solver, &pairs, aspect, &cusps, &nodes).unwrap();
        chars.extend(cs);
    }
    let report = verify_slice(solver, &pairs, &cusps, &nodes, &chars, grid_n).unwrap();
    let total_time = t0.elapsed();
    SliceFixture { pairs, cusps, nodes, chars, report, trace_time, total_time }
}

fn slice512() -> &'static SliceFixture {
    static F: OnceLock<SliceFixture> = OnceLock::new();
    F.get_or_init(|| analyze_at(512))
}

fn slice1024() -> &'static SliceFixture {
    static F: OnceLock<SliceFixture> = OnceLock::new();
    F.get_or_init(|| analyze_at(1024))
}

#[test]
fn acceptance_1_fk_multiplicity() {
    let solver = solver();
    let t0 = Instant::now();
    let six = solver.solve(15.0, 15.0).unwrap();
    let t_six = t0.elapsed();
    assert_eq!(six.count(), 6);
    assert_eq!(six.count_in(AspectLabel::Wa1), 3);
    assert_eq!(six.count_in(AspectLabel::Wa2), 3);
    let t0 = Instant::now();
    let four = solver.solve(13.25, 20.39).unwrap();
    let t_four = t0.elapsed();
    assert_eq!(four.count(), 4);
    assert!(t_six < Duration::from_secs(1), "6-solution solve took {t_six:?}");
    assert!(t_four < Duration::from_secs(1), "4-solution solve took {t_four:?}");
    println!(
        "acceptance 1: PASS - FK multiplicity 6 (3+3) at (17,15,15) and 4 at (17,13.25,20.39) \
         in {t_six:?} / {t_four:?}"
    );
}

/// Brute-force root oracle: leg-length fields precomputed on a dense torus
/// grid; candidate cells are those whose corner values straddle the target
/// lengths in both legs, refined by an independent Newton iteration on the
/// residual system.
struct Oracle {
    n: usize,
    rho2: Vec<f64>,
    rho3: Vec<f64>,
    bounds: (f64, f64, f64, f64),
}

impl Oracle {
    fn build(n: usize) -> Oracle {
        let mech = &solver().mech;
        let m = n + 1;
        let mut rho2 = vec![0.0; m * m];
        let mut rho3 = vec![0.0; m * m];
        for iy in 0..m {
            let alpha = iy as f64 / n as f64 * TAU;
            for ix in 0..m {
                let theta1 = ix as f64 / n as f64 * TAU;
                let j = mech.inverse_kinematics(&SlicePose::new(theta1, alpha, 17.0));
                rho2[iy * m + ix] = j.rho2;
                rho3[iy * m + ix] = j.rho3;
            }
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::MAX, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
        let bounds = (min(&rho2), max(&rho2), min(&rho3), max(&rho3));
        Oracle { n, rho2, rho3, bounds }
    }

    /// All solutions of the leg-length system at (r2, r3), by cell scan and
    /// Newton refinement from candidate cell centers.
    fn solve(&self, r2: f64, r3: f64) -> Vec<SlicePose> {
        let mech = &solver().mech;
        let n = self.n;
        let m = n + 1;
        let h = TAU / n as f64;
        let mut out: Vec<SlicePose> = Vec::new();
        for iy in 0..n {
            for ix in 0..n {
                let c = [iy * m + ix, iy * m + ix + 1, (iy + 1) * m + ix, (iy + 1) * m + ix + 1];
                let (mut lo2, mut hi2) = (f64::MAX, f64::MIN);
                let (mut lo3, mut hi3) = (f64::MAX, f64::MIN);
                for &k in &c {
                    lo2 = lo2.min(self.rho2[k]);
                    hi2 = hi2.max(self.rho2[k]);
                    lo3 = lo3.min(self.rho3[k]);
                    hi3 = hi3.max(self.rho3[k]);
                }
                if !(lo2 <= r2 && r2 <= hi2 && lo3 <= r3 && r3 <= hi3) {
                    continue;
                }
                let center =
                    SlicePose::new((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h, 17.0);
                let Some(root) = newton_refine(mech, center, r2, r3) else {
                    continue;
                };
                if root.torus_dist(&center) > 3.0 * h {
                    continue; // converged into a different cell's root
                }
                if out.iter().all(|p| p.torus_dist(&root) > 1e-6) {
                    out.push(root);
                }
            }
        }
        out
    }
}

/// Plain Newton iteration on the two leg-length residuals, independent of the
/// production solver's seeding and deduplication.
fn newton_refine(mech: &Mechanism, start: SlicePose, r2: f64, r3: f64) -> Option<SlicePose> {
    let joint = JointCoords::new(17.0, r2, r3);
    let mut p = start;
    for _ in 0..60 {
        let (f2, f3) = mech.residuals(&p, &joint);
        if f2.abs().max(f3.abs()) < 1e-12 {
            return Some(p);
        }
        let jac = mech.residual_jacobian(&p);
        let step = jac.solve(Vec2::new(-f2, -f3))?;
        if step.norm() > 1.0 {
            return None;
        }
        p = SlicePose::new(p.theta1 + step.x, p.alpha + step.y, p.rho1);
    }
    None
}

#[test]
fn acceptance_2_oracle_equivalence() {
    let t0 = Instant::now();
    let oracle = Oracle::build(2048);
    let solver = solver();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3172);
    let (r2lo, r2hi, r3lo, r3hi) = oracle.bounds;
    let mut checked = 0;
    while checked < 100 {
        let r2 = rng.gen_range(r2lo..r2hi);
        let r3 = rng.gen_range(r3lo..r3hi);
        let truth = oracle.solve(r2, r3);
        if truth.is_empty() {
            continue; // unreachable joint point
        }
        let set = solver.solve(r2, r3).unwrap();
        assert_eq!(
            set.count(),
            truth.len(),
            "count mismatch at ({r2:.6},{r3:.6}): solver {} vs oracle {}",
            set.count(),
            truth.len()
        );
        for s in &set.solutions {
            let d = truth
                .iter()
                .map(|p| p.torus_dist(&s.pose))
                .fold(f64::MAX, f64::min);
            assert!(d < 1e-6, "solution off the oracle by {d:.3e} at ({r2:.6},{r3:.6})");
        }
        checked += 1;
    }
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(600), "oracle comparison took {elapsed:?}");
    println!(
        "acceptance 2: PASS - 100 random reachable joint points match the 2048^2 \
         sign-change oracle to 1e-6 in {elapsed:?}"
    );
}

#[test]
fn acceptance_3_cusp_census() {
    let fix = slice512();
    assert_eq!(fix.cusps.len(), 6, "expected 6 cusps");
    assert_eq!(fix.report.cusp_image_counts(), vec![2, 2, 2, 2, 2, 4]);
    assert!(
        fix.trace_time < Duration::from_secs(120),
        "trace + cusp detection took {:?}",
        fix.trace_time
    );
    println!(
        "acceptance 3: PASS - 6 cusps at grid 512 (one with 4 distinct solutions, five with 2) \
         in {:?}",
        fix.trace_time
    );
}

#[test]
fn acceptance_4_node_census() {
    let fix = slice512();
    let solver = solver();
    assert_eq!(fix.nodes.len(), 6, "expected 6 nodes");
    assert_eq!(fix.report.node_image_counts(), vec![2, 2, 2, 4, 4, 4]);
    for node in &fix.nodes {
        let counts = node_quadrant_counts(solver, node).unwrap();
        assert!(
            quadrant_pattern_ok(&counts),
            "{}: quadrant counts {:?} do not follow (n, n-2, n-4, n-2)",
            node.label,
            counts
        );
    }
    println!(
        "acceptance 4: PASS - 6 nodes (three with 4 images, three with 2), quadrant counts \
         follow (n, n-2, n-4, n-2)"
    );
}

#[test]
fn acceptance_5_correspondence() {
    let fix = slice512();
    let c = fix.report.census;
    assert!(fix.report.ok(), "verification failures: {:?}", fix.report.failures);
    assert_eq!(c.tangency_points, 6);
    assert_eq!(c.char_cusps, 8);
    assert_eq!(c.singular_crossings, 12);
    assert_eq!(c.char_crossings, 6);
    let deg = 180.0 / std::f64::consts::PI;
    for set in &fix.report.cusp_sets {
        for img in &set.images {
            if img.class == ImageClass::TripleTangency {
                let a = img.angle.unwrap();
                assert!(a * deg < 2.0, "{}: tangency angle {:.3} deg", set.label, a * deg);
            }
        }
    }
    for set in &fix.report.node_sets {
        for img in &set.images {
            match img.class {
                ImageClass::SingularCrossing => {
                    let a = img.angle.unwrap();
                    assert!(a * deg > 5.0, "{}: crossing angle {:.3} deg", set.label, a * deg);
                    // The crossing characteristic curves come from both aspects.
                    assert!(
                        img.curves.iter().any(|c| c.starts_with("Sc1-"))
                            && img.curves.iter().any(|c| c.starts_with("Sc2-")),
                        "{}: crossing curves {:?}",
                        set.label,
                        img.curves
                    );
                }
                ImageClass::CharCrossing => {
                    let a = img.angle.unwrap();
                    assert!(a * deg > 5.0, "{}: crossing angle {:.3} deg", set.label, a * deg);
                }
                _ => {}
            }
        }
    }
    assert!(
        fix.total_time < Duration::from_secs(300),
        "full verification pipeline took {:?}",
        fix.total_time
    );
    println!(
        "acceptance 5: PASS - 6 tangency points (< 2 deg), 8 characteristic-curve cusps, \
         12 + 6 crossings (> 5 deg) in {:?}",
        fix.total_time
    );
}

#[test]
fn acceptance_6_solution_loss() {
    let solver = solver();
    let start = solver.solve(15.0, 15.0).unwrap();
    assert_eq!(start.count(), 6);
    let path = |t: f64| (15.0 + t * (13.25 - 15.0), 15.0 + t * (20.39 - 15.0));
    let res = continue_solutions(solver, path, &start, ContinuationOptions::default()).unwrap();
    let coalescences: Vec<_> = res
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Coalescence)
        .collect();
    assert_eq!(coalescences.len(), 1, "events: {:?}", res.events);
    let dead: Vec<_> = res.branches.iter().filter(|b| !b.alive).collect();
    assert_eq!(dead.len(), 2);
    assert_ne!(dead[0].aspect, dead[1].aspect, "lost pair must span both aspects");
    let gap = dead[0].pose.torus_dist(&dead[1].pose);
    assert!(gap < 1e-4, "lost pair {gap:.3e} apart at the coalescence");
    println!(
        "acceptance 6: PASS - straight path loses exactly one pair (one per aspect), \
         coinciding within {gap:.1e}"
    );
}

#[test]
fn acceptance_7_nonsingular_assembly_mode_change() {
    let fix = slice512();
    let solver = solver();
    // Loop around one cusp, entering through the cuspidal wedge so the two
    // connected same-aspect solutions exist at the start point.
    let cusp = &fix.cusps[0];
    let c = cusp.location;
    let r = 0.2;
    let a0 = cusp.wedge_dir.y.atan2(cusp.wedge_dir.x);
    let path = |t: f64| {
        let a = a0 + TAU * t;
        (c.x + r * a.cos(), c.y + r * a.sin())
    };
    let (r2, r3) = path(0.0);
    let start = solver.solve(r2, r3).unwrap();
    let opts = ContinuationOptions { closed: true, track_births: true, ..Default::default() };
    let res = continue_solutions(solver, path, &start, opts).unwrap();
    let perm = res.permutation.unwrap();
    let moved: Vec<usize> = perm
        .iter()
        .enumerate()
        .filter(|(i, &p)| *i != p)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(moved.len(), 2, "expected a transposition, got {perm:?}");
    assert_eq!(perm[moved[0]], moved[1]);
    assert_eq!(perm[moved[1]], moved[0]);
    assert_eq!(start.solutions[moved[0]].aspect, cusp.aspect);
    assert_eq!(start.solutions[moved[1]].aspect, cusp.aspect);

    // A loop encircling nothing (inside the 6-solution domain, crossing no
    // singular curve) induces the identity.
    let empty = |t: f64| {
        let a = TAU * t;
        (14.7 + 0.3 * a.cos(), 15.0 + 0.3 * a.sin())
    };
    let (r2, r3) = empty(0.0);
    let start = solver.solve(r2, r3).unwrap();
    let opts = ContinuationOptions { closed: true, track_births: true, ..Default::default() };
    let res = continue_solutions(solver, empty, &start, opts).unwrap();
    assert!(res.events.is_empty(), "empty loop met the singular image: {:?}", res.events);
    let perm = res.permutation.unwrap();
    assert!(perm.iter().enumerate().all(|(i, &p)| i == p), "not identity: {perm:?}");
    println!(
        "acceptance 7: PASS - loop around {} transposes two {:?} solutions; empty loop is \
         the identity",
        fix.cusps[0].label, cusp.aspect
    );
}

#[test]
fn acceptance_8_grid_stability() {
    let a = slice512();
    let b = slice1024();
    assert_eq!(a.pairs.len(), b.pairs.len(), "singular curve count changed");
    assert_eq!(a.report.census, b.report.census, "census changed under grid doubling");
    assert_eq!(a.report.cusp_image_counts(), b.report.cusp_image_counts());
    assert_eq!(a.report.node_image_counts(), b.report.node_image_counts());
    assert_eq!(a.chars.len(), b.chars.len(), "characteristic curve count changed");
    assert!(b.report.ok(), "failures at 1024: {:?}", b.report.failures);
    println!(
        "acceptance 8: PASS - census identical at grid 512 and 1024 \
         ({:?} cusp images, {:?} node images)",
        a.report.cusp_image_counts(),
        a.report.node_image_counts()
    );
}
