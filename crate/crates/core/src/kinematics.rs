//! Inverse and forward kinematics in a fixed-rho1 slice.
//!
//! The forward problem is posed as the 2x2 residual system
//! `f2 = |B2 - A2|^2 - rho2^2`, `f3 = |B3 - A3|^2 - rho3^2` on the
//! (theta1, alpha) torus, solved by a coarse sign-change scan followed by a
//! damped Newton corrector.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::math::{torus_dist, wrap_angle, Mat2, Vec2};
use crate::model::{ManipulatorGeometry, PlatformFrame};
use crate::singularity::{aspect_label, AspectLabel};
use crate::tol;

/// Workspace-slice coordinates at fixed rho1.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SlicePose {
    pub theta1: f64,
    pub alpha: f64,
    pub rho1: f64,
}

impl SlicePose {
    pub fn new(theta1: f64, alpha: f64, rho1: f64) -> Self {
        SlicePose {
            theta1: wrap_angle(theta1),
            alpha: wrap_angle(alpha),
            rho1,
        }
    }

    /// Euclidean distance on the (theta1, alpha) torus; rho1 must agree.
    pub fn torus_dist(&self, other: &SlicePose) -> f64 {
        torus_dist((self.theta1, self.alpha), (other.theta1, other.alpha))
    }
}

/// Actuated prismatic lengths.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct JointCoords {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl JointCoords {
    pub fn new(rho1: f64, rho2: f64, rho3: f64) -> Self {
        JointCoords { rho1, rho2, rho3 }
    }
}

/// One direct-kinematics solution with its derived data.
#[derive(Clone, Debug)]
pub struct Configuration {
    pub pose: SlicePose,
    pub b1: Vec2,
    pub b2: Vec2,
    pub b3: Vec2,
    pub theta2: f64,
    pub theta3: f64,
    /// Leg-line concurrency determinant (sign distinguishes the aspects).
    pub det_value: f64,
    pub aspect: AspectLabel,
}

/// All direct-kinematics solutions at one joint point.
#[derive(Clone, Debug)]
pub struct SolutionSet {
    pub joint: JointCoords,
    pub solutions: Vec<Configuration>,
    /// Set when two solutions are closer than 10x the dedup tolerance: the
    /// joint point is near the singular locus.
    pub near_singular: bool,
    /// Grid cells whose Newton iteration did not converge (reported, not fatal).
    pub nonconverged_cells: usize,
}

impl SolutionSet {
    pub fn count(&self) -> usize {
        self.solutions.len()
    }

    pub fn count_in(&self, aspect: AspectLabel) -> usize {
        self.solutions.iter().filter(|s| s.aspect == aspect).count()
    }
}

/// Geometry plus its platform frame, with the slice kinematic maps.
#[derive(Clone, Debug)]
pub struct Mechanism {
    pub geometry: ManipulatorGeometry,
    pub frame: PlatformFrame,
}

impl Mechanism {
    pub fn new(geometry: ManipulatorGeometry) -> Self {
        let frame = geometry.platform_frame();
        Mechanism { geometry, frame }
    }

    /// Platform points (B1, B2, B3) at a pose.
    pub fn platform_points(&self, pose: &SlicePose) -> (Vec2, Vec2, Vec2) {
        let (s, c) = pose.theta1.sin_cos();
        let b1 = self.geometry.a1 + Vec2::new(c, s) * pose.rho1;
        let b2 = b1 + self.frame.p2.rotate(pose.alpha);
        let b3 = b1 + self.frame.p3.rotate(pose.alpha);
        (b1, b2, b3)
    }

    /// The map g: workspace slice -> joint space (closed form).
    pub fn inverse_kinematics(&self, pose: &SlicePose) -> JointCoords {
        let (_, b2, b3) = self.platform_points(pose);
        JointCoords {
            rho1: pose.rho1,
            rho2: b2.dist(self.geometry.a2),
            rho3: b3.dist(self.geometry.a3),
        }
    }

    /// Residuals of the forward-kinematics system at (pose, joint).
    pub fn residuals(&self, pose: &SlicePose, joint: &JointCoords) -> (f64, f64) {
        let (_, b2, b3) = self.platform_points(pose);
        (
            (b2 - self.geometry.a2).norm_sq() - joint.rho2 * joint.rho2,
            (b3 - self.geometry.a3).norm_sq() - joint.rho3 * joint.rho3,
        )
    }

    /// Derivatives of B2 and B3 with respect to (theta1, alpha).
    fn point_derivatives(&self, pose: &SlicePose) -> (Vec2, Vec2, Vec2, Vec2) {
        let (s, c) = pose.theta1.sin_cos();
        let db_dtheta = Vec2::new(-s, c) * pose.rho1;
        let db2_dalpha = self.frame.p2.rotate(pose.alpha).rot90();
        let db3_dalpha = self.frame.p3.rotate(pose.alpha).rot90();
        (db_dtheta, db2_dalpha, db_dtheta, db3_dalpha)
    }

    /// Jacobian of (f2, f3) with respect to (theta1, alpha).
    pub fn residual_jacobian(&self, pose: &SlicePose) -> Mat2 {
        let (_, b2, b3) = self.platform_points(pose);
        let (d2t, d2a, d3t, d3a) = self.point_derivatives(pose);
        let r2 = b2 - self.geometry.a2;
        let r3 = b3 - self.geometry.a3;
        Mat2::from_rows(
            Vec2::new(2.0 * r2.dot(d2t), 2.0 * r2.dot(d2a)),
            Vec2::new(2.0 * r3.dot(d3t), 2.0 * r3.dot(d3a)),
        )
    }

    /// Jacobian of (rho2, rho3) with respect to (theta1, alpha).
    ///
    /// Rows of `residual_jacobian` divided by 2*rho_i; undefined where a leg
    /// length vanishes.
    pub fn ik_jacobian(&self, pose: &SlicePose) -> Result<Mat2> {
        let (_, b2, b3) = self.platform_points(pose);
        let rho2 = b2.dist(self.geometry.a2);
        let rho3 = b3.dist(self.geometry.a3);
        if rho2 < 1e-12 {
            return Err(Error::ZeroLengthLeg { leg: 2 });
        }
        if rho3 < 1e-12 {
            return Err(Error::ZeroLengthLeg { leg: 3 });
        }
        let j = self.residual_jacobian(pose);
        Ok(Mat2::from_rows(j.row(0) / (2.0 * rho2), j.row(1) / (2.0 * rho3)))
    }

    /// Passive leg angles (theta2, theta3) at a pose.
    pub fn passive_angles(&self, pose: &SlicePose) -> Result<(f64, f64)> {
        let (_, b2, b3) = self.platform_points(pose);
        let l2 = b2 - self.geometry.a2;
        let l3 = b3 - self.geometry.a3;
        if l2.norm() < 1e-12 {
            return Err(Error::ZeroLengthLeg { leg: 2 });
        }
        if l3.norm() < 1e-12 {
            return Err(Error::ZeroLengthLeg { leg: 3 });
        }
        Ok((wrap_angle(l2.angle()), wrap_angle(l3.angle())))
    }

    /// Build a full `Configuration` at a pose.
    pub fn configuration(&self, pose: SlicePose) -> Result<Configuration> {
        let (b1, b2, b3) = self.platform_points(&pose);
        let (theta2, theta3) = self.passive_angles(&pose)?;
        let det_value = crate::singularity::singular_value(self, &pose)?;
        Ok(Configuration {
            pose,
            b1,
            b2,
            b3,
            theta2,
            theta3,
            det_value,
            aspect: aspect_label(det_value),
        })
    }
}

/// Solver options for the forward-kinematics grid scan and Newton corrector.
#[derive(Clone, Copy, Debug)]
pub struct FkOptions {
    /// Grid resolution per torus axis for the coarse sign-change scan.
    pub grid_res: usize,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub dedupe_tol: f64,
}

impl Default for FkOptions {
    fn default() -> Self {
        FkOptions {
            grid_res: 256,
            newton_tol: tol::NEWTON_TOL,
            max_iter: tol::NEWTON_MAX_ITER,
            dedupe_tol: tol::DEDUPE_TOL,
        }
    }
}

/// Forward-kinematics solver for one (geometry, rho1) slice.
///
/// The squared leg lengths on the scan grid depend only on the slice, so they
/// are precomputed once and reused across every joint point queried.
pub struct FkSolver {
    pub mech: Mechanism,
    pub rho1: f64,
    pub opts: FkOptions,
    res: usize,
    len2_b2: Vec<f64>,
    len2_b3: Vec<f64>,
}

impl FkSolver {
    pub fn new(mech: Mechanism, rho1: f64, opts: FkOptions) -> Self {
        let res = opts.grid_res;
        let mut len2_b2 = vec![0.0; res * res];
        let mut len2_b3 = vec![0.0; res * res];
        // b1 depends only on theta1, the platform offsets only on alpha.
        let mut b1s = Vec::with_capacity(res);
        for i in 0..res {
            let t = TAU * i as f64 / res as f64;
            let (s, c) = t.sin_cos();
            b1s.push(mech.geometry.a1 + Vec2::new(c, s) * rho1);
        }
        let mut offs = Vec::with_capacity(res);
        for j in 0..res {
            let a = TAU * j as f64 / res as f64;
            offs.push((mech.frame.p2.rotate(a), mech.frame.p3.rotate(a)));
        }
        for i in 0..res {
            for j in 0..res {
                let b2 = b1s[i] + offs[j].0;
                let b3 = b1s[i] + offs[j].1;
                len2_b2[i * res + j] = (b2 - mech.geometry.a2).norm_sq();
                len2_b3[i * res + j] = (b3 - mech.geometry.a3).norm_sq();
            }
        }
        FkSolver {
            mech,
            rho1,
            opts,
            res,
            len2_b2,
            len2_b3,
        }
    }

    /// Damped Newton iteration on the residual system, with a
    /// Levenberg-Marquardt fallback for near-singular Jacobians. Returns the
    /// converged pose, or `None` on nonconvergence.
    pub fn newton(&self, start: SlicePose, joint: &JointCoords) -> Option<SlicePose> {
        let scale = (joint.rho2 * joint.rho2 + joint.rho3 * joint.rho3).max(1.0);
        let mut pose = start;
        let (mut f2, mut f3) = self.mech.residuals(&pose, joint);
        let mut mu = 0.0f64;
        for _ in 0..(self.opts.max_iter * 3) {
            let f_norm = f2.hypot(f3);
            if f_norm < 1e-13 * scale {
                return Some(pose);
            }
            let j = self.mech.residual_jacobian(&pose);
            let step = if mu == 0.0 {
                j.solve(Vec2::new(-f2, -f3))
            } else {
                // (J^T J + mu * I) dx = -J^T f
                let jtj = Mat2 {
                    m: [
                        [
                            j.m[0][0] * j.m[0][0] + j.m[1][0] * j.m[1][0] + mu,
                            j.m[0][0] * j.m[0][1] + j.m[1][0] * j.m[1][1],
                        ],
                        [
                            j.m[0][0] * j.m[0][1] + j.m[1][0] * j.m[1][1],
                            j.m[0][1] * j.m[0][1] + j.m[1][1] * j.m[1][1] + mu,
                        ],
                    ],
                };
                let jtf = Vec2::new(
                    j.m[0][0] * f2 + j.m[1][0] * f3,
                    j.m[0][1] * f2 + j.m[1][1] * f3,
                );
                jtj.solve(-jtf)
            };
            let step = match step {
                Some(mut s) => {
                    // Large steps leave the basin; clamp on the torus scale.
                    let n = s.norm();
                    if n > 1.0 {
                        s = s / n;
                    }
                    s
                }
                None => {
                    mu = (mu * 10.0).max(scale * 1e-6);
                    continue;
                }
            };
            // Halve the step while the residual norm does not decrease.
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let trial = SlicePose::new(pose.theta1 + lambda * step.x, pose.alpha + lambda * step.y, pose.rho1);
                let (t2, t3) = self.mech.residuals(&trial, joint);
                if t2.hypot(t3) < f_norm || t2.hypot(t3) < 1e-14 * scale {
                    accepted = Some((trial, t2, t3, lambda));
                    break;
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((trial, t2, t3, lambda)) => {
                    let moved = lambda * step.norm();
                    pose = trial;
                    f2 = t2;
                    f3 = t3;
                    mu = mu / 16.0;
                    if mu < 1e-14 * scale {
                        mu = 0.0;
                    }
                    if moved < self.opts.newton_tol {
                        let f_final = f2.hypot(f3);
                        return if f_final < 1e-8 * scale { Some(pose) } else { None };
                    }
                }
                None => {
                    // No decrease along this direction: regularize harder.
                    mu = (mu * 10.0).max(scale * 1e-6);
                    if mu > scale * 1e6 {
                        return None;
                    }
                }
            }
        }
        None
    }

    /// All isolated direct-kinematics solutions at (rho2, rho3).
    pub fn solve(&self, rho2: f64, rho3: f64) -> Result<SolutionSet> {
        let joint = JointCoords::new(self.rho1, rho2, rho3);
        if rho2 < 0.0 || rho3 < 0.0 {
            return Err(Error::validation("rho", "actuated lengths must be non-negative"));
        }
        let res = self.res;
        let r2sq = rho2 * rho2;
        let r3sq = rho3 * rho3;
        let idx = |i: usize, j: usize| (i % res) * res + (j % res);
        let mut found: Vec<SlicePose> = Vec::new();
        let mut nonconverged = 0usize;
        for i in 0..res {
            for j in 0..res {
                let c = [idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)];
                let mut pos2 = false;
                let mut neg2 = false;
                let mut pos3 = false;
                let mut neg3 = false;
                for &k in &c {
                    let g2 = self.len2_b2[k] - r2sq;
                    let g3 = self.len2_b3[k] - r3sq;
                    if g2 >= 0.0 {
                        pos2 = true;
                    }
                    if g2 <= 0.0 {
                        neg2 = true;
                    }
                    if g3 >= 0.0 {
                        pos3 = true;
                    }
                    if g3 <= 0.0 {
                        neg3 = true;
                    }
                }
                if pos2 && neg2 && pos3 && neg3 {
                    let h = TAU / res as f64;
                    let mut seeds = Vec::new();
                    self.collect_seeds(i as f64 * h, j as f64 * h, h, &joint, 5, &mut seeds);
                    for (t, a) in seeds {
                        match self.newton(SlicePose::new(t, a, self.rho1), &joint) {
                            Some(p) => found.push(p),
                            None => nonconverged += 1,
                        }
                    }
                }
            }
        }
        self.finish(joint, found, nonconverged)
    }

    /// Recursively subdivide a candidate cell, keeping subcells where both
    /// residuals change sign, to produce well-placed Newton seeds. Falls back
    /// to the cell center when the sign pattern is lost (tangencies).
    fn collect_seeds(&self, t0: f64, a0: f64, h: f64, joint: &JointCoords, depth: usize, out: &mut Vec<(f64, f64)>) {
        if depth == 0 {
            out.push((t0 + 0.5 * h, a0 + 0.5 * h));
            return;
        }
        // 3x3 residual samples over the cell.
        let mut g2 = [[0.0f64; 3]; 3];
        let mut g3 = [[0.0f64; 3]; 3];
        for (ix, gx) in [0.0, 0.5, 1.0].iter().enumerate() {
            for (iy, gy) in [0.0, 0.5, 1.0].iter().enumerate() {
                let pose = SlicePose::new(t0 + gx * h, a0 + gy * h, self.rho1);
                let (f2, f3) = self.mech.residuals(&pose, joint);
                g2[ix][iy] = if f2 == 0.0 { 1e-300 } else { f2 };
                g3[ix][iy] = if f3 == 0.0 { 1e-300 } else { f3 };
            }
        }
        let mut any = false;
        for sx in 0..2usize {
            for sy in 0..2usize {
                let corners = [(sx, sy), (sx + 1, sy), (sx, sy + 1), (sx + 1, sy + 1)];
                let change = |g: &[[f64; 3]; 3]| {
                    let mut pos = false;
                    let mut neg = false;
                    for &(x, y) in &corners {
                        if g[x][y] > 0.0 {
                            pos = true;
                        } else {
                            neg = true;
                        }
                    }
                    pos && neg
                };
                if change(&g2) && change(&g3) {
                    any = true;
                    self.collect_seeds(t0 + sx as f64 * 0.5 * h, a0 + sy as f64 * 0.5 * h, 0.5 * h, joint, depth - 1, out);
                }
            }
        }
        if !any {
            out.push((t0 + 0.5 * h, a0 + 0.5 * h));
        }
    }

    fn finish(&self, joint: JointCoords, found: Vec<SlicePose>, nonconverged_cells: usize) -> Result<SolutionSet> {
        // Torus-metric dedup.
        let mut unique: Vec<SlicePose> = Vec::new();
        for p in found {
            // Reject poses whose residual is not actually small (Newton can
            // stall on a nearby non-root when the cell had a tangency).
            let (f2, f3) = self.mech.residuals(&p, &joint);
            let scale = (joint.rho2 * joint.rho2 + joint.rho3 * joint.rho3).max(1.0);
            if f2.hypot(f3) > 1e-8 * scale {
                continue;
            }
            if !unique.iter().any(|q| p.torus_dist(q) < self.opts.dedupe_tol) {
                unique.push(p);
            }
        }
        let mut near_singular = false;
        for a in 0..unique.len() {
            for b in (a + 1)..unique.len() {
                if unique[a].torus_dist(&unique[b]) < 10.0 * self.opts.dedupe_tol {
                    near_singular = true;
                }
            }
        }
        let mut solutions = Vec::with_capacity(unique.len());
        for p in unique {
            solutions.push(self.mech.configuration(p)?);
        }
        solutions.sort_by(|a, b| {
            (a.pose.alpha, a.pose.theta1)
                .partial_cmp(&(b.pose.alpha, b.pose.theta1))
                .unwrap()
        });
        Ok(SolutionSet {
            joint,
            solutions,
            near_singular,
            nonconverged_cells,
        })
    }

    /// Refine a single solution near `start` at the given joint point.
    pub fn refine(&self, start: SlicePose, rho2: f64, rho3: f64) -> Option<SlicePose> {
        self.newton(start, &JointCoords::new(self.rho1, rho2, rho3))
    }
}

/// One-shot forward kinematics. For repeated queries at the same rho1 build an
/// `FkSolver` once instead.
pub fn forward_kinematics(g: &ManipulatorGeometry, joint: &JointCoords, opts: FkOptions) -> Result<SolutionSet> {
    let solver = FkSolver::new(Mechanism::new(g.clone()), joint.rho1, opts);
    solver.solve(joint.rho2, joint.rho3)
}

/// Convenience wrapper matching the closed-form map g.
pub fn inverse_kinematics(g: &ManipulatorGeometry, pose: &SlicePose) -> JointCoords {
    Mechanism::new(g.clone()).inverse_kinematics(pose)
}
