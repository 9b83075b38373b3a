//! Slice atlas: the aggregated result of a full slice analysis, plus its
//! on-disk form (a directory of CSV tables, a manifest and SVG figures).
//!
//! The persisted layout is deliberately plain text so runs can be diffed:
//! `curves.csv` holds one row per curve sample, `points.csv` one row per
//! marked point, `regions.csv` one row per basic region, and `manifest.txt`
//! the provenance (tool version, config hash, tolerances, census). All writes
//! are deterministic: re-running the same config reproduces the files byte
//! for byte.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::charsurf::{
    attach_bounded_regions, basic_components, characteristic_curves, decompose_basic_regions,
    singular_images, BasicComponent, CharCurve, CharKind, RegionDecomposition,
};
use crate::error::{Error, Result};
use crate::jointspace::{detect_cusps, detect_nodes, CuspPoint, NodePoint};
use crate::kinematics::{FkOptions, FkSolver, Mechanism};
use crate::model::Config;
use crate::singularity::{singular_curve_pairs, AspectLabel, CurveDomain, CurvePair, TracedCurve};
use crate::tol;
use crate::verify::{verify_slice, ImageClass, VerificationReport};

/// Everything the slice analysis produces, cross-referenced by curve and
/// point ids.
pub struct SliceAtlas {
    pub config: Config,
    pub config_text: String,
    pub pairs: Vec<CurvePair>,
    pub cusps: Vec<CuspPoint>,
    pub nodes: Vec<NodePoint>,
    /// Characteristic curves of both aspects plus the singular images.
    pub chars: Vec<CharCurve>,
    pub decomposition: RegionDecomposition,
    pub components: Vec<BasicComponent>,
    pub report: VerificationReport,
    pub warnings: Vec<String>,
}

impl SliceAtlas {
    pub fn rho1(&self) -> f64 {
        self.config.slice.rho1
    }

    /// SHA-256 of the configuration text, hex-encoded.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_text.as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Run the full pipeline: trace, project, detect cusps and nodes, build the
/// characteristic curves and basic regions, and verify the image structure.
pub fn analyze(config: Config, config_text: &str) -> Result<SliceAtlas> {
    let mech = Mechanism::new(config.geometry.clone());
    let grid_n = config.slice.grid_n;
    let rho1 = config.slice.rho1;
    let mut warnings = Vec::new();

    let (pairs, w) = singular_curve_pairs(&mech, rho1, grid_n)?;
    warnings.extend(w);
    let solver = FkSolver::new(mech.clone(), rho1, FkOptions::default());
    let (cusps, w) = detect_cusps(&solver, &pairs)?;
    warnings.extend(w);
    let (nodes, w) = detect_nodes(&solver, &pairs, &cusps)?;
    warnings.extend(w);

    let mut chars = singular_images(&pairs);
    for aspect in [AspectLabel::Wa1, AspectLabel::Wa2] {
        let (cs, w) = characteristic_curves(&solver, &pairs, aspect, &cusps, &nodes)?;
        chars.extend(cs);
        warnings.extend(w);
    }
    let decomposition = decompose_basic_regions(&mech, rho1, grid_n, &pairs, &chars)?;
    attach_bounded_regions(&mut chars, &decomposition);
    let components = basic_components(&mech, &decomposition);
    let report = verify_slice(&solver, &pairs, &cusps, &nodes, &chars, grid_n)?;

    Ok(SliceAtlas {
        config,
        config_text: config_text.to_string(),
        pairs,
        cusps,
        nodes,
        chars,
        decomposition,
        components,
        report,
        warnings,
    })
}

fn domain_name(d: CurveDomain) -> &'static str {
    match d {
        CurveDomain::WorkspaceSlice => "workspace",
        CurveDomain::JointSlice => "jointspace",
    }
}

fn push_curve_rows(out: &mut String, id: &str, curve: &TracedCurve) {
    let domain = domain_name(curve.domain);
    for s in &curve.samples {
        let _ = writeln!(
            out,
            "{id},{domain},{:.12},{:.12},{:.12},{:.12}",
            s.point.x, s.point.y, s.tangent.x, s.tangent.y
        );
    }
}

/// `curves.csv`: columns `id,domain,x,y,tx,ty`, one row per sample.
pub fn curves_csv(atlas: &SliceAtlas) -> String {
    let mut out = String::from("id,domain,x,y,tx,ty\n");
    for pair in &atlas.pairs {
        push_curve_rows(&mut out, &pair.workspace.id, &pair.workspace);
        push_curve_rows(&mut out, &format!("{}j", pair.workspace.id), &pair.image);
    }
    for c in &atlas.chars {
        if c.kind == CharKind::NonsingularImage {
            push_curve_rows(&mut out, &c.id, &c.samples);
        }
    }
    out
}

/// `points.csv`: columns `id,kind,x,y,angle`, one row per marked point.
/// Cusp and node locations live in the joint slice, their images in the
/// workspace slice; the angle column is empty where no angle is measured.
pub fn points_csv(atlas: &SliceAtlas) -> String {
    let mut out = String::from("id,kind,x,y,angle\n");
    let fmt_angle = |a: Option<f64>| a.map_or(String::new(), |a| format!("{a:.9}"));
    for c in &atlas.cusps {
        let _ = writeln!(out, "{},cusp,{:.12},{:.12},", c.label, c.location.x, c.location.y);
    }
    for n in &atlas.nodes {
        let _ = writeln!(
            out,
            "{},node,{:.12},{:.12},{:.9}",
            n.label, n.location.x, n.location.y, n.angle
        );
    }
    for set in atlas.report.cusp_sets.iter().chain(&atlas.report.node_sets) {
        for (k, img) in set.images.iter().enumerate() {
            let kind = match img.class {
                ImageClass::TripleTangency => "tangency",
                ImageClass::CharCusp => "char_cusp",
                ImageClass::SingularCrossing => "singular_crossing",
                ImageClass::CharCrossing => "char_crossing",
            };
            let _ = writeln!(
                out,
                "{}-i{},{},{:.12},{:.12},{}",
                set.label,
                k + 1,
                kind,
                img.pose.theta1,
                img.pose.alpha,
                fmt_angle(img.angle)
            );
        }
    }
    out
}

/// `regions.csv`: columns `id,aspect,rep_theta1,rep_alpha,cells,boundary`.
/// The boundary column joins curve ids with `;`.
pub fn regions_csv(atlas: &SliceAtlas) -> String {
    let mut out = String::from("id,aspect,rep_theta1,rep_alpha,cells,boundary\n");
    for r in &atlas.decomposition.regions {
        let aspect = match r.aspect {
            AspectLabel::Wa1 => "Wa1",
            AspectLabel::Wa2 => "Wa2",
            AspectLabel::Singular => "singular",
        };
        let _ = writeln!(
            out,
            "{},{},{:.12},{:.12},{},{}",
            r.id,
            aspect,
            r.representative.theta1,
            r.representative.alpha,
            r.cell_count,
            r.boundary.join(";")
        );
    }
    out
}

/// `manifest.txt`: provenance and the verification census.
pub fn manifest_text(atlas: &SliceAtlas) -> String {
    let c = &atlas.report.census;
    let mut out = String::new();
    let _ = writeln!(out, "tool = triplanar {}", crate::VERSION);
    let _ = writeln!(out, "config_sha256 = {}", atlas.config_hash());
    let _ = writeln!(out, "rho1 = {}", atlas.rho1());
    let _ = writeln!(out, "grid_n = {}", atlas.config.slice.grid_n);
    let _ = writeln!(out, "edge_assignment = {}", atlas.config.geometry.edge_assignment);
    let _ = writeln!(out);
    let _ = writeln!(out, "[tolerances]");
    let _ = writeln!(out, "newton_tol = {:e}", tol::NEWTON_TOL);
    let _ = writeln!(out, "dedupe_tol = {:e}", tol::DEDUPE_TOL);
    let _ = writeln!(out, "singular_tol = {:e}", tol::SINGULAR_TOL);
    let _ = writeln!(out, "cusp_tol = {:e}", tol::CUSP_TOL);
    let _ = writeln!(out, "cusp_exclusion = {:e}", tol::CUSP_EXCLUSION);
    let _ = writeln!(out, "node_angle_min_deg = {}", tol::NODE_ANGLE_MIN.to_degrees());
    let _ = writeln!(out, "tangency_tol_deg = {}", tol::TANGENCY_TOL.to_degrees());
    let _ = writeln!(out, "transversal_min_deg = {}", tol::TRANSVERSAL_MIN.to_degrees());
    let _ = writeln!(out, "match_tol_cells = {}", tol::MATCH_TOL_CELLS);
    let _ = writeln!(out, "levelset_residual = {:e}", tol::LEVELSET_RESIDUAL);
    let _ = writeln!(out, "singular_discard = {:e}", tol::SINGULAR_DISCARD);
    let _ = writeln!(out, "image_cluster_radius = {:e}", tol::IMAGE_CLUSTER_RADIUS);
    let _ = writeln!(out, "image_nudge = {:e}", tol::IMAGE_NUDGE);
    let _ = writeln!(out, "coalesce_join = {:e}", tol::COALESCE_JOIN);
    let _ = writeln!(out);
    let _ = writeln!(out, "[census]");
    let _ = writeln!(out, "cusps = {}", c.cusps);
    let _ = writeln!(out, "nodes = {}", c.nodes);
    let _ = writeln!(out, "tangency_points = {}", c.tangency_points);
    let _ = writeln!(out, "char_cusps = {}", c.char_cusps);
    let _ = writeln!(out, "singular_crossings = {}", c.singular_crossings);
    let _ = writeln!(out, "char_crossings = {}", c.char_crossings);
    let _ = writeln!(out, "basic_regions = {}", atlas.decomposition.regions.len());
    let _ = writeln!(out, "verified = {}", atlas.report.ok());
    for f in &atlas.report.failures {
        let _ = writeln!(out, "failure = {f}");
    }
    for w in &atlas.warnings {
        let _ = writeln!(out, "warning = {w}");
    }
    out
}

/// Write the atlas directory: `curves.csv`, `points.csv`, `regions.csv`,
/// `manifest.txt` and a copy of the configuration.
pub fn write_atlas(atlas: &SliceAtlas, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("curves.csv"), curves_csv(atlas))?;
    std::fs::write(dir.join("points.csv"), points_csv(atlas))?;
    std::fs::write(dir.join("regions.csv"), regions_csv(atlas))?;
    std::fs::write(dir.join("manifest.txt"), manifest_text(atlas))?;
    std::fs::write(dir.join("config.cfg"), &atlas.config_text)?;
    Ok(())
}

/// A curve read back from `curves.csv`.
pub struct CsvCurve {
    pub id: String,
    pub domain: String,
    pub points: Vec<(f64, f64)>,
}

/// A point read back from `points.csv`.
pub struct CsvPoint {
    pub id: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub angle: Option<f64>,
}

fn parse_field(line: usize, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::ConfigParse {
        line,
        msg: format!("{v:?} is not a number"),
    })
}

/// Read `curves.csv` back, preserving row order and grouping by id.
pub fn read_curves_csv(text: &str) -> Result<Vec<CsvCurve>> {
    let mut out: Vec<CsvCurve> = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::ConfigParse {
                line: k + 1,
                msg: format!("expected 6 columns, got {}", f.len()),
            });
        }
        let p = (parse_field(k + 1, f[2])?, parse_field(k + 1, f[3])?);
        match out.last_mut() {
            Some(c) if c.id == f[0] => c.points.push(p),
            _ => out.push(CsvCurve {
                id: f[0].to_string(),
                domain: f[1].to_string(),
                points: vec![p],
            }),
        }
    }
    Ok(out)
}

/// Read `points.csv` back.
pub fn read_points_csv(text: &str) -> Result<Vec<CsvPoint>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::ConfigParse {
                line: k + 1,
                msg: format!("expected 5 columns, got {}", f.len()),
            });
        }
        out.push(CsvPoint {
            id: f[0].to_string(),
            kind: f[1].to_string(),
            x: parse_field(k + 1, f[2])?,
            y: parse_field(k + 1, f[3])?,
            angle: if f[4].is_empty() { None } else { Some(parse_field(k + 1, f[4])?) },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_config;

    const SMALL: &str = "\
a1x = 0\na1y = 0\na2x = 15.91\na2y = 0\na3x = 0\na3y = 10\n\
d1 = 17.04\nd2 = 16.54\nd3 = 20.84\nrho1 = 17\ngrid_n = 64\n";

    #[test]
    fn atlas_roundtrips_through_csv() {
        let cfg = parse_config(SMALL).unwrap();
        let atlas = analyze(cfg, SMALL).unwrap();
        let curves = read_curves_csv(&curves_csv(&atlas)).unwrap();
        assert!(curves.iter().any(|c| c.id == "S0" && c.domain == "workspace"));
        assert!(curves.iter().any(|c| c.id == "S0j" && c.domain == "jointspace"));
        let points = read_points_csv(&points_csv(&atlas)).unwrap();
        assert_eq!(points.iter().filter(|p| p.kind == "cusp").count(), atlas.cusps.len());
        assert_eq!(points.iter().filter(|p| p.kind == "node").count(), atlas.nodes.len());
        let manifest = manifest_text(&atlas);
        assert!(manifest.contains("config_sha256 ="));
        assert!(manifest.contains("tangency_tol_deg = 2"));
    }

    #[test]
    fn analysis_is_deterministic() {
        let cfg = parse_config(SMALL).unwrap();
        let a = analyze(cfg.clone(), SMALL).unwrap();
        let b = analyze(cfg, SMALL).unwrap();
        assert_eq!(curves_csv(&a), curves_csv(&b));
        assert_eq!(points_csv(&a), points_csv(&b));
        assert_eq!(regions_csv(&a), regions_csv(&b));
        assert_eq!(manifest_text(&a), manifest_text(&b));
    }
}
