//! Manipulator geometry, platform frame construction and slice configuration.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::Vec2;

/// Platform triangle edges, in the order B1B2, B2B3, B3B1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Edge {
    B1B2,
    B2B3,
    B3B1,
}

impl Edge {
    fn code(self) -> &'static str {
        match self {
            Edge::B1B2 => "12",
            Edge::B2B3 => "23",
            Edge::B3B1 => "31",
        }
    }
}

/// Which platform edge each of the side lengths d1, d2, d3 measures.
///
/// Encoded as e.g. "12-23-31": d1 = |B1B2|, d2 = |B2B3|, d3 = |B3B1|.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EdgeAssignment(pub [Edge; 3]);

impl Default for EdgeAssignment {
    fn default() -> Self {
        EdgeAssignment([Edge::B1B2, Edge::B2B3, Edge::B3B1])
    }
}

impl FromStr for EdgeAssignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(Error::validation("edge_assignment", format!("expected three '-'-separated edge codes, got {s:?}")));
        }
        let mut edges = [Edge::B1B2; 3];
        for (i, p) in parts.iter().enumerate() {
            edges[i] = match *p {
                "12" => Edge::B1B2,
                "23" => Edge::B2B3,
                "31" => Edge::B3B1,
                other => {
                    return Err(Error::validation("edge_assignment", format!("unknown edge code {other:?} (expected 12, 23 or 31)")));
                }
            };
        }
        if edges[0] == edges[1] || edges[1] == edges[2] || edges[0] == edges[2] {
            return Err(Error::validation("edge_assignment", format!("{s:?} does not assign each edge exactly once")));
        }
        Ok(EdgeAssignment(edges))
    }
}

impl fmt::Display for EdgeAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.0[0].code(), self.0[1].code(), self.0[2].code())
    }
}

/// Base anchor points and platform triangle side lengths.
#[derive(Clone, PartialEq, Debug)]
pub struct ManipulatorGeometry {
    pub a1: Vec2,
    pub a2: Vec2,
    pub a3: Vec2,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub edge_assignment: EdgeAssignment,
}

impl ManipulatorGeometry {
    pub fn new(a1: Vec2, a2: Vec2, a3: Vec2, d1: f64, d2: f64, d3: f64, edge_assignment: EdgeAssignment) -> Result<Self> {
        let g = ManipulatorGeometry { a1, a2, a3, d1, d2, d3, edge_assignment };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d1", self.d1), ("d2", self.d2), ("d3", self.d3)] {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::validation(name, format!("side length must be positive and finite, got {d}")));
            }
        }
        let anchors = [("a1", self.a1), ("a2", self.a2), ("a3", self.a3)];
        for (name, a) in anchors {
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::validation(name, "anchor coordinates must be finite"));
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                if anchors[i].1 == anchors[j].1 {
                    return Err(Error::validation(anchors[j].0, format!("anchor {} duplicates anchor {}", anchors[j].0, anchors[i].0)));
                }
            }
        }
        let (s12, s23, s31) = self.sides();
        if s12 + s23 <= s31 || s23 + s31 <= s12 || s31 + s12 <= s23 {
            return Err(Error::validation(
                "d1",
                format!("side lengths ({}, {}, {}) violate the strict triangle inequality under assignment {}", self.d1, self.d2, self.d3, self.edge_assignment),
            ));
        }
        Ok(())
    }

    /// Side lengths resolved onto the edges (|B1B2|, |B2B3|, |B3B1|).
    pub fn sides(&self) -> (f64, f64, f64) {
        let ds = [self.d1, self.d2, self.d3];
        let mut s = [0.0; 3];
        for (i, edge) in self.edge_assignment.0.iter().enumerate() {
            match edge {
                Edge::B1B2 => s[0] = ds[i],
                Edge::B2B3 => s[1] = ds[i],
                Edge::B3B1 => s[2] = ds[i],
            }
        }
        (s[0], s[1], s[2])
    }

    /// Rigid-body realization of the platform triangle: B1 at the local
    /// origin, B1B2 along the local x-axis, B3 above it (counter-clockwise).
    pub fn platform_frame(&self) -> PlatformFrame {
        let (s12, s23, s31) = self.sides();
        let x3 = (s12 * s12 + s31 * s31 - s23 * s23) / (2.0 * s12);
        let y3 = (s31 * s31 - x3 * x3).max(0.0).sqrt();
        PlatformFrame {
            p2: Vec2::new(s12, 0.0),
            p3: Vec2::new(x3, y3),
        }
    }
}

/// Local platform coordinates of B2 and B3 (B1 is the origin).
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct PlatformFrame {
    pub p2: Vec2,
    pub p3: Vec2,
}

/// Fixed-rho1 slice parameters.
#[derive(Clone, PartialEq, Debug)]
pub struct SliceConfig {
    pub rho1: f64,
    pub theta_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub grid_n: usize,
}

impl SliceConfig {
    pub fn new(rho1: f64, grid_n: usize) -> Result<Self> {
        if !(rho1 > 0.0) || !rho1.is_finite() {
            return Err(Error::validation("rho1", format!("must be positive and finite, got {rho1}")));
        }
        if grid_n < 16 {
            return Err(Error::validation("grid_n", format!("must be at least 16, got {grid_n}")));
        }
        Ok(SliceConfig {
            rho1,
            theta_range: (0.0, TAU),
            alpha_range: (0.0, TAU),
            grid_n,
        })
    }
}

/// Full parsed configuration: geometry plus slice parameters.
#[derive(Clone, PartialEq, Debug)]
pub struct Config {
    pub geometry: ManipulatorGeometry,
    pub slice: SliceConfig,
}

const KNOWN_KEYS: [&str; 13] = [
    "a1x", "a1y", "a2x", "a2y", "a3x", "a3y", "d1", "d2", "d3", "edge_assignment", "rho1", "grid_n",
    "",
];

/// Parse the flat key-value configuration format.
///
/// One `key = value` pair per line; `#` starts a comment; unknown keys are
/// errors. `edge_assignment`, `rho1` and `grid_n` are optional and default to
/// `12-23-31`, `17` and `512`.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut values: HashMap<String, (usize, String)> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: lineno + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) || key.is_empty() {
            return Err(Error::ConfigParse {
                line: lineno + 1,
                msg: format!("unknown key {key:?}"),
            });
        }
        if values.insert(key.clone(), (lineno + 1, value)).is_some() {
            return Err(Error::ConfigParse {
                line: lineno + 1,
                msg: format!("duplicate key {key:?}"),
            });
        }
    }

    let get_f64 = |key: &str| -> Result<f64> {
        let (line, v) = values.get(key).ok_or_else(|| Error::ConfigParse {
            line: 0,
            msg: format!("missing required key {key:?}"),
        })?;
        v.parse::<f64>().map_err(|_| Error::ConfigParse {
            line: *line,
            msg: format!("key {key:?}: {v:?} is not a number"),
        })
    };

    let a1 = Vec2::new(get_f64("a1x")?, get_f64("a1y")?);
    let a2 = Vec2::new(get_f64("a2x")?, get_f64("a2y")?);
    let a3 = Vec2::new(get_f64("a3x")?, get_f64("a3y")?);
    let d1 = get_f64("d1")?;
    let d2 = get_f64("d2")?;
    let d3 = get_f64("d3")?;
    let edge_assignment = match values.get("edge_assignment") {
        Some((_, v)) => v.parse()?,
        None => EdgeAssignment::default(),
    };
    let rho1 = match values.get("rho1") {
        Some(_) => get_f64("rho1")?,
        None => 17.0,
    };
    let grid_n = match values.get("grid_n") {
        Some((line, v)) => v.parse::<usize>().map_err(|_| Error::ConfigParse {
            line: *line,
            msg: format!("key \"grid_n\": {v:?} is not a positive integer"),
        })?,
        None => 512,
    };

    let geometry = ManipulatorGeometry::new(a1, a2, a3, d1, d2, d3, edge_assignment)?;
    let slice = SliceConfig::new(rho1, grid_n)?;
    Ok(Config { geometry, slice })
}

/// Parse a configuration and return only the geometry.
pub fn load_geometry(text: &str) -> Result<ManipulatorGeometry> {
    Ok(parse_config(text)?.geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = "\
        a1x = 0\n a1y = 0\n a2x = 15.91\n a2y = 0\n a3x = 0\n a3y = 10\n\
        d1 = 17.04\n d2 = 16.54\n d3 = 20.84\n rho1 = 17\n grid_n = 512\n";

    #[test]
    fn parses_reference_config() {
        let cfg = parse_config(REFERENCE).unwrap();
        assert_eq!(cfg.geometry.d1, 17.04);
        assert_eq!(cfg.geometry.a2, Vec2::new(15.91, 0.0));
        assert_eq!(cfg.slice.rho1, 17.0);
        assert_eq!(cfg.slice.grid_n, 512);
        assert_eq!(cfg.geometry.edge_assignment, EdgeAssignment::default());
    }

    #[test]
    fn triangle_inequality_rejected() {
        let text = REFERENCE.replace("d1 = 17.04", "d1 = 1").replace("d2 = 16.54", "d2 = 1").replace("d3 = 20.84", "d3 = 3");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("triangle"), "{err}");
    }

    #[test]
    fn duplicate_anchor_rejected() {
        // a2y is already 0, so zeroing a2x makes a2 coincide with a1.
        let text = REFERENCE.replace("a2x = 15.91", "a2x = 0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("duplicates"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{REFERENCE}bogus = 1\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn equilateral_frame() {
        let g = ManipulatorGeometry::new(
            Vec2::ZERO,
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            1.0,
            1.0,
            1.0,
            EdgeAssignment::default(),
        )
        .unwrap();
        let f = g.platform_frame();
        assert!(f.p2.dist(Vec2::new(1.0, 0.0)) < 1e-15);
        assert!(f.p3.dist(Vec2::new(0.5, 3f64.sqrt() / 2.0)) < 1e-15);
    }

    #[test]
    fn right_triangle_frame() {
        // |B1B2| = 3, |B2B3| = 4, |B3B1| = 5 forces the right angle at B2.
        let g = ManipulatorGeometry::new(
            Vec2::ZERO,
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            3.0,
            4.0,
            5.0,
            EdgeAssignment::default(),
        )
        .unwrap();
        let f = g.platform_frame();
        assert!(f.p2.dist(Vec2::new(3.0, 0.0)) < 1e-12);
        assert!(f.p3.dist(Vec2::new(3.0, 4.0)) < 1e-12);
    }

    #[test]
    fn frame_roundtrips_side_lengths() {
        for assignment in ["12-23-31", "12-31-23", "23-12-31", "23-31-12", "31-12-23", "31-23-12"] {
            let text = format!("{REFERENCE}edge_assignment = {assignment}\n");
            let g = load_geometry(&text).unwrap();
            let f = g.platform_frame();
            let (s12, s23, s31) = g.sides();
            assert!((f.p2.norm() - s12).abs() / s12 < 1e-12);
            assert!(((f.p3 - f.p2).norm() - s23).abs() / s23 < 1e-12);
            assert!((f.p3.norm() - s31).abs() / s31 < 1e-12);
            assert!(f.p3.y > 0.0);
        }
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_config(REFERENCE).unwrap();
        let b = parse_config(REFERENCE).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_assignment_roundtrip() {
        let e: EdgeAssignment = "23-31-12".parse().unwrap();
        assert_eq!(e.to_string(), "23-31-12");
        assert!("12-12-31".parse::<EdgeAssignment>().is_err());
        assert!("12-23".parse::<EdgeAssignment>().is_err());
    }
}
