//! SVG figures drawn from the persisted atlas tables.
//!
//! The figures are generated from the CSV data read back from disk, never
//! from in-memory state, so every marked point in a figure exists in the data
//! files with identical coordinates. The stylesheet is fixed: singular curves
//! are black, characteristic curves light blue (dashed for the second
//! aspect), cusp-related marks red and node-related marks blue, with the
//! tangency points drawn largest.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::atlas::{CsvCurve, CsvPoint};
use crate::error::{Error, Result};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 50.0;

struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = (self.xmax - self.xmin).max(1e-12);
        let h = (self.ymax - self.ymin).max(1e-12);
        let px = MARGIN + (x - self.xmin) / w * (SIZE - 2.0 * MARGIN);
        let py = SIZE - MARGIN - (y - self.ymin) / h * (SIZE - 2.0 * MARGIN);
        (px, py)
    }
}

fn svg_open(out: &mut String, frame: &Frame, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(out, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>");
    let (x0, y0) = (MARGIN, MARGIN);
    let side = SIZE - 2.0 * MARGIN;
    let _ = writeln!(
        out,
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{side}\" height=\"{side}\" fill=\"none\" \
         stroke=\"black\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"18\" \
         text-anchor=\"middle\">{title}</text>",
        SIZE / 2.0,
        MARGIN - 20.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{xlabel}</text>",
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{ylabel}</text>",
        SIZE / 2.0,
        SIZE / 2.0
    );
    for (v, label, horiz) in [
        (frame.xmin, true, true),
        (frame.xmax, false, true),
        (frame.ymin, true, false),
        (frame.ymax, false, false),
    ]
    .map(|(v, lo, horiz)| (v, lo, horiz))
    {
        let (x, y, anchor) = if horiz {
            let (px, _) = frame.map(v, frame.ymin);
            (px, SIZE - MARGIN + 18.0, "middle")
        } else {
            let (_, py) = frame.map(frame.xmin, v);
            (MARGIN - 6.0, py + 4.0, "end")
        };
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"{anchor}\">{v:.2}</text>"
        );
        let _ = label;
    }
}

/// Break a polyline at wrap-around jumps so torus curves do not draw a chord
/// across the figure.
fn split_runs(points: &[(f64, f64)], jump: f64) -> Vec<&[(f64, f64)]> {
    let mut runs = Vec::new();
    let mut start = 0;
    for k in 1..points.len() {
        let dx = (points[k].0 - points[k - 1].0).abs();
        let dy = (points[k].1 - points[k - 1].1).abs();
        if dx > jump || dy > jump {
            runs.push(&points[start..k]);
            start = k;
        }
    }
    runs.push(&points[start..]);
    runs
}

fn draw_curve(out: &mut String, frame: &Frame, c: &CsvCurve, jump: f64, style: &str) {
    for run in split_runs(&c.points, jump) {
        if run.len() < 2 {
            continue;
        }
        let mut d = String::new();
        for (k, &(x, y)) in run.iter().enumerate() {
            let (px, py) = frame.map(x, y);
            let _ = write!(d, "{}{px:.2},{py:.2} ", if k == 0 { "M" } else { "L" });
        }
        let _ = writeln!(out, "<path d=\"{}\" fill=\"none\" {style}/>", d.trim_end());
    }
}

fn draw_point(out: &mut String, frame: &Frame, x: f64, y: f64, r: f64, fill: &str) {
    let (px, py) = frame.map(x, y);
    let _ = writeln!(
        out,
        "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"{r}\" fill=\"{fill}\" \
         stroke=\"black\" stroke-width=\"0.5\"/>"
    );
}

const SINGULAR_STYLE: &str = "stroke=\"black\" stroke-width=\"1.6\"";
const CHAR1_STYLE: &str = "stroke=\"#56b4e9\" stroke-width=\"1.2\"";
const CHAR2_STYLE: &str = "stroke=\"#56b4e9\" stroke-width=\"1.2\" stroke-dasharray=\"6 3\"";

/// Workspace-slice figure: singular curves, characteristic curves, and the
/// cusp/node images. Tangency points are the largest marks.
pub fn figure_workspace(curves: &[CsvCurve], points: &[CsvPoint]) -> String {
    let frame = Frame { xmin: 0.0, xmax: TAU, ymin: 0.0, ymax: TAU };
    let mut out = String::new();
    svg_open(&mut out, &frame, "Workspace slice", "theta1 (rad)", "alpha (rad)");
    for c in curves.iter().filter(|c| c.domain == "workspace") {
        let style = if c.id.starts_with("Sc1") {
            CHAR1_STYLE
        } else if c.id.starts_with("Sc2") {
            CHAR2_STYLE
        } else {
            SINGULAR_STYLE
        };
        draw_curve(&mut out, &frame, c, 3.0, style);
    }
    for p in points {
        let (r, fill) = match p.kind.as_str() {
            "tangency" => (7.0, "#d62728"),
            "char_cusp" => (3.5, "#d62728"),
            "singular_crossing" => (5.5, "#1f4e9e"),
            "char_crossing" => (3.0, "#1f4e9e"),
            _ => continue,
        };
        draw_point(&mut out, &frame, p.x, p.y, r, fill);
    }
    out.push_str("</svg>\n");
    out
}

/// Joint-slice figure: projected singular curves with cusp and node marks.
/// `window` optionally fixes the (rho2, rho3) axis bounds.
pub fn figure_jointspace(
    curves: &[CsvCurve],
    points: &[CsvPoint],
    window: Option<(f64, f64, f64, f64)>,
) -> Result<String> {
    let joint: Vec<&CsvCurve> = curves.iter().filter(|c| c.domain == "jointspace").collect();
    let frame = match window {
        Some((xmin, xmax, ymin, ymax)) => Frame { xmin, xmax, ymin, ymax },
        None => {
            let pts = joint.iter().flat_map(|c| c.points.iter());
            let marks = points
                .iter()
                .filter(|p| matches!(p.kind.as_str(), "cusp" | "node"))
                .map(|p| (p.x, p.y));
            let all: Vec<(f64, f64)> = pts.copied().chain(marks).collect();
            if all.is_empty() {
                Frame { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
            } else {
                let xmin = all.iter().map(|p| p.0).fold(f64::MAX, f64::min);
                let xmax = all.iter().map(|p| p.0).fold(f64::MIN, f64::max);
                let ymin = all.iter().map(|p| p.1).fold(f64::MAX, f64::min);
                let ymax = all.iter().map(|p| p.1).fold(f64::MIN, f64::max);
                let pad = 0.05 * ((xmax - xmin).max(ymax - ymin)).max(1.0);
                Frame {
                    xmin: xmin - pad,
                    xmax: xmax + pad,
                    ymin: ymin - pad,
                    ymax: ymax + pad,
                }
            }
        }
    };
    if let Some((xmin, xmax, ymin, ymax)) = window {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::validation("window", "bounds must be ordered"));
        }
    }
    let mut out = String::new();
    svg_open(&mut out, &frame, "Joint slice", "rho2", "rho3");
    for c in &joint {
        draw_curve(&mut out, &frame, c, f64::MAX, SINGULAR_STYLE);
    }
    for p in points {
        let (r, fill) = match p.kind.as_str() {
            "cusp" => (6.0, "#d62728"),
            "node" => (6.0, "#1f4e9e"),
            _ => continue,
        };
        draw_point(&mut out, &frame, p.x, p.y, r, fill);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_atlas_yields_valid_figures() {
        let ws = figure_workspace(&[], &[]);
        assert!(ws.starts_with("<svg"));
        assert!(ws.ends_with("</svg>\n"));
        let js = figure_jointspace(&[], &[], None).unwrap();
        assert!(js.starts_with("<svg"));
        assert!(js.ends_with("</svg>\n"));
    }

    #[test]
    fn marks_appear_in_the_figure() {
        let points = vec![
            CsvPoint { id: "CP1-i1".into(), kind: "tangency".into(), x: 1.0, y: 2.0, angle: Some(0.0) },
            CsvPoint { id: "N1".into(), kind: "node".into(), x: 20.0, y: 20.0, angle: Some(1.0) },
        ];
        let ws = figure_workspace(&[], &points);
        assert_eq!(ws.matches("<circle").count(), 1);
        let js = figure_jointspace(&[], &points, Some((0.0, 40.0, 0.0, 40.0))).unwrap();
        assert_eq!(js.matches("<circle").count(), 1);
    }

    #[test]
    fn unordered_window_is_rejected() {
        assert!(figure_jointspace(&[], &[], Some((1.0, 0.0, 0.0, 1.0))).is_err());
    }

    #[test]
    fn torus_curves_split_at_the_seam() {
        let c = CsvCurve {
            id: "S0".into(),
            domain: "workspace".into(),
            points: vec![(6.1, 1.0), (6.2, 1.0), (0.1, 1.0), (0.2, 1.0)],
        };
        let ws = figure_workspace(&[c], &[]);
        assert_eq!(ws.matches("<path").count(), 2);
    }
}
