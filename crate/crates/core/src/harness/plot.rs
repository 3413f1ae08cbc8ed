//! SVG trajectory plots: top and side projections plus the objective trace.

use std::fmt::Write as _;

use crate::scene::SceneModel;
use crate::servo::log::LoggedTrajectory;
use crate::servo::TrajectoryLog;
use crate::Vec3;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];
const PANEL: f64 = 300.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub positions: Vec<Vec3>,
    pub objective: Vec<f64>,
}

impl PlotSeries {
    pub fn from_log(label: impl Into<String>, log: &TrajectoryLog) -> Self {
        Self {
            label: label.into(),
            positions: log.positions(),
            objective: log.steps.iter().map(|s| s.f_ref).collect(),
        }
    }

    pub fn from_logged(label: impl Into<String>, log: &LoggedTrajectory) -> Self {
        Self {
            label: label.into(),
            positions: log.steps.iter().map(|s| s.pose.translation.vector).collect(),
            objective: log.steps.iter().map(|s| s.f_ref).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FootprintKind {
    Target,
    Occluder,
}

/// Circle drawn in both projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: Vec3,
    pub radius: f64,
    pub kind: FootprintKind,
}

pub fn footprints(scene: &SceneModel) -> Vec<Footprint> {
    let mut out = vec![Footprint {
        center: scene.target.center,
        radius: scene.target.radius,
        kind: FootprintKind::Target,
    }];
    out.extend(scene.occluders.iter().map(|o| Footprint {
        center: o.center,
        radius: o.half_extent,
        kind: FootprintKind::Occluder,
    }));
    out
}

struct Frame {
    min: (f64, f64),
    scale: f64,
    origin: (f64, f64),
}

impl Frame {
    fn fit(points: &[(f64, f64)], origin: (f64, f64)) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(a, b) in points {
            lo = (lo.0.min(a), lo.1.min(b));
            hi = (hi.0.max(a), hi.1.max(b));
        }
        if !lo.0.is_finite() {
            lo = (0.0, 0.0);
            hi = (1.0, 1.0);
        }
        let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-6) * 1.1;
        let pad = (span - (hi.0 - lo.0), span - (hi.1 - lo.1));
        Self {
            min: (lo.0 - pad.0 / 2.0, lo.1 - pad.1 / 2.0),
            scale: PANEL / span,
            origin,
        }
    }

    fn map(&self, a: f64, b: f64) -> (f64, f64) {
        (
            self.origin.0 + (a - self.min.0) * self.scale,
            // svg y grows downward
            self.origin.1 + PANEL - (b - self.min.1) * self.scale,
        )
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        coords.join(" ")
    );
}

fn markers(out: &mut String, pts: &[(f64, f64)], color: &str) {
    if let Some((x, y)) = pts.first() {
        let _ = writeln!(out, r#"<circle class="start" cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#);
    }
    if pts.len() > 1 {
        let (x, y) = pts[pts.len() - 1];
        let _ = writeln!(
            out,
            r#"<rect class="end" x="{:.2}" y="{:.2}" width="8" height="8" fill="none" stroke="{color}"/>"#,
            x - 4.0,
            y - 4.0
        );
    }
}

fn projection_panel(
    out: &mut String,
    series: &[PlotSeries],
    prints: &[Footprint],
    axes: (usize, usize),
    names: (&str, &str),
    origin: (f64, f64),
) {
    let mut all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.positions.iter().map(|p| (p[axes.0], p[axes.1])))
        .collect();
    for f in prints {
        all.push((f.center[axes.0] - f.radius, f.center[axes.1] - f.radius));
        all.push((f.center[axes.0] + f.radius, f.center[axes.1] + f.radius));
    }
    let frame = Frame::fit(&all, origin);
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##,
        origin.0, origin.1
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12">{} vs {} [m]</text>"#,
        origin.0,
        origin.1 - 6.0,
        names.1,
        names.0
    );
    for f in prints {
        let (cx, cy) = frame.map(f.center[axes.0], f.center[axes.1]);
        let (fill, class) = match f.kind {
            FootprintKind::Target => ("#e04030", "target"),
            FootprintKind::Occluder => ("#40a040", "occluder"),
        };
        let _ = writeln!(
            out,
            r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="{fill}" fill-opacity="0.3"/>"#,
            f.radius * frame.scale
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.positions.iter().map(|p| frame.map(p[axes.0], p[axes.1])).collect();
        polyline(out, &pts, color);
        markers(out, &pts, color);
    }
}

fn objective_panel(out: &mut String, series: &[PlotSeries], origin: (f64, f64)) {
    let longest = series.iter().map(|s| s.objective.len()).max().unwrap_or(1).max(2) - 1;
    let top = series
        .iter()
        .flat_map(|s| s.objective.iter().copied())
        .filter(|f| f.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.1;
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##,
        origin.0, origin.1
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12">f vs step (max {:.3})</text>"#,
        origin.0,
        origin.1 - 6.0,
        top / 1.1
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .objective
            .iter()
            .enumerate()
            .map(|(k, f)| {
                (
                    origin.0 + PANEL * k as f64 / longest as f64,
                    origin.1 + PANEL - PANEL * f / top,
                )
            })
            .collect();
        polyline(out, &pts, color);
        markers(out, &pts, color);
    }
}

/// Top view (x, y), side view (x, z) and objective trace side by side, one
/// color per series with a legend.
pub fn trajectory_svg(series: &[PlotSeries], prints: &[Footprint]) -> String {
    let width = 3.0 * PANEL + 4.0 * MARGIN;
    let legend_h = 18.0 * series.len() as f64;
    let height = PANEL + 2.0 * MARGIN + legend_h;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    projection_panel(&mut out, series, prints, (0, 1), ("x", "y"), (MARGIN, MARGIN));
    projection_panel(&mut out, series, prints, (0, 2), ("x", "z"), (2.0 * MARGIN + PANEL, MARGIN));
    objective_panel(&mut out, series, (3.0 * MARGIN + 2.0 * PANEL, MARGIN));
    for (i, s) in series.iter().enumerate() {
        let y = 2.0 * MARGIN + PANEL + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<g class="legend"><rect x="{MARGIN}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text></g>"#,
            y - 10.0,
            MARGIN + 18.0,
            y,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
