//! Trajectory plots as standalone SVG.

use std::fmt::Write as _;

use guide_core::pgm::Gray;
use guide_core::sim::TrajectoryRecord;
use guide_core::tsum::TsumSidecar;
use guide_core::{Geometry, SimConfig};


/// Pixels per meter.
const SCALE: f64 = 6.0;
const MARGIN: f64 = 10.0;

/// An exported uncertainty map drawn beneath the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TsumUnderlay {
    pub image: Gray,
    /// World rectangle covered by the image: (x0, y0, x1, y1).
    pub extent: (f64, f64, f64, f64),
}

impl TsumUnderlay {
    /// Use the sidecar's grid when there is one, otherwise stretch the image
    /// over the arena.
    pub fn new(image: Gray, sidecar: Option<&TsumSidecar>, env: &SimConfig) -> Self {
        let extent = match sidecar {
            Some(s) => s.grid.extent(),
            None => (0.0, 0.0, env.width, env.height),
        };
        Self { image, extent }
    }
}

struct Frame {
    height: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        MARGIN + x * SCALE
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.height - y) * SCALE
    }

    fn rect(&self, (x0, y0, x1, y1): (f64, f64, f64, f64)) -> String {
        format!(
            r#"x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}""#,
            self.x(x0),
            self.y(y1),
            (x1 - x0) * SCALE,
            (y1 - y0) * SCALE
        )
    }

    fn shape(&self, g: &Geometry, attrs: &str) -> String {
        match *g {
            Geometry::Disc { cx, cy, r } => {
                format!(r#"<circle {attrs} cx="{:.2}" cy="{:.2}" r="{:.2}"/>"#, self.x(cx), self.y(cy), r * SCALE)
            }
            Geometry::Rect { x0, y0, x1, y1 } => format!("<rect {attrs} {}/>", self.rect((x0, y0, x1, y1))),
        }
    }
}

/// Arena outline, obstacles, dock (green), the true trajectory, a red dot
/// at every exact fix and a diamond at every collision.
pub fn render_trajectory(log: &[TrajectoryRecord], env: &SimConfig, tsum: Option<&TsumUnderlay>) -> String {
    let f = Frame { height: env.height };
    let (w, h) = (env.width * SCALE + 2.0 * MARGIN, env.height * SCALE + 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    let _ = writeln!(s, r#"<rect class="background" x="0" y="0" width="{w:.2}" height="{h:.2}" fill="white"/>"#);
    if let Some(u) = tsum {
        let img = &u.image;
        let (x0, y0, x1, y1) = u.extent;
        let (cw, ch) = ((x1 - x0) / img.width.max(1) as f64, (y1 - y0) / img.height.max(1) as f64);
        let _ = writeln!(s, r#"<g class="tsum" opacity="0.6">"#);
        for row in 0..img.height {
            for col in 0..img.width {
                let v = (img.level(col, row) * 255.0).round() as u8;
                let top = y1 - row as f64 * ch;
                let left = x0 + col as f64 * cw;
                let _ = writeln!(s, r#"<rect {} fill="rgb({v},{v},{v})"/>"#, f.rect((left, top - ch, left + cw, top)));
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "{}", f.shape(&env.arena(), r#"class="arena" fill="none" stroke="black" stroke-width="2""#));
    for o in env.places.obstacles() {
        let _ = writeln!(s, "{}", f.shape(&o.geometry, r##"class="obstacle" fill="#8b5a2b""##));
    }
    if let Ok(dock) = env.dock_geometry() {
        let _ = writeln!(s, "{}", f.shape(&dock, r#"class="dock" fill="green" fill-opacity="0.7""#));
    }
    if log.len() >= 2 {
        let pts: Vec<String> = log.iter().map(|r| format!("{:.2},{:.2}", f.x(r.true_x), f.y(r.true_y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trajectory" fill="none" stroke="lightblue" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    if let Some(first) = log.first() {
        let _ = writeln!(s, r#"<circle class="start" cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="black"/>"#, f.x(first.true_x), f.y(first.true_y));
    }
    for r in log.iter().filter(|r| r.eta == 1) {
        let _ = writeln!(s, r#"<circle class="fix" cx="{:.2}" cy="{:.2}" r="3" fill="red"/>"#, f.x(r.true_x), f.y(r.true_y));
    }
    for r in log.iter().filter(|r| r.has_event("collision")) {
        let (cx, cy, d) = (f.x(r.true_x), f.y(r.true_y), 6.0);
        let _ = writeln!(
            s,
            r#"<polygon class="collision" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="black"/>"#,
            cx,
            cy - d,
            cx + d,
            cy,
            cx,
            cy + d,
            cx - d,
            cy
        );
    }
    s.push_str("</svg>\n");
    s
}
