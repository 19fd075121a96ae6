//! Planar shapes used for landmarks, regions and obstacles. All units are meters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Geometry {
    pub fn center(&self) -> (f64, f64) {
        match *self {
            Geometry::Disc { cx, cy, .. } => (cx, cy),
            Geometry::Rect { x0, y0, x1, y1 } => (0.5 * (x0 + x1), 0.5 * (y0 + y1)),
        }
    }

    /// Distance from `p` to the shape; zero on or inside it.
    pub fn distance(&self, p: (f64, f64)) -> f64 {
        self.signed_distance(p).max(0.0)
    }

    /// Signed distance to the boundary, negative inside.
    pub fn signed_distance(&self, (x, y): (f64, f64)) -> f64 {
        match *self {
            Geometry::Disc { cx, cy, r } => (x - cx).hypot(y - cy) - r,
            Geometry::Rect { x0, y0, x1, y1 } => {
                let dx = (x0 - x).max(x - x1);
                let dy = (y0 - y).max(y - y1);
                if dx <= 0.0 && dy <= 0.0 {
                    dx.max(dy)
                } else {
                    dx.max(0.0).hypot(dy.max(0.0))
                }
            }
        }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        self.signed_distance(p) <= 0.0
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Geometry::Disc { cx, cy, r } => cx.is_finite() && cy.is_finite() && r.is_finite() && r > 0.0,
            Geometry::Rect { x0, y0, x1, y1 } => {
                [x0, y0, x1, y1].iter().all(|v| v.is_finite()) && x1 > x0 && y1 > y0
            }
        }
    }

    /// Closed path running `offset` meters outside the boundary (negative = inside),
    /// sampled every `spacing` meters.
    pub fn offset_loop(&self, offset: f64, spacing: f64) -> Vec<(f64, f64)> {
        match *self {
            Geometry::Disc { cx, cy, r } => {
                let radius = (r + offset).max(spacing);
                let n = ((std::f64::consts::TAU * radius / spacing).ceil() as usize).max(8);
                (0..n)
                    .map(|i| {
                        let t = std::f64::consts::TAU * i as f64 / n as f64;
                        (cx + radius * t.cos(), cy + radius * t.sin())
                    })
                    .collect()
            }
            Geometry::Rect { x0, y0, x1, y1 } => {
                let (ax, ay, bx, by) = (x0 - offset, y0 - offset, x1 + offset, y1 + offset);
                let (ax, bx) = if bx > ax { (ax, bx) } else { let m = 0.5 * (x0 + x1); (m, m) };
                let (ay, by) = if by > ay { (ay, by) } else { let m = 0.5 * (y0 + y1); (m, m) };
                let corners = [(ax, ay), (bx, ay), (bx, by), (ax, by)];
                let mut pts = Vec::new();
                for k in 0..4 {
                    let (sx, sy) = corners[k];
                    let (ex, ey) = corners[(k + 1) % 4];
                    let len = (ex - sx).hypot(ey - sy);
                    let n = ((len / spacing).ceil() as usize).max(1);
                    for i in 0..n {
                        let t = i as f64 / n as f64;
                        pts.push((sx + t * (ex - sx), sy + t * (ey - sy)));
                    }
                }
                pts
            }
        }
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}
