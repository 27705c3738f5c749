//! Oriented boxes, convex polygon algebra, and the exact rotated-IoU oracle.
//!
//! The oriented box type uses the long-edge angle convention: `w` is always
//! the longer side, and `theta` (radians, in `[-pi/2, pi/2)`) is the
//! direction of that side. The constructor normalizes any input into this
//! form via the equivalences `(w, h, theta) ~ (h, w, theta - pi/2)` and
//! `theta ~ theta - pi`.

use crate::error::{Error, Result};
use std::f64::consts::{FRAC_PI_2, PI};

/// Collinearity / degeneracy tolerance, in length units.
pub const GEOM_EPS: f64 = 1e-9;

/// Wraps an angle into `[-pi/2, pi/2)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    if wrapped >= FRAC_PI_2 {
        wrapped - PI
    } else if wrapped < -FRAC_PI_2 {
        wrapped + PI
    } else {
        wrapped
    }
}

/// Oriented bounding box `(cx, cy, w, h, theta)` in the long-edge convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl ObbBox {
    /// Builds a box from arbitrary parameters, normalizing to `w >= h` and
    /// `theta` in `[-pi/2, pi/2)`. Both sizes must be finite and positive.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite parameter in ({cx}, {cy}, {w}, {h}, {theta})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "sizes must be positive (got w={w}, h={h})"
            )));
        }
        let (w, h, theta) = if w < h {
            (h, w, theta - FRAC_PI_2)
        } else {
            (w, h, theta)
        };
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: wrap_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// Long edge length.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Short edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Orientation of the long edge, in `[-pi/2, pi/2)`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `[cx, cy, w, h, theta]` in one array.
    pub fn params(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Long/short edge ratio, always `>= 1`.
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    /// The four corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        let local = [[hw, -hh], [hw, hh], [-hw, hh], [-hw, -hh]];
        local.map(|[x, y]| [self.cx + c * x - s * y, self.cy + s * x + c * y])
    }

    /// Corner expansion as a convex polygon.
    pub fn to_polygon(&self) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.corners().to_vec(),
        }
    }

    /// True when the two boxes describe the same point set, comparing up to
    /// the long/short swap and angle periodicity, with tolerance `tol`.
    pub fn same_region(&self, other: &ObbBox, tol: f64) -> bool {
        if (self.cx - other.cx).abs() > tol || (self.cy - other.cy).abs() > tol {
            return false;
        }
        if (self.w - other.w).abs() > tol || (self.h - other.h).abs() > tol {
            return false;
        }
        let dt = wrap_angle(self.theta - other.theta).abs();
        // An exact square is orientation-ambiguous modulo pi/2.
        let square = (self.w - self.h).abs() <= tol;
        dt <= tol || dt >= PI - tol || (square && (dt - FRAC_PI_2).abs() <= tol)
    }
}

/// Axis-aligned (horizontal) bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hbb {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl Hbb {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox("non-finite hbb coordinate".into()));
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(Error::InvalidBox(format!(
                "empty hbb [{xmin}, {ymin}, {xmax}, {ymax}]"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)]
    }
}

/// Convex polygon with counter-clockwise vertices. An empty vertex list
/// encodes the empty polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    /// Validates counter-clockwise order and convexity (collinear runs are
    /// tolerated within [`GEOM_EPS`]).
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.is_empty() {
            return Ok(Self::empty());
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "{} vertices; need at least 3 or none",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e1 = [b[0] - a[0], b[1] - a[1]];
            let e2 = [c[0] - b[0], c[1] - b[1]];
            let turn = cross(e1, e2);
            let scale = (e1[0].hypot(e1[1])) * (e2[0].hypot(e2[1]));
            if turn < -GEOM_EPS * scale.max(1.0) {
                return Err(Error::InvalidPolygon(format!(
                    "clockwise turn at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        if shoelace(&vertices) <= 0.0 {
            return Err(Error::InvalidPolygon("non-positive signed area".into()));
        }
        Ok(Self { vertices })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Shoelace area; zero for the empty or degenerate polygon.
    pub fn area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        shoelace(&self.vertices).abs()
    }

    /// Cleans raw clipper output: drops repeated vertices and collapses
    /// measure-zero slivers to the empty polygon.
    fn from_clip(raw: Vec<[f64; 2]>) -> Self {
        let mut vertices: Vec<[f64; 2]> = Vec::with_capacity(raw.len());
        for v in raw {
            if vertices
                .last()
                .is_some_and(|u| (u[0] - v[0]).hypot(u[1] - v[1]) <= GEOM_EPS)
            {
                continue;
            }
            vertices.push(v);
        }
        while vertices.len() > 1 {
            let first = vertices[0];
            let last = *vertices.last().unwrap();
            if (first[0] - last[0]).hypot(first[1] - last[1]) <= GEOM_EPS {
                vertices.pop();
            } else {
                break;
            }
        }
        if vertices.len() < 3 || shoelace(&vertices).abs() <= GEOM_EPS {
            return Self::empty();
        }
        Self { vertices }
    }
}

#[inline]
fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let [x0, y0] = vertices[i];
        let [x1, y1] = vertices[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

/// Shoelace area of a polygon; zero when empty or degenerate.
pub fn polygon_area(poly: &ConvexPolygon) -> f64 {
    poly.area()
}

/// Sutherland-Hodgman intersection of two convex CCW polygons.
///
/// Contact of measure zero (shared edges or corners) comes out as the empty
/// polygon.
pub fn polygon_clip(subject: &ConvexPolygon, clip: &ConvexPolygon) -> ConvexPolygon {
    if subject.is_empty() || clip.is_empty() {
        return ConvexPolygon::empty();
    }
    let mut output = subject.vertices.clone();
    let nc = clip.vertices.len();
    for i in 0..nc {
        let a = clip.vertices[i];
        let b = clip.vertices[(i + 1) % nc];
        let input = std::mem::take(&mut output);
        if input.is_empty() {
            break;
        }
        let edge = [b[0] - a[0], b[1] - a[1]];
        let inside = |p: [f64; 2]| cross(edge, [p[0] - a[0], p[1] - a[1]]) >= 0.0;
        let n = input.len();
        for j in 0..n {
            let prev = input[(j + n - 1) % n];
            let cur = input[j];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    ConvexPolygon::from_clip(output)
}

/// Intersection of the infinite lines through `p->q` and `a->b`. Only called
/// when the segment `p->q` straddles the clip line, so the denominator is
/// bounded away from zero.
fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = cross(d1, d2);
    let t = cross([a[0] - p[0], a[1] - p[1]], d2) / denom;
    [p[0] + t * d1[0], p[1] + t * d1[1]]
}

/// Exact intersection-over-union of two oriented boxes, via polygon clipping.
pub fn rotated_iou(a: &ObbBox, b: &ObbBox) -> f64 {
    let inter = polygon_clip(&a.to_polygon(), &b.to_polygon()).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Standard axis-aligned intersection-over-union.
pub fn hbb_iou(a: &Hbb, b: &Hbb) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Complete-IoU loss: `1 - IoU` plus a normalized center-distance penalty and
/// an aspect-ratio consistency penalty. Zero iff the boxes are identical.
pub fn ciou_loss(a: &Hbb, b: &Hbb) -> f64 {
    let iou = hbb_iou(a, b);
    let [acx, acy] = a.center();
    let [bcx, bcy] = b.center();
    let center_dist_sq = (acx - bcx).powi(2) + (acy - bcy).powi(2);
    let ew = a.xmax.max(b.xmax) - a.xmin.min(b.xmin);
    let eh = a.ymax.max(b.ymax) - a.ymin.min(b.ymin);
    let diag_sq = ew * ew + eh * eh;
    let v = (4.0 / (PI * PI))
        * ((b.width() / b.height()).atan() - (a.width() / a.height()).atan()).powi(2);
    let alpha = if v > 0.0 { v / ((1.0 - iou) + v) } else { 0.0 };
    1.0 - iou + center_dist_sq / diag_sq + alpha * v
}
