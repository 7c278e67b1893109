//! Planar convex polygons and spanned sets.
//!
//! A spanned set is a compact convex set that contains its coordinate-wise
//! minimum and maximum corners. The localization loop only ever intersects an
//! initial rectangle with half-planes, so sets are stored as explicit convex
//! polygons (counter-clockwise, at most [`MAX_VERTICES`] vertices).

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const MAX_VERTICES: usize = 64;

const REL_EPS: f64 = 1e-12;
/// Merge and collinearity threshold for clipped polygons. Kept at rounding
/// level: a looser value removes slivers whose area is not negligible once
/// the set has become thin.
const CLEAN_EPS: f64 = 64.0 * f64::EPSILON;

/// Convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Polygon {
    /// Builds a polygon from vertices in either orientation; collinear and
    /// repeated vertices are dropped. Fails if the result is not convex or
    /// has no area.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Geometry("non-finite vertex".into()));
        }
        let mut p = Polygon { vertices };
        if p.signed_area() < 0.0 {
            p.vertices.reverse();
        }
        p.clean();
        if p.vertices.len() < 3 || p.area() <= 0.0 {
            return Err(Error::Geometry("polygon has no interior".into()));
        }
        let scale = p.scale();
        let n = p.vertices.len();
        for k in 0..n {
            let (a, b, c) = (p.vertices[k], p.vertices[(k + 1) % n], p.vertices[(k + 2) % n]);
            if cross(a, b, c) < -REL_EPS * scale * scale {
                return Err(Error::Geometry("polygon is not convex".into()));
            }
        }
        if n > MAX_VERTICES {
            return Err(Error::Geometry(format!("polygon has {n} vertices, limit is {MAX_VERTICES}")));
        }
        Ok(p)
    }

    pub fn rectangle(lo: Point, hi: Point) -> Result<Self> {
        Polygon::new(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE)
    }

    fn clean(&mut self) {
        if self.vertices.is_empty() {
            return;
        }
        let scale = {
            let (lo, hi) = self.bounds();
            (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE)
        };
        let eps = CLEAN_EPS * scale;
        let mut out: Vec<Point> = Vec::with_capacity(self.vertices.len());
        for &v in &self.vertices {
            if out.last().is_none_or(|&l| dist(l, v) > eps) {
                out.push(v);
            }
        }
        while out.len() > 1 && dist(out[0], *out.last().unwrap()) <= eps {
            out.pop();
        }
        // Drop collinear vertices.
        let mut changed = true;
        while changed && out.len() > 3 {
            changed = false;
            let n = out.len();
            for k in 0..n {
                let (a, b, c) = (out[(k + n - 1) % n], out[k], out[(k + 1) % n]);
                if cross(a, b, c).abs() <= eps * dist(a, c) {
                    out.remove(k);
                    changed = true;
                    break;
                }
            }
        }
        self.vertices = out;
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|k| {
                let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for k in 0..n {
            let (p, q) = (self.vertices[k], self.vertices[(k + 1) % n]);
            let c = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * c;
            cy += (p[1] + q[1]) * c;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// Coordinate-wise bounding box `(lo, hi)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Signed distance of `p` to the boundary, positive inside.
    pub fn inner_distance(&self, p: Point) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|k| {
                let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
                cross(a, b, p) / dist(a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.inner_distance(p) >= -REL_EPS * self.scale()
    }

    /// Strictly inside, away from the boundary by a relative margin.
    pub fn contains_interior(&self, p: Point) -> bool {
        self.inner_distance(p) > 1e-9 * self.width().max(REL_EPS * self.scale())
    }

    /// Range of `coord[axis]` over the points of the polygon on the line
    /// `coord[1 − axis] = value`; `None` when the line misses the polygon.
    pub fn chord(&self, axis: usize, value: f64) -> Option<(f64, f64)> {
        let other = 1 - axis;
        let n = self.vertices.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..n {
            let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
            let (ao, bo) = (a[other], b[other]);
            if (ao - value) * (bo - value) > 0.0 {
                continue;
            }
            if ao == bo {
                if ao == value {
                    lo = lo.min(a[axis].min(b[axis]));
                    hi = hi.max(a[axis].max(b[axis]));
                }
                continue;
            }
            let t = ((value - ao) / (bo - ao)).clamp(0.0, 1.0);
            let v = a[axis] + t * (b[axis] - a[axis]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= hi {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Vertical chord `{y : (x, y) ∈ P}`.
    pub fn chord_at_x(&self, x: f64) -> Option<(f64, f64)> {
        self.chord(1, x)
    }

    /// Horizontal chord `{x : (x, y) ∈ P}`.
    pub fn chord_at_y(&self, y: f64) -> Option<(f64, f64)> {
        self.chord(0, y)
    }

    /// Minimal width over all directions (attained orthogonally to an edge).
    pub fn width(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|k| {
                let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
                let len = dist(a, b);
                self.vertices
                    .iter()
                    .map(|&v| cross(a, b, v) / len)
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (k, &a) in self.vertices.iter().enumerate() {
            for &b in &self.vertices[k + 1..] {
                best = best.max(dist(a, b));
            }
        }
        best
    }

    /// Unit vector along the diameter, oriented to have nonnegative components
    /// when possible.
    pub fn long_axis(&self) -> (Point, Point) {
        let mut best = (self.vertices[0], self.vertices[0]);
        let mut len = 0.0;
        for (k, &a) in self.vertices.iter().enumerate() {
            for &b in &self.vertices[k + 1..] {
                let d = dist(a, b);
                if d > len {
                    len = d;
                    best = (a, b);
                }
            }
        }
        let (mut a, mut b) = best;
        if b[0] + b[1] < a[0] + a[1] {
            std::mem::swap(&mut a, &mut b);
        }
        (a, b)
    }

    /// Intersection with `{p : normal·p ≤ offset}`; `None` if empty or without area.
    pub fn clip(&self, normal: Point, offset: f64) -> Option<Polygon> {
        let side = |p: Point| normal[0] * p[0] + normal[1] * p[1] - offset;
        let n = self.vertices.len();
        let mut out = Vec::with_capacity(n + 2);
        for k in 0..n {
            let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
            let (sa, sb) = (side(a), side(b));
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
                let t = sa / (sa - sb);
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        let mut p = Polygon { vertices: out };
        p.clean();
        if p.vertices.len() < 3 || p.area() <= 0.0 {
            None
        } else {
            Some(p)
        }
    }
}

/// A convex polygon containing its coordinate-wise minimum and maximum corners.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpannedSet {
    polygon: Polygon,
    lo: Point,
    hi: Point,
}

impl SpannedSet {
    pub fn new(polygon: Polygon) -> Result<Self> {
        let (lo, hi) = polygon.bounds();
        let s = SpannedSet { polygon, lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn from_vertices(vertices: Vec<Point>) -> Result<Self> {
        SpannedSet::new(Polygon::new(vertices)?)
    }

    pub fn rectangle(lo: Point, hi: Point) -> Result<Self> {
        SpannedSet::new(Polygon::rectangle(lo, hi)?)
    }

    /// The corners must belong to the polygon (to a relative tolerance).
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9 * self.polygon.scale();
        for (name, c) in [("minimum", self.lo), ("maximum", self.hi)] {
            if self.polygon.inner_distance(c) < -tol {
                return Err(Error::Geometry(format!("{name} corner {c:?} is not in the set")));
            }
        }
        Ok(())
    }

    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn lo(&self) -> Point {
        self.lo
    }

    pub fn hi(&self) -> Point {
        self.hi
    }

    pub fn area(&self) -> f64 {
        self.polygon.area()
    }

    pub fn width(&self) -> f64 {
        self.polygon.width()
    }

    pub fn diameter(&self) -> f64 {
        self.polygon.diameter()
    }

    pub fn contains_interior(&self, p: Point) -> bool {
        self.polygon.contains_interior(p)
    }

    /// Divides the set by the line through `point` with direction
    /// `(sin θ, cos θ)`. Returns `(K₊, K₋)` where `K₊` lies clockwise of the
    /// line: the east part for `θ = 0` and the south part for `θ = π/2`.
    /// A side without area is returned as `None`.
    pub fn split(&self, point: Point, angle: f64) -> Result<(Option<SpannedSet>, Option<SpannedSet>)> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&angle) {
            return Err(Error::Domain(format!("split angle {angle} outside [0, π/2]")));
        }
        if !self.polygon.contains_interior(point) {
            return Err(Error::Geometry(format!("pivot {point:?} is not interior to the set")));
        }
        let d = [angle.sin(), angle.cos()];
        // cross(d, p − O) = d₀(p₁ − O₁) − d₁(p₀ − O₀) ≤ 0  ⇔  n·p ≤ n·O with n = (−d₁, d₀).
        let normal = [-d[1], d[0]];
        let offset = normal[0] * point[0] + normal[1] * point[1];
        let plus = self.polygon.clip(normal, offset).map(SpannedSet::new).transpose()?;
        let minus = self
            .polygon
            .clip([-normal[0], -normal[1]], -offset)
            .map(SpannedSet::new)
            .transpose()?;
        Ok((plus, minus))
    }

    /// Like [`split`](Self::split) but requires both parts to have area.
    pub fn split_spanned(&self, point: Point, angle: f64) -> Result<(SpannedSet, SpannedSet)> {
        match self.split(point, angle)? {
            (Some(p), Some(m)) => Ok((p, m)),
            _ => Err(Error::Geometry("split produced an empty part".into())),
        }
    }
}
