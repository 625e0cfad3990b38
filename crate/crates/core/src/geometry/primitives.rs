//! Planar geometry primitives shared across the crate: vectors, oriented
//! lines, arcs, Bézier curves, and polygon predicates.

use std::ops::{Add, Mul, Neg, Sub};

/// 2-D point/vector in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2-D cross product (z component of the 3-D cross product).
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.x / n, self.y / n)
    }

    /// Counter-clockwise perpendicular (left normal).
    pub fn left(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn rotated(self, angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Signed angle that rotates `self` onto `other`, in (-pi, pi].
    pub fn signed_angle_to(self, other: Self) -> f64 {
        self.cross(other).atan2(self.dot(other))
    }

    pub fn dist(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn from_angle_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self::new(c, s)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Oriented infinite line: a base point plus a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub point: Vec2,
    pub dir: Vec2,
}

impl Line {
    pub fn new(point: Vec2, dir: Vec2) -> Self {
        Self {
            point,
            dir: dir.normalized(),
        }
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        self.point + self.dir * t
    }

    /// Coordinate of the orthogonal projection of `p` along the direction.
    pub fn coord_of(&self, p: Vec2) -> f64 {
        self.dir.dot(p - self.point)
    }

    /// Signed perpendicular offset of `p` (positive on the left of `dir`).
    pub fn offset_of(&self, p: Vec2) -> f64 {
        self.dir.cross(p - self.point)
    }

    /// Intersection point, or `None` for (near-)parallel lines.
    pub fn intersect(&self, other: &Line) -> Option<Vec2> {
        let denom = self.dir.cross(other.dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (other.point - self.point).cross(other.dir) / denom;
        Some(self.point_at(t))
    }

    /// Parameter along `self` where `other` crosses it, if not parallel.
    pub fn intersect_param(&self, other: &Line) -> Option<f64> {
        let denom = self.dir.cross(other.dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        Some((other.point - self.point).cross(other.dir) / denom)
    }
}

/// Exact Euclidean distance from `p` to segment `[a, b]`.
pub fn dist_point_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm2();
    if len2 <= 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Twice the signed area of triangle (a, b, c); positive when CCW.
fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Do segments [a,b] and [c,d] intersect (including touching)?
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| -> bool {
        orient(p, q, r) == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a) || on(c, d, b) || on(a, b, c) || on(a, b, d)
}

/// Shoelace signed area of a closed polygon (positive when CCW).
pub fn signed_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.cross(b);
    }
    acc / 2.0
}

/// Check a closed polygon for self-intersection.
///
/// Returns the indices of the first pair of non-adjacent segments that
/// intersect, or `None` when the polygon is simple. O(n^2), intended for
/// validation and tests.
pub fn find_self_intersection(points: &[Vec2]) -> Option<(usize, usize)> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        for j in (i + 1)..n {
            // Skip the segment itself and its two neighbours around the loop.
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let c = points[j];
            let d = points[(j + 1) % n];
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Winding number of a closed polygon around `p` (0 means outside).
pub fn winding_number(points: &[Vec2], p: Vec2) -> i32 {
    let n = points.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        if a.y <= p.y {
            if b.y > p.y && orient(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && orient(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding
}

pub fn bounding_box(points: &[Vec2]) -> (Vec2, Vec2) {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

/// Circular arc: sweep is signed (positive = counter-clockwise).
#[derive(Debug, Clone, Copy)]
pub struct Arc {
    pub center: Vec2,
    pub radius: f64,
    pub start_angle: f64,
    pub sweep: f64,
}

impl Arc {
    pub fn point_at(&self, frac: f64) -> Vec2 {
        let a = self.start_angle + self.sweep * frac;
        self.center + Vec2::new(a.cos(), a.sin()) * self.radius
    }

    /// Unit tangent in travel direction at fraction `frac` of the sweep.
    pub fn tangent_at(&self, frac: f64) -> Vec2 {
        let a = self.start_angle + self.sweep * frac;
        let radial = Vec2::new(a.cos(), a.sin());
        if self.sweep >= 0.0 {
            radial.left()
        } else {
            -radial.left()
        }
    }

    /// Polyline with chord error at most `tol` (both endpoints included).
    pub fn discretize(&self, tol: f64) -> Vec<Vec2> {
        let max_step = if self.radius <= tol {
            std::f64::consts::FRAC_PI_2
        } else {
            2.0 * (1.0 - tol / self.radius).acos()
        };
        let steps = (self.sweep.abs() / max_step).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|i| self.point_at(i as f64 / steps as f64))
            .collect()
    }
}

/// Bézier curve of arbitrary degree given by its control polygon.
#[derive(Debug, Clone)]
pub struct Bezier {
    pub control: Vec<Vec2>,
}

impl Bezier {
    pub fn new(control: Vec<Vec2>) -> Self {
        assert!(control.len() >= 2, "Bézier needs at least two points");
        Self { control }
    }

    pub fn degree(&self) -> usize {
        self.control.len() - 1
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        let mut pts = self.control.clone();
        let n = pts.len();
        for level in 1..n {
            for i in 0..(n - level) {
                pts[i] = pts[i].lerp(pts[i + 1], t);
            }
        }
        pts[0]
    }

    /// Tangent direction (not normalized) at parameter `t`.
    pub fn tangent_at(&self, t: f64) -> Vec2 {
        let n = self.control.len();
        let mut pts: Vec<Vec2> = (0..n - 1)
            .map(|i| (self.control[i + 1] - self.control[i]) * (n as f64 - 1.0))
            .collect();
        let m = pts.len();
        for level in 1..m {
            for i in 0..(m - level) {
                pts[i] = pts[i].lerp(pts[i + 1], t);
            }
        }
        pts[0]
    }

    fn split(&self, t: f64) -> (Bezier, Bezier) {
        let mut pts = self.control.clone();
        let n = pts.len();
        let mut left = Vec::with_capacity(n);
        let mut right = vec![Vec2::default(); n];
        right[n - 1] = pts[n - 1];
        left.push(pts[0]);
        for level in 1..n {
            for i in 0..(n - level) {
                pts[i] = pts[i].lerp(pts[i + 1], t);
            }
            left.push(pts[0]);
            right[n - 1 - level] = pts[n - 1 - level];
        }
        (Bezier::new(left), Bezier::new(right))
    }

    fn flat_within(&self, tol: f64) -> bool {
        let a = self.control[0];
        let b = *self.control.last().unwrap();
        self.control
            .iter()
            .all(|&p| dist_point_segment(p, a, b) <= tol)
    }

    /// Polyline with deviation at most `tol` (both endpoints included).
    pub fn discretize(&self, tol: f64) -> Vec<Vec2> {
        let mut out = vec![self.control[0]];
        fn recurse(bez: &Bezier, tol: f64, depth: usize, out: &mut Vec<Vec2>) {
            if bez.flat_within(tol) || depth >= 24 {
                out.push(*bez.control.last().unwrap());
                return;
            }
            let (l, r) = bez.split(0.5);
            recurse(&l, tol, depth + 1, out);
            recurse(&r, tol, depth + 1, out);
        }
        recurse(self, tol, 0, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn line_intersection_and_coords() {
        let a = Line::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let b = Line::new(Vec2::new(2.0, -1.0), Vec2::new(0.0, 1.0));
        let p = a.intersect(&b).unwrap();
        assert_abs_diff_eq!(p.x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert!(a.intersect(&a).is_none(), "parallel lines must not intersect");
        assert_abs_diff_eq!(a.coord_of(Vec2::new(3.0, 5.0)), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.offset_of(Vec2::new(3.0, 5.0)), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn signed_angles() {
        let e = Vec2::new(1.0, 0.0);
        assert_abs_diff_eq!(
            e.signed_angle_to(Vec2::new(0.0, 1.0)),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            e.signed_angle_to(Vec2::new(0.0, -2.0)),
            -std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn point_segment_distance() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(10.0, 0.0);
        assert_abs_diff_eq!(dist_point_segment(Vec2::new(5.0, 3.0), a, b), 3.0);
        assert_abs_diff_eq!(dist_point_segment(Vec2::new(-4.0, 3.0), a, b), 5.0);
        assert_abs_diff_eq!(dist_point_segment(Vec2::new(13.0, 4.0), a, b), 5.0);
    }

    #[test]
    fn simple_polygon_detection() {
        let square = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_eq!(find_self_intersection(&square), None);
        let bowtie = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(find_self_intersection(&bowtie).is_some());
        assert!(signed_area(&square) > 0.0);
    }

    #[test]
    fn winding_numbers() {
        let square = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert_eq!(winding_number(&square, Vec2::new(1.0, 1.0)), 1);
        assert_eq!(winding_number(&square, Vec2::new(3.0, 1.0)), 0);
        let cw: Vec<Vec2> = square.iter().rev().copied().collect();
        assert_eq!(winding_number(&cw, Vec2::new(1.0, 1.0)), -1);
    }

    #[test]
    fn arc_discretization_meets_chord_tolerance() {
        let arc = Arc {
            center: Vec2::new(0.0, 0.0),
            radius: 20.0,
            start_angle: 0.0,
            sweep: std::f64::consts::PI,
        };
        let pts = arc.discretize(0.5);
        for pair in pts.windows(2) {
            let mid = pair[0].lerp(pair[1], 0.5);
            let sagitta = (20.0 - mid.norm()).abs();
            assert!(sagitta <= 0.5 + 1e-9, "chord error {sagitta}");
        }
        assert_abs_diff_eq!(pts[0].x, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts.last().unwrap().x, -20.0, epsilon = 1e-9);
    }

    #[test]
    fn bezier_matches_de_casteljau_endpoints_and_flattens() {
        let bez = Bezier::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 20.0),
            Vec2::new(30.0, -10.0),
            Vec2::new(40.0, 5.0),
        ]);
        assert_eq!(bez.degree(), 3);
        let p0 = bez.point_at(0.0);
        let p1 = bez.point_at(1.0);
        assert_abs_diff_eq!(p0.x, 0.0);
        assert_abs_diff_eq!(p1.x, 40.0);
        let pts = bez.discretize(0.25);
        // Every polyline point must lie on the curve: spot-check distances by
        // dense sampling of the exact curve.
        let dense: Vec<Vec2> = (0..=800).map(|i| bez.point_at(i as f64 / 800.0)).collect();
        for pair in pts.windows(2) {
            let mid = pair[0].lerp(pair[1], 0.5);
            let d = dense
                .iter()
                .map(|q| q.dist(mid))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 0.3, "flattened midpoint strays {d} from the curve");
        }
        // Tangent at endpoints aligns with the control polygon edges.
        let t0 = bez.tangent_at(0.0).normalized();
        assert_abs_diff_eq!(t0.cross((bez.control[1] - bez.control[0]).normalized()), 0.0, epsilon = 1e-12);
    }
}
