//! Corner-transition construction for regions 2–5.
//!
//! Every transition starts the same way: a small departure arc of fixed
//! radius leaves the start anchor line at the region's anchor point and
//! turns just far enough that the straight "in-between" line after it
//! makes the requested angle with the landing anchor line. The angle
//! parameter of a region is therefore the inclination of the in-between
//! line to the landing line; the small arc's own turn is the wedge
//! remainder (wedge angle minus the angle parameter).
//!
//! From there the two variants diverge:
//! - **Arc**: the main arc is the unique fillet of the chosen radius
//!   between the in-between line and the landing line; the in-between
//!   length is whatever the fillet leaves. Radius bounds keep that length
//!   at 15 mm or more and keep the tangential landing point within the
//!   landing segment.
//! - **Spline**: the in-between line has an explicit length, a Bézier
//!   takes over from its end and lands on the landing line; the interior
//!   control points sit on the in-between line's extension and on the
//!   landing line's extension, which makes the junctions tangent-
//!   continuous by construction.

use super::primitives::{Arc, Bezier, Vec2};
use super::reference::RegionSlot;

/// Closed interval of admissible values for one range-dependent parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo - 1e-9 && v <= self.hi + 1e-9
    }

    /// Map a unit-cube coordinate into the interval.
    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }
}

/// Minimum length of the straight in-between lines (mm).
pub const MIN_IN_BETWEEN: f64 = 15.0;
/// Allowance subtracted when an in-between line is bounded by the landing
/// line intersection (mm).
pub const IN_BETWEEN_ALLOWANCE: f64 = 15.0;
/// Minimum length of control-point sublines (mm).
pub const MIN_SUBLINE: f64 = 5.0;
/// Allowance preventing control points from crossing the guard point (mm).
pub const CROSSING_ALLOWANCE: f64 = 2.0;
/// Minimum radius of the main arcs (mm).
pub const MIN_MAIN_RADIUS: f64 = 15.0;
/// Landing-offset bounds measured along the landing line (mm).
pub const LANDING_OFFSET_MIN: f64 = 15.0;
pub const LANDING_OFFSET_MAX: f64 = 100.0;
/// Smallest coordinate (from the corner) a tangential landing may take.
pub const MIN_LANDING_COORD: f64 = 5.0;
/// Smallest coordinate a control point may take along the landing line.
const MIN_ANCHOR_COORD: f64 = 2.0;

/// One emitted curve piece of a region transition, in canonical order.
#[derive(Debug, Clone)]
pub enum CurvePiece {
    Arc(Arc),
    Seg(Vec2, Vec2),
    Bezier(Bezier),
}

impl CurvePiece {
    pub fn start(&self) -> Vec2 {
        match self {
            CurvePiece::Arc(a) => a.point_at(0.0),
            CurvePiece::Seg(a, _) => *a,
            CurvePiece::Bezier(b) => b.control[0],
        }
    }

    pub fn end(&self) -> Vec2 {
        match self {
            CurvePiece::Arc(a) => a.point_at(1.0),
            CurvePiece::Seg(_, b) => *b,
            CurvePiece::Bezier(b) => *b.control.last().unwrap(),
        }
    }

    pub fn start_tangent(&self) -> Vec2 {
        match self {
            CurvePiece::Arc(a) => a.tangent_at(0.0),
            CurvePiece::Seg(a, b) => (*b - *a).normalized(),
            CurvePiece::Bezier(b) => b.tangent_at(0.0).normalized(),
        }
    }

    pub fn end_tangent(&self) -> Vec2 {
        match self {
            CurvePiece::Arc(a) => a.tangent_at(1.0),
            CurvePiece::Seg(a, b) => (*b - *a).normalized(),
            CurvePiece::Bezier(b) => b.tangent_at(1.0).normalized(),
        }
    }

    pub fn discretize(&self, tol: f64) -> Vec<Vec2> {
        match self {
            CurvePiece::Arc(a) => a.discretize(tol),
            CurvePiece::Seg(a, b) => vec![*a, *b],
            CurvePiece::Bezier(b) => b.discretize(tol),
        }
    }
}

/// A fully constructed region transition in canonical order: it starts at
/// the region's departure anchor point and ends on the landing line at
/// coordinate `landing_t` from the corner.
#[derive(Debug, Clone)]
pub struct RegionCurve {
    pub pieces: Vec<CurvePiece>,
    pub landing_t: f64,
}

/// Shared departure data: small arc plus the in-between ray.
#[derive(Debug, Clone, Copy)]
pub struct Departure {
    /// Small-arc turn, degrees (wedge minus the angle parameter).
    pub small_turn_deg: f64,
    /// Unit direction of the in-between line.
    pub d1: Vec2,
    /// End point of the small arc = start of the in-between line.
    pub e1: Vec2,
    /// Distance from `e1` along `d1` to the landing line.
    pub alpha: f64,
    /// Coordinate (along the landing direction, from the corner) where the
    /// in-between ray crosses the landing line.
    pub t_i: f64,
}

/// Compute the departure chain for a region and an angle parameter.
///
/// Returns `None` when the angle leaves the wedge (caught earlier by
/// validation for all shipped geometries).
pub fn departure(slot: &RegionSlot, angle_deg: f64) -> Option<Departure> {
    let small_turn_deg = slot.wedge_deg - angle_deg;
    if small_turn_deg <= 0.0 || angle_deg <= 0.0 {
        return None;
    }
    let d1 = slot.d_in.rotated((slot.sigma * small_turn_deg).to_radians());
    let e1 = slot.arc_center - d1.left() * (slot.sigma * slot.small_radius);
    // Ray e1 + q*d1 meets the landing line (corner, m_hat).
    let denom = slot.m_hat.cross(d1);
    if denom.abs() < 1e-9 {
        return None;
    }
    let alpha = -slot.m_hat.cross(e1 - slot.corner) / denom;
    if alpha <= 0.0 {
        return None;
    }
    let hit = e1 + d1 * alpha;
    let t_i = (hit - slot.corner).dot(slot.m_hat);
    Some(Departure {
        small_turn_deg,
        d1,
        e1,
        alpha,
        t_i,
    })
}

fn small_arc_piece(slot: &RegionSlot, dep: &Departure) -> CurvePiece {
    let start_angle = {
        let v = slot.t_s - slot.arc_center;
        v.y.atan2(v.x)
    };
    CurvePiece::Arc(Arc {
        center: slot.arc_center,
        radius: slot.small_radius,
        start_angle,
        sweep: (slot.sigma * dep.small_turn_deg).to_radians(),
    })
}

/// Admissible main-arc radii for the Arc variant.
pub fn radius_interval(slot: &RegionSlot, dep: &Departure, angle_deg: f64) -> Interval {
    let tan_half = (angle_deg.to_radians() / 2.0).tan();
    let lo = MIN_MAIN_RADIUS.max((MIN_LANDING_COORD - dep.t_i) / tan_half);
    let hi_line = (dep.alpha - MIN_IN_BETWEEN) / tan_half;
    let hi_budget = (slot.landing_budget - dep.t_i) / tan_half;
    Interval::new(lo, hi_line.min(hi_budget))
}

/// In-between line length of the Arc variant for a given radius.
pub fn arc_in_between_length(dep: &Departure, angle_deg: f64, radius: f64) -> f64 {
    dep.alpha - radius * (angle_deg.to_radians() / 2.0).tan()
}

/// Build the Arc variant: small arc, in-between line, main fillet arc.
pub fn arc_pieces(slot: &RegionSlot, angle_deg: f64, radius: f64) -> Option<RegionCurve> {
    let dep = departure(slot, angle_deg)?;
    let tan_half = (angle_deg.to_radians() / 2.0).tan();
    let l = dep.alpha - radius * tan_half;
    let b = dep.e1 + dep.d1 * l;
    let center = b + dep.d1.left() * (slot.sigma * radius);
    let start_angle = {
        let v = b - center;
        v.y.atan2(v.x)
    };
    let main = Arc {
        center,
        radius,
        start_angle,
        sweep: (slot.sigma * angle_deg).to_radians(),
    };
    let landing_t = dep.t_i + radius * tan_half;
    Some(RegionCurve {
        pieces: vec![
            small_arc_piece(slot, &dep),
            CurvePiece::Seg(dep.e1, b),
            CurvePiece::Arc(main),
        ],
        landing_t,
    })
}

/// Bounds of the in-between line length of the spline variants.
pub fn line_interval(dep: &Departure) -> Interval {
    Interval::new(MIN_IN_BETWEEN, dep.alpha - IN_BETWEEN_ALLOWANCE)
}

/// Bounds of the subline that extends the in-between line (its end point
/// is the control point adjacent to the in-between line).
pub fn ray_subline_interval(dep: &Departure, line_len: f64) -> Interval {
    Interval::new(MIN_SUBLINE, (dep.alpha - line_len) - CROSSING_ALLOWANCE)
}

/// Bounds of the subline along the landing line whose end point is the
/// control point adjacent to the landing point. The control point walks
/// from the landing point toward the corner and must cross neither the
/// in-between ray's intersection with the landing line (when that lies in
/// the way) nor the corner itself.
pub fn anchor_subline_interval(dep: &Departure, landing_t: f64) -> Interval {
    let guard = if dep.t_i > 0.0 && dep.t_i < landing_t {
        landing_t - dep.t_i - CROSSING_ALLOWANCE
    } else {
        landing_t - MIN_ANCHOR_COORD
    };
    Interval::new(MIN_SUBLINE, guard)
}

/// Regions 2/3: bounds of the landing offset, measured along the landing
/// line from the foot of the spline's start point.
pub fn upper_landing_interval(slot: &RegionSlot, foot_t: f64) -> Interval {
    Interval::new(
        LANDING_OFFSET_MIN,
        LANDING_OFFSET_MAX.min(slot.landing_budget - foot_t),
    )
}

/// Regions 4/5: bounds of the landing offset, measured along the landing
/// line from the foot of the small-arc centre.
pub fn lower_landing_interval(slot: &RegionSlot) -> Interval {
    let c_o = (slot.arc_center - slot.corner).dot(slot.m_hat);
    Interval::new(
        LANDING_OFFSET_MIN.max((MIN_SUBLINE + CROSSING_ALLOWANCE) - c_o),
        LANDING_OFFSET_MAX.min(slot.landing_budget - c_o),
    )
}

/// Coordinate of the projection of a point onto the landing line.
pub fn landing_coord(slot: &RegionSlot, p: Vec2) -> f64 {
    (p - slot.corner).dot(slot.m_hat)
}

/// Control cage of a regions-2/3 spline (cubic, two control points).
#[derive(Debug, Clone, Copy)]
pub struct UpperSplineFrame {
    pub e_start: Vec2,
    pub c_start: Vec2,
    pub c_land: Vec2,
    pub e_land: Vec2,
    pub landing_t: f64,
    pub foot_t: f64,
}

pub fn upper_spline_frame(
    slot: &RegionSlot,
    dep: &Departure,
    line_len: f64,
    ray_subline: f64,
    landing_offset: f64,
    anchor_subline: f64,
) -> UpperSplineFrame {
    let e_start = dep.e1 + dep.d1 * line_len;
    let c_start = e_start + dep.d1 * ray_subline;
    let foot_t = landing_coord(slot, e_start);
    let landing_t = foot_t + landing_offset;
    let e_land = slot.corner + slot.m_hat * landing_t;
    let c_land = e_land - slot.m_hat * anchor_subline;
    UpperSplineFrame {
        e_start,
        c_start,
        c_land,
        e_land,
        landing_t,
        foot_t,
    }
}

/// Build a regions-2/3 spline transition.
pub fn upper_spline_pieces(
    slot: &RegionSlot,
    angle_deg: f64,
    line_len: f64,
    ray_subline: f64,
    landing_offset: f64,
    anchor_subline: f64,
) -> Option<RegionCurve> {
    let dep = departure(slot, angle_deg)?;
    let f = upper_spline_frame(slot, &dep, line_len, ray_subline, landing_offset, anchor_subline);
    Some(RegionCurve {
        pieces: vec![
            small_arc_piece(slot, &dep),
            CurvePiece::Seg(dep.e1, f.e_start),
            CurvePiece::Bezier(Bezier::new(vec![f.e_start, f.c_start, f.c_land, f.e_land])),
        ],
        landing_t: f.landing_t,
    })
}

/// Control cage of a regions-4/5 spline (quartic, three control points).
#[derive(Debug, Clone, Copy)]
pub struct LowerSplineFrame {
    pub e_start: Vec2,
    pub c_start: Vec2,
    pub c_land: Vec2,
    pub e_land: Vec2,
    pub landing_t: f64,
}

pub fn lower_spline_frame(
    slot: &RegionSlot,
    dep: &Departure,
    line_len: f64,
    ray_subline: f64,
    anchor_subline: f64,
    landing_offset: f64,
) -> LowerSplineFrame {
    let e_start = dep.e1 + dep.d1 * line_len;
    let c_start = e_start + dep.d1 * ray_subline;
    let c_o = (slot.arc_center - slot.corner).dot(slot.m_hat);
    let landing_t = c_o + landing_offset;
    let e_land = slot.corner + slot.m_hat * landing_t;
    let c_land = e_land - slot.m_hat * anchor_subline;
    LowerSplineFrame {
        e_start,
        c_start,
        c_land,
        e_land,
        landing_t,
    }
}

/// The semi-circle the middle control point must stay inside: diameter
/// from the start-side control point to the landing-side control point,
/// bulging toward the blank interior (away from the replaced corner).
#[derive(Debug, Clone, Copy)]
pub struct SemiCircle {
    pub mid: Vec2,
    pub radius: f64,
    pub e_hat: Vec2,
    pub j_hat: Vec2,
}

impl SemiCircle {
    pub fn over(c_start: Vec2, c_land: Vec2, corner: Vec2) -> Self {
        let mid = (c_start + c_land) * 0.5;
        let radius = c_start.dist(c_land) / 2.0;
        let e_hat = (c_land - c_start).normalized();
        let mut j_hat = e_hat.left();
        if j_hat.dot(corner - mid) > 0.0 {
            j_hat = -j_hat;
        }
        Self {
            mid,
            radius,
            e_hat,
            j_hat,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.mid;
        d.norm() <= self.radius + 1e-9 && d.dot(self.j_hat) >= -1e-9
    }

    /// Area-uniform map from the unit square onto the half disk.
    pub fn point_from_unit(&self, u1: f64, u2: f64) -> Vec2 {
        let rho = self.radius * u1.sqrt();
        let phi = std::f64::consts::PI * u2;
        self.mid + (self.e_hat * phi.cos() + self.j_hat * phi.sin()) * rho
    }
}

/// Build a regions-4/5 spline transition. `mid_offset` is the middle
/// control point's offset from the small-arc centre; it must satisfy the
/// semi-circle constraint (checked by validation, not here).
#[allow(clippy::too_many_arguments)]
pub fn lower_spline_pieces(
    slot: &RegionSlot,
    angle_deg: f64,
    line_len: f64,
    ray_subline: f64,
    anchor_subline: f64,
    landing_offset: f64,
    mid_offset: Vec2,
) -> Option<RegionCurve> {
    let dep = departure(slot, angle_deg)?;
    let f = lower_spline_frame(slot, &dep, line_len, ray_subline, anchor_subline, landing_offset);
    let mid = slot.arc_center + mid_offset;
    Some(RegionCurve {
        pieces: vec![
            small_arc_piece(slot, &dep),
            CurvePiece::Seg(dep.e1, f.e_start),
            CurvePiece::Bezier(Bezier::new(vec![
                f.e_start, f.c_start, mid, f.c_land, f.e_land,
            ])),
        ],
        landing_t: f.landing_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reference::{build_reference, GeometryConfig};
    use approx::assert_abs_diff_eq;

    fn slots() -> crate::geometry::reference::ReferenceGeometry {
        build_reference(&GeometryConfig::default()).unwrap()
    }

    #[test]
    fn radius_interval_nonempty_across_angle_range_for_all_regions() {
        let r = slots();
        for slot in &r.slots {
            let (lo, hi) = slot.angle_bounds;
            for k in 0..=10 {
                let a = lo + (hi - lo) * k as f64 / 10.0;
                let dep = departure(slot, a).unwrap();
                let iv = radius_interval(slot, &dep, a);
                assert!(
                    !iv.is_empty() && iv.hi - iv.lo > 5.0,
                    "region {} angle {a}: radius interval {iv:?}",
                    slot.region
                );
                assert!(iv.lo >= MIN_MAIN_RADIUS);
            }
        }
    }

    #[test]
    fn arc_chain_is_tangent_continuous_and_lands_on_the_line() {
        let r = slots();
        for slot in &r.slots {
            let a = (slot.angle_bounds.0 + slot.angle_bounds.1) / 2.0;
            let dep = departure(slot, a).unwrap();
            let iv = radius_interval(slot, &dep, a);
            let radius = (iv.lo + iv.hi) / 2.0;
            let curve = arc_pieces(slot, a, radius).unwrap();
            assert_eq!(curve.pieces.len(), 3);
            // Departure point and tangent.
            assert_abs_diff_eq!(curve.pieces[0].start().dist(slot.t_s), 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(
                curve.pieces[0].start_tangent().cross(slot.d_in),
                0.0,
                epsilon = 1e-9
            );
            // Junction tangents match exactly.
            for w in curve.pieces.windows(2) {
                assert_abs_diff_eq!(w[0].end().dist(w[1].start()), 0.0, epsilon = 1e-9);
                let t0 = w[0].end_tangent();
                let t1 = w[1].start_tangent();
                assert!(t0.dot(t1) > 0.0);
                assert_abs_diff_eq!(t0.cross(t1), 0.0, epsilon = 1e-9);
            }
            // Landing point on the landing line with the landing tangent.
            let land = curve.pieces.last().unwrap().end();
            let off = (land - slot.corner).cross(slot.m_hat);
            assert_abs_diff_eq!(off, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(
                curve.pieces.last().unwrap().end_tangent().cross(slot.m_hat),
                0.0,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                (land - slot.corner).dot(slot.m_hat),
                curve.landing_t,
                epsilon = 1e-6
            );
            assert!(curve.landing_t > MIN_LANDING_COORD - 1e-9);
            assert!(curve.landing_t < slot.landing_budget + 1e-9);
        }
    }

    #[test]
    fn radius_at_upper_bound_leaves_fifteen_mm_in_between_when_line_binds() {
        let r = slots();
        // Region 3 at its maximum angle: the in-between constraint binds
        // before the landing budget does.
        let slot = r.slot(3);
        let a = 90.0;
        let dep = departure(slot, a).unwrap();
        let iv = radius_interval(slot, &dep, a);
        let tan_half = (a.to_radians() / 2.0).tan();
        assert!(
            (dep.alpha - MIN_IN_BETWEEN) / tan_half < (slot.landing_budget - dep.t_i) / tan_half,
            "expected the in-between constraint to bind"
        );
        let l = arc_in_between_length(&dep, a, iv.hi);
        assert_abs_diff_eq!(l, 15.0, epsilon = 1e-9);
    }

    #[test]
    fn upper_spline_is_tangent_continuous_and_bounded() {
        let r = slots();
        for region in [2u8, 3u8] {
            let slot = r.slot(region);
            let a = 70.0;
            let dep = departure(slot, a).unwrap();
            let li = line_interval(&dep);
            assert!(!li.is_empty());
            let l = li.lerp(0.5);
            let si = ray_subline_interval(&dep, l);
            assert!(!si.is_empty());
            let s = si.lerp(0.5);
            let foot = landing_coord(slot, dep.e1 + dep.d1 * l);
            let oi = upper_landing_interval(slot, foot);
            assert!(!oi.is_empty(), "region {region} landing interval {oi:?}");
            let off = oi.lerp(0.5);
            let frame = upper_spline_frame(slot, &dep, l, s, off, 0.0);
            let ai = anchor_subline_interval(&dep, frame.landing_t);
            assert!(!ai.is_empty());
            let curve =
                upper_spline_pieces(slot, a, l, s, off, ai.lerp(0.5)).unwrap();
            // Junctions are tangent continuous.
            for w in curve.pieces.windows(2) {
                assert_abs_diff_eq!(w[0].end().dist(w[1].start()), 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(
                    w[0].end_tangent().cross(w[1].start_tangent()),
                    0.0,
                    epsilon = 1e-9
                );
            }
            // Spline leaves the landing point along the landing line.
            let t_end = curve.pieces.last().unwrap().end_tangent();
            assert_abs_diff_eq!(t_end.cross(slot.m_hat), 0.0, epsilon = 1e-9);
            assert!(t_end.dot(slot.m_hat) > 0.0);
        }
    }

    #[test]
    fn lower_spline_semicircle_constrains_midpoints() {
        let r = slots();
        for region in [4u8, 5u8] {
            let slot = r.slot(region);
            let a = 80.0;
            let dep = departure(slot, a).unwrap();
            let l = line_interval(&dep).lerp(0.3);
            let s = ray_subline_interval(&dep, l).lerp(0.4);
            let oi = lower_landing_interval(slot);
            assert!(!oi.is_empty());
            let off = oi.lerp(0.6);
            let frame = lower_spline_frame(slot, &dep, l, s, 0.0, off);
            let ai = anchor_subline_interval(&dep, frame.landing_t);
            let s_anchor = ai.lerp(0.5);
            let frame = lower_spline_frame(slot, &dep, l, s, s_anchor, off);
            let semi = SemiCircle::over(frame.c_start, frame.c_land, slot.corner);
            // The interior side points away from the corner.
            assert!(semi.j_hat.dot(slot.corner - semi.mid) < 0.0);
            for (u1, u2) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.9, 0.2)] {
                let p = semi.point_from_unit(u1, u2);
                assert!(semi.contains(p), "({u1},{u2}) -> {p:?}");
            }
            // A point mirrored to the corner side is rejected.
            let inside = semi.point_from_unit(0.7, 0.5);
            let outside = semi.mid + (semi.mid - inside);
            assert!(!semi.contains(outside));
            // Full quartic assembles tangent-continuously.
            let mid = semi.point_from_unit(0.5, 0.5);
            let curve = lower_spline_pieces(
                slot,
                a,
                l,
                s,
                s_anchor,
                off,
                mid - slot.arc_center,
            )
            .unwrap();
            for w in curve.pieces.windows(2) {
                assert_abs_diff_eq!(
                    w[0].end_tangent().cross(w[1].start_tangent()),
                    0.0,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn anchor_guard_respects_ray_intersection_when_it_is_in_the_way() {
        let r = slots();
        let slot = r.slot(5);
        // Large angle: the ray crosses the landing line close to the
        // corner, inside the landing span, so the guard must bind on it.
        let dep = departure(slot, 100.0).unwrap();
        assert!(dep.t_i > 0.0 && dep.t_i < 60.0, "t_i = {}", dep.t_i);
        let landing_t = dep.t_i + 40.0;
        let iv = anchor_subline_interval(&dep, landing_t);
        assert_abs_diff_eq!(iv.hi, 40.0 - CROSSING_ALLOWANCE, epsilon = 1e-9);
    }
}
