//! Reference skeleton: the fixed outline every parametric design is hung
//! off. All coordinates are millimetres in a canvas whose bottom edge lies
//! on y = 0.
//!
//! Skeleton topology (counter-clockwise):
//!
//! ```text
//!            E_l ----- plateau (region 1) ----- E_r
//!           /                                      \
//!   C2 (region 2)                              (region 3) C3
//!          \                                        /
//!           K_l (kink)                     (kink) K_r
//!            \                                    /
//!    C4 (region 4) ------- bottom ------- (region 5) C5
//! ```
//!
//! The plateau edge is a straight line at signed offset `P0` from a fixed
//! dashed subline along that line's outward normal; its end points slide
//! along the two shoulder lines. Regions 2–5 replace the four corners
//! (C2, C3, C4, C5) with transition curves between their two anchor lines.

use super::primitives::{bounding_box, find_self_intersection, signed_area, Line, Vec2};
use super::GeometryError;
use crate::config::Config;

/// All numeric inputs of the reference skeleton. Ships with frozen
/// defaults; every value can be overridden through the geometry config
/// file (sections `[skeleton]`, `[region_1]` .. `[region_5]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    /// Canvas extents, informational; the skeleton must fit inside.
    pub canvas_width: f64,
    pub canvas_height: f64,
    /// Bottom-left and bottom-right corner x coordinates (y = 0).
    pub c4_x: f64,
    pub c5_x: f64,
    /// Height of the side-line kinks and of the apex corners.
    pub kink_y: f64,
    pub apex_y: f64,
    /// Travel directions (degrees, counter-clockwise traversal) of the six
    /// fixed straight lines.
    pub side_r_low_deg: f64,
    pub side_r_up_deg: f64,
    pub shoulder_r_deg: f64,
    pub shoulder_l_deg: f64,
    pub side_l_up_deg: f64,
    pub side_l_low_deg: f64,
    /// Dashed subline for region 1: a fixed point on it plus the outward
    /// normal of the plateau edge (need not be normalized).
    pub dashed_point: Vec2,
    pub edge_normal: Vec2,
    /// Reference value of P0 used for the reference outline itself.
    pub p0_ref: f64,
    /// Radius of the small departure arcs of regions 2–5.
    pub small_arc_radius: f64,
    /// Distance from each corner to the departure anchor point, along the
    /// line the small arc leaves from (regions 2/3: the shoulder lines,
    /// regions 4/5: the bottom line).
    pub anchor_shoulder: f64,
    pub anchor_bottom: f64,
    /// Landing-side margin kept clear before the next fixed vertex.
    pub budget_margin: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            canvas_width: 1100.0,
            canvas_height: 600.0,
            c4_x: 60.0,
            c5_x: 1040.0,
            kink_y: 240.0,
            apex_y: 400.0,
            side_r_low_deg: 104.0,
            side_r_up_deg: 58.0,
            shoulder_r_deg: 155.0,
            shoulder_l_deg: 204.0,
            side_l_up_deg: 299.0,
            side_l_low_deg: 255.0,
            dashed_point: Vec2::new(550.0, 518.0),
            edge_normal: Vec2::new(0.0603, 0.9982),
            p0_ref: 40.0,
            small_arc_radius: 10.0,
            anchor_shoulder: 120.0,
            anchor_bottom: 130.0,
            budget_margin: 10.0,
        }
    }
}

impl GeometryConfig {
    /// Read overrides from a parsed config; missing keys keep defaults.
    pub fn from_config(cfg: &Config) -> Result<Self, GeometryError> {
        let mut g = GeometryConfig::default();
        let s = "skeleton";
        if cfg.has_section(s) {
            g.canvas_width = cfg.get_f64_or(s, "canvas_width", g.canvas_width)?;
            g.canvas_height = cfg.get_f64_or(s, "canvas_height", g.canvas_height)?;
            g.c4_x = cfg.get_f64_or(s, "c4_x", g.c4_x)?;
            g.c5_x = cfg.get_f64_or(s, "c5_x", g.c5_x)?;
            g.kink_y = cfg.get_f64_or(s, "kink_y", g.kink_y)?;
            g.apex_y = cfg.get_f64_or(s, "apex_y", g.apex_y)?;
            g.side_r_low_deg = cfg.get_f64_or(s, "side_r_low_deg", g.side_r_low_deg)?;
            g.side_r_up_deg = cfg.get_f64_or(s, "side_r_up_deg", g.side_r_up_deg)?;
            g.shoulder_r_deg = cfg.get_f64_or(s, "shoulder_r_deg", g.shoulder_r_deg)?;
            g.shoulder_l_deg = cfg.get_f64_or(s, "shoulder_l_deg", g.shoulder_l_deg)?;
            g.side_l_up_deg = cfg.get_f64_or(s, "side_l_up_deg", g.side_l_up_deg)?;
            g.side_l_low_deg = cfg.get_f64_or(s, "side_l_low_deg", g.side_l_low_deg)?;
        }
        let r1 = "region_1";
        if cfg.has_section(r1) {
            g.dashed_point.x = cfg.get_f64_or(r1, "dashed_x", g.dashed_point.x)?;
            g.dashed_point.y = cfg.get_f64_or(r1, "dashed_y", g.dashed_point.y)?;
            g.edge_normal.x = cfg.get_f64_or(r1, "normal_x", g.edge_normal.x)?;
            g.edge_normal.y = cfg.get_f64_or(r1, "normal_y", g.edge_normal.y)?;
            g.p0_ref = cfg.get_f64_or(r1, "p0_ref", g.p0_ref)?;
        }
        // Regions 2–5 share the departure-arc radius and anchor distances;
        // the per-region sections exist so tests and variant geometries can
        // override one region's placement without touching the others.
        for (sec, field) in [("region_2", 2u8), ("region_3", 3), ("region_4", 4), ("region_5", 5)] {
            if cfg.has_section(sec) {
                let _ = field;
                g.small_arc_radius = cfg.get_f64_or(sec, "small_arc_radius", g.small_arc_radius)?;
                let key = if field <= 3 { "anchor_shoulder" } else { "anchor_bottom" };
                if field <= 3 {
                    g.anchor_shoulder = cfg.get_f64_or(sec, key, g.anchor_shoulder)?;
                } else {
                    g.anchor_bottom = cfg.get_f64_or(sec, key, g.anchor_bottom)?;
                }
                g.budget_margin = cfg.get_f64_or(sec, "budget_margin", g.budget_margin)?;
            }
        }
        Ok(g)
    }
}

/// Construction frame of one corner-transition region (regions 2–5).
///
/// The canonical traversal of a region starts at the departure anchor
/// point `t_s` moving along `d_in`, turns by the signed wedge angle in
/// total, and lands on the landing line `(corner, m_hat)` at a positive
/// coordinate along `m_hat`. `sigma` is the sign of the total turn.
#[derive(Debug, Clone)]
pub struct RegionSlot {
    pub region: u8,
    /// Departure anchor point on the start line.
    pub t_s: Vec2,
    /// Unit direction of canonical travel at the departure point.
    pub d_in: Vec2,
    /// Corner being replaced (intersection of the two anchor lines).
    pub corner: Vec2,
    /// Unit direction along the landing line, away from the corner.
    pub m_hat: Vec2,
    /// Sign of the total turn (+1 counter-clockwise, -1 clockwise).
    pub sigma: f64,
    /// Magnitude of the total turn in degrees.
    pub wedge_deg: f64,
    /// Usable coordinate along the landing line before the next fixed
    /// vertex (budget margin already subtracted).
    pub landing_budget: f64,
    /// Radius of the small departure arc.
    pub small_radius: f64,
    /// Static bounds of the transition-angle parameter, degrees.
    pub angle_bounds: (f64, f64),
    /// Fixed small-arc centre (independent of all parameters).
    pub arc_center: Vec2,
    /// True when the canonical traversal runs against the contour's
    /// counter-clockwise order, so emitted points must be reversed.
    pub reversed: bool,
}

/// The reference skeleton with region frames and the reference outline.
#[derive(Debug, Clone)]
pub struct ReferenceGeometry {
    pub config: GeometryConfig,
    /// Fixed corner/kink vertices.
    pub c2: Vec2,
    pub c3: Vec2,
    pub c4: Vec2,
    pub c5: Vec2,
    pub k_l: Vec2,
    pub k_r: Vec2,
    /// Region 1: dashed subline and unit outward normal of the edge.
    pub dashed: Line,
    pub edge_normal_unit: Vec2,
    /// Shoulder lines (point = apex corner, dir = counter-clockwise travel).
    pub shoulder_l: Line,
    pub shoulder_r: Line,
    /// Region frames, index 0..4 = regions 2..5.
    pub slots: [RegionSlot; 4],
    /// Sharp-corner outline at `p0_ref` (the unmodified starting blank).
    pub reference_outline: Vec<Vec2>,
    /// Hull of the reference outline: (min, max).
    pub bbox: (Vec2, Vec2),
}

impl ReferenceGeometry {
    pub fn slot(&self, region: u8) -> &RegionSlot {
        assert!((2..=5).contains(&region), "regions 2..=5 have slots");
        &self.slots[(region - 2) as usize]
    }

    /// Plateau edge line at a given P0 (point on line + travel direction).
    pub fn plateau_edge(&self, p0: f64) -> Line {
        Line {
            point: self.dashed.point + self.edge_normal_unit * p0,
            dir: self.dashed.dir,
        }
    }

    /// Plateau end points at a given P0: (right end `E_r`, left end `E_l`).
    /// The edge travels right-to-left in counter-clockwise order.
    pub fn plateau_ends(&self, p0: f64) -> Result<(Vec2, Vec2), GeometryError> {
        let edge = self.plateau_edge(p0);
        let e_r = edge
            .intersect(&self.shoulder_r)
            .ok_or(GeometryError::ParallelAnchors(1))?;
        let e_l = edge
            .intersect(&self.shoulder_l)
            .ok_or(GeometryError::ParallelAnchors(1))?;
        Ok((e_r, e_l))
    }
}

fn line_at_height(start: Vec2, dir_deg: f64, y: f64) -> Result<Vec2, GeometryError> {
    let d = Vec2::from_angle_deg(dir_deg);
    if d.y.abs() < 1e-9 {
        // A horizontal side line can never reach the target height.
        return Err(GeometryError::ParallelAnchors(0));
    }
    let t = (y - start.y) / d.y;
    Ok(start + d * t)
}

/// Build the reference skeleton from a geometry config.
///
/// Fails when a region's anchor lines are (near-)parallel, when a wedge
/// turn leaves less than 2 degrees above the region's maximum transition
/// angle, when a landing span is too short to host any transition, or when
/// the resulting reference outline is not a simple counter-clockwise
/// polygon.
pub fn build_reference(config: &GeometryConfig) -> Result<ReferenceGeometry, GeometryError> {
    let g = config.clone();
    let c4 = Vec2::new(g.c4_x, 0.0);
    let c5 = Vec2::new(g.c5_x, 0.0);

    // Right flank: bottom corner -> kink -> apex.
    let k_r = line_at_height(c5, g.side_r_low_deg, g.kink_y).map_err(|_| GeometryError::ParallelAnchors(5))?;
    let c3 = line_at_height(k_r, g.side_r_up_deg, g.apex_y).map_err(|_| GeometryError::ParallelAnchors(3))?;
    // Left flank is traversed downward counter-clockwise, so walk the
    // defining lines backwards: corner C4 up to the kink, kink up to C2.
    let k_l = line_at_height(c4, g.side_l_low_deg + 180.0, g.kink_y).map_err(|_| GeometryError::ParallelAnchors(4))?;
    let c2 = line_at_height(k_l, g.side_l_up_deg + 180.0, g.apex_y).map_err(|_| GeometryError::ParallelAnchors(2))?;

    let n_unit = g.edge_normal.normalized();
    // Counter-clockwise travel along the top edge keeps the interior on
    // the left, which puts the travel direction 90 degrees clockwise of
    // the outward normal.
    let edge_dir = Vec2::new(-n_unit.y, n_unit.x);
    let dashed = Line::new(g.dashed_point, edge_dir);
    let shoulder_r = Line::new(c3, Vec2::from_angle_deg(g.shoulder_r_deg));
    let shoulder_l = Line::new(c2, Vec2::from_angle_deg(g.shoulder_l_deg));

    // Region frames. Canonical travel starts at the small-arc anchor:
    // regions 2/3 depart from the shoulder lines, regions 4/5 from the
    // bottom line. Regions 3 and 4 run against counter-clockwise order.
    let mk_slot = |region: u8,
                   t_s: Vec2,
                   d_in: Vec2,
                   corner: Vec2,
                   m_hat: Vec2,
                   next_vertex: Vec2,
                   angle_bounds: (f64, f64),
                   reversed: bool|
     -> Result<RegionSlot, GeometryError> {
        let cross = d_in.cross(m_hat);
        if cross.abs() < 1e-9 {
            return Err(GeometryError::ParallelAnchors(region));
        }
        let theta = d_in.signed_angle_to(m_hat);
        let sigma = theta.signum();
        let wedge_deg = theta.abs().to_degrees();
        if wedge_deg >= 178.0 {
            // Anti-parallel anchors leave no wedge to transition across.
            return Err(GeometryError::ParallelAnchors(region));
        }
        if wedge_deg < angle_bounds.1 + 2.0 {
            return Err(GeometryError::WedgeTooTight {
                region,
                wedge_deg,
                max_angle_deg: angle_bounds.1,
            });
        }
        let landing_budget = (next_vertex - corner).dot(m_hat) - g.budget_margin;
        if landing_budget < 30.0 {
            return Err(GeometryError::LandingSpanTooShort {
                region,
                span: landing_budget,
                min: 30.0,
            });
        }
        let arc_center = t_s + d_in.left() * (sigma * g.small_arc_radius);
        Ok(RegionSlot {
            region,
            t_s,
            d_in,
            corner,
            m_hat,
            sigma,
            wedge_deg,
            landing_budget,
            small_radius: g.small_arc_radius,
            angle_bounds,
            arc_center,
            reversed,
        })
    };

    let upper_bounds = (50.0, 90.0);
    let lower_bounds = (60.0, 100.0);

    // Region 2: shoulder_l -> side_l_up at corner C2 (canonical = ccw).
    let slot2 = mk_slot(
        2,
        c2 - shoulder_l.dir * g.anchor_shoulder,
        shoulder_l.dir,
        c2,
        Vec2::from_angle_deg(g.side_l_up_deg),
        k_l,
        upper_bounds,
        false,
    )?;
    // Region 3: shoulder_r -> side_r_up at corner C3 (canonical = reversed).
    let slot3 = mk_slot(
        3,
        c3 + shoulder_r.dir * g.anchor_shoulder,
        -shoulder_r.dir,
        c3,
        -Vec2::from_angle_deg(g.side_r_up_deg),
        k_r,
        upper_bounds,
        true,
    )?;
    // Region 4: bottom -> side_l_low at corner C4 (canonical = reversed).
    let slot4 = mk_slot(
        4,
        Vec2::new(g.c4_x + g.anchor_bottom, 0.0),
        Vec2::new(-1.0, 0.0),
        c4,
        -Vec2::from_angle_deg(g.side_l_low_deg),
        k_l,
        lower_bounds,
        true,
    )?;
    // Region 5: bottom -> side_r_low at corner C5 (canonical = ccw).
    let slot5 = mk_slot(
        5,
        Vec2::new(g.c5_x - g.anchor_bottom, 0.0),
        Vec2::new(1.0, 0.0),
        c5,
        Vec2::from_angle_deg(g.side_r_low_deg),
        k_r,
        lower_bounds,
        false,
    )?;

    let reference = ReferenceGeometry {
        config: g.clone(),
        c2,
        c3,
        c4,
        c5,
        k_l,
        k_r,
        dashed,
        edge_normal_unit: n_unit,
        shoulder_l,
        shoulder_r,
        slots: [slot2, slot3, slot4, slot5],
        reference_outline: Vec::new(),
        bbox: (Vec2::default(), Vec2::default()),
    };

    let (e_r, e_l) = reference.plateau_ends(g.p0_ref)?;
    // Plateau ends must sit beyond the region 2/3 departure anchors for
    // every admissible P0, otherwise region curves collide with region 1.
    for p0 in [10.0, g.p0_ref, 70.0] {
        let (er, el) = reference.plateau_ends(p0)?;
        let dr = (er - c3).norm();
        let dl = (el - c2).norm();
        let need = g.anchor_shoulder + 20.0;
        if dr < need || dl < need {
            return Err(GeometryError::LandingSpanTooShort {
                region: 1,
                span: dr.min(dl),
                min: need,
            });
        }
    }

    let outline = vec![c4, c5, k_r, c3, e_r, e_l, c2, k_l];
    if let Some((i, j)) = find_self_intersection(&outline) {
        return Err(GeometryError::SelfIntersectingReference(i, j));
    }
    if signed_area(&outline) <= 0.0 {
        return Err(GeometryError::NotCounterClockwise);
    }
    let bbox = bounding_box(&outline);

    Ok(ReferenceGeometry {
        reference_outline: outline,
        bbox,
        ..reference
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_reference_builds_and_matches_frozen_corners() {
        let r = build_reference(&GeometryConfig::default()).unwrap();
        assert_abs_diff_eq!(r.c5.x, 1040.0);
        assert_abs_diff_eq!(r.k_r.x, 980.161279318, epsilon = 1e-6);
        assert_abs_diff_eq!(r.k_r.y, 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.c3.x, 1080.140375623, epsilon = 1e-6);
        assert_abs_diff_eq!(r.c3.y, 400.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.c2.x, 35.618357951, epsilon = 1e-6);
        assert_abs_diff_eq!(r.k_l.x, 124.307806183, epsilon = 1e-6);
        assert_eq!(r.reference_outline.len(), 8);
    }

    #[test]
    fn reference_bbox_aspect_matches_grid_presets_within_one_percent() {
        let r = build_reference(&GeometryConfig::default()).unwrap();
        let (min, max) = r.bbox;
        let aspect = (max.x - min.x) / (max.y - min.y);
        for grid_aspect in [280.0 / 152.0, 1120.0 / 610.0] {
            let rel = (aspect / grid_aspect - 1.0).abs();
            assert!(
                rel < 0.01,
                "outline aspect {aspect:.4} vs grid aspect {grid_aspect:.4}: {rel:.4}"
            );
        }
    }

    #[test]
    fn plateau_edge_offsets_along_normal() {
        let r = build_reference(&GeometryConfig::default()).unwrap();
        let a = r.plateau_edge(10.0);
        let b = r.plateau_edge(70.0);
        let delta = b.point - a.point;
        assert_abs_diff_eq!(delta.dot(r.edge_normal_unit), 60.0, epsilon = 1e-9);
        assert_abs_diff_eq!(delta.cross(r.edge_normal_unit), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn wedge_turns_and_budgets_are_sane() {
        let r = build_reference(&GeometryConfig::default()).unwrap();
        let w: Vec<f64> = r.slots.iter().map(|s| s.wedge_deg).collect();
        assert_abs_diff_eq!(w[0], 95.0, epsilon = 1e-9); // region 2
        assert_abs_diff_eq!(w[1], 97.0, epsilon = 1e-9); // region 3
        assert_abs_diff_eq!(w[2], 105.0, epsilon = 1e-9); // region 4
        assert_abs_diff_eq!(w[3], 104.0, epsilon = 1e-9); // region 5
        for s in &r.slots {
            assert!(s.landing_budget > 100.0, "region {} budget {}", s.region, s.landing_budget);
            assert!(s.sigma == 1.0 || s.sigma == -1.0);
            // Canonical travel turn direction: counter-clockwise regions
            // turn left, reversed regions turn right.
            assert_eq!(s.sigma > 0.0, !s.reversed);
        }
        // Exterior turns around the reference outline must sum to 360 deg
        // with every turn staying below 180 deg (no degenerate spikes).
        let pts = &r.reference_outline;
        let n = pts.len();
        let mut total = 0.0;
        for i in 0..n {
            let a = pts[(i + n - 1) % n];
            let b = pts[i];
            let c = pts[(i + 1) % n];
            let turn = (b - a).signed_angle_to(c - b).to_degrees();
            assert!(turn.abs() < 150.0, "turn {turn} at vertex {i}");
            total += turn;
        }
        assert_abs_diff_eq!(total, 360.0, epsilon = 1e-6);
        // Plateau travel direction is fixed by the frozen edge normal.
        let plateau_deg = r.dashed.dir.y.atan2(r.dashed.dir.x).to_degrees();
        assert_abs_diff_eq!(plateau_deg, 176.543035383, epsilon = 1e-6);
    }

    #[test]
    fn parallel_anchor_config_is_rejected_naming_the_region() {
        let mut g = GeometryConfig::default();
        // Make the right shoulder parallel to the upper right side line.
        g.shoulder_r_deg = g.side_r_up_deg + 180.0;
        let err = build_reference(&g).unwrap_err();
        assert!(
            matches!(err, GeometryError::ParallelAnchors(3)),
            "got {err:?}"
        );
        assert!(err.to_string().contains("region 3"));
    }

    #[test]
    fn too_tight_wedge_is_rejected() {
        // Drops the region 5 wedge from 104 deg to 91 deg, below the
        // 100 + 2 deg requirement.
        let g = GeometryConfig {
            side_r_low_deg: 91.0,
            ..Default::default()
        };
        let err = build_reference(&g).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::WedgeTooTight { region: 5, .. }
        ));
    }

    #[test]
    fn config_roundtrip_applies_overrides() {
        let text = "[skeleton]\nc5_x = 1000\n[region_1]\np0_ref = 55\n";
        let cfg = Config::parse(text).unwrap();
        let g = GeometryConfig::from_config(&cfg).unwrap();
        assert_abs_diff_eq!(g.c5_x, 1000.0);
        assert_abs_diff_eq!(g.p0_ref, 55.0);
        assert_abs_diff_eq!(g.kink_y, 240.0);
    }
}
