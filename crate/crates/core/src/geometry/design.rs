//! Blank designs: parameterisation choices, parameter bookkeeping,
//! validation against the reference geometry, and contour construction.
//!
//! Parameter ids and roles:
//! - `P0` — region 1, distance of the straight upper edge from its dashed
//!   reference line, measured along the edge normal.
//! - Regions 2–5 each offer an Arc and a Spline parameterisation:
//!   - Arc: angle id + radius id — `P1,P2` / `P8,P9` / `P15,P16` / `P24,P25`.
//!   - Spline, regions 2/3 (cubic): angle, in-between line length,
//!     ray-side subline, landing offset, anchor-side subline —
//!     `P3..P7` / `P10..P14`.
//!   - Spline, regions 4/5 (quartic): angle, in-between line length,
//!     ray-side subline, then per region either anchor-subline before the
//!     landing offset (`P17..P21` for region 4) or landing offset before
//!     the anchor-subline (`P26..P30` for region 5), plus a middle control
//!     point stored as an x/y offset from the small-arc centre
//!     (`P22,P23` / `P31,P32`).
//!
//! The angle parameters plus `P0` are range-independent (fixed static
//! bounds); every other parameter's admissible interval depends on the
//! partially built geometry and is evaluated in dependency order by
//! [`walk_region_rd`], the single authority shared by validation,
//! sampling, and midrange construction.

use std::collections::BTreeMap;
use std::fmt;

use super::primitives::{find_self_intersection, signed_area, Vec2};
use super::reference::{ReferenceGeometry, RegionSlot};
use super::regions::{
    anchor_subline_interval, arc_pieces, departure, landing_coord, line_interval,
    lower_landing_interval, lower_spline_frame, lower_spline_pieces, radius_interval,
    ray_subline_interval, upper_landing_interval, upper_spline_pieces, Interval, RegionCurve,
    SemiCircle,
};
use super::GeometryError;

/// Chord-error tolerance used when flattening curve pieces (mm).
pub const CHORD_TOLERANCE: f64 = 0.5;

/// The range-independent parameter ids: the region-1 edge distance and the
/// four pairs of region angles.
pub const RI_IDS: [u8; 9] = [0, 1, 3, 8, 10, 15, 17, 24, 26];

/// How one region is parameterised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Arc,
    Spline,
}

/// Parameterisation choice per modifiable region (region 1 has a single
/// parameterisation). Exactly 16 distinct values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegionChoices {
    pub region2: RegionKind,
    pub region3: RegionKind,
    pub region4: RegionKind,
    pub region5: RegionKind,
}

impl RegionChoices {
    pub const ALL_ARC: RegionChoices = RegionChoices {
        region2: RegionKind::Arc,
        region3: RegionKind::Arc,
        region4: RegionKind::Arc,
        region5: RegionKind::Arc,
    };

    pub const ALL_SPLINE: RegionChoices = RegionChoices {
        region2: RegionKind::Spline,
        region3: RegionKind::Spline,
        region4: RegionKind::Spline,
        region5: RegionKind::Spline,
    };

    /// Decode from a 4-bit index: bit 3 = region 2 … bit 0 = region 5;
    /// a set bit selects the Spline variant.
    pub fn from_bits(bits: u8) -> Self {
        let kind = |b: bool| if b { RegionKind::Spline } else { RegionKind::Arc };
        RegionChoices {
            region2: kind(bits & 0b1000 != 0),
            region3: kind(bits & 0b0100 != 0),
            region4: kind(bits & 0b0010 != 0),
            region5: kind(bits & 0b0001 != 0),
        }
    }

    pub fn bits(self) -> u8 {
        let bit = |k: RegionKind| u8::from(k == RegionKind::Spline);
        bit(self.region2) << 3 | bit(self.region3) << 2 | bit(self.region4) << 1 | bit(self.region5)
    }

    /// All 16 parameterisations in index order.
    pub fn all() -> [RegionChoices; 16] {
        std::array::from_fn(|i| RegionChoices::from_bits(i as u8))
    }

    pub fn kind(self, region: u8) -> RegionKind {
        match region {
            2 => self.region2,
            3 => self.region3,
            4 => self.region4,
            5 => self.region5,
            _ => panic!("region {region} has no parameterisation choice"),
        }
    }

    /// Four-letter code, regions 2–5, `A` = Arc, `S` = Spline.
    pub fn code(self) -> String {
        [self.region2, self.region3, self.region4, self.region5]
            .iter()
            .map(|k| match k {
                RegionKind::Arc => 'A',
                RegionKind::Spline => 'S',
            })
            .collect()
    }

    pub fn from_code(code: &str) -> Option<Self> {
        let mut kinds = [RegionKind::Arc; 4];
        let chars: Vec<char> = code.trim().chars().collect();
        if chars.len() != 4 {
            return None;
        }
        for (slot, c) in kinds.iter_mut().zip(chars) {
            *slot = match c.to_ascii_uppercase() {
                'A' => RegionKind::Arc,
                'S' => RegionKind::Spline,
                _ => return None,
            };
        }
        Some(RegionChoices {
            region2: kinds[0],
            region3: kinds[1],
            region4: kinds[2],
            region5: kinds[3],
        })
    }
}

/// A parameter id `P0..P32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub u8);

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl std::str::FromStr for ParamId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix('P')
            .ok_or_else(|| format!("invalid parameter id {s:?}"))?;
        let n: u8 = rest
            .parse()
            .map_err(|_| format!("invalid parameter id {s:?}"))?;
        if n > 32 {
            return Err(format!("invalid parameter id {s:?}"));
        }
        Ok(ParamId(n))
    }
}

/// One blank design: parameterisation choices plus the values of every
/// active parameter (lengths in mm, angles in degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct BlankDesign {
    pub choices: RegionChoices,
    pub params: BTreeMap<u8, f64>,
}

impl BlankDesign {
    pub fn new(choices: RegionChoices) -> Self {
        BlankDesign {
            choices,
            params: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: u8) -> Option<f64> {
        self.params.get(&id).copied()
    }

    pub fn set(&mut self, id: u8, value: f64) {
        self.params.insert(id, value);
    }
}

/// (angle id, radius id) of a region's Arc variant.
pub fn arc_ids(region: u8) -> (u8, u8) {
    match region {
        2 => (1, 2),
        3 => (8, 9),
        4 => (15, 16),
        5 => (24, 25),
        _ => panic!("region {region} has no arc parameters"),
    }
}

/// (angle, line, ray subline, landing offset, anchor subline) ids of a
/// region's Spline variant. Note regions 4 and 5 interleave the last two
/// differently in the id numbering; this tuple is by *role*, not by id
/// order.
pub fn spline_ids(region: u8) -> (u8, u8, u8, u8, u8) {
    match region {
        2 => (3, 4, 5, 6, 7),
        3 => (10, 11, 12, 13, 14),
        4 => (17, 18, 19, 21, 20),
        5 => (26, 27, 28, 29, 30),
        _ => panic!("region {region} has no spline parameters"),
    }
}

/// Middle-control-point (x offset, y offset) ids of regions 4/5 splines.
pub fn mid_ids(region: u8) -> Option<(u8, u8)> {
    match region {
        4 => Some((22, 23)),
        5 => Some((31, 32)),
        _ => None,
    }
}

/// The angle id of a region under a given parameterisation.
pub fn angle_id(region: u8, kind: RegionKind) -> u8 {
    match kind {
        RegionKind::Arc => arc_ids(region).0,
        RegionKind::Spline => spline_ids(region).0,
    }
}

/// Static bounds of the range-independent parameters; `None` for
/// range-dependent ids.
pub fn static_bounds(id: u8) -> Option<(f64, f64)> {
    match id {
        0 => Some((10.0, 70.0)),
        1 | 3 | 8 | 10 => Some((50.0, 90.0)),
        15 | 17 | 24 | 26 => Some((60.0, 100.0)),
        _ => None,
    }
}

/// Unit of a parameter for reporting.
pub fn unit(id: u8) -> &'static str {
    match id {
        1 | 3 | 8 | 10 | 15 | 17 | 24 | 26 => "deg",
        _ => "mm",
    }
}

fn region_param_ids(region: u8, kind: RegionKind) -> Vec<u8> {
    match kind {
        RegionKind::Arc => {
            let (a, r) = arc_ids(region);
            vec![a, r]
        }
        RegionKind::Spline => {
            let (a, l, s, o, c) = spline_ids(region);
            let mut ids = vec![a, l, s, o, c];
            if let Some((mx, my)) = mid_ids(region) {
                ids.push(mx);
                ids.push(my);
            }
            ids.sort_unstable();
            ids
        }
    }
}

fn active_ids(choices: RegionChoices) -> Vec<u8> {
    let mut ids = vec![0u8];
    for region in 2..=5 {
        ids.extend(region_param_ids(region, choices.kind(region)));
    }
    ids.sort_unstable();
    ids
}

/// Ordered (ascending) list of the parameter ids active under `choices`.
pub fn active_parameters(choices: RegionChoices) -> Vec<ParamId> {
    active_ids(choices).into_iter().map(ParamId).collect()
}

/// The range-dependent subset of the active ids, ascending.
pub fn rd_ids(choices: RegionChoices) -> Vec<u8> {
    active_ids(choices)
        .into_iter()
        .filter(|id| !RI_IDS.contains(id))
        .collect()
}

/// One violated design constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub param: Option<ParamId>,
    pub message: String,
}

impl Violation {
    fn new(param: Option<u8>, message: String) -> Self {
        Violation {
            param: param.map(ParamId),
            message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fmt_num(v: f64) -> String {
    let mut s = format!("{:.3}", (v * 1000.0).round() / 1000.0);
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Receives each range-dependent parameter of one region in dependency
/// order together with its admissible interval. Returning `None` stops
/// the walk (infeasible or out-of-range chain).
pub trait RdVisitor {
    fn scalar(&mut self, id: u8, interval: Interval) -> Option<f64>;
    /// Middle control point of regions 4/5 splines. Must return the value
    /// pair to store under `ids` (offsets from `arc_center`).
    fn mid(&mut self, ids: (u8, u8), semi: &SemiCircle, arc_center: Vec2) -> Option<(f64, f64)>;
}

/// Evaluate one region's range-dependent parameters in dependency order,
/// delegating each value to `visitor`. Returns the visited `(id, value)`
/// pairs, or `None` if the visitor stopped early or the angle leaves the
/// region wedge.
pub fn walk_region_rd(
    slot: &RegionSlot,
    region: u8,
    kind: RegionKind,
    angle_deg: f64,
    visitor: &mut dyn RdVisitor,
) -> Option<Vec<(u8, f64)>> {
    let dep = departure(slot, angle_deg)?;
    match kind {
        RegionKind::Arc => {
            let (_, radius_id) = arc_ids(region);
            let radius = visitor.scalar(radius_id, radius_interval(slot, &dep, angle_deg))?;
            Some(vec![(radius_id, radius)])
        }
        RegionKind::Spline => {
            let (_, line_id, ray_id, land_id, anchor_id) = spline_ids(region);
            let line_len = visitor.scalar(line_id, line_interval(&dep))?;
            let ray_sub = visitor.scalar(ray_id, ray_subline_interval(&dep, line_len))?;
            let upper = mid_ids(region).is_none();
            let landing_t;
            let landing_off;
            if upper {
                let foot = landing_coord(slot, dep.e1 + dep.d1 * line_len);
                landing_off = visitor.scalar(land_id, upper_landing_interval(slot, foot))?;
                landing_t = foot + landing_off;
            } else {
                landing_off = visitor.scalar(land_id, lower_landing_interval(slot))?;
                landing_t = landing_coord(slot, slot.arc_center) + landing_off;
            }
            let anchor_sub = visitor.scalar(anchor_id, anchor_subline_interval(&dep, landing_t))?;
            let mut out = vec![
                (line_id, line_len),
                (ray_id, ray_sub),
                (land_id, landing_off),
                (anchor_id, anchor_sub),
            ];
            if let Some(ids) = mid_ids(region) {
                let frame =
                    lower_spline_frame(slot, &dep, line_len, ray_sub, anchor_sub, landing_off);
                let semi = SemiCircle::over(frame.c_start, frame.c_land, slot.corner);
                let (mx, my) = visitor.mid(ids, &semi, slot.arc_center)?;
                out.push((ids.0, mx));
                out.push((ids.1, my));
            }
            Some(out)
        }
    }
}

struct ValidateVisitor<'a> {
    design: &'a BlankDesign,
    region: u8,
    out: &'a mut Vec<Violation>,
}

impl RdVisitor for ValidateVisitor<'_> {
    fn scalar(&mut self, id: u8, interval: Interval) -> Option<f64> {
        let value = self.design.get(id)?;
        if interval.is_empty() {
            self.out.push(Violation::new(
                Some(id),
                format!("{} admissible range empty", ParamId(id)),
            ));
            return None;
        }
        if value < interval.lo - 1e-9 {
            self.out.push(Violation::new(
                Some(id),
                format!("{} below {} {}", ParamId(id), fmt_num(interval.lo), unit(id)),
            ));
            return None;
        }
        if value > interval.hi + 1e-9 {
            self.out.push(Violation::new(
                Some(id),
                format!("{} above {} {}", ParamId(id), fmt_num(interval.hi), unit(id)),
            ));
            return None;
        }
        Some(value)
    }

    fn mid(&mut self, ids: (u8, u8), semi: &SemiCircle, arc_center: Vec2) -> Option<(f64, f64)> {
        let x = self.design.get(ids.0)?;
        let y = self.design.get(ids.1)?;
        if !semi.contains(arc_center + Vec2::new(x, y)) {
            self.out.push(Violation::new(
                Some(ids.0),
                format!(
                    "{}, {} outside the region {} semi-circle",
                    ParamId(ids.0),
                    ParamId(ids.1),
                    self.region
                ),
            ));
        }
        Some((x, y))
    }
}

/// Check a design against the static bounds and the geometry-dependent
/// bound formulas. An empty return means the design is valid.
pub fn validate_design(design: &BlankDesign, geo: &ReferenceGeometry) -> Vec<Violation> {
    let mut out = Vec::new();
    let active = active_ids(design.choices);
    for &id in design.params.keys() {
        if !active.contains(&id) {
            out.push(Violation::new(
                Some(id),
                format!("{} not active under the chosen parameterisation", ParamId(id)),
            ));
        }
    }
    for &id in &active {
        if design.get(id).is_none() {
            out.push(Violation::new(Some(id), format!("{} missing", ParamId(id))));
        }
    }
    if let Some(p0) = design.get(0) {
        let (lo, hi) = static_bounds(0).unwrap();
        if p0 < lo - 1e-9 {
            out.push(Violation::new(
                Some(0),
                format!("P0 below {} mm", fmt_num(lo)),
            ));
        } else if p0 > hi + 1e-9 {
            out.push(Violation::new(
                Some(0),
                format!("P0 above {} mm", fmt_num(hi)),
            ));
        }
    }
    for region in 2..=5 {
        let kind = design.choices.kind(region);
        let aid = angle_id(region, kind);
        let Some(angle) = design.get(aid) else {
            continue;
        };
        let (lo, hi) = static_bounds(aid).unwrap();
        if angle < lo - 1e-9 {
            out.push(Violation::new(
                Some(aid),
                format!("{} below {} deg", ParamId(aid), fmt_num(lo)),
            ));
            continue;
        }
        if angle > hi + 1e-9 {
            out.push(Violation::new(
                Some(aid),
                format!("{} above {} deg", ParamId(aid), fmt_num(hi)),
            ));
            continue;
        }
        let slot = geo.slot(region);
        if departure(slot, angle).is_none() {
            out.push(Violation::new(
                Some(aid),
                format!("{} exceeds the region {} wedge", ParamId(aid), region),
            ));
            continue;
        }
        let mut visitor = ValidateVisitor {
            design,
            region,
            out: &mut out,
        };
        let _ = walk_region_rd(slot, region, kind, angle, &mut visitor);
    }
    out
}

struct MidrangeVisitor;

impl RdVisitor for MidrangeVisitor {
    fn scalar(&mut self, _id: u8, interval: Interval) -> Option<f64> {
        if interval.is_empty() {
            None
        } else {
            Some(interval.lerp(0.5))
        }
    }

    fn mid(&mut self, _ids: (u8, u8), semi: &SemiCircle, arc_center: Vec2) -> Option<(f64, f64)> {
        let p = semi.point_from_unit(0.5, 0.5);
        let off = p - arc_center;
        Some((off.x, off.y))
    }
}

/// A design with every parameter at the midpoint of its admissible
/// interval, evaluated sequentially in dependency order.
pub fn midrange_design(
    choices: RegionChoices,
    geo: &ReferenceGeometry,
) -> Result<BlankDesign, GeometryError> {
    let mut design = BlankDesign::new(choices);
    let (p0_lo, p0_hi) = static_bounds(0).unwrap();
    design.set(0, (p0_lo + p0_hi) / 2.0);
    for region in 2..=5 {
        let kind = choices.kind(region);
        let aid = angle_id(region, kind);
        let (lo, hi) = static_bounds(aid).unwrap();
        let angle = (lo + hi) / 2.0;
        design.set(aid, angle);
        let values = walk_region_rd(geo.slot(region), region, kind, angle, &mut MidrangeVisitor)
            .ok_or_else(|| {
                GeometryError::InvalidDesign(format!("empty parameter range in region {region}"))
            })?;
        for (id, v) in values {
            design.set(id, v);
        }
    }
    Ok(design)
}

/// Tag of one contour segment: part of the fixed outline, or produced by
/// one of the five modifiable regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegTag {
    Fixed,
    Region(u8),
}

/// A closed planar polyline in millimetre coordinates, counter-clockwise.
/// `points[i]` connects to `points[(i+1) % n]`; `tags[i]` labels that
/// segment. The first point is not repeated at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<Vec2>,
    pub tags: Vec<SegTag>,
}

impl Contour {
    /// Enclosed area (positive for counter-clockwise contours), mm².
    pub fn area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn bbox(&self) -> (Vec2, Vec2) {
        super::primitives::bounding_box(&self.points)
    }
}

fn require(design: &BlankDesign, id: u8) -> Result<f64, GeometryError> {
    design
        .get(id)
        .ok_or_else(|| GeometryError::MissingParameter(ParamId(id).to_string()))
}

/// Build one region's transition curve in canonical order from the
/// design's parameter values.
pub(crate) fn region_curve(
    design: &BlankDesign,
    geo: &ReferenceGeometry,
    region: u8,
) -> Result<RegionCurve, GeometryError> {
    let slot = geo.slot(region);
    let kind = design.choices.kind(region);
    let bad_angle = || {
        GeometryError::InvalidDesign(format!(
            "angle parameter leaves the region {region} wedge"
        ))
    };
    match kind {
        RegionKind::Arc => {
            let (aid, rid) = arc_ids(region);
            let angle = require(design, aid)?;
            let radius = require(design, rid)?;
            arc_pieces(slot, angle, radius).ok_or_else(bad_angle)
        }
        RegionKind::Spline => {
            let (aid, lid, sid, oid, cid) = spline_ids(region);
            let angle = require(design, aid)?;
            let line_len = require(design, lid)?;
            let ray_sub = require(design, sid)?;
            let landing_off = require(design, oid)?;
            let anchor_sub = require(design, cid)?;
            match mid_ids(region) {
                None => {
                    upper_spline_pieces(slot, angle, line_len, ray_sub, landing_off, anchor_sub)
                        .ok_or_else(bad_angle)
                }
                Some((mx, my)) => {
                    let off = Vec2::new(require(design, mx)?, require(design, my)?);
                    lower_spline_pieces(
                        slot, angle, line_len, ray_sub, anchor_sub, landing_off, off,
                    )
                    .ok_or_else(bad_angle)
                }
            }
        }
    }
}

fn flatten_region(curve: &RegionCurve, reversed: bool) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = Vec::new();
    for piece in &curve.pieces {
        let seg = piece.discretize(CHORD_TOLERANCE);
        let skip = usize::from(!pts.is_empty());
        pts.extend_from_slice(&seg[skip..]);
    }
    if reversed {
        pts.reverse();
    }
    pts
}

fn tag_name(tag: SegTag) -> String {
    match tag {
        SegTag::Fixed => "a fixed segment".to_string(),
        SegTag::Region(r) => format!("the region {r} curve"),
    }
}

/// Build the closed blank contour for a design.
///
/// The design must satisfy [`validate_design`]; this function only checks
/// what it needs structurally (parameter presence, final simplicity).
pub fn build_contour(
    design: &BlankDesign,
    geo: &ReferenceGeometry,
) -> Result<Contour, GeometryError> {
    let p0 = require(design, 0)?;
    let (e_r, e_l) = geo.plateau_ends(p0)?;

    let mut curves = BTreeMap::new();
    for region in 2..=5u8 {
        curves.insert(region, region_curve(design, geo, region)?);
    }
    let land = |region: u8| {
        let slot = geo.slot(region);
        slot.corner + slot.m_hat * curves[&region].landing_t
    };
    let (land2, land3, land4, land5) = (land(2), land(3), land(4), land(5));
    let (s2, s3, s4, s5) = (
        geo.slot(2),
        geo.slot(3),
        geo.slot(4),
        geo.slot(5),
    );

    // Travel counter-clockwise starting on the bottom edge at region 4's
    // anchor point. Regions 3 and 4 are traversed against their canonical
    // construction direction.
    let chunks: Vec<(Vec<Vec2>, SegTag)> = vec![
        (vec![s4.t_s, s5.t_s], SegTag::Fixed),
        (flatten_region(&curves[&5], false), SegTag::Region(5)),
        (vec![land5, geo.k_r], SegTag::Fixed),
        (vec![geo.k_r, land3], SegTag::Fixed),
        (flatten_region(&curves[&3], true), SegTag::Region(3)),
        (vec![s3.t_s, e_r], SegTag::Fixed),
        (vec![e_r, e_l], SegTag::Region(1)),
        (vec![e_l, s2.t_s], SegTag::Fixed),
        (flatten_region(&curves[&2], false), SegTag::Region(2)),
        (vec![land2, geo.k_l], SegTag::Fixed),
        (vec![geo.k_l, land4], SegTag::Fixed),
        (flatten_region(&curves[&4], true), SegTag::Region(4)),
    ];

    let mut points: Vec<Vec2> = Vec::new();
    let mut tags: Vec<SegTag> = Vec::new();
    for (chunk, tag) in &chunks {
        debug_assert!(chunk.len() >= 2);
        // Each chunk shares its last point with the next chunk's first
        // (and the final chunk closes onto the first), so the last point
        // of every chunk is dropped.
        for pair in chunk.windows(2) {
            if pair[0].dist(pair[1]) < 1e-12 {
                continue;
            }
            points.push(pair[0]);
            tags.push(*tag);
        }
    }

    if let Some((i, j)) = find_self_intersection(&points) {
        return Err(GeometryError::SelfIntersectingContour(format!(
            "{} crosses {}",
            tag_name(tags[i]),
            tag_name(tags[j])
        )));
    }
    if signed_area(&points) <= 0.0 {
        return Err(GeometryError::NotCounterClockwise);
    }
    Ok(Contour { points, tags })
}
