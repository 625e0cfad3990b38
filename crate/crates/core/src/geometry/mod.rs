//! Parametric blank geometry: a fixed reference skeleton with five
//! modifiable regions, and contour construction for any combination of
//! per-region parameterisations.
//!
//! Region 1 is a straight top edge that slides along its normal. Regions
//! 2–5 are corner transitions, each buildable either as an arc chain
//! (small departure arc, straight in-between line, main tangential arc)
//! or as a single Bézier spline hung off the same departure chain.

pub mod design;
pub mod primitives;
pub mod reference;
pub mod regions;

pub use design::{
    active_parameters, build_contour, validate_design, BlankDesign, Contour, ParamId, RegionKind,
    RegionChoices, SegTag, Violation,
};
pub use primitives::{Arc, Bezier, Line, Vec2};
pub use reference::{build_reference, GeometryConfig, ReferenceGeometry, RegionSlot};

use thiserror::Error;

/// Errors raised while building reference geometry or contours.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("parallel anchors, region {0}")]
    ParallelAnchors(u8),
    #[error("region {region} wedge turn {wedge_deg:.1} deg leaves no room above the maximum transition angle {max_angle_deg:.1} deg")]
    WedgeTooTight {
        region: u8,
        wedge_deg: f64,
        max_angle_deg: f64,
    },
    #[error("region {region} landing span is {span:.1} mm; at least {min:.1} mm is required")]
    LandingSpanTooShort { region: u8, span: f64, min: f64 },
    #[error("reference outline is self-intersecting between segments {0} and {1}")]
    SelfIntersectingReference(usize, usize),
    #[error("reference outline is not counter-clockwise")]
    NotCounterClockwise,
    #[error("missing active parameter {0}")]
    MissingParameter(String),
    #[error("design is invalid: {0}")]
    InvalidDesign(String),
    #[error("contour self-intersects in {0}")]
    SelfIntersectingContour(String),
    #[error("bad geometry config: {0}")]
    Config(#[from] crate::config::ConfigError),
}
