//! Scalar field grids: signed-distance rasterization, iso-contour
//! extraction, flip augmentation, and the binary grid file format.
//!
//! Grids are row-major `height×width` single-precision fields with square
//! pixels; the row index increases with +y and the column index with +x,
//! so row 0 is the *bottom* row in world coordinates.

mod io;
mod march;
mod raster;

pub use io::{read_grid, write_csv, write_grid, write_pgm};
pub use march::{extract_contour, extract_contours};
pub use raster::rasterize_sdf;

use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be at least 8x8 (got {0}x{1})")]
    TooSmall(usize, usize),
    #[error("spacing must be positive (got {0})")]
    BadSpacing(f64),
    #[error("open contour: {0} points cannot close a polygon")]
    OpenContour(usize),
    #[error("empty level set")]
    EmptyLevelSet,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported {field} {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("short read: expected {expected} bytes, got {got}")]
    ShortRead { expected: usize, got: usize },
    #[error("trailing bytes: expected {expected} bytes, got {got}")]
    TrailingBytes { expected: usize, got: usize },
    #[error("probe point ({0:.3}, {1:.3}) outside grid")]
    ProbeOutside(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a scalar grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Sdf,
    ThinningField,
}

impl GridKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            GridKind::Sdf => 0,
            GridKind::ThinningField => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GridKind::Sdf),
            1 => Some(GridKind::ThinningField),
            _ => None,
        }
    }
}

/// Pixel lattice geometry: `origin` is the world position of the center
/// of pixel (row 0, col 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub origin: Vec2,
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, origin: Vec2, spacing: f64) -> Result<Self, GridError> {
        if height < 8 || width < 8 {
            return Err(GridError::TooSmall(height, width));
        }
        if !(spacing > 0.0) {
            return Err(GridError::BadSpacing(spacing));
        }
        Ok(GridSpec {
            height,
            width,
            origin,
            spacing,
        })
    }

    /// Center the grid's physical extent on a world point.
    pub fn centered(
        height: usize,
        width: usize,
        spacing: f64,
        center: Vec2,
    ) -> Result<Self, GridError> {
        let extent = Vec2::new(width as f64 * spacing, height as f64 * spacing);
        let origin = center - extent * 0.5 + Vec2::new(spacing / 2.0, spacing / 2.0);
        GridSpec::new(height, width, origin, spacing)
    }

    /// Desk-scale default: 152x280 pixels at 4.4 mm, centered on the
    /// 1100x600 mm canvas. Same physical extent as [`GridSpec::paper`]
    /// with pixels exactly four times coarser.
    pub fn desk() -> Self {
        GridSpec::centered(152, 280, 4.4, Vec2::new(550.0, 300.0)).unwrap()
    }

    /// Full-scale preset: 610x1120 pixels at 1.1 mm.
    pub fn paper() -> Self {
        GridSpec::centered(610, 1120, 1.1, Vec2::new(550.0, 300.0)).unwrap()
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new(col as f64 * self.spacing, row as f64 * self.spacing)
    }

    /// Fractional (row, col) of a world point.
    pub fn world_to_pixel(&self, p: Vec2) -> (f64, f64) {
        (
            (p.y - self.origin.y) / self.spacing,
            (p.x - self.origin.x) / self.spacing,
        )
    }

    pub fn diagonal_mm(&self) -> f64 {
        let w = self.width as f64 * self.spacing;
        let h = self.height as f64 * self.spacing;
        (w * w + h * h).sqrt()
    }
}

/// A height×width single-precision field over a [`GridSpec`] lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    pub kind: GridKind,
    pub values: Vec<f32>,
}

impl ScalarGrid {
    pub fn filled(spec: GridSpec, kind: GridKind, value: f32) -> Self {
        ScalarGrid {
            values: vec![value; spec.len()],
            spec,
            kind,
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.spec.height && col < self.spec.width);
        row * self.spec.width + col
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[self.idx(row, col)]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f32 {
        let i = self.idx(row, col);
        &mut self.values[i]
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Bilinear interpolation at a world point; errors outside the pixel
    /// center lattice.
    pub fn bilinear(&self, p: Vec2) -> Result<f64, GridError> {
        let (rf, cf) = self.spec.world_to_pixel(p);
        let (h, w) = (self.spec.height, self.spec.width);
        if !(0.0..=(h - 1) as f64).contains(&rf) || !(0.0..=(w - 1) as f64).contains(&cf) {
            return Err(GridError::ProbeOutside(p.x, p.y));
        }
        let r0 = (rf.floor() as usize).min(h - 2);
        let c0 = (cf.floor() as usize).min(w - 2);
        let tr = rf - r0 as f64;
        let tc = cf - c0 as f64;
        let v00 = self.at(r0, c0) as f64;
        let v01 = self.at(r0, c0 + 1) as f64;
        let v10 = self.at(r0 + 1, c0) as f64;
        let v11 = self.at(r0 + 1, c0 + 1) as f64;
        Ok(v00 * (1.0 - tr) * (1.0 - tc)
            + v01 * (1.0 - tr) * tc
            + v10 * tr * (1.0 - tc)
            + v11 * tr * tc)
    }
}

/// Mirror axis for augmentation flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror left-right (reverses columns).
    Horizontal,
    /// Mirror up-down (reverses rows).
    Vertical,
    Both,
}

/// Index reversal along the chosen axis (metadata unchanged).
pub fn flip(grid: &ScalarGrid, axis: FlipAxis) -> ScalarGrid {
    let (h, w) = (grid.spec.height, grid.spec.width);
    let mut out = grid.clone();
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = match axis {
                FlipAxis::Horizontal => (r, w - 1 - c),
                FlipAxis::Vertical => (h - 1 - r, c),
                FlipAxis::Both => (h - 1 - r, w - 1 - c),
            };
            out.values[r * w + c] = grid.values[sr * w + sc];
        }
    }
    out
}

/// Four-fold flip augmentation: for each (input, target) pair emits the
/// original plus horizontal, vertical, and double flips, sample-major
/// (all four variants of a pair are consecutive).
pub fn augment_flips(pairs: &[(ScalarGrid, ScalarGrid)]) -> Vec<(ScalarGrid, ScalarGrid)> {
    let mut out = Vec::with_capacity(pairs.len() * 4);
    for (x, y) in pairs {
        out.push((x.clone(), y.clone()));
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical, FlipAxis::Both] {
            out.push((flip(x, axis), flip(y, axis)));
        }
    }
    out
}
