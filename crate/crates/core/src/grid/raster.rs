//! Exact signed-distance rasterization of closed contours.

use rayon::prelude::*;

use super::{GridError, GridKind, GridSpec, ScalarGrid};
use crate::geometry::primitives::{dist_point_segment, winding_number};
use crate::geometry::Contour;

/// Rasterize a closed simple contour to a signed-distance field: each
/// pixel's value is the exact Euclidean distance (mm) from the pixel
/// center to the nearest contour segment, positive outside the blank and
/// negative inside.
pub fn rasterize_sdf(contour: &Contour, spec: &GridSpec) -> Result<ScalarGrid, GridError> {
    let pts = &contour.points;
    if pts.len() < 3 {
        return Err(GridError::OpenContour(pts.len()));
    }
    let mut grid = ScalarGrid::filled(*spec, GridKind::Sdf, 0.0);
    let width = spec.width;
    let spec = *spec;
    grid.values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                let p = spec.pixel_center(row, col);
                let mut dist = f64::INFINITY;
                for i in 0..pts.len() {
                    let a = pts[i];
                    let b = pts[(i + 1) % pts.len()];
                    dist = dist.min(dist_point_segment(p, a, b));
                }
                let inside = winding_number(pts, p) != 0;
                *v = if inside { -dist as f32 } else { dist as f32 };
            }
        });
    Ok(grid)
}
