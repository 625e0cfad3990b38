//! Iso-contour extraction by marching squares with linear interpolation.

use std::collections::BTreeMap;

use super::{GridError, ScalarGrid};
use crate::geometry::design::SegTag;
use crate::geometry::primitives::signed_area;
use crate::geometry::{Contour, Vec2};

/// A lattice edge between two adjacent pixel centers, identified by its
/// lower-left pixel. `H` runs along +x from (row, col); `V` along +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeKey {
    H(usize, usize),
    V(usize, usize),
}

/// Extract the longest closed iso-polyline of `grid` at level `iso`.
///
/// Cell-edge crossings are placed by linear interpolation between pixel
/// centers; ambiguous saddle cells are resolved by the sign of the
/// cell-center average. Open chains (level set leaving the grid) are
/// discarded. The returned contour is counter-clockwise around the
/// below-`iso` region.
pub fn extract_contour(grid: &ScalarGrid, iso: f64) -> Result<Contour, GridError> {
    let mut all = extract_contours(grid, iso)?;
    Ok(all.swap_remove(0))
}

/// Extract every closed iso-polyline of `grid` at level `iso`, longest
/// perimeter first. Useful for checking that a level set is a single
/// closed curve rather than an archipelago.
pub fn extract_contours(grid: &ScalarGrid, iso: f64) -> Result<Vec<Contour>, GridError> {
    let (h, w) = (grid.spec.height, grid.spec.width);
    let inside = |r: usize, c: usize| (grid.at(r, c) as f64) < iso;
    let value = |r: usize, c: usize| grid.at(r, c) as f64;

    let crossing = |key: EdgeKey| -> Vec2 {
        let ((r0, c0), (r1, c1)) = match key {
            EdgeKey::H(r, c) => ((r, c), (r, c + 1)),
            EdgeKey::V(r, c) => ((r, c), (r + 1, c)),
        };
        let v0 = value(r0, c0);
        let v1 = value(r1, c1);
        let t = if v1 == v0 { 0.5 } else { (iso - v0) / (v1 - v0) };
        let a = grid.spec.pixel_center(r0, c0);
        let b = grid.spec.pixel_center(r1, c1);
        a.lerp(b, t.clamp(0.0, 1.0))
    };

    // Collect cell segments as pairs of edge keys.
    let mut links: BTreeMap<EdgeKey, Vec<EdgeKey>> = BTreeMap::new();
    let mut any_inside = false;
    let mut any_outside = false;
    for r in 0..h {
        for c in 0..w {
            if inside(r, c) {
                any_inside = true;
            } else {
                any_outside = true;
            }
        }
    }
    if !any_inside || !any_outside {
        return Err(GridError::EmptyLevelSet);
    }

    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let b0 = inside(r, c) as u8; // bottom-left
            let b1 = inside(r, c + 1) as u8; // bottom-right
            let b2 = inside(r + 1, c + 1) as u8; // top-right
            let b3 = inside(r + 1, c) as u8; // top-left
            let case = b0 | b1 << 1 | b2 << 2 | b3 << 3;
            let bottom = EdgeKey::H(r, c);
            let top = EdgeKey::H(r + 1, c);
            let left = EdgeKey::V(r, c);
            let right = EdgeKey::V(r, c + 1);
            let mut segs: Vec<(EdgeKey, EdgeKey)> = Vec::new();
            match case {
                0 | 15 => {}
                1 | 14 => segs.push((left, bottom)),
                2 | 13 => segs.push((bottom, right)),
                3 | 12 => segs.push((left, right)),
                4 | 11 => segs.push((right, top)),
                6 | 9 => segs.push((bottom, top)),
                7 | 8 => segs.push((left, top)),
                5 => {
                    // Bottom-left and top-right inside.
                    let center =
                        (value(r, c) + value(r, c + 1) + value(r + 1, c + 1) + value(r + 1, c))
                            / 4.0;
                    if center < iso {
                        segs.push((left, top));
                        segs.push((bottom, right));
                    } else {
                        segs.push((left, bottom));
                        segs.push((right, top));
                    }
                }
                10 => {
                    // Bottom-right and top-left inside.
                    let center =
                        (value(r, c) + value(r, c + 1) + value(r + 1, c + 1) + value(r + 1, c))
                            / 4.0;
                    if center < iso {
                        segs.push((left, bottom));
                        segs.push((right, top));
                    } else {
                        segs.push((left, top));
                        segs.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
            for (a, b) in segs {
                links.entry(a).or_default().push(b);
                links.entry(b).or_default().push(a);
            }
        }
    }
    if links.is_empty() {
        return Err(GridError::EmptyLevelSet);
    }

    // Stitch closed loops; iteration over the BTreeMap keeps the result
    // deterministic.
    let mut visited: BTreeMap<EdgeKey, bool> = links.keys().map(|k| (*k, false)).collect();
    let mut loops: Vec<(f64, Vec<Vec2>)> = Vec::new();
    let keys: Vec<EdgeKey> = links.keys().copied().collect();
    for start in keys {
        if visited[&start] || links[&start].len() != 2 {
            continue;
        }
        let mut loop_keys = vec![start];
        visited.insert(start, true);
        let mut prev = start;
        let mut current = links[&start][0];
        let mut closed = false;
        loop {
            if current == start {
                closed = true;
                break;
            }
            if visited[&current] || links[&current].len() != 2 {
                break;
            }
            visited.insert(current, true);
            loop_keys.push(current);
            let nbrs = &links[&current];
            let next = if nbrs[0] == prev { nbrs[1] } else { nbrs[0] };
            prev = current;
            current = next;
        }
        if !closed || loop_keys.len() < 3 {
            continue;
        }
        let mut pts: Vec<Vec2> = loop_keys.iter().map(|k| crossing(*k)).collect();
        pts.dedup_by(|a, b| a.dist(*b) < 1e-12);
        if pts.len() >= 2 && pts[0].dist(pts[pts.len() - 1]) < 1e-12 {
            pts.pop();
        }
        if pts.len() < 3 {
            continue;
        }
        let mut perimeter = 0.0;
        for i in 0..pts.len() {
            perimeter += pts[i].dist(pts[(i + 1) % pts.len()]);
        }
        loops.push((perimeter, pts));
    }
    if loops.is_empty() {
        return Err(GridError::EmptyLevelSet);
    }
    loops.sort_by(|a, b| b.0.total_cmp(&a.0));

    Ok(loops
        .into_iter()
        .map(|(_, mut points)| {
            if signed_area(&points) < 0.0 {
                points.reverse();
            }
            let tags = vec![SegTag::Fixed; points.len()];
            Contour { points, tags }
        })
        .collect())
}
