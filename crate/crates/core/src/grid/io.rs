//! Grid file format and plain-text exports.
//!
//! Binary format (all little-endian):
//! `FGRD` magic (4 bytes), version u16 = 1, dtype u8 = 0 (f32), kind u8
//! (0 = SDF, 1 = thinning field), height u32, width u32, origin_x f64,
//! origin_y f64, spacing f64, then height·width f32 values row-major.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{GridError, GridKind, GridSpec, ScalarGrid};
use crate::geometry::Vec2;

const MAGIC: [u8; 4] = *b"FGRD";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 8 + 8 + 8;

/// Write a grid in the binary `FGRD` format.
pub fn write_grid(grid: &ScalarGrid, path: &Path) -> Result<(), GridError> {
    let mut buf = Vec::with_capacity(HEADER_LEN + grid.values.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(grid.kind.code());
    buf.extend_from_slice(&(grid.spec.height as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.spec.width as u32).to_le_bytes());
    buf.extend_from_slice(&grid.spec.origin.x.to_le_bytes());
    buf.extend_from_slice(&grid.spec.origin.y.to_le_bytes());
    buf.extend_from_slice(&grid.spec.spacing.to_le_bytes());
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn take<const N: usize>(bytes: &mut &[u8]) -> [u8; N] {
    let (head, rest) = bytes.split_at(N);
    *bytes = rest;
    head.try_into().unwrap()
}

/// Read a grid written by [`write_grid`]; bit-exact round trip.
pub fn read_grid(path: &Path) -> Result<ScalarGrid, GridError> {
    let data = fs::read(path)?;
    if data.len() < HEADER_LEN {
        return Err(GridError::ShortRead {
            expected: HEADER_LEN,
            got: data.len(),
        });
    }
    let mut cur: &[u8] = &data;
    let magic: [u8; 4] = take(&mut cur);
    if magic != MAGIC {
        return Err(GridError::BadMagic);
    }
    let version = u16::from_le_bytes(take(&mut cur));
    if version != VERSION {
        return Err(GridError::BadHeader {
            field: "version",
            value: version as u64,
        });
    }
    let dtype = take::<1>(&mut cur)[0];
    if dtype != DTYPE_F32 {
        return Err(GridError::BadHeader {
            field: "dtype",
            value: dtype as u64,
        });
    }
    let kind_code = take::<1>(&mut cur)[0];
    let kind = GridKind::from_code(kind_code).ok_or(GridError::BadHeader {
        field: "kind",
        value: kind_code as u64,
    })?;
    let height = u32::from_le_bytes(take(&mut cur)) as usize;
    let width = u32::from_le_bytes(take(&mut cur)) as usize;
    let origin_x = f64::from_le_bytes(take(&mut cur));
    let origin_y = f64::from_le_bytes(take(&mut cur));
    let spacing = f64::from_le_bytes(take(&mut cur));
    let spec = GridSpec::new(height, width, Vec2::new(origin_x, origin_y), spacing)?;
    let expected = HEADER_LEN + spec.len() * 4;
    if data.len() < expected {
        return Err(GridError::ShortRead {
            expected,
            got: data.len(),
        });
    }
    if data.len() > expected {
        return Err(GridError::TrailingBytes {
            expected,
            got: data.len(),
        });
    }
    let mut values = Vec::with_capacity(spec.len());
    for chunk in cur.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(ScalarGrid { spec, kind, values })
}

/// Export as comma-separated text, one grid row per line, row 0 (the
/// bottom row in world coordinates) first.
pub fn write_csv(grid: &ScalarGrid, path: &Path) -> Result<(), GridError> {
    let mut out = fs::File::create(path)?;
    let mut line = String::new();
    for row in 0..grid.spec.height {
        line.clear();
        for col in 0..grid.spec.width {
            if col > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", grid.at(row, col)));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Export as binary 8-bit PGM, min-max normalized (flat fields map to
/// mid-gray). PGM rows run top-down, so grid rows are written reversed.
pub fn write_pgm(grid: &ScalarGrid, path: &Path) -> Result<(), GridError> {
    let (lo, hi) = grid.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) as f64 } else { 0.0 };
    let mut buf = format!("P5\n{} {}\n255\n", grid.spec.width, grid.spec.height).into_bytes();
    for row in (0..grid.spec.height).rev() {
        for col in 0..grid.spec.width {
            let v = grid.at(row, col);
            let g = if scale == 0.0 {
                128.0
            } else {
                (v - lo) as f64 * scale
            };
            buf.push(g.round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> ScalarGrid {
        let spec = GridSpec::new(9, 8, Vec2::new(-1.5, 2.25), 0.75).unwrap();
        let mut g = ScalarGrid::filled(spec, GridKind::ThinningField, 0.0);
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin() * 3.0;
        }
        g
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.fgrd");
        let g = sample_grid();
        write_grid(&g, &path).unwrap();
        let back = read_grid(&path).unwrap();
        assert_eq!(back.kind, g.kind);
        assert_eq!(back.spec, g.spec);
        assert_eq!(back.values.len(), g.values.len());
        for (a, b) in g.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_headers_name_the_offending_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.fgrd");
        let g = sample_grid();
        write_grid(&g, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_grid(&path), Err(GridError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        let err = read_grid(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        let mut bad = bytes.clone();
        bad[6] = 3;
        fs::write(&path, &bad).unwrap();
        let err = read_grid(&path).unwrap_err();
        assert!(err.to_string().contains("dtype"), "{err}");

        let mut bad = bytes.clone();
        bad[7] = 7;
        fs::write(&path, &bad).unwrap();
        let err = read_grid(&path).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");

        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_grid(&path).unwrap_err();
        assert!(err.to_string().contains("short read"), "{err}");
    }

    #[test]
    fn text_exports_have_the_right_shape() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_grid();

        let csv = dir.path().join("grid.csv");
        write_csv(&g, &csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), g.spec.height);
        assert_eq!(lines[0].split(',').count(), g.spec.width);
        let first: f32 = lines[0].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, g.at(0, 0));

        let pgm = dir.path().join("grid.pgm");
        write_pgm(&g, &pgm).unwrap();
        let bytes = fs::read(&pgm).unwrap();
        let header = format!("P5\n{} {}\n255\n", g.spec.width, g.spec.height);
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + g.spec.len());
    }
}
