//! Run ledgers: tab-separated record files tying sampled designs and
//! simulation results to their grid files and provenance.
//!
//! A run keeps two append-only files. The design ledger is written by the
//! sampling stage: one record per design with its parameterisation, the
//! path of its rasterized SDF, and the provenance (seed, config hash).
//! The dataset ledger is written by the simulation stage: the same design
//! columns plus the thinning-field path and the two field maxima. Stages
//! only ever append complete records — nothing rewrites an earlier line —
//! and ids must stay unique within each file.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::geometry::{BlankDesign, RegionChoices};
use crate::grid::{read_grid, GridError};

const DESIGNS_MAGIC: &str = "#blankopt-designs v1";
const DATASET_MAGIC: &str = "#blankopt-dataset v1";

/// Default ledger file names inside a run directory.
pub const DESIGNS_FILE: &str = "designs.manifest";
pub const DATASET_FILE: &str = "dataset.manifest";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a ledger file (first line {found:?}, expected {expected:?})")]
    BadMagic {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },
    #[error("{path}:{line}: {msg}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("record {id}: config hash {found} does not match the run's {expected}")]
    HashMismatch {
        id: u64,
        found: String,
        expected: String,
    },
    #[error("record {id}: referenced file {path} is missing")]
    MissingArtifact { id: u64, path: PathBuf },
    #[error("record {id}: referenced grid {path} does not parse: {source}")]
    BadArtifact {
        id: u64,
        path: PathBuf,
        source: GridError,
    },
    #[error("field {0:?} must not contain tabs or line breaks")]
    UnencodableField(String),
}

/// Which slice of the run a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
    /// Shapes used only to enrich decoder training, never for surrogate
    /// fitting or evaluation.
    DecoderExtra,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::DecoderExtra => "decoder-extra",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "test" => Some(SplitTag::Test),
            "decoder-extra" => Some(SplitTag::DecoderExtra),
            _ => None,
        }
    }
}

/// One sampled design: identity, parameterisation, SDF artifact,
/// provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRecord {
    pub id: u64,
    pub split: SplitTag,
    /// 4-bit parameterisation index (bit 3 = region 2 … bit 0 = region 5,
    /// set = spline).
    pub bits: u8,
    /// (parameter id, value) pairs sorted by id.
    pub params: Vec<(u8, f64)>,
    /// Path of the rasterized SDF grid, relative to the run directory.
    pub sdf_path: String,
    pub seed: u64,
    pub config_hash: String,
}

impl DesignRecord {
    pub fn from_design(
        id: u64,
        split: SplitTag,
        design: &BlankDesign,
        sdf_path: impl Into<String>,
        seed: u64,
        config_hash: impl Into<String>,
    ) -> Self {
        DesignRecord {
            id,
            split,
            bits: design.choices.bits(),
            params: design.params.iter().map(|(k, v)| (*k, *v)).collect(),
            sdf_path: sdf_path.into(),
            seed,
            config_hash: config_hash.into(),
        }
    }

    /// Rebuild the design this record describes.
    pub fn design(&self) -> BlankDesign {
        let mut d = BlankDesign::new(RegionChoices::from_bits(self.bits));
        for (id, v) in &self.params {
            d.set(*id, *v);
        }
        d
    }

    fn to_line(&self) -> Result<String, ManifestError> {
        for s in [&self.sdf_path, &self.config_hash] {
            if s.contains(['\t', '\n', '\r']) {
                return Err(ManifestError::UnencodableField(s.clone()));
            }
        }
        let params = self
            .params
            .iter()
            .map(|(id, v)| format!("P{id}={v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        Ok(format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.split.as_str(),
            self.bits,
            params,
            self.sdf_path,
            self.seed,
            self.config_hash
        ))
    }

    fn from_fields(
        fields: &[&str],
        bad: &impl Fn(String) -> ManifestError,
    ) -> Result<Self, ManifestError> {
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad id {:?}", fields[0])))?;
        let split = SplitTag::parse(fields[1])
            .ok_or_else(|| bad(format!("unknown split tag {:?}", fields[1])))?;
        let bits: u8 = fields[2]
            .parse()
            .ok()
            .filter(|b| *b < 16)
            .ok_or_else(|| bad(format!("bad parameterisation bits {:?}", fields[2])))?;
        let mut params = Vec::new();
        if !fields[3].is_empty() {
            for pair in fields[3].split(',') {
                let (name, value) = pair
                    .split_once('=')
                    .ok_or_else(|| bad(format!("bad parameter pair {pair:?}")))?;
                let pid: u8 = name
                    .strip_prefix('P')
                    .and_then(|n| n.parse().ok())
                    .filter(|n| *n <= 32)
                    .ok_or_else(|| bad(format!("bad parameter id {name:?}")))?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| bad(format!("bad parameter value {value:?}")))?;
                params.push((pid, v));
            }
        }
        if params.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad("parameter ids out of order".into()));
        }
        let seed: u64 = fields[5]
            .parse()
            .map_err(|_| bad(format!("bad seed {:?}", fields[5])))?;
        Ok(DesignRecord {
            id,
            split,
            bits,
            params,
            sdf_path: fields[4].to_string(),
            seed,
            config_hash: fields[6].to_string(),
        })
    }
}

/// One simulated design: the design columns plus the oracle's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub design: DesignRecord,
    /// Path of the thinning-field grid, relative to the run directory.
    pub field_path: String,
    pub max_thinning: f64,
    pub max_thickening: f64,
}

impl DatasetRecord {
    fn to_line(&self) -> Result<String, ManifestError> {
        if self.field_path.contains(['\t', '\n', '\r']) {
            return Err(ManifestError::UnencodableField(self.field_path.clone()));
        }
        Ok(format!(
            "{}\t{}\t{:?}\t{:?}",
            self.design.to_line()?,
            self.field_path,
            self.max_thinning,
            self.max_thickening
        ))
    }
}

const DESIGN_COLS: usize = 7;
const DATASET_COLS: usize = DESIGN_COLS + 3;

fn read_lines(path: &Path, magic: &'static str) -> Result<Vec<(usize, String)>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == magic => {}
        other => {
            return Err(ManifestError::BadMagic {
                path: path.to_path_buf(),
                found: other.map(|(_, l)| l.to_string()).unwrap_or_default(),
                expected: magic,
            });
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    want: usize,
) -> Result<Vec<&'a str>, ManifestError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != want {
        return Err(ManifestError::BadRecord {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("{} fields, expected {want}", fields.len()),
        });
    }
    Ok(fields)
}

fn check_unique(ids: impl IntoIterator<Item = u64>) -> Result<(), ManifestError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ManifestError::DuplicateId(id));
        }
    }
    Ok(())
}

/// Read and validate the design ledger.
pub fn read_designs(path: &Path) -> Result<Vec<DesignRecord>, ManifestError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path, DESIGNS_MAGIC)? {
        let fields = split_fields(path, line_no, &line, DESIGN_COLS)?;
        let bad = |msg: String| ManifestError::BadRecord {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        out.push(DesignRecord::from_fields(&fields, &bad)?);
    }
    check_unique(out.iter().map(|r| r.id))?;
    Ok(out)
}

/// Read and validate the dataset ledger.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, ManifestError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path, DATASET_MAGIC)? {
        let fields = split_fields(path, line_no, &line, DATASET_COLS)?;
        let bad = |msg: String| ManifestError::BadRecord {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let design = DesignRecord::from_fields(&fields[..DESIGN_COLS], &bad)?;
        let max_thinning: f64 = fields[DESIGN_COLS + 1]
            .parse()
            .map_err(|_| bad(format!("bad max thinning {:?}", fields[DESIGN_COLS + 1])))?;
        let max_thickening: f64 = fields[DESIGN_COLS + 2]
            .parse()
            .map_err(|_| bad(format!("bad max thickening {:?}", fields[DESIGN_COLS + 2])))?;
        out.push(DatasetRecord {
            design,
            field_path: fields[DESIGN_COLS].to_string(),
            max_thinning,
            max_thickening,
        });
    }
    check_unique(out.iter().map(|r| r.design.id))?;
    Ok(out)
}

fn append_records<R>(
    path: &Path,
    magic: &'static str,
    existing_ids: Vec<u64>,
    records: &[R],
    id_of: impl Fn(&R) -> u64,
    line_of: impl Fn(&R) -> Result<String, ManifestError>,
) -> Result<(), ManifestError> {
    check_unique(
        existing_ids
            .into_iter()
            .chain(records.iter().map(&id_of)),
    )?;
    let mut body = String::new();
    for r in records {
        body.push_str(&line_of(r)?);
        body.push('\n');
    }
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut payload = String::new();
    if fresh {
        payload.push_str(magic);
        payload.push('\n');
    }
    payload.push_str(&body);
    file.write_all(payload.as_bytes())
        .map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Append design records, creating the file (with its header) on first
/// use. Ids must not collide with records already in the file.
pub fn append_designs(path: &Path, records: &[DesignRecord]) -> Result<(), ManifestError> {
    let existing = if path.exists() {
        read_designs(path)?.iter().map(|r| r.id).collect()
    } else {
        Vec::new()
    };
    append_records(
        path,
        DESIGNS_MAGIC,
        existing,
        records,
        |r| r.id,
        |r| r.to_line(),
    )
}

/// Append dataset records, creating the file (with its header) on first
/// use. Ids must not collide with records already in the file.
pub fn append_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), ManifestError> {
    let existing = if path.exists() {
        read_dataset(path)?.iter().map(|r| r.design.id).collect()
    } else {
        Vec::new()
    };
    append_records(
        path,
        DATASET_MAGIC,
        existing,
        records,
        |r| r.design.id,
        |r| r.to_line(),
    )
}

/// Check every record against the run's config hash.
pub fn check_config_hash<'a>(
    records: impl IntoIterator<Item = (u64, &'a str)>,
    expected: &str,
) -> Result<(), ManifestError> {
    for (id, found) in records {
        if found != expected {
            return Err(ManifestError::HashMismatch {
                id,
                found: found.to_string(),
                expected: expected.to_string(),
            });
        }
    }
    Ok(())
}

/// Check that every referenced grid file exists under `root`; with `deep`
/// also parse each one.
pub fn verify_artifacts<'a>(
    root: &Path,
    refs: impl IntoIterator<Item = (u64, &'a str)>,
    deep: bool,
) -> Result<(), ManifestError> {
    for (id, rel) in refs {
        let path = root.join(rel);
        if !path.is_file() {
            return Err(ManifestError::MissingArtifact { id, path });
        }
        if deep {
            read_grid(&path).map_err(|source| ManifestError::BadArtifact {
                id,
                path: path.clone(),
                source,
            })?;
        }
    }
    Ok(())
}

/// The grid references of a design slice, for [`verify_artifacts`].
pub fn design_refs(records: &[DesignRecord]) -> impl Iterator<Item = (u64, &str)> {
    records.iter().map(|r| (r.id, r.sdf_path.as_str()))
}

/// All grid references of a dataset slice (SDF and field), for
/// [`verify_artifacts`].
pub fn dataset_refs(records: &[DatasetRecord]) -> impl Iterator<Item = (u64, &str)> {
    records.iter().flat_map(|r| {
        [
            (r.design.id, r.design.sdf_path.as_str()),
            (r.design.id, r.field_path.as_str()),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::grid::{write_grid, GridKind, GridSpec, ScalarGrid};
    use tempfile::tempdir;

    fn sample_records() -> Vec<DesignRecord> {
        let mut d0 = BlankDesign::new(RegionChoices::from_bits(0b1011));
        d0.set(0, 43.25);
        d0.set(1, 1.0 / 3.0);
        d0.set(2, 120.75);
        let mut d1 = BlankDesign::new(RegionChoices::from_bits(0));
        d1.set(0, 10.0);
        d1.set(24, 99.999999999999);
        vec![
            DesignRecord::from_design(0, SplitTag::Train, &d0, "grids/sdf/0000.fgrd", 7, "abc123"),
            DesignRecord::from_design(1, SplitTag::Test, &d1, "grids/sdf/0001.fgrd", 11, "abc123"),
            DesignRecord {
                id: 2,
                split: SplitTag::DecoderExtra,
                bits: 15,
                params: vec![(0, 1e-17), (3, 66.6)],
                sdf_path: "grids/sdf/0002.fgrd".into(),
                seed: 42,
                config_hash: "abc123".into(),
            },
        ]
    }

    #[test]
    fn design_ledger_round_trips_and_rejects_duplicates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(DESIGNS_FILE);
        let records = sample_records();
        append_designs(&path, &records).unwrap();
        let back = read_designs(&path).unwrap();
        assert_eq!(back, records);
        // Exact f64 round-trips, including awkward values.
        assert_eq!(back[0].params[1].1.to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(back[2].params[0].1.to_bits(), 1e-17f64.to_bits());
        // Designs rebuild losslessly.
        let d = back[0].design();
        assert_eq!(d.choices.bits(), 0b1011);
        assert_eq!(d.get(1), Some(1.0 / 3.0));

        // Appending an id the file already holds fails and leaves the
        // ledger untouched.
        let dup = DesignRecord {
            id: 1,
            ..records[0].clone()
        };
        assert!(matches!(
            append_designs(&path, &[dup]),
            Err(ManifestError::DuplicateId(1))
        ));
        assert_eq!(read_designs(&path).unwrap().len(), 3);

        // Later appends with fresh ids extend the same file.
        let next = DesignRecord {
            id: 3,
            ..records[0].clone()
        };
        append_designs(&path, &[next]).unwrap();
        assert_eq!(read_designs(&path).unwrap().len(), 4);
    }

    #[test]
    fn dataset_ledger_round_trips_maxima_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        let designs = sample_records();
        let records: Vec<DatasetRecord> = designs
            .into_iter()
            .enumerate()
            .map(|(i, design)| DatasetRecord {
                field_path: format!("grids/field/{i:04}.fgrd"),
                max_thinning: 0.1 + i as f64 * 0.017,
                max_thickening: (i as f64 * 0.03).sin().abs(),
                design,
            })
            .collect();
        append_dataset(&path, &records).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, records);
        for (a, b) in back.iter().zip(&records) {
            assert_eq!(a.max_thinning.to_bits(), b.max_thinning.to_bits());
            assert_eq!(a.max_thickening.to_bits(), b.max_thickening.to_bits());
        }
        assert!(matches!(
            check_config_hash(
                back.iter().map(|r| (r.design.id, r.design.config_hash.as_str())),
                "abc123"
            ),
            Ok(())
        ));
        assert!(matches!(
            check_config_hash(
                back.iter().map(|r| (r.design.id, r.design.config_hash.as_str())),
                "other"
            ),
            Err(ManifestError::HashMismatch { id: 0, .. })
        ));
    }

    #[test]
    fn malformed_ledgers_are_rejected_with_positions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.manifest");

        fs::write(&path, "#wrong magic\n").unwrap();
        assert!(matches!(
            read_designs(&path),
            Err(ManifestError::BadMagic { .. })
        ));

        let header = format!("{DESIGNS_MAGIC}\n");
        for (body, what) in [
            ("0\ttrain\t3\tP0=1.0\tsdf\t7", "missing column"),
            ("0\tvalidation\t3\tP0=1.0\tsdf\t7\thash", "unknown split"),
            ("0\ttrain\t16\tP0=1.0\tsdf\t7\thash", "bits out of range"),
            ("0\ttrain\t3\tP33=1.0\tsdf\t7\thash", "param id out of range"),
            ("0\ttrain\t3\tP0:1.0\tsdf\t7\thash", "bad pair syntax"),
            ("0\ttrain\t3\tP4=1.0,P2=2.0\tsdf\t7\thash", "ids out of order"),
            ("x\ttrain\t3\tP0=1.0\tsdf\t7\thash", "bad id"),
        ] {
            fs::write(&path, format!("{header}{body}\n")).unwrap();
            assert!(
                matches!(read_designs(&path), Err(ManifestError::BadRecord { line: 2, .. })),
                "{what} should be rejected"
            );
        }

        // Duplicate ids inside one file are caught on read too.
        fs::write(
            &path,
            format!("{header}0\ttrain\t3\t\tsdf\t7\thash\n0\ttest\t3\t\tsdf\t7\thash\n"),
        )
        .unwrap();
        assert!(matches!(
            read_designs(&path),
            Err(ManifestError::DuplicateId(0))
        ));

        // Tabs in a path can't be encoded.
        let mut bad = sample_records().remove(0);
        bad.sdf_path = "a\tb".into();
        assert!(matches!(
            append_designs(&dir.path().join("y.manifest"), &[bad]),
            Err(ManifestError::UnencodableField(_))
        ));
    }

    #[test]
    fn artifact_verification_checks_existence_and_parseability() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("grids")).unwrap();
        let spec = GridSpec::new(8, 8, Vec2::new(0.0, 0.0), 1.0).unwrap();
        let grid = ScalarGrid::filled(spec, GridKind::Sdf, 1.5);
        write_grid(&grid, &root.join("grids/ok.fgrd")).unwrap();
        fs::write(root.join("grids/junk.fgrd"), b"not a grid").unwrap();

        verify_artifacts(root, [(0, "grids/ok.fgrd")], true).unwrap();
        assert!(matches!(
            verify_artifacts(root, [(1, "grids/absent.fgrd")], false),
            Err(ManifestError::MissingArtifact { id: 1, .. })
        ));
        // Shallow check tolerates junk contents; deep parsing does not.
        verify_artifacts(root, [(2, "grids/junk.fgrd")], false).unwrap();
        assert!(matches!(
            verify_artifacts(root, [(2, "grids/junk.fgrd")], true),
            Err(ManifestError::BadArtifact { id: 2, .. })
        ));
    }
}
