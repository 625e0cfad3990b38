//! Constrained Latin-hypercube generation of blank designs.
//!
//! Designs are drawn in three steps:
//! 1. one Latin-hypercube block over the nine range-independent
//!    parameters (the region-1 edge distance and all eight region angles)
//!    within their static bounds — inactive angle columns are discarded
//!    per sample,
//! 2. per sample, the admissible intervals of the range-dependent
//!    parameters are evaluated sequentially from the partially built
//!    geometry (shared bound formulas with design validation),
//! 3. one Latin-hypercube block over the union of all range-dependent
//!    parameter columns supplies the unit coordinates mapped into those
//!    per-sample intervals; middle control points consume two columns
//!    through an area-uniform polar map onto their semi-circle.
//!
//! Samples may be stratified over the 16 parameterisations (sample `i`
//! takes parameterisation `i mod 16`). A draw whose intervals collapse,
//! whose design fails validation, or whose contour self-intersects is
//! redrawn uniformly within the same stratum; after 1000 consecutive
//! failures the stratum is reported infeasible.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::geometry::design::{
    angle_id, midrange_design, static_bounds, walk_region_rd, RdVisitor, RI_IDS,
};
use crate::geometry::regions::{Interval, SemiCircle};
use crate::geometry::{
    build_contour, validate_design, BlankDesign, GeometryError, ReferenceGeometry, RegionChoices,
    Vec2,
};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("infeasible stratum {code} ({fails} consecutive infeasible draws)")]
    InfeasibleStratum { code: String, fails: usize },
    #[error("training and test seeds must differ")]
    IdenticalSeeds,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A reproducible train/test sampling request.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub n_train: usize,
    pub n_test: usize,
    pub seed_train: u64,
    pub seed_test: u64,
    /// Allocate samples uniformly over the 16 parameterisations.
    pub stratify: bool,
}

/// Latin-hypercube sample: `n` points in `[0,1)^d`; per dimension exactly
/// one point falls in each bin `[k/n, (k+1)/n)`.
pub fn lhs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n >= 1, "lhs requires n >= 1");
    assert!(d >= 1, "lhs requires d >= 1");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; d]; n];
    // Column-major fill: one shuffle + one jitter stream per dimension.
    #[allow(clippy::needless_range_loop)]
    for dim in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (row, bin) in perm.iter().enumerate() {
            out[row][dim] = (*bin as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// All range-dependent parameter ids (the columns of the step-3 block),
/// ascending.
fn rd_union() -> Vec<u8> {
    (0..=32u8).filter(|id| !RI_IDS.contains(id)).collect()
}

struct UnitVisitor<'a> {
    units: &'a BTreeMap<u8, f64>,
}

impl RdVisitor for UnitVisitor<'_> {
    fn scalar(&mut self, id: u8, interval: Interval) -> Option<f64> {
        if interval.is_empty() {
            return None;
        }
        Some(interval.lerp(self.units[&id]))
    }

    fn mid(&mut self, ids: (u8, u8), semi: &SemiCircle, arc_center: Vec2) -> Option<(f64, f64)> {
        let p = semi.point_from_unit(self.units[&ids.0], self.units[&ids.1]);
        let off = p - arc_center;
        Some((off.x, off.y))
    }
}

/// Map one row of unit coordinates to a design; `None` when any interval
/// collapses, validation fails, or the contour self-intersects.
fn realize(
    choices: RegionChoices,
    units: &BTreeMap<u8, f64>,
    geo: &ReferenceGeometry,
) -> Option<BlankDesign> {
    let mut design = BlankDesign::new(choices);
    let (lo, hi) = static_bounds(0).unwrap();
    design.set(0, lo + (hi - lo) * units[&0]);
    for region in 2..=5u8 {
        let kind = choices.kind(region);
        let aid = angle_id(region, kind);
        let (lo, hi) = static_bounds(aid).unwrap();
        let angle = lo + (hi - lo) * units[&aid];
        design.set(aid, angle);
        let values = walk_region_rd(
            geo.slot(region),
            region,
            kind,
            angle,
            &mut UnitVisitor { units },
        )?;
        for (id, v) in values {
            design.set(id, v);
        }
    }
    if !validate_design(&design, geo).is_empty() {
        return None;
    }
    build_contour(&design, geo).ok()?;
    Some(design)
}

const MAX_CONSECUTIVE_FAILURES: usize = 1000;

/// Draw `n` valid designs. With `stratify`, sample `i` uses
/// parameterisation `i mod 16`; otherwise each sample draws its
/// parameterisation uniformly.
pub fn sample_designs(
    n: usize,
    seed: u64,
    stratify: bool,
    geo: &ReferenceGeometry,
) -> Result<Vec<BlankDesign>, SamplingError> {
    let ri_block = lhs(n, RI_IDS.len(), seed);
    let union = rd_union();
    let rd_block = lhs(n, union.len(), seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut aux = ChaCha12Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let strata: Vec<u8> = (0..n)
        .map(|i| {
            if stratify {
                (i % 16) as u8
            } else {
                aux.random_range(0..16u8)
            }
        })
        .collect();

    let mut designs = Vec::with_capacity(n);
    for i in 0..n {
        let choices = RegionChoices::from_bits(strata[i]);
        let mut units: BTreeMap<u8, f64> = BTreeMap::new();
        for (k, id) in RI_IDS.iter().enumerate() {
            units.insert(*id, ri_block[i][k]);
        }
        for (k, id) in union.iter().enumerate() {
            units.insert(*id, rd_block[i][k]);
        }
        let mut fails = 0;
        let design = loop {
            if let Some(d) = realize(choices, &units, geo) {
                break d;
            }
            fails += 1;
            if fails >= MAX_CONSECUTIVE_FAILURES {
                return Err(SamplingError::InfeasibleStratum {
                    code: choices.code(),
                    fails,
                });
            }
            for value in units.values_mut() {
                *value = aux.random::<f64>();
            }
        };
        designs.push(design);
    }
    Ok(designs)
}

/// Draw the training and test sets from two independent seeds.
pub fn generate_splits(
    plan: &SamplingPlan,
    geo: &ReferenceGeometry,
) -> Result<(Vec<BlankDesign>, Vec<BlankDesign>), SamplingError> {
    if plan.seed_train == plan.seed_test {
        return Err(SamplingError::IdenticalSeeds);
    }
    let train = sample_designs(plan.n_train, plan.seed_train, plan.stratify, geo)?;
    let test = sample_designs(plan.n_test, plan.seed_test, plan.stratify, geo)?;
    Ok((train, test))
}

/// A design with every parameter at the midpoint of its sequential
/// admissible interval (re-exported here as the sampler's notion of a
/// canonical representative).
pub fn representative_design(
    choices: RegionChoices,
    geo: &ReferenceGeometry,
) -> Result<BlankDesign, GeometryError> {
    midrange_design(choices, geo)
}
