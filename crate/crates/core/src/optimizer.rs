//! Gradient-based blank optimization in latent space.
//!
//! A latent vector is pushed through the frozen SDF decoder and the frozen
//! image surrogate; the composite objective combines the predicted maximum
//! thickening (objective term), a hinged penalty on the predicted maximum
//! thinning, and a regulariser that keeps the SDF gradient inside a fixed
//! pixel box aligned with a reference direction (so the top edge stays a
//! straight line). Adam updates only the latent; the networks' weights are
//! never touched. The optimized shape is then re-extracted, re-rasterized,
//! and checked against the forming simulator — the surrogate's own opinion
//! of the design is never the final verdict.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::decoder::{AutoDecoder, DecoderError, LATENT_DIM};
use crate::geometry::reference::ReferenceGeometry;
use crate::geometry::{Contour, GeometryError};
use crate::grid::{extract_contour, rasterize_sdf, GridError, GridSpec, ScalarGrid};
use crate::nn::{Adam, NnError, Param};
use crate::oracle::{simulate, OracleConfig, OracleError, ThinningResult};
use crate::oracle::{THICKENING_LIMIT, THINNING_LIMIT};
use crate::unet::{MaskResSEUNet, UnetError};

/// Reference SDF gradient (per millimetre) the line regulariser pulls
/// towards inside the region-1 box: the unit normal of the blank's top
/// edge.
pub const REFERENCE_GRADIENT: (f64, f64) = (0.0603, 0.9982);

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("line region is empty or lies outside the grid interior ({0})")]
    BadLineRegion(String),
    #[error("decoder and surrogate grids differ")]
    SpecMismatch,
    #[error("field and SDF grids differ in spec")]
    GridMismatch,
    #[error("no candidate samples")]
    NoCandidates,
    #[error("{latents} latents but {scores} thickening values")]
    CandidateMismatch { latents: usize, scores: usize },
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Unet(#[from] UnetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Half-open pixel rectangle rows `[row0, row1)` × cols `[col0, col1)`.
/// Central differences need every box pixel's four neighbours, so the box
/// must keep one pixel of margin to the grid border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineRegion {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl LineRegion {
    pub fn validate(&self, spec: &GridSpec) -> Result<(), OptimizerError> {
        if self.row0 >= self.row1 || self.col0 >= self.col1 {
            return Err(OptimizerError::BadLineRegion(format!(
                "empty box {self:?}"
            )));
        }
        if self.row0 < 1
            || self.col0 < 1
            || self.row1 > spec.height - 1
            || self.col1 > spec.width - 1
        {
            return Err(OptimizerError::BadLineRegion(format!(
                "{self:?} must stay one pixel inside a {}x{} grid",
                spec.height, spec.width
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }

    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }
}

/// The default line box: the pixel rectangle bounding the region-1 edge at
/// a given `p0`, dilated by `dilate` pixels and clamped to the grid
/// interior.
pub fn region1_line_box(
    spec: &GridSpec,
    geo: &ReferenceGeometry,
    p0: f64,
    dilate: usize,
) -> Result<LineRegion, OptimizerError> {
    let (e_r, e_l) = geo.plateau_ends(p0)?;
    let (r1, c1) = spec.world_to_pixel(e_r);
    let (r2, c2) = spec.world_to_pixel(e_l);
    let d = dilate as f64;
    let row0 = (r1.min(r2).floor() - d).max(1.0) as usize;
    let row1 = ((r1.max(r2).ceil() + d) as usize).min(spec.height - 1);
    let col0 = (c1.min(c2).floor() - d).max(1.0) as usize;
    let col1 = ((c1.max(c2).ceil() + d) as usize).min(spec.width - 1);
    let region = LineRegion {
        row0,
        row1,
        col0,
        col1,
    };
    region.validate(spec)?;
    Ok(region)
}

/// How the maxima are pulled out of the predicted field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxMode {
    /// Plain maximum; the subgradient flows through the first argmax pixel.
    Hard,
    /// Log-sum-exp softening with temperature `tau`, for gradient
    /// verification.
    Smooth { tau: f64 },
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Weight of the maximum-thickening objective term.
    pub lambda1: f64,
    /// Weight of the hinged maximum-thinning penalty.
    pub lambda2: f64,
    /// Weight of the line regulariser.
    pub lambda3: f64,
    /// Hinge threshold on the thinning maximum.
    pub threshold: f64,
    pub lr: f64,
    pub epochs: usize,
    pub region: LineRegion,
    pub ref_grad: (f64, f64),
    pub max_mode: MaxMode,
    /// Standard deviation of the Gaussian perturbation applied to the
    /// start latent (seeded); 0 starts exactly at the given latent.
    pub start_jitter: f64,
}

impl OptimizerConfig {
    pub fn new(region: LineRegion) -> Self {
        OptimizerConfig {
            lambda1: 0.1,
            lambda2: 0.35,
            lambda3: 1.5,
            threshold: 0.13,
            lr: 2.0,
            epochs: 2000,
            region,
            ref_grad: REFERENCE_GRADIENT,
            max_mode: MaxMode::Hard,
            start_jitter: 0.0,
        }
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<(), OptimizerError> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(OptimizerError::BadConfig(
                "term weights must be non-negative".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < THINNING_LIMIT) {
            return Err(OptimizerError::BadConfig(format!(
                "threshold {} must lie in (0, {THINNING_LIMIT})",
                self.threshold
            )));
        }
        if let MaxMode::Smooth { tau } = self.max_mode {
            if !(tau > 0.0) {
                return Err(OptimizerError::BadConfig(
                    "smooth-max temperature must be positive".into(),
                ));
            }
        }
        if self.start_jitter < 0.0 {
            return Err(OptimizerError::BadConfig(
                "start jitter must be non-negative".into(),
            ));
        }
        self.region.validate(spec)
    }
}

/// Mean squared deviation of the SDF's central-difference gradient (per
/// millimetre) from the reference direction over the box.
pub fn line_regulariser(
    sdf: &ScalarGrid,
    region: &LineRegion,
    ref_grad: (f64, f64),
) -> Result<f64, OptimizerError> {
    region.validate(&sdf.spec)?;
    let values: Vec<f64> = sdf.values.iter().map(|v| *v as f64).collect();
    Ok(line_term(&values, &sdf.spec, region, ref_grad).0)
}

/// Line term plus its gradient with respect to the SDF pixels.
fn line_term(
    sdf: &[f64],
    spec: &GridSpec,
    region: &LineRegion,
    ref_grad: (f64, f64),
) -> (f64, Vec<f64>) {
    let w = spec.width;
    let inv_2s = 1.0 / (2.0 * spec.spacing);
    let m = region.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; sdf.len()];
    for r in region.row0..region.row1 {
        for c in region.col0..region.col1 {
            let gx = (sdf[r * w + c + 1] - sdf[r * w + c - 1]) * inv_2s;
            let gy = (sdf[(r + 1) * w + c] - sdf[(r - 1) * w + c]) * inv_2s;
            let dx = gx - ref_grad.0;
            let dy = gy - ref_grad.1;
            total += dx * dx + dy * dy;
            let cx = 2.0 * dx * inv_2s / m;
            let cy = 2.0 * dy * inv_2s / m;
            grad[r * w + c + 1] += cx;
            grad[r * w + c - 1] -= cx;
            grad[(r + 1) * w + c] += cy;
            grad[(r - 1) * w + c] -= cy;
        }
    }
    (total / m, grad)
}

/// Maximum of `v` under the configured extraction mode, with its gradient
/// scattered into `grad` scaled by `scale`.
fn max_with_grad(v: &[f64], mode: MaxMode, grad: &mut [f64], scale: f64) -> f64 {
    match mode {
        MaxMode::Hard => {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, x) in v.iter().enumerate() {
                if *x > best {
                    best = *x;
                    arg = i;
                }
            }
            if scale != 0.0 {
                grad[arg] += scale;
            }
            best
        }
        MaxMode::Smooth { tau } => {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in v {
                z += ((x - m) / tau).exp();
            }
            if scale != 0.0 {
                for (g, x) in grad.iter_mut().zip(v) {
                    *g += scale * ((x - m) / tau).exp() / z;
                }
            }
            m + tau * z.ln()
        }
    }
}

/// The objective's value split into its terms, plus the extracted maxima.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub thickening_term: f64,
    pub thinning_term: f64,
    pub line_term: f64,
    pub max_thinning: f64,
    pub max_thickening: f64,
}

/// Composite objective on raw f64 pixel buffers, returning the breakdown
/// and the gradients with respect to the field and the SDF.
///
/// L = λ1·|maxThickening| + λ2·max(0, |maxThinning| − threshold) + λ3·line,
/// with maxThinning the (soft)max of the field, maxThickening the
/// (soft)max of its negation, and `line` the regulariser above.
pub fn objective_with_grads(
    field: &[f64],
    sdf: &[f64],
    spec: &GridSpec,
    cfg: &OptimizerConfig,
) -> Result<(ObjectiveBreakdown, Vec<f64>, Vec<f64>), OptimizerError> {
    if field.len() != spec.len() || sdf.len() != spec.len() {
        return Err(OptimizerError::GridMismatch);
    }
    cfg.validate(spec)?;

    let mut dfield = vec![0.0; field.len()];

    // Maximum thickening: peak of the negated field. The |·| wrapper keeps
    // the term meaningful if the softened maximum dips below zero.
    let neg: Vec<f64> = field.iter().map(|v| -v).collect();
    let mut dneg = vec![0.0; field.len()];
    let max_thickening = max_with_grad(&neg, cfg.max_mode, &mut dneg, 1.0);
    let sign_k = if max_thickening > 0.0 {
        1.0
    } else if max_thickening < 0.0 {
        -1.0
    } else {
        0.0
    };
    let thickening_term = cfg.lambda1 * max_thickening.abs();
    for (df, dn) in dfield.iter_mut().zip(&dneg) {
        // d(-field)/d(field) = -1.
        *df -= cfg.lambda1 * sign_k * dn;
    }

    // Hinged thinning penalty.
    let mut dthin = vec![0.0; field.len()];
    let max_thinning = max_with_grad(field, cfg.max_mode, &mut dthin, 1.0);
    let excess = max_thinning.abs() - cfg.threshold;
    let thinning_term = cfg.lambda2 * excess.max(0.0);
    if excess > 0.0 {
        let sign_n = if max_thinning >= 0.0 { 1.0 } else { -1.0 };
        for (df, dt) in dfield.iter_mut().zip(&dthin) {
            *df += cfg.lambda2 * sign_n * dt;
        }
    }

    let (line, mut dsdf) = line_term(sdf, spec, &cfg.region, cfg.ref_grad);
    let line_scaled = cfg.lambda3 * line;
    for g in &mut dsdf {
        *g *= cfg.lambda3;
    }

    let total = thickening_term + thinning_term + line_scaled;
    Ok((
        ObjectiveBreakdown {
            total,
            thickening_term,
            thinning_term,
            line_term: line_scaled,
            max_thinning,
            max_thickening,
        },
        dfield,
        dsdf,
    ))
}

/// Composite objective on grids (field from the image surrogate, SDF from
/// the decoder), without gradients.
pub fn objective_loss(
    field: &ScalarGrid,
    sdf: &ScalarGrid,
    cfg: &OptimizerConfig,
) -> Result<ObjectiveBreakdown, OptimizerError> {
    if field.spec != sdf.spec {
        return Err(OptimizerError::GridMismatch);
    }
    let f: Vec<f64> = field.values.iter().map(|v| *v as f64).collect();
    let s: Vec<f64> = sdf.values.iter().map(|v| *v as f64).collect();
    let (breakdown, _, _) = objective_with_grads(&f, &s, &field.spec, cfg)?;
    Ok(breakdown)
}

/// Pick the training sample with the smallest maximum thickening (ties:
/// lowest id); returns (row id, latent).
pub fn select_start_latent(
    latents: &Array2<f32>,
    max_thickening: &[f64],
) -> Result<(usize, Vec<f32>), OptimizerError> {
    if latents.nrows() == 0 {
        return Err(OptimizerError::NoCandidates);
    }
    if latents.nrows() != max_thickening.len() {
        return Err(OptimizerError::CandidateMismatch {
            latents: latents.nrows(),
            scores: max_thickening.len(),
        });
    }
    let mut best = 0;
    for (i, v) in max_thickening.iter().enumerate() {
        if *v < max_thickening[best] {
            best = i;
        }
    }
    Ok((best, latents.row(best).to_vec()))
}

/// Everything one optimization run produced: per-epoch history including
/// the initial state, the final latent and its extracted contour, and the
/// oracle verdict once [`validate`] fills it in.
#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    pub losses: Vec<f64>,
    pub max_thinnings: Vec<f64>,
    pub max_thickenings: Vec<f64>,
    pub final_latent: Vec<f32>,
    pub final_contour: Option<Contour>,
    /// Set when a non-finite loss stopped the run at that epoch.
    pub aborted_at: Option<usize>,
    pub validation: Option<ValidationOutcome>,
}

impl OptimizationTrace {
    /// Comma-separated rendering of the per-epoch history.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,max_thinning,max_thickening\n");
        for (i, ((l, tn), tk)) in self
            .losses
            .iter()
            .zip(&self.max_thinnings)
            .zip(&self.max_thickenings)
            .enumerate()
        {
            out.push_str(&format!("{i},{l:.9},{tn:.9},{tk:.9}\n"));
        }
        out
    }
}

/// Run Adam on the latent only, decoder and surrogate frozen, recording
/// the objective and the predicted maxima at the start and after every
/// epoch. Deterministic per seed; the seed drives only the optional start
/// perturbation.
pub fn optimise(
    start: &[f32],
    decoder: &mut AutoDecoder<f32>,
    net: &mut MaskResSEUNet<f32>,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<OptimizationTrace, OptimizerError> {
    if decoder.spec != net.spec {
        return Err(OptimizerError::SpecMismatch);
    }
    let spec = decoder.spec;
    cfg.validate(&spec)?;
    if start.len() != LATENT_DIM {
        return Err(OptimizerError::Nn(NnError::LatentLength {
            expected: LATENT_DIM,
            got: start.len(),
        }));
    }

    let mut z0 = start.to_vec();
    if cfg.start_jitter > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.start_jitter).expect("positive jitter");
        for v in &mut z0 {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let mut z = Param::new(
        "latent",
        ArrayD::from_shape_vec(IxDyn(&[LATENT_DIM]), z0).unwrap(),
    );
    let mut adam = Adam::new(cfg.lr);

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut max_thinnings = Vec::with_capacity(cfg.epochs + 1);
    let mut max_thickenings = Vec::with_capacity(cfg.epochs + 1);
    let mut aborted_at = None;

    let sdf_scale = crate::decoder::SDF_SCALE;
    for epoch in 0..=cfg.epochs {
        let zm = Array2::from_shape_vec(
            (1, LATENT_DIM),
            z.value.as_slice().unwrap().to_vec(),
        )
        .unwrap();
        let s = decoder.forward_batch(&zm, false)?;
        let field = net.forward_scaled(&s, false)?;

        let field64: Vec<f64> = field.iter().map(|v| *v as f64).collect();
        let sdf64: Vec<f64> = s.iter().map(|v| *v as f64 * sdf_scale).collect();
        let (breakdown, dfield, dsdf) =
            objective_with_grads(&field64, &sdf64, &spec, cfg)?;

        losses.push(breakdown.total);
        max_thinnings.push(breakdown.max_thinning);
        max_thickenings.push(breakdown.max_thickening);
        if !breakdown.total.is_finite() {
            aborted_at = Some(epoch);
            break;
        }
        if epoch == cfg.epochs {
            break;
        }

        decoder.zero_grads();
        net.zero_grads();
        let dims = IxDyn(&[1, 1, spec.height, spec.width]);
        let dfield_t =
            ArrayD::from_shape_vec(dims.clone(), dfield.iter().map(|v| *v as f32).collect())
                .unwrap();
        let ds_net = net.backward_scaled(&dfield_t)?;
        // The SDF handed to the objective is scale·s, so its gradient
        // reaches the raw decoder output multiplied by the scale.
        let ds_line = ArrayD::from_shape_vec(
            dims,
            dsdf.iter().map(|v| (*v * sdf_scale) as f32).collect(),
        )
        .unwrap();
        let ds = &ds_net + &ds_line;
        let dz = decoder.backward_batch(&ds)?;

        z.grad.fill(0.0);
        z.grad
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(dz.as_slice().unwrap());
        adam.step(&mut [&mut z])?;
    }

    let final_latent: Vec<f32> = z.value.iter().copied().collect();
    let final_sdf = decoder.decode(&final_latent)?;
    let final_contour = extract_contour(&final_sdf, 0.0).ok();

    Ok(OptimizationTrace {
        losses,
        max_thinnings,
        max_thickenings,
        final_latent,
        final_contour,
        aborted_at,
        validation: None,
    })
}

/// The oracle's verdict on a decoded design.
#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub passed: bool,
    pub reason: String,
    pub result: Option<ThinningResult>,
}

/// Judge a decoded SDF: extract its zero level set, re-rasterize (guarding
/// against decoder artifacts away from the surface), run the forming
/// simulator, and check the manufacturability criteria inclusively.
pub fn validate_grid(
    sdf: &ScalarGrid,
    oracle_cfg: &OracleConfig,
) -> Result<ValidationOutcome, OptimizerError> {
    let contour = match extract_contour(sdf, 0.0) {
        Ok(c) => c,
        Err(GridError::EmptyLevelSet) => {
            return Ok(ValidationOutcome {
                passed: false,
                reason: "empty level set: the decoded SDF has no zero crossing".into(),
                result: None,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let clean = rasterize_sdf(&contour, &sdf.spec)?;
    let result = simulate(&clean, oracle_cfg)?;
    let passed = result.criteria_met();
    let reason = if passed {
        format!(
            "criteria met: max thinning {:.6} <= {THINNING_LIMIT}, max thickening {:.6} <= {THICKENING_LIMIT}",
            result.max_thinning, result.max_thickening
        )
    } else {
        let mut parts = Vec::new();
        if result.max_thinning > THINNING_LIMIT {
            parts.push(format!(
                "max thinning {:.6} > {THINNING_LIMIT}",
                result.max_thinning
            ));
        }
        if result.max_thickening > THICKENING_LIMIT {
            parts.push(format!(
                "max thickening {:.6} > {THICKENING_LIMIT}",
                result.max_thickening
            ));
        }
        parts.join("; ")
    };
    Ok(ValidationOutcome {
        passed,
        reason,
        result: Some(result),
    })
}

/// Decode a latent and judge it with [`validate_grid`].
pub fn validate(
    latent: &[f32],
    decoder: &mut AutoDecoder<f32>,
    oracle_cfg: &OracleConfig,
) -> Result<ValidationOutcome, OptimizerError> {
    let sdf = decoder.decode(latent)?;
    validate_grid(&sdf, oracle_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{train_autodecoder, DecoderConfig, DecoderTrainConfig};
    use crate::geometry::Vec2;
    use crate::grid::GridKind;
    use crate::oracle::OracleSite;
    use crate::unet::UnetConfig;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn mini_spec() -> GridSpec {
        GridSpec::new(8, 16, Vec2::new(0.5, 0.5), 2.0).unwrap()
    }

    fn mini_region() -> LineRegion {
        LineRegion {
            row0: 2,
            row1: 6,
            col0: 2,
            col1: 14,
        }
    }

    fn planar_sdf(spec: GridSpec, gx: f64, gy: f64) -> ScalarGrid {
        let mut g = ScalarGrid::filled(spec, GridKind::Sdf, 0.0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                let p = spec.pixel_center(r, c);
                *g.at_mut(r, c) = (gx * p.x + gy * p.y - 20.0) as f32;
            }
        }
        g
    }

    #[test]
    fn line_regulariser_matches_hand_values() {
        let spec = mini_spec();
        let region = mini_region();
        let (rx, ry) = REFERENCE_GRADIENT;

        // A plane with exactly the reference gradient scores zero.
        let aligned = planar_sdf(spec, rx, ry);
        assert_abs_diff_eq!(
            line_regulariser(&aligned, &region, REFERENCE_GRADIENT).unwrap(),
            0.0,
            epsilon = 1e-8
        );

        // Flipping the y component costs (2·0.9982)² at every pixel
        // (tolerance limited by f32 pixel storage).
        let flipped = planar_sdf(spec, rx, -ry);
        assert_abs_diff_eq!(
            line_regulariser(&flipped, &region, REFERENCE_GRADIENT).unwrap(),
            (2.0 * ry) * (2.0 * ry),
            epsilon = 1e-5
        );

        // A constant SDF has zero gradient, so the deviation is the squared
        // norm of the reference direction itself.
        let flat = ScalarGrid::filled(spec, GridKind::Sdf, 3.0);
        assert_abs_diff_eq!(
            line_regulariser(&flat, &region, REFERENCE_GRADIENT).unwrap(),
            rx * rx + ry * ry,
            epsilon = 1e-12
        );

        // Boxes touching the border or inverted are rejected.
        for bad in [
            LineRegion {
                row0: 0,
                row1: 4,
                col0: 2,
                col1: 6,
            },
            LineRegion {
                row0: 2,
                row1: 8,
                col0: 2,
                col1: 6,
            },
            LineRegion {
                row0: 4,
                row1: 4,
                col0: 2,
                col1: 6,
            },
        ] {
            assert!(matches!(
                line_regulariser(&aligned, &bad, REFERENCE_GRADIENT),
                Err(OptimizerError::BadLineRegion(_))
            ));
        }
    }

    #[test]
    fn objective_terms_match_hand_arithmetic() {
        let spec = mini_spec();
        let mut cfg = OptimizerConfig::new(mini_region());
        cfg.lambda3 = 0.0; // isolate the max terms first

        // Thinning exactly at the threshold, nothing negative: both field
        // terms vanish.
        let mut field = ScalarGrid::filled(spec, GridKind::ThinningField, 0.0);
        *field.at_mut(3, 3) = 0.13;
        let sdf = planar_sdf(spec, REFERENCE_GRADIENT.0, REFERENCE_GRADIENT.1);
        let b = objective_loss(&field, &sdf, &cfg).unwrap();
        assert_abs_diff_eq!(b.total, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(b.max_thinning, 0.13, epsilon = 1e-6);

        // Thickening 0.2 → λ1·0.2 = 0.02.
        let mut field = ScalarGrid::filled(spec, GridKind::ThinningField, 0.0);
        *field.at_mut(3, 3) = -0.2;
        let b = objective_loss(&field, &sdf, &cfg).unwrap();
        assert_abs_diff_eq!(b.thickening_term, 0.02, epsilon = 1e-7);
        assert_abs_diff_eq!(b.thinning_term, 0.0, epsilon = 1e-12);

        // Thinning 0.18 → hinge 0.05 → λ2·0.05 = 0.0175.
        let mut field = ScalarGrid::filled(spec, GridKind::ThinningField, 0.0);
        *field.at_mut(2, 5) = 0.18;
        let b = objective_loss(&field, &sdf, &cfg).unwrap();
        assert_abs_diff_eq!(b.thinning_term, 0.0175, epsilon = 1e-7);

        // With the line weight restored, the aligned plane adds nothing.
        cfg.lambda3 = 1.5;
        let b2 = objective_loss(&field, &sdf, &cfg).unwrap();
        assert_abs_diff_eq!(b2.total, b.total, epsilon = 1e-6);
    }

    #[test]
    fn hard_max_ignores_values_strictly_below_the_peak() {
        let spec = mini_spec();
        let cfg = OptimizerConfig::new(mini_region());
        let sdf = planar_sdf(spec, 0.3, 0.8);
        let mut field = ScalarGrid::filled(spec, GridKind::ThinningField, 0.01);
        *field.at_mut(4, 4) = 0.2;
        *field.at_mut(5, 9) = -0.12;
        let before = objective_loss(&field, &sdf, &cfg).unwrap();
        // Shuffle everything strictly below the peaks.
        let mut bumped = field.clone();
        *bumped.at_mut(1, 1) = 0.19;
        *bumped.at_mut(6, 2) = -0.11;
        let after = objective_loss(&bumped, &sdf, &cfg).unwrap();
        assert_eq!(before.total.to_bits(), after.total.to_bits());
    }

    #[test]
    fn smooth_mode_gradients_match_central_differences() {
        let spec = mini_spec();
        let mut cfg = OptimizerConfig::new(mini_region());
        cfg.max_mode = MaxMode::Smooth { tau: 0.05 };

        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = spec.len();
        let field: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let sdf: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();

        let (_, dfield, dsdf) = objective_with_grads(&field, &sdf, &spec, &cfg).unwrap();
        let value = |f: &[f64], s: &[f64]| {
            objective_with_grads(f, s, &spec, &cfg).unwrap().0.total
        };

        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut up = field.clone();
            up[i] += h;
            let mut down = field.clone();
            down[i] -= h;
            let num = (value(&up, &sdf) - value(&down, &sdf)) / (2.0 * h);
            let rel = (num - dfield[i]).abs() / num.abs().max(dfield[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        for i in 0..n {
            let mut up = sdf.to_vec();
            up[i] += h;
            let mut down = sdf.to_vec();
            down[i] -= h;
            let num = (value(&field, &up) - value(&field, &down)) / (2.0 * h);
            let rel = (num - dsdf[i]).abs() / num.abs().max(dsdf[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-3, "worst rel err {worst}");
    }

    #[test]
    fn start_selection_takes_the_lowest_thickening_then_the_lowest_id() {
        let latents = Array2::from_shape_fn((3, LATENT_DIM), |(i, j)| (i * 100 + j) as f32);
        let (id, z) = select_start_latent(&latents, &[0.2, 0.05, 0.3]).unwrap();
        assert_eq!(id, 1);
        assert_eq!(z[0], 100.0);
        let (id, _) = select_start_latent(&latents, &[0.1, 0.1, 0.4]).unwrap();
        assert_eq!(id, 0);
        let single = Array2::zeros((1, LATENT_DIM));
        assert_eq!(select_start_latent(&single, &[0.5]).unwrap().0, 0);
        assert!(matches!(
            select_start_latent(&Array2::<f32>::zeros((0, LATENT_DIM)), &[]),
            Err(OptimizerError::NoCandidates)
        ));
        assert!(matches!(
            select_start_latent(&single, &[0.1, 0.2]),
            Err(OptimizerError::CandidateMismatch { .. })
        ));
    }

    fn circle_grid(spec: GridSpec, cx: f64, cy: f64, radius: f64) -> ScalarGrid {
        let mut g = ScalarGrid::filled(spec, GridKind::Sdf, 0.0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                let p = spec.pixel_center(r, c);
                let d = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() - radius;
                *g.at_mut(r, c) = d as f32;
            }
        }
        g
    }

    /// A tiny trained decoder + untrained surrogate for optimisation tests.
    fn tiny_models() -> (AutoDecoder<f32>, MaskResSEUNet<f32>, GridSpec) {
        let spec = GridSpec::new(40, 40, Vec2::new(0.5, 0.5), 4.0).unwrap();
        let shapes = vec![
            circle_grid(spec, 80.0, 80.0, 40.0),
            circle_grid(spec, 75.0, 85.0, 50.0),
        ];
        let dcfg = DecoderConfig::new(spec, 8);
        let tcfg = DecoderTrainConfig {
            epochs: 60,
            batch_size: 2,
            lr: 5e-3,
            seed: 11,
            ..Default::default()
        };
        let (decoder, _, _) = train_autodecoder(&shapes, &dcfg, &tcfg).unwrap();
        let ucfg = UnetConfig::new(spec, 1);
        let net = MaskResSEUNet::new(&ucfg, &mut ChaCha12Rng::seed_from_u64(3)).unwrap();
        (decoder, net, spec)
    }

    #[test]
    fn zero_epochs_returns_the_start_unchanged_and_runs_never_touch_weights() {
        let (mut decoder, mut net, _spec) = tiny_models();
        let region = LineRegion {
            row0: 30,
            row1: 36,
            col0: 4,
            col1: 36,
        };
        let mut cfg = OptimizerConfig::new(region);
        cfg.epochs = 0;
        let start = vec![0.01f32; LATENT_DIM];
        let trace = optimise(&start, &mut decoder, &mut net, &cfg, 7).unwrap();
        assert_eq!(trace.losses.len(), 1);
        assert_eq!(trace.final_latent, start);
        assert!(trace.aborted_at.is_none());

        // A short real run must leave every weight bit untouched.
        let checksum = |d: &mut AutoDecoder<f32>, n: &mut MaskResSEUNet<f32>| -> u64 {
            let mut acc = 0u64;
            for p in d.params_mut() {
                for v in p.value.iter() {
                    acc = acc.rotate_left(1) ^ v.to_bits() as u64;
                }
            }
            for p in n.params_mut() {
                for v in p.value.iter() {
                    acc = acc.rotate_left(1) ^ v.to_bits() as u64;
                }
            }
            acc
        };
        let before = checksum(&mut decoder, &mut net);
        cfg.epochs = 3;
        let trace = optimise(&start, &mut decoder, &mut net, &cfg, 7).unwrap();
        assert_eq!(trace.losses.len(), 4);
        assert_eq!(before, checksum(&mut decoder, &mut net));

        // Determinism: same seed, same trace; jitter separates seeds.
        let again = optimise(&start, &mut decoder, &mut net, &cfg, 7).unwrap();
        assert_eq!(trace.losses, again.losses);
        assert_eq!(trace.final_latent, again.final_latent);
        cfg.start_jitter = 0.05;
        let a = optimise(&start, &mut decoder, &mut net, &cfg, 1).unwrap();
        let b = optimise(&start, &mut decoder, &mut net, &cfg, 2).unwrap();
        assert_ne!(a.final_latent, b.final_latent);
    }

    #[test]
    fn validation_reruns_the_simulator_on_the_cleaned_shape() {
        let spec = GridSpec::new(40, 40, Vec2::new(0.5, 0.5), 4.0).unwrap();
        let sdf = circle_grid(spec, 80.0, 80.0, 40.0);

        // Four in-grid sites (two per sign), all gentle → criteria met.
        let site = |cx: f64, cy: f64, sign: f64, alpha: f64| OracleSite {
            center: Vec2::new(cx, cy),
            sigma: 25.0,
            sign,
            probe: Vec2::new(80.0, 80.0),
            alpha,
            beta: 0.0,
        };
        let ok_cfg = OracleConfig {
            sites: vec![
                site(95.0, 95.0, 1.0, 0.05),
                site(95.0, 65.0, 1.0, 0.04),
                site(60.0, 60.0, -1.0, 0.03),
                site(60.0, 100.0, -1.0, 0.02),
            ],
            clamp: (0.0, 0.5),
        };
        let out = validate_grid(&sdf, &ok_cfg).unwrap();
        assert!(out.passed, "{}", out.reason);
        assert!(out.reason.contains("criteria met"));
        assert!(out.result.is_some());

        // Cranking one thinning site over the limit flips the verdict.
        let bad_cfg = OracleConfig {
            sites: vec![
                site(95.0, 95.0, 1.0, 0.4),
                site(95.0, 65.0, 1.0, 0.04),
                site(60.0, 60.0, -1.0, 0.03),
                site(60.0, 100.0, -1.0, 0.02),
            ],
            clamp: (0.0, 0.5),
        };
        let out = validate_grid(&sdf, &bad_cfg).unwrap();
        assert!(!out.passed);
        assert!(out.reason.contains("max thinning"));

        // No zero crossing at all → a failed outcome, not an error.
        let flat = ScalarGrid::filled(spec, GridKind::Sdf, 5.0);
        let out = validate_grid(&flat, &ok_cfg).unwrap();
        assert!(!out.passed);
        assert!(out.reason.contains("empty level set"));
        assert!(out.result.is_none());
    }
}
