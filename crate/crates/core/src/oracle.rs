//! Deterministic synthetic forming response.
//!
//! Maps a blank's signed-distance field to a thinning field plus its
//! manufacturability maxima. The response is a sum of Gaussian feature
//! sites whose amplitudes are affine in the SDF sampled at fixed probe
//! points, masked to the blank interior:
//!
//! `T(p) = Σ_k s_k · clamp(α_k + β_k · SDF(q′_k)) · exp(−‖p−q_k‖²/(2σ_k²))`
//! for `SDF(p) < 0`, else exactly 0.
//!
//! The shipped default models a blank whose un-trimmed outline carries
//! excess material in the transition corners (thickening/wrinkling risk)
//! and an over-wide top edge (thinning risk): trimming the corner regions
//! and pulling the top edge in relieves both, so the raw reference
//! outline fails the industrial criteria while well-chosen designs pass.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::geometry::Vec2;
use crate::grid::{GridError, GridKind, ScalarGrid};

/// Industrial acceptance thresholds on the field maxima.
pub const THINNING_LIMIT: f64 = 0.15;
pub const THICKENING_LIMIT: f64 = 0.10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("expected an SDF grid, got a thinning field")]
    KindMismatch,
    #[error("oracle needs at least 4 sites (got {0})")]
    TooFewSites(usize),
    #[error("oracle needs at least one {0} site")]
    MissingSign(&'static str),
    #[error("site width must be positive (got {0})")]
    BadWidth(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One Gaussian feature site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSite {
    /// Field center (mm).
    pub center: Vec2,
    /// Gaussian width (mm).
    pub sigma: f64,
    /// +1 thinning, −1 thickening.
    pub sign: f64,
    /// Where the blank SDF is probed for this site's amplitude (mm).
    pub probe: Vec2,
    /// Affine amplitude coefficients: `clamp(alpha + beta * SDF(probe))`.
    pub alpha: f64,
    pub beta: f64,
}

/// Full oracle parameterisation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub sites: Vec<OracleSite>,
    /// Per-site amplitude clamp range.
    pub clamp: (f64, f64),
}

impl Default for OracleConfig {
    /// Eight sites around the five modifiable regions: thinning sites
    /// along the top edge and upper corners plus a broad base lobe,
    /// thickening sites at the four trimmed corners plus two base lobes.
    /// Probes sit inside the blank near each movable boundary section so
    /// the local trim depth modulates the amplitudes.
    fn default() -> Self {
        let site = |cx: f64, cy: f64, sigma: f64, sign: f64, px: f64, py: f64, alpha: f64, beta: f64| {
            OracleSite {
                center: Vec2::new(cx, cy),
                sigma,
                sign,
                probe: Vec2::new(px, py),
                alpha,
                beta,
            }
        };
        OracleConfig {
            sites: vec![
                // Top-edge stretch zone: deeper blank above the probe
                // (larger P0) raises thinning.
                site(550.0, 440.0, 100.0, 1.0, 550.0, 465.0, 0.010, -0.0015),
                // Upper corner stretch zones (regions 2/3).
                site(150.0, 340.0, 80.0, 1.0, 120.0, 360.0, 0.020, -0.0008),
                site(950.0, 340.0, 80.0, 1.0, 980.0, 360.0, 0.020, -0.0008),
                // Broad base thinning lobe (shape-independent).
                site(550.0, 150.0, 140.0, 1.0, 550.0, 100.0, 0.080, 0.0),
                // Lower corner wrinkle zones (regions 4/5): excess corner
                // material (boundary far from the probe) thickens.
                site(180.0, 80.0, 70.0, -1.0, 170.0, 60.0, 0.030, -0.0012),
                site(920.0, 80.0, 70.0, -1.0, 930.0, 60.0, 0.030, -0.0012),
                // Base thickening lobes.
                site(320.0, 180.0, 110.0, -1.0, 320.0, 100.0, 0.050, 0.0),
                site(780.0, 180.0, 110.0, -1.0, 780.0, 100.0, 0.050, 0.0),
            ],
            clamp: (0.0, 0.5),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.sites.len() < 4 {
            return Err(OracleError::TooFewSites(self.sites.len()));
        }
        if !self.sites.iter().any(|s| s.sign > 0.0) {
            return Err(OracleError::MissingSign("thinning"));
        }
        if !self.sites.iter().any(|s| s.sign < 0.0) {
            return Err(OracleError::MissingSign("thickening"));
        }
        for s in &self.sites {
            if !(s.sigma > 0.0) {
                return Err(OracleError::BadWidth(s.sigma));
            }
        }
        Ok(())
    }

    /// Read sites from `[oracle_site_N]` sections (N = 1, 2, …) plus an
    /// optional `[oracle]` clamp; missing sections fall back to the
    /// default configuration.
    pub fn from_config(cfg: &Config) -> Result<Self, OracleError> {
        let mut sites = Vec::new();
        for n in 1.. {
            let section = format!("oracle_site_{n}");
            if !cfg.has_section(&section) {
                break;
            }
            sites.push(OracleSite {
                center: Vec2::new(
                    cfg.get_f64(&section, "center_x")?,
                    cfg.get_f64(&section, "center_y")?,
                ),
                sigma: cfg.get_f64(&section, "sigma")?,
                sign: cfg.get_f64(&section, "sign")?,
                probe: Vec2::new(
                    cfg.get_f64(&section, "probe_x")?,
                    cfg.get_f64(&section, "probe_y")?,
                ),
                alpha: cfg.get_f64(&section, "alpha")?,
                beta: cfg.get_f64(&section, "beta")?,
            });
        }
        let mut out = if sites.is_empty() {
            OracleConfig::default()
        } else {
            OracleConfig {
                sites,
                clamp: (0.0, 0.5),
            }
        };
        if cfg.has_section("oracle") {
            out.clamp = (
                cfg.get_f64_or("oracle", "clamp_lo", out.clamp.0)?,
                cfg.get_f64_or("oracle", "clamp_hi", out.clamp.1)?,
            );
        }
        out.validate()?;
        Ok(out)
    }
}

/// Thinning field plus its manufacturability maxima.
#[derive(Debug, Clone)]
pub struct ThinningResult {
    pub field: ScalarGrid,
    pub max_thinning: f64,
    pub max_thickening: f64,
}

impl ThinningResult {
    pub fn criteria_met(&self) -> bool {
        criteria_met(self.max_thinning, self.max_thickening)
    }
}

pub fn criteria_met(max_thinning: f64, max_thickening: f64) -> bool {
    max_thinning <= THINNING_LIMIT && max_thickening <= THICKENING_LIMIT
}

/// Evaluate the synthetic forming response of one blank SDF.
pub fn simulate(sdf: &ScalarGrid, cfg: &OracleConfig) -> Result<ThinningResult, OracleError> {
    if sdf.kind != GridKind::Sdf {
        return Err(OracleError::KindMismatch);
    }
    cfg.validate()?;
    let amplitudes: Vec<f64> = cfg
        .sites
        .iter()
        .map(|s| {
            let probed = sdf.bilinear(s.probe)?;
            Ok(s.sign * (s.alpha + s.beta * probed).clamp(cfg.clamp.0, cfg.clamp.1))
        })
        .collect::<Result<_, OracleError>>()?;

    let spec = sdf.spec;
    let mut field = ScalarGrid::filled(spec, GridKind::ThinningField, 0.0);
    field
        .values
        .par_chunks_mut(spec.width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                if sdf.values[row * spec.width + col] >= 0.0 {
                    continue;
                }
                let p = spec.pixel_center(row, col);
                let mut t = 0.0;
                for (site, amp) in cfg.sites.iter().zip(&amplitudes) {
                    let d2 = (p - site.center).norm2();
                    t += amp * (-d2 / (2.0 * site.sigma * site.sigma)).exp();
                }
                *v = t as f32;
            }
        });
    let (max_thinning, max_thickening) = maxima(&field);
    Ok(ThinningResult {
        field,
        max_thinning,
        max_thickening,
    })
}

/// Extract (max thinning, max thickening) from a thinning field:
/// the positive peak and the magnitude of the negative peak, floored at 0.
pub fn maxima(field: &ScalarGrid) -> (f64, f64) {
    debug_assert_eq!(field.kind, GridKind::ThinningField);
    let (lo, hi) = field.min_max();
    ((hi as f64).max(0.0), (-(lo as f64)).max(0.0))
}
