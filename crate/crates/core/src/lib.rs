//! Blank-shape surrogate optimization toolkit.
//!
//! The crate models sheet-forming blank outlines as parametric 2-D contours,
//! samples design spaces with constrained Latin hypercube plans, rasterizes
//! designs into signed-distance grids, evaluates them with a deterministic
//! synthetic forming oracle, and learns two kinds of surrogates on top:
//! scalar interpolators (RBF, Kriging) over a learned latent space, and a
//! masked Res-SE U-Net that predicts whole thinning fields from SDF images.
//! A gradient-based optimizer then searches the latent space for blanks that
//! satisfy forming criteria.
//!
//! Modules mirror the pipeline stages:
//!
//! * [`geometry`] — parametric blank outlines and design validation
//! * [`sampling`] — constrained Latin hypercube design-of-experiments
//! * [`grid`] — signed-distance rasterization, contour extraction, grid I/O
//! * [`oracle`] — synthetic forming response (thinning/thickening fields)
//! * [`nn`] — minimal tensor/autodiff substrate (conv, Res-SE, Adam, loss)
//! * [`decoder`] — auto-decoder shape latent space
//! * [`surrogate`] — scalar RBF / Kriging surrogates
//! * [`unet`] — masked Res-SE U-Net image surrogate
//! * [`metrics`] — accuracy metrics and the surrogate comparison report
//! * [`optimizer`] — latent-space design optimization
//! * [`pipeline`] — staged artifact plumbing shared by the CLI

// `!(x > 0.0)` is the deliberate NaN-rejecting form of a positivity guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Multi-value training returns (model, latents, history) are clearer as
// tuples than behind one-off wrapper types.
#![allow(clippy::type_complexity)]

pub mod config;
pub mod decoder;
pub mod geometry;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod optimizer;
pub mod oracle;
pub mod pipeline;
pub mod sampling;
pub mod surrogate;
pub mod unet;
