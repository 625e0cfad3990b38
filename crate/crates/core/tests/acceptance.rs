//! Acceptance suite: one test per shipped guarantee, each printing a
//! single `[PASS]` line with its measured numbers (visible under
//! `--nocapture`) and asserting its wall-clock budget.
//!
//! The heavyweight desk-scale artifacts (dataset, decoder, surrogates)
//! are built once and shared; their build times are recorded so every
//! criterion charges the stages it actually depends on, independent of
//! test execution order.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use blankopt_core::config::Config;
use blankopt_core::decoder::{interpolate_latents, AutoDecoder, LATENT_DIM};
use blankopt_core::geometry::{Contour, SegTag, Vec2};
use blankopt_core::grid::{
    augment_flips, extract_contours, flip, rasterize_sdf, FlipAxis, GridKind, GridSpec, ScalarGrid,
};
use blankopt_core::manifest::SplitTag;
use blankopt_core::metrics::EvalReport;
use blankopt_core::nn::layers::{Layer, ResSeBlock};
use blankopt_core::nn::{grad_check_max_rel_err, loss_composite};
use blankopt_core::optimizer::{
    line_regulariser, objective_with_grads, select_start_latent, LineRegion, MaxMode,
    OptimizationTrace, OptimizerConfig, REFERENCE_GRADIENT,
};
use blankopt_core::pipeline::{
    stage_evaluate, stage_infer_latents, stage_optimize, stage_sample, stage_simulate,
    stage_train_autodecoder, stage_train_iaism, stage_train_saism, RunPaths,
};
use blankopt_core::sampling::lhs;
use blankopt_core::surrogate::{KrigingModel, RbfModel, KRIGING_DEFAULT_NUGGET};
use blankopt_core::unet::{encoder_dims, MaskResSEUNet, UnetConfig};

fn budget(elapsed: Duration, limit_s: u64, what: &str) {
    assert!(
        elapsed <= Duration::from_secs(limit_s),
        "{what} took {elapsed:?}, budget {limit_s} s"
    );
}

// ---------------------------------------------------------------------------
// 1. SDF rasterization agrees with brute-force point-to-polygon distance.

/// Signed distance to a polygon: min segment distance, sign by winding
/// (even-odd ray casting), computed with no shared code with the library.
fn brute_force_sdf(poly: &[Vec2], p: Vec2) -> f64 {
    let n = poly.len();
    let mut dist = f64::INFINITY;
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        // Segment distance.
        let (abx, aby) = (b.x - a.x, b.y - a.y);
        let (apx, apy) = (p.x - a.x, p.y - a.y);
        let len2 = abx * abx + aby * aby;
        let t = if len2 > 0.0 {
            ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (a.x + t * abx - p.x, a.y + t * aby - p.y);
        dist = dist.min((cx * cx + cy * cy).sqrt());
        // Even-odd crossing test.
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

/// A random star-shaped (hence simple) polygon around `center`.
fn random_polygon(rng: &mut ChaCha12Rng, center: Vec2) -> Vec<Vec2> {
    let sides = rng.random_range(5..14usize);
    let mut angles: Vec<f64> = (0..sides)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    angles
        .iter()
        .map(|t| {
            let r = rng.random_range(6.0..28.0);
            Vec2::new(center.x + r * t.cos(), center.y + r * t.sin())
        })
        .collect()
}

#[test]
fn criterion_01_sdf_rasterization_matches_brute_force() {
    let t0 = Instant::now();
    let spec = GridSpec::new(64, 64, Vec2::new(-32.0, -32.0), 1.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let poly = random_polygon(&mut rng, Vec2::new(0.0, 0.0));
        let contour = Contour {
            points: poly.clone(),
            tags: vec![SegTag::Fixed; poly.len()],
        };
        let grid = rasterize_sdf(&contour, &spec).unwrap();
        for r in 0..spec.height {
            for c in 0..spec.width {
                let reference = brute_force_sdf(&poly, spec.pixel_center(r, c));
                worst = worst.max((grid.at(r, c) as f64 - reference).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "worst |diff| {worst} mm > 1e-6 mm");
    budget(t0.elapsed(), 5, "criterion 1");
    println!(
        "[PASS] criterion 1: rasterized SDF within {worst:.3e} mm of brute force over 20 polygons ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 2. Scalar surrogates reproduce their training targets exactly.

#[test]
fn criterion_02_scalar_surrogates_interpolate_training_data() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(50);
    let mut worst_rbf = 0.0f64;
    let mut worst_krig = 0.0f64;
    for round in 0..50 {
        let n = rng.random_range(3..=64usize);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..25).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tol = 1e-6 * (y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0);

        let rbf = RbfModel::fit(&x, &y).unwrap();
        let krig = KrigingModel::fit(&x, &y, KRIGING_DEFAULT_NUGGET, 99 + round).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let er = (rbf.predict(xi).unwrap() - yi).abs();
            let ek = (krig.predict(xi).unwrap() - yi).abs();
            assert!(er <= tol, "RBF miss {er} > {tol} (n = {n})");
            assert!(ek <= tol, "Kriging miss {ek} > {tol} (n = {n})");
            worst_rbf = worst_rbf.max(er);
            worst_krig = worst_krig.max(ek);
        }
    }
    budget(t0.elapsed(), 30, "criterion 2");
    println!(
        "[PASS] criterion 2: 50 datasets reproduced (worst RBF {worst_rbf:.2e}, Kriging {worst_krig:.2e}) ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 3. Latin hypercube stratification is exact.

#[test]
fn criterion_03_lhs_fills_every_bin_once() {
    let t0 = Instant::now();
    for &n in &[4usize, 16, 64] {
        for d in [1usize, 5, 9] {
            let pts = lhs(n, d, 7 + n as u64);
            for dim in 0..d {
                let mut counts = vec![0usize; n];
                for p in &pts {
                    let bin = ((p[dim] * n as f64) as usize).min(n - 1);
                    counts[bin] += 1;
                }
                assert!(
                    counts.iter().all(|c| *c == 1),
                    "n = {n}, dim {dim}: bins {counts:?}"
                );
            }
        }
    }
    budget(t0.elapsed(), 1, "criterion 3");
    println!(
        "[PASS] criterion 3: one sample per bin for n in {{4, 16, 64}} ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 4. Architecture arithmetic at full scale; identity dims at desk scale.

#[test]
fn criterion_04_image_surrogate_dimension_arithmetic() {
    let t0 = Instant::now();
    let paper = GridSpec::paper();
    let dims = encoder_dims(&paper).unwrap();
    assert_eq!(
        dims,
        vec![
            (305, 560),
            (152, 560),
            (76, 280),
            (38, 140),
            (19, 70),
            (10, 35)
        ],
        "encoder pyramid at (610, 1120)"
    );

    let desk = GridSpec::desk();
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut net = MaskResSEUNet::<f32>::new(&UnetConfig::new(desk, 1), &mut rng).unwrap();
    let sdf = ScalarGrid::filled(desk, GridKind::Sdf, -3.0);
    let field = net.predict_field(&sdf).unwrap();
    assert_eq!(
        (field.spec.height, field.spec.width),
        (152, 280),
        "forward at desk scale must return the input resolution"
    );
    budget(t0.elapsed(), 10, "criterion 4");
    println!(
        "[PASS] criterion 4: encoder dims {dims:?}; desk forward returns (152, 280) ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 5. The mask connection zeroes the output outside the blank, bitwise.

#[test]
fn criterion_05_mask_is_bitwise_exact() {
    let t0 = Instant::now();
    let spec = GridSpec::new(40, 40, Vec2::new(0.0, 0.0), 2.0).unwrap();
    for seed in 0..10u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + seed);
        let mut net = MaskResSEUNet::<f32>::new(&UnetConfig::new(spec, 1), &mut rng).unwrap();
        let mut sdf = ScalarGrid::filled(spec, GridKind::Sdf, 0.0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                *sdf.at_mut(r, c) = rng.random_range(-10.0f32..10.0);
            }
        }
        let field = net.predict_field(&sdf).unwrap();
        let mut zeros = 0usize;
        for r in 0..spec.height {
            for c in 0..spec.width {
                if sdf.at(r, c) >= 0.0 {
                    zeros += 1;
                    assert_eq!(
                        field.at(r, c).to_bits(),
                        0.0f32.to_bits(),
                        "seed {seed}: pixel ({r}, {c}) outside the blank is not literal zero"
                    );
                }
            }
        }
        assert!(zeros > 100, "degenerate mask test: only {zeros} exterior pixels");
    }
    budget(t0.elapsed(), 10, "criterion 5");
    println!(
        "[PASS] criterion 5: output bitwise zero outside the blank for 10 random nets ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 6. Gradient checks against central differences.

#[test]
fn criterion_06_gradients_match_central_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(6);

    // Composite training loss (pixel MSE minus cosine similarity).
    let shape = IxDyn(&[2, 1, 8, 16]);
    let gt = ArrayD::from_shape_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
    let x0 = ArrayD::from_shape_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
    let (_, analytic) = loss_composite(&x0, &gt, 1.0f64, 0.2).unwrap();
    let gt2 = gt.clone();
    let err_loss = grad_check_max_rel_err(
        move |x| loss_composite(x, &gt2, 1.0f64, 0.2).unwrap().0,
        &x0,
        &analytic,
        1e-6,
    );
    assert!(err_loss <= 1e-4, "composite loss gradient rel err {err_loss}");

    // Res-SE block input gradient (f64).
    let mut block = ResSeBlock::<f64>::new("acc", 4, 16, &mut rng);
    let xin = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8, 16]), |_| rng.random_range(-1.0..1.0));
    let weights = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8, 16]), |_| rng.random_range(-1.0..1.0));
    let out = block.forward(&xin, true).unwrap();
    for p in block.params_mut() {
        p.zero_grad();
    }
    let din = block.backward(&weights).unwrap();
    assert_eq!(out.shape(), xin.shape());
    let mut block2 = block;
    let w2 = weights.clone();
    let err_rse = grad_check_max_rel_err(
        move |x| (&block2.forward(x, true).unwrap() * &w2).sum(),
        &xin,
        &din,
        1e-3,
    );
    assert!(err_rse <= 1e-4, "Res-SE input gradient rel err {err_rse}");

    // Line regulariser on an 8x16 spec.
    let spec = GridSpec::new(8, 16, Vec2::new(0.0, 0.0), 2.0).unwrap();
    let region = LineRegion {
        row0: 2,
        row1: 6,
        col0: 2,
        col1: 14,
    };
    let mut cfg = OptimizerConfig::new(region);
    cfg.max_mode = MaxMode::Smooth { tau: 0.05 };
    let n = spec.len();
    let field0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    let sdf0: Vec<f64> = (0..n).map(|_| rng.random_range(-25.0..25.0)).collect();

    let line_only = |s: &ArrayD<f64>| {
        let mut grid = ScalarGrid::filled(spec, GridKind::Sdf, 0.0);
        grid.values
            .iter_mut()
            .zip(s.iter())
            .for_each(|(v, x)| *v = *x as f32);
        line_regulariser(&grid, &region, REFERENCE_GRADIENT).unwrap()
    };
    // The f32 pixel storage in the grid-facing wrapper quantizes FD
    // probes, so verify the line term through the f64 objective core
    // (lambda1 = lambda2 = 0 isolates it).
    let mut line_cfg = cfg.clone();
    line_cfg.lambda1 = 0.0;
    line_cfg.lambda2 = 0.0;
    line_cfg.lambda3 = 1.0;
    let (_, _, dsdf_line) = objective_with_grads(&field0, &sdf0, &spec, &line_cfg).unwrap();
    let sdf_arr = ArrayD::from_shape_vec(IxDyn(&[n]), sdf0.clone()).unwrap();
    let analytic_line = ArrayD::from_shape_vec(IxDyn(&[n]), dsdf_line).unwrap();
    let f0 = field0.clone();
    let err_line = grad_check_max_rel_err(
        move |s| {
            objective_with_grads(&f0, s.as_slice().unwrap(), &spec, &line_cfg)
                .unwrap()
                .0
                .total
        },
        &sdf_arr,
        &analytic_line,
        1e-6,
    );
    assert!(err_line <= 1e-4, "line regulariser gradient rel err {err_line}");
    // The grid-facing wrapper agrees with the core at the same point.
    let wrapper_val = line_only(&sdf_arr);
    let (core, _, _) = objective_with_grads(&field0, &sdf0, &spec, &line_cfg).unwrap();
    assert!(
        (wrapper_val - core.line_term).abs() <= 1e-4 * core.line_term.abs().max(1.0),
        "wrapper {wrapper_val} vs core {}",
        core.line_term
    );

    // Full objective in smooth-max mode: both input gradients.
    let (_, dfield, dsdf) = objective_with_grads(&field0, &sdf0, &spec, &cfg).unwrap();
    let field_arr = ArrayD::from_shape_vec(IxDyn(&[n]), field0.clone()).unwrap();
    let sdf_c = sdf0.clone();
    let cfg_f = cfg.clone();
    let err_obj_field = grad_check_max_rel_err(
        move |f| {
            objective_with_grads(f.as_slice().unwrap(), &sdf_c, &spec, &cfg_f)
                .unwrap()
                .0
                .total
        },
        &field_arr,
        &ArrayD::from_shape_vec(IxDyn(&[n]), dfield).unwrap(),
        1e-6,
    );
    let field_c = field0.clone();
    let cfg_s = cfg.clone();
    let err_obj_sdf = grad_check_max_rel_err(
        move |s| {
            objective_with_grads(&field_c, s.as_slice().unwrap(), &spec, &cfg_s)
                .unwrap()
                .0
                .total
        },
        &sdf_arr,
        &ArrayD::from_shape_vec(IxDyn(&[n]), dsdf).unwrap(),
        1e-6,
    );
    let err_obj = err_obj_field.max(err_obj_sdf);
    assert!(err_obj <= 1e-3, "objective gradient rel err {err_obj}");

    budget(t0.elapsed(), 60, "criterion 6");
    println!(
        "[PASS] criterion 6: gradients match central differences (loss {err_loss:.1e}, Res-SE {err_rse:.1e}, line {err_line:.1e}, objective {err_obj:.1e}) ({:.2?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 7. Flip augmentation algebra and fourfold expansion.

#[test]
fn criterion_07_flip_augmentation_is_exact() {
    let t0 = Instant::now();
    let spec = GridSpec::new(9, 17, Vec2::new(0.0, 0.0), 1.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let random_grid = |rng: &mut ChaCha12Rng, kind| {
        let mut g = ScalarGrid::filled(spec, kind, 0.0);
        for v in g.values.iter_mut() {
            *v = rng.random_range(-4.0f32..4.0);
        }
        g
    };

    // Involution and composition, bitwise.
    for _ in 0..8 {
        let g = random_grid(&mut rng, GridKind::Sdf);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical, FlipAxis::Both] {
            let round_trip = flip(&flip(&g, axis), axis);
            assert_eq!(round_trip.values, g.values, "{axis:?} must be an involution");
        }
        let hv = flip(&flip(&g, FlipAxis::Horizontal), FlipAxis::Vertical);
        assert_eq!(
            hv.values,
            flip(&g, FlipAxis::Both).values,
            "horizontal then vertical must equal the double flip"
        );
    }

    // 256 pairs expand to exactly 1024, originals first, all consistent.
    let pairs: Vec<(ScalarGrid, ScalarGrid)> = (0..256)
        .map(|_| {
            (
                random_grid(&mut rng, GridKind::Sdf),
                random_grid(&mut rng, GridKind::ThinningField),
            )
        })
        .collect();
    let expanded = augment_flips(&pairs);
    assert_eq!(expanded.len(), 1024, "fourfold expansion");
    for (i, (s, f)) in pairs.iter().enumerate() {
        assert_eq!(expanded[i].0.values, s.values);
        assert_eq!(expanded[i].1.values, f.values);
    }
    for (s, f) in &expanded {
        assert_eq!(s.kind, GridKind::Sdf);
        assert_eq!(f.kind, GridKind::ThinningField);
    }
    budget(t0.elapsed(), 5, "criterion 7");
    println!(
        "[PASS] criterion 7: flips are involutive, compose to the double flip, and 256 -> 1024 ({:.2?})",
        t0.elapsed()
    );
}
