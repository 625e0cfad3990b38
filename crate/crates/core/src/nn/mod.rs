//! Minimal deterministic neural-network substrate.
//!
//! Static networks assembled from layers with analytic forward and
//! backward passes, a composite regression loss (pixel MSE minus cosine
//! similarity), and bias-corrected Adam. Everything is generic over the
//! float type: `f32` for training, `f64` for finite-difference
//! verification of every backward pass. No graph engine — networks wire
//! their layers explicitly, which keeps execution order (and therefore
//! results) bit-reproducible for a fixed seed.

pub mod ckpt;
pub mod layers;
pub mod ops;

use std::collections::BTreeMap;

use ndarray::{ArrayD, NdFloat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("spatial dims collapse to zero at {0}")]
    DimCollapse(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("no output padding in [0, {stride}) maps {from} to {target}")]
    BadOutputPadding {
        from: usize,
        target: usize,
        stride: usize,
    },
    #[error("latent length {got}, expected {expected}")]
    LatentLength { expected: usize, got: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported {field} {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("short read: expected {expected} bytes, got {got}")]
    ShortRead { expected: usize, got: usize },
    #[error("trailing bytes")]
    TrailingBytes,
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Float type a network can run in: `f32` for training, `f64` for
/// gradient verification.
pub trait Scalar: NdFloat {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast a literal into the active scalar type.
#[inline]
pub fn sc<T: Scalar>(x: f64) -> T {
    T::from(x).expect("float literal cast")
}

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Bias-corrected Adam with lazily created per-parameter state, so a
/// step may touch any subset of parameters (latent-table rows train one
/// batch at a time) without corrupting the others' bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    moments: BTreeMap<String, AdamSlot<T>>,
}

#[derive(Debug, Clone)]
struct AdamSlot<T: Scalar> {
    m: ArrayD<T>,
    v: ArrayD<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: sc(lr),
            beta1: sc(0.9),
            beta2: sc(0.999),
            eps: sc(1e-8),
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter in the slice; moments are
    /// initialized to zero on first sight of a name.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<(), NnError> {
        for p in params.iter_mut() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
            let slot = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| AdamSlot {
                    m: ArrayD::zeros(p.value.raw_dim()),
                    v: ArrayD::zeros(p.value.raw_dim()),
                    t: 0,
                });
            slot.t += 1;
            let (b1, b2) = (self.beta1, self.beta2);
            let bc1 = T::one() - b1.powi(slot.t);
            let bc2 = T::one() - b2.powi(slot.t);
            ndarray::Zip::from(&mut p.value)
                .and(&mut slot.m)
                .and(&mut slot.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

/// Composite regression loss over one field: scaled mean squared error
/// minus scaled cosine similarity. Returns the loss and its gradient
/// with respect to `pred`. A zero-norm side makes the cosine term (and
/// its gradient) exactly 0 instead of a singularity.
pub fn loss_composite<T: Scalar>(
    pred: &ArrayD<T>,
    gt: &ArrayD<T>,
    lambda1: T,
    lambda2: T,
) -> Result<(T, ArrayD<T>), NnError> {
    if pred.shape() != gt.shape() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{:?}", gt.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    let n = sc::<T>(pred.len() as f64);
    let two = sc::<T>(2.0);

    let mut mse = T::zero();
    let mut dot = T::zero();
    let mut pp = T::zero();
    let mut gg = T::zero();
    ndarray::Zip::from(pred).and(gt).for_each(|&p, &g| {
        let d = p - g;
        mse += d * d;
        dot += p * g;
        pp += p * p;
        gg += g * g;
    });
    mse /= n;

    let p_norm = pp.sqrt();
    let g_norm = gg.sqrt();
    let tiny = sc::<T>(1e-24);
    let (cosine, cosine_grad_scale) = if p_norm * g_norm <= tiny {
        (T::zero(), None)
    } else {
        let c = dot / (p_norm * g_norm);
        (c, Some(c))
    };

    let loss = lambda1 * mse - lambda2 * cosine;
    let mut grad = ArrayD::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(gt)
        .for_each(|out, &p, &g| {
            let mut d = lambda1 * two * (p - g) / n;
            if let Some(c) = cosine_grad_scale {
                // d cos/dp = g/(|p||g|) − cos · p/|p|²
                d -= lambda2 * (g / (p_norm * g_norm) - c * p / pp);
            }
            *out = d;
        });
    Ok((loss, grad))
}

/// Batched variant: axis 0 indexes samples; the loss is the mean of the
/// per-sample composite losses and the gradient is stacked accordingly.
pub fn loss_composite_batched<T: Scalar>(
    pred: &ArrayD<T>,
    gt: &ArrayD<T>,
    lambda1: T,
    lambda2: T,
) -> Result<(T, ArrayD<T>), NnError> {
    if pred.shape() != gt.shape() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{:?}", gt.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    let n = pred.shape()[0];
    let scale = sc::<T>(1.0 / n as f64);
    let mut total = T::zero();
    let mut grad = ArrayD::zeros(pred.raw_dim());
    for i in 0..n {
        let p = pred.index_axis(ndarray::Axis(0), i).to_owned().into_dyn();
        let g = gt.index_axis(ndarray::Axis(0), i).to_owned().into_dyn();
        let (l, dl) = loss_composite(&p, &g, lambda1, lambda2)?;
        total += l * scale;
        grad.index_axis_mut(ndarray::Axis(0), i)
            .assign(&(dl * scale));
    }
    Ok((total, grad))
}

/// Maximum relative error between an analytic gradient and a central
/// finite difference of `f` — double precision, used by every backward
/// pass test. Relative error uses `max(|analytic|, |numeric|, floor)`
/// as the denominator.
pub fn grad_check_max_rel_err<F>(
    mut f: F,
    x0: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    step: f64,
) -> f64
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    assert_eq!(x0.shape(), analytic.shape());
    let mut worst = 0.0f64;
    let mut x = x0.clone();
    for idx in 0..x0.len() {
        let orig = x.as_slice_mut().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + step;
        let up = f(&x);
        x.as_slice_mut().unwrap()[idx] = orig - step;
        let down = f(&x);
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.as_slice().unwrap()[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
