//! Network layers with analytic forward/backward passes.
//!
//! Every layer caches what its backward pass needs during forward and
//! ACCUMULATES parameter gradients (callers zero them between steps).
//! Weight init is He-uniform drawn as f64 from a seeded stream and cast
//! to the active scalar type, so f32 and f64 instantiations of the same
//! seed see the same underlying values.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::ops::{col2im, conv_out_dim, im2col, transpose_out_dim};
use super::{sc, NnError, Param, Scalar};

/// A differentiable network stage.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &ArrayD<T>, train: bool) -> Result<ArrayD<T>, NnError>;
    /// Propagate the loss gradient; parameter gradients accumulate into
    /// the layer's `Param`s.
    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError>;
    /// Trainable parameters.
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
    /// Saved-but-untrained state (batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha12Rng) -> ArrayD<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(ndarray::IxDyn(shape), |_| {
        sc(rng.random_range(-bound..bound))
    })
}

fn as4<T: Scalar>(x: &ArrayD<T>, what: &str) -> Result<Array4<T>, NnError> {
    x.as_standard_layout()
        .to_owned()
        .into_dimensionality::<Ix4>()
        .map_err(|_| NnError::ShapeMismatch {
            expected: format!("{what}: 4-d (n, c, h, w)"),
            got: format!("{:?}", x.shape()),
        })
}

fn as2<T: Scalar>(x: &ArrayD<T>, what: &str) -> Result<Array2<T>, NnError> {
    x.as_standard_layout()
        .to_owned()
        .into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeMismatch {
            expected: format!("{what}: 2-d (n, features)"),
            got: format!("{:?}", x.shape()),
        })
}

fn check_channels(name: &str, got: usize, want: usize) -> Result<(), NnError> {
    if got != want {
        return Err(NnError::ShapeMismatch {
            expected: format!("{name}: {want} input channels"),
            got: format!("{got} channels"),
        });
    }
    Ok(())
}

/// Strided 2-D convolution, `(n, in_c, h, w) → (n, out_c, oh, ow)`.
pub struct Conv2d<T: Scalar> {
    pub name: String,
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: (usize, usize),
    pub s: (usize, usize),
    pub p: (usize, usize),
    cache_x: Option<Array4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: (usize, usize),
        s: (usize, usize),
        p: (usize, usize),
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_c * k.0 * k.1;
        Conv2d {
            name: name.to_string(),
            w: Param::new(
                format!("{name}.w"),
                he_uniform(&[out_c, in_c, k.0, k.1], fan_in, rng),
            ),
            b: Param::new(format!("{name}.b"), ArrayD::zeros(ndarray::IxDyn(&[out_c]))),
            in_c,
            out_c,
            k,
            s,
            p,
            cache_x: None,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let oh = conv_out_dim(h, self.k.0, self.s.0, self.p.0);
        let ow = conv_out_dim(w, self.k.1, self.s.1, self.p.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(NnError::DimCollapse(self.name.clone())),
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let x = as4(x, &self.name)?;
        let (n, c, h, w) = x.dim();
        check_channels(&self.name, c, self.in_c)?;
        let (oh, ow) = self.out_dims(h, w)?;
        let cols = im2col(&x, self.k, self.s, self.p, (oh, ow));
        let kk = self.in_c * self.k.0 * self.k.1;
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((self.out_c, kk))
            .unwrap();
        let y2 = w2.dot(&cols);
        let mut y = y2
            .into_shape_with_order((self.out_c, n, oh, ow))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        for (ci, mut sub) in y.axis_iter_mut(Axis(1)).enumerate() {
            let bc = self.b.value[[ci]];
            sub.mapv_inplace(|v| v + bc);
        }
        self.cache_x = Some(x);
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as4(grad_out, &self.name)?;
        let x = self.cache_x.take().expect("forward before backward");
        let (n, _, h, w) = x.dim();
        let (_, oc, oh, ow) = g.dim();
        let cols = im2col(&x, self.k, self.s, self.p, (oh, ow));
        let g2 = g
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((oc, n * oh * ow))
            .unwrap();
        let kk = self.in_c * self.k.0 * self.k.1;
        let dw = g2.dot(&cols.t());
        self.w.grad += &dw
            .into_shape_with_order((oc, self.in_c, self.k.0, self.k.1))
            .unwrap()
            .into_dyn();
        let db = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
        self.b.grad += &db.into_dyn();
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((self.out_c, kk))
            .unwrap();
        let dcols = w2.t().dot(&g2);
        let dx = col2im(&dcols, (n, self.in_c, h, w), self.k, self.s, self.p, (oh, ow));
        Ok(dx.into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Strided 2-D transposed convolution (fractionally strided upsampling),
/// `(n, in_c, h, w) → (n, out_c, (h−1)s−2p+k+op, …)`.
pub struct TransposeConv2d<T: Scalar> {
    pub name: String,
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: (usize, usize),
    pub s: (usize, usize),
    pub p: (usize, usize),
    pub op: (usize, usize),
    cache_x: Option<Array4<T>>,
}

impl<T: Scalar> TransposeConv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: (usize, usize),
        s: (usize, usize),
        p: (usize, usize),
        op: (usize, usize),
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_c * k.0 * k.1;
        TransposeConv2d {
            name: name.to_string(),
            w: Param::new(
                format!("{name}.w"),
                he_uniform(&[in_c, out_c, k.0, k.1], fan_in, rng),
            ),
            b: Param::new(format!("{name}.b"), ArrayD::zeros(ndarray::IxDyn(&[out_c]))),
            in_c,
            out_c,
            k,
            s,
            p,
            op,
            cache_x: None,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let oh = transpose_out_dim(h, self.k.0, self.s.0, self.p.0, self.op.0);
        let ow = transpose_out_dim(w, self.k.1, self.s.1, self.p.1, self.op.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(NnError::DimCollapse(self.name.clone())),
        }
    }
}

impl<T: Scalar> Layer<T> for TransposeConv2d<T> {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let x = as4(x, &self.name)?;
        let (n, c, h, w) = x.dim();
        check_channels(&self.name, c, self.in_c)?;
        let (oh, ow) = self.out_dims(h, w)?;
        let x2 = x
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((self.in_c, n * h * w))
            .unwrap();
        let kk = self.out_c * self.k.0 * self.k.1;
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((self.in_c, kk))
            .unwrap();
        let cols = w2.t().dot(&x2);
        let mut y = col2im(
            &cols,
            (n, self.out_c, oh, ow),
            self.k,
            self.s,
            self.p,
            (h, w),
        );
        for (ci, mut sub) in y.axis_iter_mut(Axis(1)).enumerate() {
            let bc = self.b.value[[ci]];
            sub.mapv_inplace(|v| v + bc);
        }
        self.cache_x = Some(x);
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as4(grad_out, &self.name)?;
        let x = self.cache_x.take().expect("forward before backward");
        let (n, _, h, w) = x.dim();
        // Gather the output-gradient taps that each input position fed.
        let dcols = im2col(&g, self.k, self.s, self.p, (h, w));
        let x2 = x
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((self.in_c, n * h * w))
            .unwrap();
        let dw = x2.dot(&dcols.t());
        self.w.grad += &dw
            .into_shape_with_order((self.in_c, self.out_c, self.k.0, self.k.1))
            .unwrap()
            .into_dyn();
        let db = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
        self.b.grad += &db.into_dyn();
        let kk = self.out_c * self.k.0 * self.k.1;
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((self.in_c, kk))
            .unwrap();
        let dx2 = w2.dot(&dcols);
        let dx = dx2
            .into_shape_with_order((self.in_c, n, h, w))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        Ok(dx.into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Fully connected layer, `(n, in_f) → (n, out_f)`.
pub struct Linear<T: Scalar> {
    pub name: String,
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_f: usize,
    pub out_f: usize,
    cache_x: Option<Array2<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut ChaCha12Rng) -> Self {
        Linear {
            name: name.to_string(),
            w: Param::new(format!("{name}.w"), he_uniform(&[out_f, in_f], in_f, rng)),
            b: Param::new(format!("{name}.b"), ArrayD::zeros(ndarray::IxDyn(&[out_f]))),
            in_f,
            out_f,
            cache_x: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let x = as2(x, &self.name)?;
        check_channels(&self.name, x.dim().1, self.in_f)?;
        let w2 = self
            .w
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut y = x.dot(&w2.t());
        let b1 = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b1;
        self.cache_x = Some(x);
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as2(grad_out, &self.name)?;
        let x = self.cache_x.take().expect("forward before backward");
        self.w.grad += &g.t().dot(&x).into_dyn();
        self.b.grad += &g.sum_axis(Axis(0)).into_dyn();
        let w2 = self
            .w
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        Ok(g.dot(&w2).into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Per-channel batch normalization over `(n, h, w)` with running
/// statistics for deterministic inference.
pub struct BatchNorm2d<T: Scalar> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<BnCache<T>>,
}

struct BnCache<T: Scalar> {
    x_hat: Array4<T>,
    inv_std: Array1<T>,
    train: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, c: usize) -> Self {
        let dim = ndarray::IxDyn(&[c]);
        BatchNorm2d {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.g"), ArrayD::from_elem(dim.clone(), T::one())),
            beta: Param::new(format!("{name}.b"), ArrayD::zeros(dim.clone())),
            running_mean: Param::new(format!("{name}.rm"), ArrayD::zeros(dim.clone())),
            running_var: Param::new(format!("{name}.rv"), ArrayD::from_elem(dim, T::one())),
            momentum: sc(0.1),
            eps: sc(1e-5),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &ArrayD<T>, train: bool) -> Result<ArrayD<T>, NnError> {
        let x = as4(x, &self.name)?;
        let (n, c, h, w) = x.dim();
        check_channels(&self.name, c, self.gamma.value.len())?;
        let m = sc::<T>((n * h * w) as f64);
        let mut y = x.clone();
        let mut x_hat = Array4::zeros(x.dim());
        let mut inv_std_all = Array1::zeros(c);
        for ci in 0..c {
            let (mean, var) = if train {
                let lane = x.index_axis(Axis(1), ci);
                let mean = lane.sum() / m;
                let var = lane.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
                let mom = self.momentum;
                self.running_mean.value[[ci]] =
                    (T::one() - mom) * self.running_mean.value[[ci]] + mom * mean;
                self.running_var.value[[ci]] =
                    (T::one() - mom) * self.running_var.value[[ci]] + mom * var;
                (mean, var)
            } else {
                (self.running_mean.value[[ci]], self.running_var.value[[ci]])
            };
            let inv_std = T::one() / (var + self.eps).sqrt();
            inv_std_all[ci] = inv_std;
            let (g, b) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
            let mut xh = x_hat.index_axis_mut(Axis(1), ci);
            xh.assign(&x.index_axis(Axis(1), ci));
            xh.mapv_inplace(|v| (v - mean) * inv_std);
            let mut yl = y.index_axis_mut(Axis(1), ci);
            yl.assign(&xh);
            yl.mapv_inplace(|v| g * v + b);
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std: inv_std_all,
            train,
        });
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as4(grad_out, &self.name)?;
        let cache = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = g.dim();
        let m = sc::<T>((n * h * w) as f64);
        let mut dx = Array4::zeros(g.dim());
        for ci in 0..c {
            let gl = g.index_axis(Axis(1), ci);
            let xh = cache.x_hat.index_axis(Axis(1), ci);
            let sum_g = gl.sum();
            let sum_gx = ndarray::Zip::from(&gl)
                .and(&xh)
                .fold(T::zero(), |acc, &a, &b| acc + a * b);
            self.beta.grad[[ci]] += sum_g;
            self.gamma.grad[[ci]] += sum_gx;
            let scale = self.gamma.value[[ci]] * cache.inv_std[ci];
            let mut dl = dx.index_axis_mut(Axis(1), ci);
            if cache.train {
                let mean_g = sum_g / m;
                let mean_gx = sum_gx / m;
                ndarray::Zip::from(&mut dl)
                    .and(&gl)
                    .and(&xh)
                    .for_each(|d, &gv, &xv| *d = scale * (gv - mean_g - xv * mean_gx));
            } else {
                ndarray::Zip::from(&mut dl)
                    .and(&gl)
                    .for_each(|d, &gv| *d = scale * gv);
            }
        }
        Ok(dx.into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

/// Elementwise rectifier.
#[derive(Default)]
pub struct Relu<T: Scalar> {
    mask: Option<ArrayD<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let mask = x.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
        let y = x * &mask;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let mask = self.mask.take().expect("forward before backward");
        Ok(grad_out * &mask)
    }
}

/// Elementwise logistic function.
#[derive(Default)]
pub struct SigmoidL<T: Scalar> {
    y: Option<ArrayD<T>>,
}

impl<T: Scalar> SigmoidL<T> {
    pub fn new() -> Self {
        SigmoidL { y: None }
    }
}

impl<T: Scalar> Layer<T> for SigmoidL<T> {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let y = x.mapv(|v| T::one() / (T::one() + (-v).exp()));
        self.y = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let y = self.y.take().expect("forward before backward");
        Ok(grad_out * &(y.mapv(|v| v * (T::one() - v))))
    }
}

/// `(n, c, h, w) → (n, c)` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    hw: Option<(usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { hw: None }
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &ArrayD<T>, _train: bool) -> Result<ArrayD<T>, NnError> {
        let x = as4(x, "global_avg_pool")?;
        let (_, _, h, w) = x.dim();
        self.hw = Some((h, w));
        let inv = sc::<T>(1.0 / (h * w) as f64);
        let y = x.sum_axis(Axis(3)).sum_axis(Axis(2)) * inv;
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as2(grad_out, "global_avg_pool")?;
        let (n, c) = g.dim();
        let (h, w) = self.hw.take().expect("forward before backward");
        let inv = sc::<T>(1.0 / (h * w) as f64);
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                dx.index_axis_mut(Axis(0), ni)
                    .index_axis_mut(Axis(0), ci)
                    .fill(g[[ni, ci]] * inv);
            }
        }
        Ok(dx.into_dyn())
    }
}

/// Squeeze-and-excitation: per-channel attention from the spatial mean,
/// `q = sigmoid(FC2(relu(FC1(mean_hw(u)))))`, output `u ⊙ q`.
pub struct SeBlock<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub channels: usize,
    pub squeeze: usize,
    cache: Option<SeCache<T>>,
}

struct SeCache<T: Scalar> {
    u: Array4<T>,
    q: Array2<T>,
    relu_mask: Array2<T>,
}

impl<T: Scalar> SeBlock<T> {
    /// Squeeze width is `max(1, c / reduction)`.
    pub fn new(name: &str, c: usize, reduction: usize, rng: &mut ChaCha12Rng) -> Self {
        let squeeze = (c / reduction).max(1);
        SeBlock {
            fc1: Linear::new(&format!("{name}.fc1"), c, squeeze, rng),
            fc2: Linear::new(&format!("{name}.fc2"), squeeze, c, rng),
            channels: c,
            squeeze,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn forward(&mut self, x: &ArrayD<T>, train: bool) -> Result<ArrayD<T>, NnError> {
        let u = as4(x, "se")?;
        let (n, c, h, w) = u.dim();
        check_channels("se", c, self.channels)?;
        let inv = sc::<T>(1.0 / (h * w) as f64);
        let pooled = (u.sum_axis(Axis(3)).sum_axis(Axis(2)) * inv).into_dyn();
        let a1 = self.fc1.forward(&pooled, train)?;
        let relu_mask = a1.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
        let r = &a1 * &relu_mask;
        let a2 = self.fc2.forward(&r, train)?;
        let q = a2
            .mapv(|v| T::one() / (T::one() + (-v).exp()))
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut y = u.clone();
        for ni in 0..n {
            for ci in 0..c {
                let scale = q[[ni, ci]];
                y.index_axis_mut(Axis(0), ni)
                    .index_axis_mut(Axis(0), ci)
                    .mapv_inplace(|v| v * scale);
            }
        }
        self.cache = Some(SeCache {
            u,
            q,
            relu_mask: relu_mask.into_dimensionality::<Ix2>().unwrap(),
        });
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let g = as4(grad_out, "se")?;
        let cache = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = g.dim();
        // Path 1: direct product rule through u ⊙ q.
        let mut du = g.clone();
        let mut dq = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let scale = cache.q[[ni, ci]];
                let gl = g.index_axis(Axis(0), ni);
                let gl = gl.index_axis(Axis(0), ci);
                let ul = cache.u.index_axis(Axis(0), ni);
                let ul = ul.index_axis(Axis(0), ci);
                dq[[ni, ci]] = ndarray::Zip::from(&gl)
                    .and(&ul)
                    .fold(T::zero(), |acc, &a, &b| acc + a * b);
                du.index_axis_mut(Axis(0), ni)
                    .index_axis_mut(Axis(0), ci)
                    .mapv_inplace(|v| v * scale);
            }
        }
        // Path 2: through the attention branch back to the pooled mean.
        let da2 = (&dq * &cache.q.mapv(|v| v * (T::one() - v))).into_dyn();
        let dr = self.fc2.backward(&da2)?;
        let da1 = &dr * &cache.relu_mask.clone().into_dyn();
        let dpool = self
            .fc1
            .backward(&da1)?
            .into_dimensionality::<Ix2>()
            .unwrap();
        let inv = sc::<T>(1.0 / (h * w) as f64);
        for ni in 0..n {
            for ci in 0..c {
                let add = dpool[[ni, ci]] * inv;
                du.index_axis_mut(Axis(0), ni)
                    .index_axis_mut(Axis(0), ci)
                    .mapv_inplace(|v| v + add);
            }
        }
        Ok(du.into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Residual block with channel attention: two conv(3,3)+batch-norm+relu
/// stages, squeeze-excitation on their output, then `relu(x + v)`.
pub struct ResSeBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub se: SeBlock<T>,
    relu1: Relu<T>,
    relu2: Relu<T>,
    out_mask: Option<ArrayD<T>>,
}

impl<T: Scalar> ResSeBlock<T> {
    pub fn new(name: &str, c: usize, reduction: usize, rng: &mut ChaCha12Rng) -> Self {
        ResSeBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), c, c, (3, 3), (1, 1), (1, 1), rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), c),
            conv2: Conv2d::new(&format!("{name}.conv2"), c, c, (3, 3), (1, 1), (1, 1), rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), c),
            se: SeBlock::new(&format!("{name}.se"), c, reduction, rng),
            relu1: Relu::new(),
            relu2: Relu::new(),
            out_mask: None,
        }
    }
}

impl<T: Scalar> Layer<T> for ResSeBlock<T> {
    fn forward(&mut self, x: &ArrayD<T>, train: bool) -> Result<ArrayD<T>, NnError> {
        let h1 = self.relu1.forward(&self.bn1.forward(&self.conv1.forward(x, train)?, train)?, train)?;
        let u = self.relu2.forward(&self.bn2.forward(&self.conv2.forward(&h1, train)?, train)?, train)?;
        let v = self.se.forward(&u, train)?;
        let pre = x + &v;
        let mask = pre.mapv(|s| if s > T::zero() { T::one() } else { T::zero() });
        let y = &pre * &mask;
        self.out_mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let mask = self.out_mask.take().expect("forward before backward");
        let dpre = grad_out * &mask;
        let dv = self.se.backward(&dpre)?;
        let du = self.relu2.backward(&dv)?;
        let dh1 = self.conv2.backward(&self.bn2.backward(&du)?)?;
        let dx_conv = self
            .conv1
            .backward(&self.bn1.backward(&self.relu1.backward(&dh1)?)?)?;
        Ok(dx_conv + dpre)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.se.params_mut());
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.bn1.buffers_mut();
        v.extend(self.bn2.buffers_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_max_rel_err;
    use ndarray::IxDyn;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut r = rng(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| r.random_range(-1.0..1.0))
    }

    /// Scalar loss = <layer(x), probe>; analytic input gradient comes
    /// from backward(probe).
    fn check_input_grad<L: Layer<f64>>(layer: &mut L, x: &ArrayD<f64>, train: bool) -> f64 {
        let y = layer.forward(x, train).unwrap();
        let probe = randn(y.shape(), 999);
        let analytic = layer.backward(&probe).unwrap();
        grad_check_max_rel_err(
            |xq| (&layer.forward(xq, train).unwrap() * &probe).sum(),
            x,
            &analytic,
            1e-3,
        )
    }

    /// Gradient check of one named parameter of the layer.
    fn check_param_grad<L: Layer<f64>>(
        layer: &mut L,
        x: &ArrayD<f64>,
        param_name: &str,
        train: bool,
    ) -> f64 {
        let y = layer.forward(x, train).unwrap();
        let probe = randn(y.shape(), 998);
        for p in layer.params_mut() {
            p.zero_grad();
        }
        layer.backward(&probe).unwrap();
        let (p0, analytic) = {
            let params = layer.params_mut();
            let p = params
                .into_iter()
                .find(|p| p.name == param_name)
                .expect("param name");
            (p.value.clone(), p.grad.clone())
        };
        let err = grad_check_max_rel_err(
            |pq| {
                {
                    let params = layer.params_mut();
                    let p = params.into_iter().find(|p| p.name == param_name).unwrap();
                    p.value.assign(pq);
                }
                (&layer.forward(x, train).unwrap() * &probe).sum()
            },
            &p0,
            &analytic,
            1e-3,
        );
        let params = layer.params_mut();
        let p = params.into_iter().find(|p| p.name == param_name).unwrap();
        p.value.assign(&p0);
        err
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut r = rng(1);
        let mut conv = Conv2d::<f64>::new("c", 3, 4, (3, 2), (2, 1), (1, 0), &mut r);
        let x = randn(&[2, 3, 6, 7], 2);
        assert!(check_input_grad(&mut conv, &x, true) <= 1e-4);
        assert!(check_param_grad(&mut conv, &x, "c.w", true) <= 1e-4);
        assert!(check_param_grad(&mut conv, &x, "c.b", true) <= 1e-4);
    }

    #[test]
    fn transpose_conv_matches_upsample_reference_and_gradients() {
        let mut r = rng(3);
        let mut tc = TransposeConv2d::<f64>::new("t", 2, 3, (3, 3), (2, 2), (1, 1), (1, 1), &mut r);
        let x = randn(&[2, 2, 4, 5], 4);
        let y = tc
            .forward(&x, true)
            .unwrap()
            .into_dimensionality::<Ix4>()
            .unwrap();
        assert_eq!(y.dim(), (2, 3, 8, 10));
        // Direct scatter reference.
        let x4 = x.clone().into_dimensionality::<Ix4>().unwrap();
        let w = tc.w.value.clone().into_dimensionality::<Ix4>().unwrap();
        let mut want = Array4::<f64>::zeros((2, 3, 8, 10));
        for ni in 0..2 {
            for ic in 0..2 {
                for hi in 0..4 {
                    for wi in 0..5 {
                        for oc in 0..3 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let oi = (hi * 2 + ki) as isize - 1;
                                    let oj = (wi * 2 + kj) as isize - 1;
                                    if (0..8).contains(&oi) && (0..10).contains(&oj) {
                                        want[[ni, oc, oi as usize, oj as usize]] +=
                                            x4[[ni, ic, hi, wi]] * w[[ic, oc, ki, kj]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for (got, want) in y.iter().zip(want.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(check_input_grad(&mut tc, &x, true) <= 1e-4);
        assert!(check_param_grad(&mut tc, &x, "t.w", true) <= 1e-4);
    }

    #[test]
    fn linear_and_pool_gradients_match() {
        let mut r = rng(5);
        let mut lin = Linear::<f64>::new("l", 6, 4, &mut r);
        let x = randn(&[3, 6], 6);
        assert!(check_input_grad(&mut lin, &x, true) <= 1e-4);
        assert!(check_param_grad(&mut lin, &x, "l.w", true) <= 1e-4);

        let mut gap = GlobalAvgPool::new();
        let x = randn(&[2, 3, 4, 5], 7);
        assert!(check_input_grad(&mut gap, &x, true) <= 1e-4);
    }

    #[test]
    fn batch_norm_normalizes_and_backpropagates() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 3);
        let x = randn(&[4, 3, 5, 6], 8) * 3.0 + 1.5;
        let y = bn
            .forward(&x, true)
            .unwrap()
            .into_dimensionality::<Ix4>()
            .unwrap();
        for ci in 0..3 {
            let lane = y.index_axis(Axis(1), ci);
            let m = lane.mean().unwrap();
            let v = lane.fold(0.0, |a, &t| a + (t - m) * (t - m)) / lane.len() as f64;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(check_input_grad(&mut bn, &x, true) <= 1e-4);
        assert!(check_param_grad(&mut bn, &x, "bn.g", true) <= 1e-4);

        // Inference mode: deterministic, uses running stats, linear map.
        let y1 = bn.forward(&x, false).unwrap();
        bn.backward(&y1).unwrap();
        let y2 = bn.forward(&x, false).unwrap();
        bn.backward(&y2).unwrap();
        assert_eq!(y1, y2);
        assert!(check_input_grad(&mut bn, &x, false) <= 1e-4);
    }

    #[test]
    fn relu_and_sigmoid_gradients_match() {
        let mut relu = Relu::<f64>::new();
        let x = randn(&[3, 7], 9) * 2.0;
        assert!(check_input_grad(&mut relu, &x, true) <= 1e-4);
        let mut sig = SigmoidL::<f64>::new();
        assert!(check_input_grad(&mut sig, &x, true) <= 1e-4);
    }

    #[test]
    fn se_block_squeezes_and_backpropagates() {
        let mut r = rng(10);
        // Channel 128 with reduction 16 squeezes to 8.
        let se = SeBlock::<f64>::new("se", 128, 16, &mut r);
        assert_eq!(se.squeeze, 8);
        // Gradient check at a small size.
        let mut se = SeBlock::<f64>::new("se", 6, 3, &mut r);
        let x = randn(&[2, 6, 3, 4], 11);
        assert!(check_input_grad(&mut se, &x, true) <= 1e-4);
        assert!(check_param_grad(&mut se, &x, "se.fc1.w", true) <= 1e-4);
        assert!(check_param_grad(&mut se, &x, "se.fc2.w", true) <= 1e-4);
    }

    #[test]
    fn res_se_block_properties_and_gradients() {
        let mut r = rng(12);
        let mut blk = ResSeBlock::<f64>::new("rs", 4, 16, &mut r);
        // Zero input with zero-init convs: convs output bias 0, batch
        // norm of a constant is 0, so the block returns relu(0+0) = 0.
        blk.conv1.w.value.fill(0.0);
        blk.conv2.w.value.fill(0.0);
        let zero = ArrayD::zeros(IxDyn(&[2, 4, 5, 5]));
        let y = blk.forward(&zero, true).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        // SE fully open (huge fc2 bias): output = relu(x + u).
        let mut blk = ResSeBlock::<f64>::new("rs", 4, 16, &mut r);
        let x = randn(&[2, 4, 5, 5], 13);
        blk.se.fc2.b.value.fill(1e6);
        let y_open = blk.forward(&x, true).unwrap();
        // Recompute u through the block's own sub-layers: in train mode
        // their outputs depend only on batch statistics, so the replay
        // reproduces the u used inside forward above.
        let u = {
            let a = blk.conv1.forward(&x, true).unwrap();
            let a = blk.bn1.forward(&a, true).unwrap();
            let a = blk.relu1.forward(&a, true).unwrap();
            let a = blk.conv2.forward(&a, true).unwrap();
            let a = blk.bn2.forward(&a, true).unwrap();
            blk.relu2.forward(&a, true).unwrap()
        };
        let want = (&x + &u).mapv(|v| v.max(0.0));
        for (a, b) in y_open.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        // Full gradient check (input + a parameter from each sub-layer).
        let mut blk = ResSeBlock::<f64>::new("rs", 3, 2, &mut r);
        let x = randn(&[2, 3, 4, 4], 14);
        assert!(check_input_grad(&mut blk, &x, true) <= 1e-4);
        for name in ["rs.conv1.w", "rs.bn1.g", "rs.conv2.b", "rs.se.fc2.w"] {
            assert!(check_param_grad(&mut blk, &x, name, true) <= 1e-4, "{name}");
        }
        // Channel mismatch is rejected.
        let bad = randn(&[2, 5, 4, 4], 15);
        assert!(blk.forward(&bad, true).is_err());
    }
}
