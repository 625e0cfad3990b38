//! Scalar surrogates mapping latent vectors to manufacturability maxima.
//!
//! Two interpolating regressors over the same data layout (N inputs of
//! dimension d, N scalar targets):
//!
//! * [`RbfModel`] — multiquadric radial-basis interpolation on raw inputs,
//!   kernel scale fixed to the mean pairwise training distance.
//! * [`KrigingModel`] — constant-mean Gaussian-process regression on
//!   per-component normalized inputs, anisotropic squared-exponential
//!   correlation with one length-scale parameter per dimension, estimated
//!   by profiled maximum likelihood with a seeded multi-start search.
//!
//! One model is fit per scalar indicator (thinning and thickening are
//! separate fits). Fitted models are immutable; prediction never mutates.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

pub const SSMF_MAGIC: [u8; 4] = *b"SSMF";
pub const SSMF_VERSION: u16 = 1;

/// Model discriminator stored in an `SSMF` file.
pub mod model_kind {
    pub const RBF: u8 = 0;
    pub const KRIGING: u8 = 1;
}

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("need at least {need} training samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("{rows} input rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("input rows have inconsistent dimension: row {row} has {got}, expected {expected}")]
    RaggedInputs {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("training inputs {a} and {b} coincide")]
    DuplicateInputs { a: usize, b: usize },
    #[error("input component {0} is constant across training samples")]
    ConstantComponent(usize),
    #[error("query has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("interpolation system is singular or ill-conditioned")]
    Singular,
    #[error("correlation matrix is not positive definite even with nugget")]
    NotPositiveDefinite,
    #[error("length-scale parameters must be positive")]
    NonPositiveTheta,
    #[error("bad magic bytes (not an SSMF file)")]
    BadMagic,
    #[error("unsupported SSMF field {field} = {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("file ends early: wanted {expected} more bytes, found {got}")]
    ShortRead { expected: usize, got: usize },
    #[error("trailing bytes after the final array")]
    TrailingBytes,
    #[error("model file is missing array {0}")]
    MissingArray(String),
    #[error("array {name} has shape {rows}x{cols}, expected {expected}")]
    ArrayShape {
        name: String,
        rows: usize,
        cols: usize,
        expected: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_data(x: &[Vec<f64>], y: &[f64], need: usize) -> Result<usize, SurrogateError> {
    if x.len() < need {
        return Err(SurrogateError::TooFewSamples {
            need,
            got: x.len(),
        });
    }
    if x.len() != y.len() {
        return Err(SurrogateError::LengthMismatch {
            rows: x.len(),
            targets: y.len(),
        });
    }
    let d = x[0].len();
    for (row, xi) in x.iter().enumerate() {
        if xi.len() != d {
            return Err(SurrogateError::RaggedInputs {
                row,
                got: xi.len(),
                expected: d,
            });
        }
    }
    Ok(d)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Multiquadric radial-basis interpolation
// ---------------------------------------------------------------------------

/// Multiquadric RBF interpolator: f(x) = Σ_i w_i · sqrt(1 + (‖x − x_i‖/l)²),
/// with l the mean pairwise distance over the training inputs.
#[derive(Debug, Clone)]
pub struct RbfModel {
    inputs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    scale: f64,
}

impl RbfModel {
    /// Fit by solving the dense interpolation system with a pivoted LU
    /// factorization. Inputs must be pairwise distinct (the system is
    /// singular otherwise); the solution is verified to reproduce the
    /// targets to 1e-8 relative residual.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, SurrogateError> {
        let _ = check_data(x, y, 1)?;
        let n = x.len();

        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = dist(&x[i], &x[j]);
                if d < 1e-12 {
                    return Err(SurrogateError::DuplicateInputs { a: i, b: j });
                }
                pair_sum += d;
            }
        }
        let pairs = n * (n - 1) / 2;
        let scale = if pairs == 0 {
            1.0
        } else {
            pair_sum / pairs as f64
        };

        let phi = DMatrix::from_fn(n, n, |i, j| kernel(dist(&x[i], &x[j]), scale));
        let rhs = DVector::from_column_slice(y);
        let lu = phi.clone().lu();
        let w = lu.solve(&rhs).ok_or(SurrogateError::Singular)?;

        let residual = (&phi * &w - &rhs).abs().max();
        let y_inf = rhs.abs().max();
        if residual > 1e-8 * y_inf.max(f64::MIN_POSITIVE) {
            return Err(SurrogateError::Singular);
        }

        Ok(RbfModel {
            inputs: x.to_vec(),
            weights: w.iter().copied().collect(),
            scale,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        let d = self.inputs[0].len();
        if x.len() != d {
            return Err(SurrogateError::DimMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok(self
            .inputs
            .iter()
            .zip(&self.weights)
            .map(|(xi, w)| w * kernel(dist(x, xi), self.scale))
            .sum())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.inputs.len();
        let d = self.inputs[0].len();
        let mut w = FileWriter::new(model_kind::RBF, 3);
        w.array("inputs", n, d, self.inputs.iter().flatten().copied());
        w.array("weights", n, 1, self.weights.iter().copied());
        w.array("scale", 1, 1, [self.scale]);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SurrogateError> {
        let mut arrays = read_arrays(bytes, model_kind::RBF)?;
        let inputs = arrays.take_matrix("inputs")?;
        let n = inputs.len();
        let weights = arrays.take_vector("weights", n)?;
        let scale = arrays.take_scalar("scale")?;
        arrays.finish()?;
        Ok(RbfModel {
            inputs,
            weights,
            scale,
        })
    }
}

fn kernel(d: f64, scale: f64) -> f64 {
    let r = d / scale;
    (1.0 + r * r).sqrt()
}

// ---------------------------------------------------------------------------
// Constant-mean Kriging
// ---------------------------------------------------------------------------

/// Constant-mean Kriging: ŷ(x) = β0 + r(x)ᵀ R⁻¹ (y − β0·1), with
/// R_ij = Π_l exp(−θ_l (x̃_l^i − x̃_l^j)²) over inputs normalized to zero
/// mean and unit standard deviation per component.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    /// Normalized training inputs, N × d.
    inputs_norm: Vec<Vec<f64>>,
    theta: Vec<f64>,
    beta0: f64,
    sigma2: f64,
    nugget: f64,
    /// Lower Cholesky factor of R + nugget·I.
    chol_lower: DMatrix<f64>,
    targets: Vec<f64>,
    /// R⁻¹ (y − β0·1), precomputed for prediction.
    alpha: Vec<f64>,
}

pub const KRIGING_DEFAULT_NUGGET: f64 = 1e-10;
/// Search box for the length-scale parameters, in natural log.
pub const LOG_THETA_RANGE: (f64, f64) = (-6.0, 3.0);

impl KrigingModel {
    /// Fit with length-scales estimated by minimizing the concentrated
    /// negative log-likelihood (β0 and σ² profiled out in closed form),
    /// using a deterministic multi-start coordinate search over
    /// log θ ∈ [−6, 3] per dimension seeded by `seed`.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        nugget: f64,
        seed: u64,
    ) -> Result<Self, SurrogateError> {
        let d = check_data(x, y, 2)?;
        let (x_mean, x_std, xn) = normalize(x, d)?;

        // Pre-compute squared componentwise differences for fast
        // correlation assembly: diff2[(i,j)][l] = (x̃_l^i − x̃_l^j)².
        let n = xn.len();
        let mut diff2 = vec![vec![0.0; d]; n * n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..d {
                    let t = xn[i][l] - xn[j][l];
                    diff2[i * n + j][l] = t * t;
                }
            }
        }

        let nll = |log_theta: &[f64]| -> Option<(f64, Profiled)> {
            let theta: Vec<f64> = log_theta.iter().map(|t| t.exp()).collect();
            let profiled = profile_likelihood(&theta, &diff2, y, n, nugget)?;
            Some((profiled.nll, profiled))
        };

        // Multi-start: an isotropic ladder plus seeded anisotropic draws.
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (lo, hi) = LOG_THETA_RANGE;
        let mut starts: Vec<Vec<f64>> = (0..7)
            .map(|k| vec![lo + (hi - lo) * k as f64 / 6.0; d])
            .collect();
        for _ in 0..3 {
            starts.push((0..d).map(|_| rng.random_range(lo..hi)).collect());
        }

        let mut best: Option<(f64, Vec<f64>, Profiled)> = None;
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
        for s in &starts {
            if let Some((v, _)) = nll(s) {
                scored.push((v, s.clone()));
            }
        }
        if scored.is_empty() {
            return Err(SurrogateError::NotPositiveDefinite);
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Refine the two best starts by cyclic coordinate descent with a
        // golden-section line search per dimension.
        for (_, start) in scored.into_iter().take(2) {
            let mut current = start;
            let mut current_val = match nll(&current) {
                Some((v, _)) => v,
                None => continue,
            };
            for _sweep in 0..2 {
                for dim in 0..d {
                    let eval = |t: f64| {
                        let mut probe = current.clone();
                        probe[dim] = t;
                        nll(&probe).map(|(v, _)| v).unwrap_or(f64::INFINITY)
                    };
                    let (t_best, v_best) = golden_section(eval, lo, hi, 16);
                    if v_best < current_val {
                        current[dim] = t_best;
                        current_val = v_best;
                    }
                }
            }
            if let Some((v, profiled)) = nll(&current) {
                if best.as_ref().map_or(true, |(bv, _, _)| v < *bv) {
                    best = Some((v, current, profiled));
                }
            }
        }

        let (_, log_theta, profiled) = best.ok_or(SurrogateError::NotPositiveDefinite)?;
        let theta: Vec<f64> = log_theta.iter().map(|t| t.exp()).collect();
        Ok(Self::assemble(
            x_mean, x_std, xn, theta, nugget, y, profiled,
        ))
    }

    /// Fit with the length-scales given instead of estimated; the mean and
    /// variance are still profiled in closed form.
    pub fn fit_with_theta(
        x: &[Vec<f64>],
        y: &[f64],
        theta: &[f64],
        nugget: f64,
    ) -> Result<Self, SurrogateError> {
        let d = check_data(x, y, 2)?;
        if theta.len() != d {
            return Err(SurrogateError::DimMismatch {
                expected: d,
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !(*t > 0.0)) {
            return Err(SurrogateError::NonPositiveTheta);
        }
        let (x_mean, x_std, xn) = normalize(x, d)?;
        let n = xn.len();
        let mut diff2 = vec![vec![0.0; d]; n * n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..d {
                    let t = xn[i][l] - xn[j][l];
                    diff2[i * n + j][l] = t * t;
                }
            }
        }
        let profiled = profile_likelihood(theta, &diff2, y, n, nugget)
            .ok_or(SurrogateError::NotPositiveDefinite)?;
        Ok(Self::assemble(
            x_mean,
            x_std,
            xn,
            theta.to_vec(),
            nugget,
            y,
            profiled,
        ))
    }

    fn assemble(
        x_mean: Vec<f64>,
        x_std: Vec<f64>,
        inputs_norm: Vec<Vec<f64>>,
        theta: Vec<f64>,
        nugget: f64,
        y: &[f64],
        profiled: Profiled,
    ) -> Self {
        KrigingModel {
            x_mean,
            x_std,
            inputs_norm,
            theta,
            beta0: profiled.beta0,
            sigma2: profiled.sigma2,
            nugget,
            chol_lower: profiled.chol_lower,
            targets: y.to_vec(),
            alpha: profiled.alpha,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        let d = self.x_mean.len();
        if x.len() != d {
            return Err(SurrogateError::DimMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let xq: Vec<f64> = (0..d)
            .map(|l| (x[l] - self.x_mean[l]) / self.x_std[l])
            .collect();
        let mut acc = self.beta0;
        for (xi, a) in self.inputs_norm.iter().zip(&self.alpha) {
            let mut e = 0.0;
            for l in 0..d {
                let t = xq[l] - xi[l];
                acc_theta(&mut e, self.theta[l], t);
            }
            acc += a * (-e).exp();
        }
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn len(&self) -> usize {
        self.inputs_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs_norm.is_empty()
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.inputs_norm.len();
        let d = self.x_mean.len();
        let mut w = FileWriter::new(model_kind::KRIGING, 8);
        w.array("x_mean", 1, d, self.x_mean.iter().copied());
        w.array("x_std", 1, d, self.x_std.iter().copied());
        w.array(
            "inputs_norm",
            n,
            d,
            self.inputs_norm.iter().flatten().copied(),
        );
        w.array("theta", 1, d, self.theta.iter().copied());
        w.array(
            "mean_var_nugget",
            1,
            3,
            [self.beta0, self.sigma2, self.nugget],
        );
        w.array("chol_lower", n, n, self.chol_lower.transpose().iter().copied());
        w.array("targets", n, 1, self.targets.iter().copied());
        w.array("alpha", n, 1, self.alpha.iter().copied());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SurrogateError> {
        let mut arrays = read_arrays(bytes, model_kind::KRIGING)?;
        let x_mean = arrays.take_row("x_mean")?;
        let d = x_mean.len();
        let x_std = arrays.take_row("x_std")?;
        let inputs_norm = arrays.take_matrix("inputs_norm")?;
        let n = inputs_norm.len();
        let theta = arrays.take_row("theta")?;
        let mvn = arrays.take_row("mean_var_nugget")?;
        let chol = arrays.take_square("chol_lower", n)?;
        let targets = arrays.take_vector("targets", n)?;
        let alpha = arrays.take_vector("alpha", n)?;
        arrays.finish()?;
        if x_std.len() != d || theta.len() != d || mvn.len() != 3 {
            return Err(SurrogateError::ArrayShape {
                name: "x_std/theta/mean_var_nugget".into(),
                rows: 1,
                cols: x_std.len(),
                expected: format!("1x{d} and 1x3"),
            });
        }
        let chol_lower =
            DMatrix::from_row_iterator(n, n, chol.into_iter().flatten());
        Ok(KrigingModel {
            x_mean,
            x_std,
            inputs_norm,
            theta,
            beta0: mvn[0],
            sigma2: mvn[1],
            nugget: mvn[2],
            chol_lower,
            targets,
            alpha,
        })
    }
}

#[inline]
fn acc_theta(acc: &mut f64, theta: f64, diff: f64) {
    *acc += theta * diff * diff;
}

fn normalize(
    x: &[Vec<f64>],
    d: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>), SurrogateError> {
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for xi in x {
        for l in 0..d {
            mean[l] += xi[l] / n;
        }
    }
    let mut std = vec![0.0; d];
    for xi in x {
        for l in 0..d {
            let t = xi[l] - mean[l];
            std[l] += t * t / n;
        }
    }
    for (l, s) in std.iter_mut().enumerate() {
        *s = s.sqrt();
        if *s < 1e-12 {
            return Err(SurrogateError::ConstantComponent(l));
        }
    }
    let xn = x
        .iter()
        .map(|xi| (0..d).map(|l| (xi[l] - mean[l]) / std[l]).collect())
        .collect();
    Ok((mean, std, xn))
}

struct Profiled {
    nll: f64,
    beta0: f64,
    sigma2: f64,
    chol_lower: DMatrix<f64>,
    alpha: Vec<f64>,
}

/// Concentrated negative log-likelihood at fixed θ: β0 and σ² take their
/// closed-form maximizers, leaving N·ln σ² + ln det R to compare.
fn profile_likelihood(
    theta: &[f64],
    diff2: &[Vec<f64>],
    y: &[f64],
    n: usize,
    nugget: f64,
) -> Option<Profiled> {
    let d = theta.len();
    let r = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + nugget
        } else {
            let mut e = 0.0;
            for l in 0..d {
                e += theta[l] * diff2[i * n + j][l];
            }
            (-e).exp()
        }
    });
    let chol = Cholesky::new(r)?;
    let ones = DVector::from_element(n, 1.0);
    let yv = DVector::from_column_slice(y);
    let rinv_1 = chol.solve(&ones);
    let rinv_y = chol.solve(&yv);
    let denom = ones.dot(&rinv_1);
    if denom <= 0.0 || !denom.is_finite() {
        return None;
    }
    let beta0 = ones.dot(&rinv_y) / denom;
    let resid = &yv - &ones * beta0;
    let rinv_resid = chol.solve(&resid);
    let sigma2 = (resid.dot(&rinv_resid) / n as f64).max(0.0);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nll = n as f64 * sigma2.max(1e-300).ln() + log_det;
    if !nll.is_finite() {
        return None;
    }
    Some(Profiled {
        nll,
        beta0,
        sigma2,
        chol_lower: chol.l(),
        alpha: rinv_resid.iter().copied().collect(),
    })
}

/// Golden-section minimization of a unimodal-ish scalar function on
/// [lo, hi]; returns the best probed point. Deterministic.
fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        let (t, v) = if fc < fd { (c, fc) } else { (d, fd) };
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// SSMF model files: magic, version, model kind, tagged f64 arrays
// ---------------------------------------------------------------------------

struct FileWriter {
    buf: Vec<u8>,
}

impl FileWriter {
    fn new(kind: u8, count: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(&SSMF_MAGIC);
        buf.extend_from_slice(&SSMF_VERSION.to_le_bytes());
        buf.push(kind);
        buf.extend_from_slice(&count.to_le_bytes());
        FileWriter { buf }
    }

    fn array(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        data: impl IntoIterator<Item = f64>,
    ) {
        let bytes = name.as_bytes();
        self.buf
            .extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(bytes);
        self.buf.extend_from_slice(&(rows as u32).to_le_bytes());
        self.buf.extend_from_slice(&(cols as u32).to_le_bytes());
        let mut written = 0usize;
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
            written += 1;
        }
        assert_eq!(written, rows * cols, "array {name} length mismatch");
    }

    fn finish(self) -> Vec<u8> {
        self.buf
    }
}

struct ArraySet {
    arrays: std::collections::BTreeMap<String, (usize, usize, Vec<f64>)>,
}

impl ArraySet {
    fn take(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>), SurrogateError> {
        self.arrays
            .remove(name)
            .ok_or_else(|| SurrogateError::MissingArray(name.to_string()))
    }

    fn take_matrix(&mut self, name: &str) -> Result<Vec<Vec<f64>>, SurrogateError> {
        let (rows, cols, data) = self.take(name)?;
        if rows == 0 || cols == 0 {
            return Err(SurrogateError::ArrayShape {
                name: name.to_string(),
                rows,
                cols,
                expected: "non-empty".into(),
            });
        }
        Ok(data.chunks(cols).map(|c| c.to_vec()).collect())
    }

    fn take_square(&mut self, name: &str, n: usize) -> Result<Vec<Vec<f64>>, SurrogateError> {
        let (rows, cols, data) = self.take(name)?;
        if rows != n || cols != n {
            return Err(SurrogateError::ArrayShape {
                name: name.to_string(),
                rows,
                cols,
                expected: format!("{n}x{n}"),
            });
        }
        Ok(data.chunks(cols).map(|c| c.to_vec()).collect())
    }

    fn take_row(&mut self, name: &str) -> Result<Vec<f64>, SurrogateError> {
        let (rows, cols, data) = self.take(name)?;
        if rows != 1 {
            return Err(SurrogateError::ArrayShape {
                name: name.to_string(),
                rows,
                cols,
                expected: "1xD".into(),
            });
        }
        Ok(data)
    }

    fn take_vector(&mut self, name: &str, n: usize) -> Result<Vec<f64>, SurrogateError> {
        let (rows, cols, data) = self.take(name)?;
        if rows != n || cols != 1 {
            return Err(SurrogateError::ArrayShape {
                name: name.to_string(),
                rows,
                cols,
                expected: format!("{n}x1"),
            });
        }
        Ok(data)
    }

    fn take_scalar(&mut self, name: &str) -> Result<f64, SurrogateError> {
        let (rows, cols, data) = self.take(name)?;
        if rows != 1 || cols != 1 {
            return Err(SurrogateError::ArrayShape {
                name: name.to_string(),
                rows,
                cols,
                expected: "1x1".into(),
            });
        }
        Ok(data[0])
    }

    fn finish(self) -> Result<(), SurrogateError> {
        if let Some(name) = self.arrays.into_keys().next() {
            return Err(SurrogateError::ArrayShape {
                name,
                rows: 0,
                cols: 0,
                expected: "no extra arrays".into(),
            });
        }
        Ok(())
    }
}

struct Rd<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Rd<'a> {
    fn need(&self, n: usize) -> Result<(), SurrogateError> {
        if self.pos + n > self.bytes.len() {
            return Err(SurrogateError::ShortRead {
                expected: n,
                got: self.bytes.len() - self.pos,
            });
        }
        Ok(())
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], SurrogateError> {
        self.need(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, SurrogateError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SurrogateError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, SurrogateError> {
        Ok(self.bytes(1)?[0])
    }

    fn f64(&mut self) -> Result<f64, SurrogateError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

fn read_arrays(bytes: &[u8], expected_kind: u8) -> Result<ArraySet, SurrogateError> {
    let mut rd = Rd { bytes, pos: 0 };
    if rd.bytes(4)? != SSMF_MAGIC {
        return Err(SurrogateError::BadMagic);
    }
    let version = rd.u16()?;
    if version != SSMF_VERSION {
        return Err(SurrogateError::BadHeader {
            field: "version",
            value: version as u64,
        });
    }
    let kind = rd.u8()?;
    if kind != expected_kind {
        return Err(SurrogateError::BadHeader {
            field: "model kind",
            value: kind as u64,
        });
    }
    let count = rd.u32()?;
    let mut arrays = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name_len = rd.u16()? as usize;
        let name = String::from_utf8_lossy(rd.bytes(name_len)?).into_owned();
        let rows = rd.u32()? as usize;
        let cols = rd.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rd.f64()?);
        }
        arrays.insert(name, (rows, cols, data));
    }
    if rd.pos != bytes.len() {
        return Err(SurrogateError::TrailingBytes);
    }
    Ok(ArraySet { arrays })
}
