//! Generative shape model: an auto-decoder that maps 25-component latent
//! vectors to SDF grids.
//!
//! The decoder is trained jointly with one learnable latent per training
//! shape (no encoder). Unseen shapes are embedded afterwards by freezing
//! the weights and optimizing a fresh latent against the target SDF.
//! SDF values are scaled by 1/100 inside the network and unscaled on
//! decode, keeping activations O(1) while metrics stay in millimetres.

use ndarray::{Array2, Array4, ArrayD, Axis, Ix2, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::grid::{GridError, GridKind, GridSpec, ScalarGrid};
use crate::nn::ckpt::{self, layer_kind, Checkpoint, LayerSpec};
use crate::nn::layers::{
    BatchNorm2d, Conv2d, Layer, Linear, Relu, ResSeBlock, TransposeConv2d,
};
use crate::nn::ops::{conv_out_dim, output_padding_for};
use crate::nn::{loss_composite_batched, sc, Adam, NnError, Param, Scalar};

/// SDF values are divided by this entering the network and multiplied
/// back on decode.
pub const SDF_SCALE: f64 = 100.0;

/// Fixed latent width of the shape code.
pub const LATENT_DIM: usize = 25;

/// Transpose-conv chain geometry: kernels, strides, paddings for the
/// four upsampling stages (output paddings are computed per grid).
const UP_KERNELS: [(usize, usize); 4] = [(4, 3), (6, 5), (8, 9), (8, 8)];
const UP_STRIDES: [(usize, usize); 4] = [(2, 2), (2, 2), (2, 1), (2, 2)];
const UP_PADS: [(usize, usize); 4] = [(1, 1), (2, 2), (3, 4), (3, 3)];

const RES_SE_COUNT: usize = 6;
const SE_REDUCTION: usize = 16;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("training set is empty")]
    NoShapes,
    #[error("shape {index} grid spec differs from the first shape's")]
    InconsistentGrids { index: usize },
    #[error("grid spec mismatch between model and input")]
    SpecMismatch,
    #[error("base channel count {0} must be a positive multiple of 8")]
    BadChannels(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderConfig {
    pub spec: GridSpec,
    /// Channel count at the seed resolution; the transpose chain halves
    /// it per stage down to `base/8`, then maps to one channel.
    pub base_channels: usize,
}

impl DecoderConfig {
    pub fn new(spec: GridSpec, base_channels: usize) -> Self {
        DecoderConfig {
            spec,
            base_channels,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        DecoderTrainConfig {
            epochs: 2000,
            batch_size: 16,
            lr: 4e-4,
            seed: 37,
            lambda1: 0.01,
            lambda2: 0.2,
        }
    }
}

/// Latent → SDF grid network: linear seed, conv + batch-norm + relu,
/// six residual SE blocks, four strided transpose convolutions.
pub struct AutoDecoder<T: Scalar> {
    pub spec: GridSpec,
    pub base_channels: usize,
    pub seed_dims: (usize, usize),
    lin: Linear<T>,
    conv0: Conv2d<T>,
    bn0: BatchNorm2d<T>,
    relu0: Relu<T>,
    blocks: Vec<ResSeBlock<T>>,
    ups: Vec<TransposeConv2d<T>>,
    up_bns: Vec<BatchNorm2d<T>>,
    up_relus: Vec<Relu<T>>,
}

/// Walk the transpose chain backwards (as convolutions) from the target
/// grid to the seed resolution; then walk forward computing the output
/// padding each stage needs. Returns (seed dims, per-stage output dims,
/// per-stage output paddings).
#[allow(clippy::type_complexity)]
fn plan_upsampling(
    spec: &GridSpec,
) -> Result<((usize, usize), Vec<(usize, usize)>, Vec<(usize, usize)>), NnError> {
    let mut dims = (spec.height, spec.width);
    let mut stack = vec![dims];
    for i in (0..4).rev() {
        let h = conv_out_dim(dims.0, UP_KERNELS[i].0, UP_STRIDES[i].0, UP_PADS[i].0);
        let w = conv_out_dim(dims.1, UP_KERNELS[i].1, UP_STRIDES[i].1, UP_PADS[i].1);
        dims = match (h, w) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(NnError::DimCollapse(format!("decoder seed below up{i}"))),
        };
        stack.push(dims);
    }
    stack.reverse(); // seed dims first, grid dims last
    let seed = stack[0];
    let mut outs = Vec::with_capacity(4);
    let mut ops = Vec::with_capacity(4);
    for i in 0..4 {
        let (from, target) = (stack[i], stack[i + 1]);
        let oph = output_padding_for(from.0, target.0, UP_KERNELS[i].0, UP_STRIDES[i].0, UP_PADS[i].0)?;
        let opw = output_padding_for(from.1, target.1, UP_KERNELS[i].1, UP_STRIDES[i].1, UP_PADS[i].1)?;
        outs.push(target);
        ops.push((oph, opw));
    }
    Ok((seed, outs, ops))
}

impl<T: Scalar> AutoDecoder<T> {
    pub fn new(cfg: &DecoderConfig, rng: &mut ChaCha12Rng) -> Result<Self, DecoderError> {
        let c0 = cfg.base_channels;
        if c0 == 0 || c0 % 8 != 0 {
            return Err(DecoderError::BadChannels(c0));
        }
        let (seed_dims, _, ops) = plan_upsampling(&cfg.spec)?;
        let (h0, w0) = seed_dims;
        let lin = Linear::new("lin", LATENT_DIM, c0 * h0 * w0, rng);
        let conv0 = Conv2d::new("conv0", c0, c0, (3, 3), (1, 1), (1, 1), rng);
        let bn0 = BatchNorm2d::new("bn0", c0);
        let blocks = (0..RES_SE_COUNT)
            .map(|i| ResSeBlock::new(&format!("rs{i}"), c0, SE_REDUCTION, rng))
            .collect();
        let chans = [c0, c0 / 2, c0 / 4, c0 / 8, 1];
        let mut ups = Vec::with_capacity(4);
        let mut up_bns = Vec::with_capacity(3);
        for i in 0..4 {
            ups.push(TransposeConv2d::new(
                &format!("up{i}"),
                chans[i],
                chans[i + 1],
                UP_KERNELS[i],
                UP_STRIDES[i],
                UP_PADS[i],
                ops[i],
                rng,
            ));
            if i < 3 {
                up_bns.push(BatchNorm2d::new(&format!("ubn{i}"), chans[i + 1]));
            }
        }
        Ok(AutoDecoder {
            spec: cfg.spec,
            base_channels: c0,
            seed_dims,
            lin,
            conv0,
            bn0,
            relu0: Relu::new(),
            blocks,
            ups,
            up_bns,
            up_relus: (0..3).map(|_| Relu::new()).collect(),
        })
    }

    /// Batch forward: latent rows → scaled SDF fields `(n, 1, H, W)`.
    pub fn forward_batch(&mut self, z: &Array2<T>, train: bool) -> Result<ArrayD<T>, NnError> {
        if z.ncols() != LATENT_DIM {
            return Err(NnError::LatentLength {
                expected: LATENT_DIM,
                got: z.ncols(),
            });
        }
        let n = z.nrows();
        let (h0, w0) = self.seed_dims;
        let mut x = self.lin.forward(&z.to_owned().into_dyn(), train)?;
        x = x
            .into_shape_with_order(IxDyn(&[n, self.base_channels, h0, w0]))
            .unwrap();
        x = self.conv0.forward(&x, train)?;
        x = self.bn0.forward(&x, train)?;
        x = self.relu0.forward(&x, train)?;
        for blk in &mut self.blocks {
            x = blk.forward(&x, train)?;
        }
        for i in 0..4 {
            x = self.ups[i].forward(&x, train)?;
            if i < 3 {
                x = self.up_bns[i].forward(&x, train)?;
                x = self.up_relus[i].forward(&x, train)?;
            }
        }
        Ok(x)
    }

    /// Batch backward from the output-field gradient to the latent
    /// gradient `(n, latent)`. Parameter gradients accumulate.
    pub fn backward_batch(&mut self, grad: &ArrayD<T>) -> Result<Array2<T>, NnError> {
        let mut g = grad.clone();
        for i in (0..4).rev() {
            if i < 3 {
                g = self.up_relus[i].backward(&g)?;
                g = self.up_bns[i].backward(&g)?;
            }
            g = self.ups[i].backward(&g)?;
        }
        for blk in self.blocks.iter_mut().rev() {
            g = blk.backward(&g)?;
        }
        g = self.relu0.backward(&g)?;
        g = self.bn0.backward(&g)?;
        g = self.conv0.backward(&g)?;
        let n = g.shape()[0];
        let flat = g
            .into_shape_with_order(IxDyn(&[n, self.base_channels * self.seed_dims.0 * self.seed_dims.1]))
            .unwrap();
        let dz = self.lin.backward(&flat)?;
        Ok(dz.into_dimensionality::<Ix2>().unwrap())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.lin.params_mut();
        v.extend(self.conv0.params_mut());
        v.extend(self.bn0.params_mut());
        for blk in &mut self.blocks {
            v.extend(blk.params_mut());
        }
        for up in &mut self.ups {
            v.extend(up.params_mut());
        }
        for bn in &mut self.up_bns {
            v.extend(bn.params_mut());
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.bn0.buffers_mut();
        for blk in &mut self.blocks {
            v.extend(blk.buffers_mut());
        }
        for bn in &mut self.up_bns {
            v.extend(bn.buffers_mut());
        }
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn layer_table(&self) -> Vec<LayerSpec> {
        let c0 = self.base_channels as u32;
        let (h0, w0) = self.seed_dims;
        let mut t = vec![
            LayerSpec {
                kind: layer_kind::LINEAR,
                name: "lin".into(),
                dims: [
                    LATENT_DIM as u32,
                    c0 * h0 as u32 * w0 as u32,
                    0, 0, 0, 0, 0, 0, 0, 0,
                ],
            },
            LayerSpec {
                kind: layer_kind::CONV,
                name: "conv0".into(),
                dims: [c0, c0, 3, 3, 1, 1, 1, 1, 0, 0],
            },
            LayerSpec {
                kind: layer_kind::BATCH_NORM,
                name: "bn0".into(),
                dims: [c0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            },
        ];
        for i in 0..RES_SE_COUNT {
            t.push(LayerSpec {
                kind: layer_kind::RES_SE,
                name: format!("rs{i}"),
                dims: [c0, c0, 3, 3, 1, 1, 1, 1, 0, 0],
            });
        }
        for (i, up) in self.ups.iter().enumerate() {
            t.push(LayerSpec {
                kind: layer_kind::TRANSPOSE_CONV,
                name: format!("up{i}"),
                dims: [
                    up.in_c as u32,
                    up.out_c as u32,
                    up.k.0 as u32,
                    up.k.1 as u32,
                    up.s.0 as u32,
                    up.s.1 as u32,
                    up.p.0 as u32,
                    up.p.1 as u32,
                    up.op.0 as u32,
                    up.op.1 as u32,
                ],
            });
        }
        for i in 0..3 {
            let c = self.ups[i].out_c as u32;
            t.push(LayerSpec {
                kind: layer_kind::BATCH_NORM,
                name: format!("ubn{i}"),
                dims: [c, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            });
        }
        t
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<(), DecoderError> {
        let mut ck = Checkpoint {
            layers: self.layer_table(),
            ..Default::default()
        };
        ck.meta.insert("kind".into(), 1.0);
        ck.meta.insert("latent_dim".into(), LATENT_DIM as f64);
        ck.meta
            .insert("base_channels".into(), self.base_channels as f64);
        ck.meta.insert("grid_height".into(), self.spec.height as f64);
        ck.meta.insert("grid_width".into(), self.spec.width as f64);
        ck.meta.insert("grid_origin_x".into(), self.spec.origin.x);
        ck.meta.insert("grid_origin_y".into(), self.spec.origin.y);
        ck.meta.insert("grid_spacing".into(), self.spec.spacing);
        ck.meta.insert("sdf_scale".into(), SDF_SCALE);
        for p in self.params_mut() {
            ck.put(p);
        }
        for b in self.buffers_mut() {
            ck.put(b);
        }
        ckpt::write_checkpoint(path, &ck)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DecoderError> {
        let ck = ckpt::read_checkpoint(path)?;
        let spec = GridSpec::new(
            ck.meta_value("grid_height")? as usize,
            ck.meta_value("grid_width")? as usize,
            crate::geometry::Vec2::new(
                ck.meta_value("grid_origin_x")?,
                ck.meta_value("grid_origin_y")?,
            ),
            ck.meta_value("grid_spacing")?,
        )?;
        let cfg = DecoderConfig::new(spec, ck.meta_value("base_channels")? as usize);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut model = AutoDecoder::new(&cfg, &mut rng)?;
        if ck.layers != model.layer_table() {
            return Err(NnError::ShapeMismatch {
                expected: "checkpoint layer table matching the configured network".into(),
                got: "a different layer table".into(),
            }
            .into());
        }
        for p in model.params_mut() {
            ck.get_into(p)?;
        }
        for b in model.buffers_mut() {
            ck.get_into(b)?;
        }
        Ok(model)
    }
}

impl AutoDecoder<f32> {
    /// Deterministic single-latent decode to an SDF grid in millimetres.
    pub fn decode(&mut self, z: &[f32]) -> Result<ScalarGrid, DecoderError> {
        if z.len() != LATENT_DIM {
            return Err(NnError::LatentLength {
                expected: LATENT_DIM,
                got: z.len(),
            }
            .into());
        }
        let zm = Array2::from_shape_vec((1, LATENT_DIM), z.to_vec()).unwrap();
        let out = self.forward_batch(&zm, false)?;
        let mut grid = ScalarGrid::filled(self.spec, GridKind::Sdf, 0.0);
        let flat = out.as_standard_layout();
        let flat = flat.as_slice().unwrap();
        for (dst, &src) in grid.values.iter_mut().zip(flat.iter()) {
            *dst = src * SDF_SCALE as f32;
        }
        Ok(grid)
    }
}

/// Stack grids into a scaled `(n, 1, H, W)` training tensor.
fn stack_scaled(shapes: &[ScalarGrid]) -> Array4<f32> {
    let spec = shapes[0].spec;
    let mut t = Array4::zeros((shapes.len(), 1, spec.height, spec.width));
    let inv = (1.0 / SDF_SCALE) as f32;
    for (i, s) in shapes.iter().enumerate() {
        let mut lane = t.index_axis_mut(Axis(0), i);
        let mut lane = lane.index_axis_mut(Axis(0), 0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                lane[[r, c]] = s.at(r, c) * inv;
            }
        }
    }
    t
}

/// Train the decoder and one latent per shape jointly; returns the
/// model, the latent table (row i = shape i), and per-epoch mean loss.
pub fn train_autodecoder(
    shapes: &[ScalarGrid],
    cfg: &DecoderConfig,
    tr: &DecoderTrainConfig,
) -> Result<(AutoDecoder<f32>, Array2<f32>, Vec<f64>), DecoderError> {
    if shapes.is_empty() {
        return Err(DecoderError::NoShapes);
    }
    for (i, s) in shapes.iter().enumerate() {
        if s.spec != cfg.spec {
            return Err(DecoderError::InconsistentGrids { index: i });
        }
    }
    let n = shapes.len();
    let mut rng = ChaCha12Rng::seed_from_u64(tr.seed);
    let mut model = AutoDecoder::<f32>::new(cfg, &mut rng)?;
    let normal = Normal::new(0.0f64, 0.01).unwrap();
    let mut latents: Vec<Param<f32>> = (0..n)
        .map(|i| {
            let v = ArrayD::from_shape_fn(IxDyn(&[LATENT_DIM]), |_| normal.sample(&mut rng) as f32);
            Param::new(format!("latent_{i:04}"), v)
        })
        .collect();
    let gt = stack_scaled(shapes);
    let mut adam = Adam::<f32>::new(tr.lr);
    let (l1, l2) = (sc::<f32>(tr.lambda1), sc::<f32>(tr.lambda2));
    let mut history = Vec::with_capacity(tr.epochs);

    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..tr.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(tr.batch_size.max(1)) {
            let b = batch.len();
            let mut z = Array2::<f32>::zeros((b, LATENT_DIM));
            for (bi, &si) in batch.iter().enumerate() {
                let row = latents[si].value.as_slice().unwrap();
                z.row_mut(bi)
                    .assign(&ndarray::ArrayView1::from(row));
            }
            let mut batch_gt = Array4::<f32>::zeros((b, 1, cfg.spec.height, cfg.spec.width));
            for (bi, &si) in batch.iter().enumerate() {
                batch_gt
                    .index_axis_mut(Axis(0), bi)
                    .assign(&gt.index_axis(Axis(0), si));
            }
            let pred = model.forward_batch(&z, true)?;
            let (loss, dloss) =
                loss_composite_batched(&pred, &batch_gt.into_dyn(), l1, l2)?;
            epoch_loss += loss as f64 * b as f64 / n as f64;
            model.zero_grads();
            let dz = model.backward_batch(&dloss)?;
            for (bi, &si) in batch.iter().enumerate() {
                latents[si].zero_grad();
                let g = dz.row(bi);
                latents[si]
                    .grad
                    .as_slice_mut()
                    .unwrap()
                    .copy_from_slice(g.as_slice().unwrap());
            }
            let mut refs = model.params_mut();
            let batch_set: std::collections::BTreeSet<usize> = batch.iter().copied().collect();
            refs.extend(
                latents
                    .iter_mut()
                    .enumerate()
                    .filter(|(i, _)| batch_set.contains(i))
                    .map(|(_, p)| p),
            );
            adam.step(&mut refs)?;
        }
        history.push(epoch_loss);
    }

    let mut table = Array2::<f32>::zeros((n, LATENT_DIM));
    for (i, p) in latents.iter().enumerate() {
        table
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(p.value.as_slice().unwrap()));
    }
    Ok((model, table, history))
}

/// Embed an SDF into latent space with the decoder frozen: Adam on a
/// seeded random initial latent. Returns the latent and per-step loss.
pub fn infer_latent(
    model: &mut AutoDecoder<f32>,
    sdf: &ScalarGrid,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(Vec<f32>, Vec<f64>), DecoderError> {
    if sdf.spec != model.spec {
        return Err(DecoderError::SpecMismatch);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.01).unwrap();
    let mut z = Param::new(
        "z",
        ArrayD::from_shape_fn(IxDyn(&[LATENT_DIM]), |_| normal.sample(&mut rng) as f32),
    );
    let gt = stack_scaled(std::slice::from_ref(sdf)).into_dyn();
    let mut adam = Adam::<f32>::new(lr);
    let (l1, l2) = (0.01f32, 0.2f32);
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let zm = Array2::from_shape_vec((1, LATENT_DIM), z.value.as_slice().unwrap().to_vec())
            .unwrap();
        let pred = model.forward_batch(&zm, false)?;
        let (loss, dloss) = loss_composite_batched(&pred, &gt, l1, l2)?;
        history.push(loss as f64);
        model.zero_grads();
        let dz = model.backward_batch(&dloss)?;
        z.zero_grad();
        z.grad
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(dz.row(0).as_slice().unwrap());
        adam.step(&mut [&mut z])?;
    }
    Ok((z.value.as_slice().unwrap().to_vec(), history))
}

/// Evenly spaced interior points on the segment z1→z2:
/// `z1 + (i/(k+1))·(z2−z1)` for `i = 1..=k`.
pub fn interpolate_latents(z1: &[f32], z2: &[f32], k: usize) -> Vec<Vec<f32>> {
    assert_eq!(z1.len(), z2.len(), "latent lengths differ");
    (1..=k)
        .map(|i| {
            let t = i as f32 / (k + 1) as f32;
            z1.iter()
                .zip(z2.iter())
                .map(|(&a, &b)| a + t * (b - a))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;

    fn tiny_spec() -> GridSpec {
        GridSpec::centered(40, 40, 4.0, Vec2::new(550.0, 300.0)).unwrap()
    }

    /// A smooth synthetic SDF-like field: signed distance to a circle.
    fn circle_grid(spec: GridSpec, cx: f64, cy: f64, r: f64) -> ScalarGrid {
        let mut g = ScalarGrid::filled(spec, GridKind::Sdf, 0.0);
        for row in 0..spec.height {
            for col in 0..spec.width {
                let p = spec.pixel_center(row, col);
                let d = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() - r;
                *g.at_mut(row, col) = d as f32;
            }
        }
        g
    }

    #[test]
    fn seed_dims_and_stage_dims_invert_the_transpose_chain() {
        let (seed, outs, ops) = plan_upsampling(&GridSpec::desk()).unwrap();
        assert_eq!(seed, (9, 35));
        assert_eq!(outs, vec![(19, 70), (38, 140), (76, 140), (152, 280)]);
        for (i, &(oh, ow)) in ops.iter().enumerate() {
            assert!(oh < UP_STRIDES[i].0 && ow < UP_STRIDES[i].1.max(1));
        }
        let (seed_p, outs_p, _) = plan_upsampling(&GridSpec::paper()).unwrap();
        assert_eq!(seed_p, (38, 140));
        assert_eq!(outs_p.last(), Some(&(610, 1120)));
    }

    #[test]
    fn decode_is_deterministic_and_correctly_shaped() {
        let cfg = DecoderConfig::new(tiny_spec(), 8);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut model = AutoDecoder::<f32>::new(&cfg, &mut rng).unwrap();
        let z = vec![0.02f32; LATENT_DIM];
        let a = model.decode(&z).unwrap();
        let b = model.decode(&z).unwrap();
        assert_eq!(a.spec.height, 40);
        assert_eq!(a.spec.width, 40);
        assert_eq!(a.values, b.values);
        // Wrong latent length is rejected.
        assert!(model.decode(&[0.0; 7]).is_err());
    }

    #[test]
    fn training_overfits_a_single_shape() {
        let spec = tiny_spec();
        let cfg = DecoderConfig::new(spec, 8);
        let shapes = vec![circle_grid(spec, 550.0, 300.0, 50.0)];
        let tr = DecoderTrainConfig {
            epochs: 500,
            batch_size: 16,
            lr: 5e-3,
            seed: 37,
            ..Default::default()
        };
        let (mut model, latents, history) = train_autodecoder(&shapes, &cfg, &tr).unwrap();
        assert_eq!(latents.dim(), (1, LATENT_DIM));
        assert!(history.last().unwrap() < &(history[0] * 0.5));
        // Reconstruction broadly matches: mean absolute error small
        // relative to the field's range.
        let rec = model.decode(latents.row(0).as_slice().unwrap()).unwrap();
        let gt = &shapes[0];
        let mae: f64 = rec
            .values
            .iter()
            .zip(gt.values.iter())
            .map(|(&a, &b)| (a - b).abs() as f64)
            .sum::<f64>()
            / rec.values.len() as f64;
        let (lo, hi) = gt.min_max();
        assert!(mae < 0.2 * (hi - lo) as f64, "mae {mae}");
    }

    #[test]
    fn inconsistent_grids_are_rejected() {
        let spec = tiny_spec();
        let other = GridSpec::centered(40, 40, 5.0, Vec2::new(550.0, 300.0)).unwrap();
        let shapes = vec![
            circle_grid(spec, 550.0, 300.0, 40.0),
            circle_grid(other, 550.0, 300.0, 40.0),
        ];
        let cfg = DecoderConfig::new(spec, 8);
        match train_autodecoder(&shapes, &cfg, &DecoderTrainConfig::default()) {
            Err(DecoderError::InconsistentGrids { index: 1 }) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("mixed grid specs were accepted"),
        }
        match train_autodecoder(&[], &cfg, &DecoderTrainConfig::default()) {
            Err(DecoderError::NoShapes) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("empty training set was accepted"),
        }
    }

    #[test]
    fn infer_latent_with_zero_steps_returns_the_seeded_init() {
        let spec = tiny_spec();
        let cfg = DecoderConfig::new(spec, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut model = AutoDecoder::<f32>::new(&cfg, &mut rng).unwrap();
        let sdf = circle_grid(spec, 550.0, 300.0, 45.0);
        let (z1, h1) = infer_latent(&mut model, &sdf, 0, 0.4, 123).unwrap();
        assert!(h1.is_empty());
        let (z2, _) = infer_latent(&mut model, &sdf, 0, 0.4, 123).unwrap();
        assert_eq!(z1, z2);
        // Same distribution draw as a direct seeded sample.
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let normal = Normal::new(0.0f64, 0.01).unwrap();
        let want: Vec<f32> = (0..LATENT_DIM).map(|_| normal.sample(&mut rng) as f32).collect();
        assert_eq!(z1, want);
    }

    #[test]
    fn interpolation_is_linear_and_excludes_endpoints() {
        let z1 = vec![0.0f32; 3];
        let z2 = vec![9.0f32; 3];
        let chain = interpolate_latents(&z1, &z2, 8);
        assert_eq!(chain.len(), 8);
        for (i, z) in chain.iter().enumerate() {
            for &v in z {
                assert!((v - (i as f32 + 1.0)).abs() < 1e-6);
            }
        }
        let mid = interpolate_latents(&z1, &z2, 1);
        assert!((mid[0][0] - 4.5).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_preserves_decode_outputs() {
        let spec = tiny_spec();
        let cfg = DecoderConfig::new(spec, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut model = AutoDecoder::<f32>::new(&cfg, &mut rng).unwrap();
        // Push the batch-norm buffers off their init to make the test real.
        let z = Array2::from_shape_fn((3, LATENT_DIM), |(i, j)| {
            ((i * 7 + j) as f32 * 0.013).sin() * 0.05
        });
        model.forward_batch(&z, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decoder.nnck");
        model.save(&path).unwrap();
        let mut back = AutoDecoder::<f32>::load(&path).unwrap();
        let zq = vec![0.01f32; LATENT_DIM];
        assert_eq!(
            model.decode(&zq).unwrap().values,
            back.decode(&zq).unwrap().values
        );
        // Byte-stable writes.
        let path2 = dir.path().join("decoder2.nnck");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn decode_is_continuous_in_the_latent() {
        let spec = tiny_spec();
        let cfg = DecoderConfig::new(spec, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let mut model = AutoDecoder::<f32>::new(&cfg, &mut rng).unwrap();
        let z: Vec<f32> = (0..LATENT_DIM).map(|i| (i as f32 * 0.37).sin() * 0.02).collect();
        let base = model.decode(&z).unwrap();
        let sup = |a: &ScalarGrid, b: &ScalarGrid| {
            a.values
                .iter()
                .zip(b.values.iter())
                .map(|(&x, &y)| (x - y).abs())
                .fold(0.0f32, f32::max)
        };
        // Slope estimated at delta = 1e-2 bounds the delta = 1e-3 change.
        let mut z_big = z.clone();
        z_big[0] += 1e-2;
        let slope = sup(&model.decode(&z_big).unwrap(), &base) / 1e-2;
        let mut z_small = z.clone();
        z_small[0] += 1e-3;
        let change = sup(&model.decode(&z_small).unwrap(), &base);
        assert!(change <= (slope * 1e-3) * 3.0 + 1e-3, "change {change} slope {slope}");
    }
}
