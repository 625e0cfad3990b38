//! Image surrogate: a masked residual-SE U-Net mapping a blank SDF grid
//! to the full forming thinning field.
//!
//! Six strided encoder stages, six residual SE blocks at the bottleneck,
//! six transpose-conv decoder stages with skip concatenations at matched
//! resolutions, a skip of the raw (scaled) input into the final (5,5)
//! convolution, and an output mask that nullifies every pixel outside
//! the blank (`SDF ≥ 0`) exactly. The mask is a constant in backward;
//! gradients reach the input through the first encoder stage and the
//! raw-input skip, which is what the latent optimizer differentiates.

use ndarray::{Array4, ArrayD, Axis, Slice};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::grid::{augment_flips, GridError, GridKind, GridSpec, ScalarGrid};
use crate::nn::ckpt::{self, layer_kind, Checkpoint, LayerSpec};
use crate::nn::layers::{BatchNorm2d, Conv2d, Layer, Relu, ResSeBlock, TransposeConv2d};
use crate::nn::{loss_composite_batched, sc, Adam, NnError, Param, Scalar};

/// Input SDFs are divided by this at the network boundary (the same
/// constant the shape decoder uses, so the two nets compose directly).
pub const SDF_SCALE: f64 = crate::decoder::SDF_SCALE;

const STAGES: usize = 6;
const ENC_KERNELS: [(usize, usize); STAGES] =
    [(8, 8), (8, 9), (6, 5), (4, 3), (3, 3), (3, 3)];
const ENC_STRIDES: [(usize, usize); STAGES] =
    [(2, 2), (2, 1), (2, 2), (2, 2), (2, 2), (2, 2)];
const ENC_PADS: [(usize, usize); STAGES] =
    [(3, 3), (3, 4), (2, 2), (1, 1), (1, 1), (1, 1)];
/// Encoder channel multipliers over the base width.
const ENC_MULT: [usize; STAGES] = [1, 2, 4, 8, 8, 8];
const RES_SE_COUNT: usize = 6;
const SE_REDUCTION: usize = 16;

#[derive(Debug, Error)]
pub enum UnetError {
    #[error("need at least 2 training pairs, got {0}")]
    TooFewPairs(usize),
    #[error("pair {index} grid spec differs from the first pair's")]
    InconsistentGrids { index: usize },
    #[error("grid spec mismatch between model and input")]
    SpecMismatch,
    #[error("base channel count must be positive")]
    BadChannels,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy)]
pub struct UnetConfig {
    pub spec: GridSpec,
    /// First-stage channel width; deeper stages scale by 2, 4, 8, 8, 8.
    pub base_channels: usize,
}

impl UnetConfig {
    pub fn new(spec: GridSpec, base_channels: usize) -> Self {
        UnetConfig {
            spec,
            base_channels,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UnetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub augment: bool,
}

impl Default for UnetTrainConfig {
    fn default() -> Self {
        UnetTrainConfig {
            epochs: 2000,
            batch_size: 4,
            lr: 4e-4,
            seed: 37,
            lambda1: 1.0,
            lambda2: 0.2,
            augment: true,
        }
    }
}

struct EncStage<T: Scalar> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

struct DecStage<T: Scalar> {
    tconv: TransposeConv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

pub struct MaskResSEUNet<T: Scalar> {
    pub spec: GridSpec,
    pub base_channels: usize,
    /// Spatial dims entering each encoder stage, then the bottleneck:
    /// `dims[0]` = input, `dims[i]` = output of encoder stage i.
    pub dims: Vec<(usize, usize)>,
    enc: Vec<EncStage<T>>,
    blocks: Vec<ResSeBlock<T>>,
    dec: Vec<DecStage<T>>,
    final_conv: Conv2d<T>,
    cache: Option<ForwardCache<T>>,
}

struct ForwardCache<T: Scalar> {
    mask: ArrayD<T>,
}

/// Per-stage encoder output dims, or an error naming the collapsing
/// stage.
pub fn encoder_dims(spec: &GridSpec) -> Result<Vec<(usize, usize)>, NnError> {
    let mut dims = vec![(spec.height, spec.width)];
    for i in 0..STAGES {
        let prev = dims[i];
        let h = super::nn::ops::conv_out_dim(prev.0, ENC_KERNELS[i].0, ENC_STRIDES[i].0, ENC_PADS[i].0);
        let w = super::nn::ops::conv_out_dim(prev.1, ENC_KERNELS[i].1, ENC_STRIDES[i].1, ENC_PADS[i].1);
        match (h, w) {
            (Some(h), Some(w)) if h > 0 && w > 0 => dims.push((h, w)),
            _ => return Err(NnError::DimCollapse(format!("enc{}", i + 1))),
        }
    }
    Ok(dims)
}

impl<T: Scalar> MaskResSEUNet<T> {
    pub fn new(cfg: &UnetConfig, rng: &mut ChaCha12Rng) -> Result<Self, UnetError> {
        let b = cfg.base_channels;
        if b == 0 {
            return Err(UnetError::BadChannels);
        }
        let dims = encoder_dims(&cfg.spec)?;
        let enc_out: Vec<usize> = ENC_MULT.iter().map(|m| m * b).collect();
        let enc_in: Vec<usize> = std::iter::once(1)
            .chain(enc_out.iter().copied().take(STAGES - 1))
            .collect();
        let mut enc = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            enc.push(EncStage {
                conv: Conv2d::new(
                    &format!("enc{}", i + 1),
                    enc_in[i],
                    enc_out[i],
                    ENC_KERNELS[i],
                    ENC_STRIDES[i],
                    ENC_PADS[i],
                    rng,
                ),
                bn: BatchNorm2d::new(&format!("ebn{}", i + 1), enc_out[i]),
                relu: Relu::new(),
            });
        }
        let c_bottom = enc_out[STAGES - 1];
        let blocks = (0..RES_SE_COUNT)
            .map(|i| ResSeBlock::new(&format!("rs{i}"), c_bottom, SE_REDUCTION, rng))
            .collect();

        // Decoder stage i mirrors encoder stage (6 - i) and upsamples
        // dims[6-i] → dims[5-i]; its input is the previous stage's
        // output concatenated with the matching encoder skip.
        let dec_out: Vec<usize> = (0..STAGES)
            .map(|i| if i < 2 { 8 * b } else { enc_out[STAGES - 1 - i] })
            .collect();
        let mut dec = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let mirror = STAGES - 1 - i;
            let from = dims[mirror + 1];
            let target = dims[mirror];
            let oph = super::nn::ops::output_padding_for(
                from.0,
                target.0,
                ENC_KERNELS[mirror].0,
                ENC_STRIDES[mirror].0,
                ENC_PADS[mirror].0,
            )?;
            let opw = super::nn::ops::output_padding_for(
                from.1,
                target.1,
                ENC_KERNELS[mirror].1,
                ENC_STRIDES[mirror].1,
                ENC_PADS[mirror].1,
            )?;
            let in_c = if i == 0 {
                c_bottom
            } else {
                dec_out[i - 1] + enc_out[mirror]
            };
            dec.push(DecStage {
                tconv: TransposeConv2d::new(
                    &format!("dec{}", i + 1),
                    in_c,
                    dec_out[i],
                    ENC_KERNELS[mirror],
                    ENC_STRIDES[mirror],
                    ENC_PADS[mirror],
                    (oph, opw),
                    rng,
                ),
                bn: BatchNorm2d::new(&format!("dbn{}", i + 1), dec_out[i]),
                relu: Relu::new(),
            });
        }
        let final_conv = Conv2d::new(
            "head",
            dec_out[STAGES - 1] + 1,
            1,
            (5, 5),
            (1, 1),
            (2, 2),
            rng,
        );
        Ok(MaskResSEUNet {
            spec: cfg.spec,
            base_channels: b,
            dims,
            enc,
            blocks,
            dec,
            final_conv,
            cache: None,
        })
    }

    /// Tensor-level forward on already-scaled SDF input `(n, 1, H, W)`.
    /// The mask is `1[input < 0]` per pixel; masked pixels are written
    /// as literal zeros.
    pub fn forward_scaled(&mut self, x: &ArrayD<T>, train: bool) -> Result<ArrayD<T>, NnError> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.spec.height || shape[3] != self.spec.width
        {
            return Err(NnError::ShapeMismatch {
                expected: format!("(n, 1, {}, {})", self.spec.height, self.spec.width),
                got: format!("{shape:?}"),
            });
        }
        let mask = x.mapv(|v| if v < T::zero() { T::one() } else { T::zero() });
        let mut skips: Vec<ArrayD<T>> = Vec::with_capacity(STAGES);
        skips.push(x.clone());
        let mut h = x.clone();
        for stage in &mut self.enc {
            h = stage.conv.forward(&h, train)?;
            h = stage.bn.forward(&h, train)?;
            h = stage.relu.forward(&h, train)?;
            skips.push(h.clone());
        }
        skips.pop(); // the last encoder output feeds the bottleneck, not a skip
        for blk in &mut self.blocks {
            h = blk.forward(&h, train)?;
        }
        for (i, stage) in self.dec.iter_mut().enumerate() {
            h = stage.tconv.forward(&h, train)?;
            h = stage.bn.forward(&h, train)?;
            h = stage.relu.forward(&h, train)?;
            let skip = &skips[STAGES - 1 - i];
            h = ndarray::concatenate(Axis(1), &[h.view(), skip.view()])
                .unwrap()
                .as_standard_layout()
                .to_owned();
        }
        let y_raw = self.final_conv.forward(&h, train)?;
        let mut y = y_raw;
        ndarray::Zip::from(&mut y).and(&mask).for_each(|v, &m| {
            if m == T::zero() {
                *v = T::zero();
            }
        });
        self.cache = Some(ForwardCache { mask });
        Ok(y)
    }

    /// Backward to the scaled-input gradient. The mask is constant;
    /// gradients flow through the first encoder stage and the raw-input
    /// skip into the head conv.
    pub fn backward_scaled(&mut self, grad: &ArrayD<T>) -> Result<ArrayD<T>, NnError> {
        let cache = self.cache.take().expect("forward before backward");
        let mut g = grad.clone();
        ndarray::Zip::from(&mut g).and(&cache.mask).for_each(|v, &m| {
            if m == T::zero() {
                *v = T::zero();
            }
        });
        let g_head_in = self.final_conv.backward(&g)?;
        let head_c = self.dec[STAGES - 1].tconv.out_c;
        let (mut g, mut g_input) = split_channels(&g_head_in, head_c);
        let mut skip_grads: Vec<Option<ArrayD<T>>> = vec![None; STAGES - 1];
        for i in (0..STAGES).rev() {
            let stage = &mut self.dec[i];
            let gr = stage.relu.backward(&g)?;
            let gb = stage.bn.backward(&gr)?;
            let gin = stage.tconv.backward(&gb)?;
            if i == 0 {
                g = gin;
            } else {
                let prev_c = self.dec[i - 1].tconv.out_c;
                let (g_prev, g_skip) = split_channels(&gin, prev_c);
                // Stage i consumed skip index STAGES-1-(i-1) = encoder
                // output e[STAGES-1-i] … record for the encoder pass.
                skip_grads[STAGES - 1 - i] = Some(g_skip);
                g = g_prev;
            }
        }
        for blk in self.blocks.iter_mut().rev() {
            g = blk.backward(&g)?;
        }
        // Encoder backward, adding each stage's skip gradient where the
        // decoder consumed its activation.
        for j in (0..STAGES).rev() {
            if j < STAGES - 1 {
                if let Some(sg) = skip_grads[j].take() {
                    g = g + sg;
                }
            }
            let stage = &mut self.enc[j];
            let gr = stage.relu.backward(&g)?;
            let gb = stage.bn.backward(&gr)?;
            g = stage.conv.backward(&gb)?;
        }
        g_input = g_input + g;
        Ok(g_input)
    }

    /// Grid-level inference: SDF in millimetres → thinning field.
    pub fn predict_field(&mut self, sdf: &ScalarGrid) -> Result<ScalarGrid, UnetError>
    where
        T: Scalar,
    {
        if sdf.spec != self.spec {
            return Err(UnetError::SpecMismatch);
        }
        let x = grid_to_tensor::<T>(std::slice::from_ref(sdf), 1.0 / SDF_SCALE);
        let y = self.forward_scaled(&x.into_dyn(), false)?;
        let mut out = ScalarGrid::filled(self.spec, GridKind::ThinningField, 0.0);
        let flat = y.as_standard_layout();
        let flat = flat.as_slice().unwrap();
        for (dst, &src) in out.values.iter_mut().zip(flat.iter()) {
            *dst = src.to_f32().unwrap();
        }
        Ok(out)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for s in &mut self.enc {
            v.extend(s.conv.params_mut());
            v.extend(s.bn.params_mut());
        }
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        for s in &mut self.dec {
            v.extend(s.tconv.params_mut());
            v.extend(s.bn.params_mut());
        }
        v.extend(self.final_conv.params_mut());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for s in &mut self.enc {
            v.extend(s.bn.buffers_mut());
        }
        for b in &mut self.blocks {
            v.extend(b.buffers_mut());
        }
        for s in &mut self.dec {
            v.extend(s.bn.buffers_mut());
        }
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn layer_table(&self) -> Vec<LayerSpec> {
        let mut t = Vec::new();
        for (i, s) in self.enc.iter().enumerate() {
            t.push(LayerSpec {
                kind: layer_kind::CONV,
                name: format!("enc{}", i + 1),
                dims: [
                    s.conv.in_c as u32,
                    s.conv.out_c as u32,
                    s.conv.k.0 as u32,
                    s.conv.k.1 as u32,
                    s.conv.s.0 as u32,
                    s.conv.s.1 as u32,
                    s.conv.p.0 as u32,
                    s.conv.p.1 as u32,
                    0,
                    0,
                ],
            });
        }
        for i in 0..RES_SE_COUNT {
            let c = self.enc[STAGES - 1].conv.out_c as u32;
            t.push(LayerSpec {
                kind: layer_kind::RES_SE,
                name: format!("rs{i}"),
                dims: [c, c, 3, 3, 1, 1, 1, 1, 0, 0],
            });
        }
        for (i, s) in self.dec.iter().enumerate() {
            t.push(LayerSpec {
                kind: layer_kind::TRANSPOSE_CONV,
                name: format!("dec{}", i + 1),
                dims: [
                    s.tconv.in_c as u32,
                    s.tconv.out_c as u32,
                    s.tconv.k.0 as u32,
                    s.tconv.k.1 as u32,
                    s.tconv.s.0 as u32,
                    s.tconv.s.1 as u32,
                    s.tconv.p.0 as u32,
                    s.tconv.p.1 as u32,
                    s.tconv.op.0 as u32,
                    s.tconv.op.1 as u32,
                ],
            });
        }
        t.push(LayerSpec {
            kind: layer_kind::CONV,
            name: "head".into(),
            dims: [
                self.final_conv.in_c as u32,
                1,
                5,
                5,
                1,
                1,
                2,
                2,
                0,
                0,
            ],
        });
        t
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<(), UnetError> {
        let mut ck = Checkpoint {
            layers: self.layer_table(),
            ..Default::default()
        };
        ck.meta.insert("kind".into(), 2.0);
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

    pub fn load(path: &std::path::Path) -> Result<Self, UnetError> {
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
        let cfg = UnetConfig::new(spec, ck.meta_value("base_channels")? as usize);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut model = MaskResSEUNet::new(&cfg, &mut rng)?;
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

impl MaskResSEUNet<f32> {
    /// Maxima of the predicted field: (max thinning, max thickening).
    pub fn predict_maxima(&mut self, sdf: &ScalarGrid) -> Result<(f64, f64), UnetError> {
        let field = self.predict_field(sdf)?;
        Ok(crate::oracle::maxima(&field))
    }
}

fn split_channels<T: Scalar>(g: &ArrayD<T>, c_first: usize) -> (ArrayD<T>, ArrayD<T>) {
    let a = g
        .slice_axis(Axis(1), Slice::from(0..c_first))
        .as_standard_layout()
        .to_owned()
        .into_dyn();
    let b = g
        .slice_axis(Axis(1), Slice::from(c_first..))
        .as_standard_layout()
        .to_owned()
        .into_dyn();
    (a, b)
}

/// Stack grids into `(n, 1, H, W)`, multiplying values by `scale`.
fn grid_to_tensor<T: Scalar>(grids: &[ScalarGrid], scale: f64) -> Array4<T> {
    let spec = grids[0].spec;
    let mut t = Array4::zeros((grids.len(), 1, spec.height, spec.width));
    let s = sc::<T>(scale);
    for (i, g) in grids.iter().enumerate() {
        let mut lane = t.index_axis_mut(Axis(0), i);
        let mut lane = lane.index_axis_mut(Axis(0), 0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                lane[[r, c]] = sc::<T>(g.at(r, c) as f64) * s;
            }
        }
    }
    t
}

/// Train the image surrogate on (SDF, thinning field) pairs. With
/// `augment`, the set is expanded fourfold by the two axis flips and
/// their composition before shuffling. Returns the model and per-epoch
/// mean loss.
pub fn train_iaism(
    pairs: &[(ScalarGrid, ScalarGrid)],
    cfg: &UnetConfig,
    tr: &UnetTrainConfig,
) -> Result<(MaskResSEUNet<f32>, Vec<f64>), UnetError> {
    if pairs.len() < 2 {
        return Err(UnetError::TooFewPairs(pairs.len()));
    }
    for (i, (s, f)) in pairs.iter().enumerate() {
        if s.spec != cfg.spec || f.spec != cfg.spec {
            return Err(UnetError::InconsistentGrids { index: i });
        }
    }
    let expanded;
    let data: &[(ScalarGrid, ScalarGrid)] = if tr.augment {
        expanded = augment_flips(pairs);
        &expanded
    } else {
        pairs
    };
    let n = data.len();

    let mut rng = ChaCha12Rng::seed_from_u64(tr.seed);
    let mut model = MaskResSEUNet::<f32>::new(cfg, &mut rng)?;
    let mut adam = Adam::<f32>::new(tr.lr);
    let (l1, l2) = (tr.lambda1 as f32, tr.lambda2 as f32);

    let inputs: Vec<ScalarGrid> = data.iter().map(|(s, _)| s.clone()).collect();
    let fields: Vec<ScalarGrid> = data.iter().map(|(_, f)| f.clone()).collect();
    let x_all = grid_to_tensor::<f32>(&inputs, 1.0 / SDF_SCALE);
    let y_all = grid_to_tensor::<f32>(&fields, 1.0);

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(tr.epochs);
    for _epoch in 0..tr.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(tr.batch_size.max(1)) {
            let b = batch.len();
            let mut x = Array4::<f32>::zeros((b, 1, cfg.spec.height, cfg.spec.width));
            let mut y = Array4::<f32>::zeros((b, 1, cfg.spec.height, cfg.spec.width));
            for (bi, &si) in batch.iter().enumerate() {
                x.index_axis_mut(Axis(0), bi)
                    .assign(&x_all.index_axis(Axis(0), si));
                y.index_axis_mut(Axis(0), bi)
                    .assign(&y_all.index_axis(Axis(0), si));
            }
            let pred = model.forward_scaled(&x.into_dyn(), true)?;
            let (loss, dloss) = loss_composite_batched(&pred, &y.into_dyn(), l1, l2)?;
            epoch_loss += loss as f64 * b as f64 / n as f64;
            model.zero_grads();
            model.backward_scaled(&dloss)?;
            let mut refs = model.params_mut();
            adam.step(&mut refs)?;
        }
        history.push(epoch_loss);
    }
    Ok((model, history))
}
