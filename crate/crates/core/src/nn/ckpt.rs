//! Model checkpoint serialization.
//!
//! `NNCK` files hold named f64 metadata, a structural layer table, and
//! named little-endian f32 parameter tensors. `LMAT` files hold one f32
//! matrix (the trained latent table). Both formats read strictly: bad
//! magic, unknown versions, truncation, and trailing bytes are errors,
//! and writes are deterministic so identical models produce identical
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use super::{NnError, Param, Scalar};

pub const NNCK_MAGIC: &[u8; 4] = b"NNCK";
pub const NNCK_VERSION: u16 = 1;
pub const LMAT_MAGIC: &[u8; 4] = b"LMAT";
pub const LMAT_VERSION: u16 = 1;

/// Structural record for one layer: a kind tag, the layer name, and ten
/// u32 fields (channels in/out, kernel, stride, padding, output padding;
/// unused slots are zero). The table lets a loader verify that a file
/// matches the network it is being loaded into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: u8,
    pub name: String,
    pub dims: [u32; 10],
}

pub mod layer_kind {
    pub const CONV: u8 = 0;
    pub const TRANSPOSE_CONV: u8 = 1;
    pub const LINEAR: u8 = 2;
    pub const BATCH_NORM: u8 = 3;
    pub const RES_SE: u8 = 4;
    pub const SE: u8 = 5;
}

/// In-memory form of an `NNCK` file.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, f64>,
    pub layers: Vec<LayerSpec>,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&ArrayD<f32>, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn meta_value(&self, name: &str) -> Result<f64, NnError> {
        self.meta
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(format!("meta:{name}")))
    }

    /// Record a parameter (or buffer) tensor, cast to f32.
    pub fn put<T: Scalar>(&mut self, p: &Param<T>) {
        self.tensors
            .insert(p.name.clone(), p.value.mapv(|v| v.to_f32().unwrap()));
    }

    /// Load a stored tensor into a parameter, checking the shape.
    pub fn get_into<T: Scalar>(&self, p: &mut Param<T>) -> Result<(), NnError> {
        let t = self.tensor(&p.name)?;
        if t.shape() != p.value.shape() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{}: {:?}", p.name, p.value.shape()),
                got: format!("{:?}", t.shape()),
            });
        }
        p.value = t.mapv(|v| super::sc(v as f64));
        Ok(())
    }
}

struct Rd<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Rd<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::ShortRead {
                expected: n,
                got: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, NnError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| NnError::BadHeader {
            field: "name encoding",
            value: len as u64,
        })
    }

    fn done(&self) -> Result<(), NnError> {
        if self.pos != self.buf.len() {
            return Err(NnError::TrailingBytes);
        }
        Ok(())
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    let bytes = name.as_bytes();
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NNCK_MAGIC);
    out.extend_from_slice(&NNCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(ck.meta.len() as u32).to_le_bytes());
    for (name, value) in &ck.meta {
        put_name(&mut out, name);
        out.extend_from_slice(&value.to_le_bytes());
    }
    out.extend_from_slice(&(ck.layers.len() as u32).to_le_bytes());
    for layer in &ck.layers {
        out.push(layer.kind);
        put_name(&mut out, &layer.name);
        for d in layer.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &ck.tensors {
        put_name(&mut out, name);
        out.push(tensor.ndim() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.as_standard_layout().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, NnError> {
    let mut rd = Rd { buf, pos: 0 };
    if rd.take(4)? != NNCK_MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = rd.u16()?;
    if version != NNCK_VERSION {
        return Err(NnError::BadHeader {
            field: "version",
            value: version as u64,
        });
    }
    let mut ck = Checkpoint::default();
    let n_meta = rd.u32()?;
    for _ in 0..n_meta {
        let name = rd.name()?;
        let value = rd.f64()?;
        ck.meta.insert(name, value);
    }
    let n_layers = rd.u32()?;
    for _ in 0..n_layers {
        let kind = rd.u8()?;
        let name = rd.name()?;
        let mut dims = [0u32; 10];
        for d in dims.iter_mut() {
            *d = rd.u32()?;
        }
        ck.layers.push(LayerSpec { kind, name, dims });
    }
    let n_tensors = rd.u32()?;
    for _ in 0..n_tensors {
        let name = rd.name()?;
        let ndim = rd.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(rd.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let bytes = rd.take(len * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|_| {
            NnError::BadHeader {
                field: "tensor shape",
                value: len as u64,
            }
        })?;
        ck.tensors.insert(name, tensor);
    }
    rd.done()?;
    Ok(ck)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NnError> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn encode_latents(latents: &Array2<f32>) -> Vec<u8> {
    let (rows, cols) = latents.dim();
    let mut out = Vec::with_capacity(14 + rows * cols * 4);
    out.extend_from_slice(LMAT_MAGIC);
    out.extend_from_slice(&LMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in latents.as_standard_layout().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_latents(buf: &[u8]) -> Result<Array2<f32>, NnError> {
    let mut rd = Rd { buf, pos: 0 };
    if rd.take(4)? != LMAT_MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = rd.u16()?;
    if version != LMAT_VERSION {
        return Err(NnError::BadHeader {
            field: "version",
            value: version as u64,
        });
    }
    let rows = rd.u32()? as usize;
    let cols = rd.u32()? as usize;
    let bytes = rd.take(rows * cols * 4)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    rd.done()?;
    Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
}

pub fn write_latents(path: &Path, latents: &Array2<f32>) -> Result<(), NnError> {
    std::fs::write(path, encode_latents(latents))?;
    Ok(())
}

pub fn read_latents(path: &Path) -> Result<Array2<f32>, NnError> {
    decode_latents(&std::fs::read(path)?)
}
