//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CTCNNCKP"
//! version  u32      1
//! input    u32 rank, then u32 per dimension
//! layers   u32 count, then per layer a u8 tag and its fields
//!            1 conv2d   u32 filters, u32 kh, u32 kw, u8 padding (0 same, 1 valid)
//!            2 maxpool2x2
//!            3 flatten
//!            4 dense    u32 units
//!            5 relu
//!            6 softmax
//! params   u32 count, then per tensor u32 rank, u32 dims, f32 values
//! ```

use std::path::Path;

use crate::nn::{LayerSpec, Model, Padding, Scalar, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CTCNNCKP";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        put_u32(&mut out, d);
    }
    let specs = model.specs();
    put_u32(&mut out, specs.len());
    for spec in &specs {
        match *spec {
            LayerSpec::Conv2d {
                filters,
                kernel: (kh, kw),
                padding,
            } => {
                out.push(1);
                put_u32(&mut out, filters);
                put_u32(&mut out, kh);
                put_u32(&mut out, kw);
                out.push(match padding {
                    Padding::Same => 0,
                    Padding::Valid => 1,
                });
            }
            LayerSpec::MaxPool2x2 => out.push(2),
            LayerSpec::Flatten => out.push(3),
            LayerSpec::Dense { units } => {
                out.push(4);
                put_u32(&mut out, units);
            }
            LayerSpec::Relu => out.push(5),
            LayerSpec::Softmax => out.push(6),
        }
    }
    let params = model.params();
    put_u32(&mut out, params.len());
    for p in params {
        put_u32(&mut out, p.shape().len());
        for &d in p.shape() {
            put_u32(&mut out, d);
        }
        for &v in p.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        (0..rank).map(|_| self.u32()).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())
        .map_err(|_| Error::Format("missing magic".into()))?
        != MAGIC
    {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let input_shape = r.dims()?;
    let layer_count = r.u32()?;
    let mut specs = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        specs.push(match r.u8()? {
            1 => {
                let filters = r.u32()?;
                let kernel = (r.u32()?, r.u32()?);
                let padding = match r.u8()? {
                    0 => Padding::Same,
                    1 => Padding::Valid,
                    p => return Err(Error::Format(format!("unknown padding {p}"))),
                };
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    padding,
                }
            }
            2 => LayerSpec::MaxPool2x2,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Dense { units: r.u32()? },
            5 => LayerSpec::Relu,
            6 => LayerSpec::Softmax,
            tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
        });
    }
    let tensor_count = r.u32()?;
    let mut params = Vec::with_capacity(tensor_count.min(1024));
    for _ in 0..tensor_count {
        let shape = r.dims()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(input_shape, &specs, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
