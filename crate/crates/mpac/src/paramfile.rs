//! Binary [`ParamSet`] files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "MPACPRM\0"
//! version  u32      1
//! seed     u64
//! layers   u32
//!   per layer: activation u8 (0 identity, 1 relu)
//! entries  u32
//!   per entry: name_len u32, name utf-8, ndim u32, dims u64 x ndim, values f64 x prod(dims)
//! ```

use std::fs;
use std::path::Path;

use mpac_core::diffnet::{Activation, Layer, ParamSet};

pub const MAGIC: &[u8; 8] = b"MPACPRM\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ParamFileError {
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported parameter file version {0}")]
    Version(u32),
    #[error("parameter file truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed parameter file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Invalid(#[from] mpac_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&params.seed().to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        out.push(match l.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
    }
    let entries = params.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, values) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamFileError> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ParamFileError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ParamFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ParamFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ParamFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ParamFileError> {
        let raw = self.take(n.checked_mul(8).ok_or(ParamFileError::Truncated(self.pos))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet, ParamFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| ParamFileError::BadMagic)? != MAGIC {
        return Err(ParamFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ParamFileError::Version(version));
    }
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    let mut activations = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        activations.push(match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => return Err(ParamFileError::Malformed(format!("unknown activation tag {other}"))),
        });
    }
    let n_entries = r.u32()? as usize;
    if n_entries != 2 * n_layers {
        return Err(ParamFileError::Malformed(format!("{n_entries} entries for {n_layers} layers")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (i, activation) in activations.into_iter().enumerate() {
        let (wshape, weight) = read_entry(&mut r, &format!("layers.{i}.weight"))?;
        let (bshape, bias) = read_entry(&mut r, &format!("layers.{i}.bias"))?;
        if wshape.len() != 2 || bshape.len() != 1 || bshape[0] != wshape[0] {
            return Err(ParamFileError::Malformed(format!("layer {i} has inconsistent shapes")));
        }
        layers.push(Layer { inputs: wshape[1], outputs: wshape[0], weight, bias, activation });
    }
    if r.pos != bytes.len() {
        return Err(ParamFileError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ParamSet::from_layers(layers, seed)?)
}

fn read_entry(r: &mut Reader<'_>, expected: &str) -> Result<(Vec<usize>, Vec<f64>), ParamFileError> {
    let len = r.u32()? as usize;
    let name =
        std::str::from_utf8(r.take(len)?).map_err(|_| ParamFileError::Malformed("entry name is not utf-8".into()))?;
    if name != expected {
        return Err(ParamFileError::Malformed(format!("expected entry {expected}, found {name}")));
    }
    let ndim = r.u32()? as usize;
    if ndim > 2 {
        return Err(ParamFileError::Malformed(format!("{name} has {ndim} dimensions")));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count = 1usize;
    for _ in 0..ndim {
        let d = usize::try_from(r.u64()?).map_err(|_| ParamFileError::Malformed("dimension overflow".into()))?;
        count = count.checked_mul(d).ok_or_else(|| ParamFileError::Malformed("dimension overflow".into()))?;
        shape.push(d);
    }
    Ok((shape, r.f64s(count)?))
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), ParamFileError> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet, ParamFileError> {
    decode(&fs::read(path)?)
}
