//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ISOB" | u32 version (= 1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 payload
//! u32 JSON length | UTF-8 JSON (config echo and run state)
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::blocks::{IsotropicNetwork, ModelConfig};
use crate::encodings::{EncoderParams, FourierBasis, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ISOB";
pub const VERSION: u32 = 1;
/// Tensor name under which the frozen Fourier frequencies are stored.
pub const BASIS_TENSOR: &str = "encoder.rff.beta";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: Value,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::Format(format!("tensor {name} has rank {}", t.rank())))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let json = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(Error::Version(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = c.u8()? as usize;
            let shape = (0..rank)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let payload = c.take(numel * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let json_len = c.u32()? as usize;
        let meta = serde_json::from_slice(c.take(json_len)?)
            .map_err(|e| Error::Format(format!("checkpoint JSON: {e}")))?;
        if c.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - c.pos
            )));
        }
        Ok(Checkpoint { tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("isob.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// The architecture echoed under `meta.model`.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let model = self
            .meta
            .get("model")
            .ok_or_else(|| Error::Version("checkpoint carries no model configuration".into()))?;
        serde_json::from_value(model.clone())
            .map_err(|e| Error::Version(format!("incompatible model configuration: {e}")))
    }
}

impl<T: Scalar> IsotropicNetwork<T> {
    /// Parameters in registration order, followed by the Fourier basis.
    pub fn export_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<_> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.cast()))
            .collect();
        if let Some(basis) = self.encoder.basis() {
            let data = basis.all_betas().iter().map(|&b| b as f32).collect();
            out.push((
                BASIS_TENSOR.to_string(),
                Tensor::new(vec![CHANNELS, basis.k()], data).expect("basis shape"),
            ));
        }
        out
    }

    /// Rebuilds a network from a checkpoint's config and tensors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ck.model_config()?;
        let mut net = Self::new(&config, &crate::rng::RngStreams::new(0))?;
        let ids: Vec<_> = net
            .store
            .iter()
            .map(|(id, p)| (id, p.name.clone()))
            .collect();
        for (id, name) in ids {
            let t = ck
                .get(&name)
                .ok_or_else(|| Error::Version(format!("checkpoint lacks tensor {name}")))?;
            net.store.set_value(id, t.cast()).map_err(|_| {
                Error::Version(format!(
                    "tensor {name} has shape {:?} in checkpoint",
                    t.shape()
                ))
            })?;
        }
        if let EncoderParams::Rff { basis, .. } = &mut net.encoder.params {
            let t = ck
                .get(BASIS_TENSOR)
                .ok_or_else(|| Error::Version("checkpoint lacks the Fourier basis".into()))?;
            let betas = t.data().iter().map(|&b| b as f64).collect();
            *basis = FourierBasis::from_betas(betas, config.rff_k, basis.range())?;
        }
        Ok(net)
    }
}
