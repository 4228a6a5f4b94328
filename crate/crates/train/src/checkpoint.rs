use std::fs;
use std::path::Path;

use eaf_autograd::Element;
use eaf_model::{Eafnet, EafnetConfig};
use ndarray::{ArrayD, IxDyn};

use crate::{Result, TrainError};

const MAGIC: &[u8; 4] = b"EAFC";
const VERSION: u16 = 1;

/// Serialize the model configuration and every parameter/buffer tensor.
///
/// Layout: magic `EAFC`, u16 version, u32 config-JSON length + JSON, then per
/// tensor: u16 name length, name, u8 dtype (0 = f32, 1 = f64), u8 rank,
/// rank x u32 dims, row-major little-endian payload.
pub fn save_checkpoint<E: Element>(net: &Eafnet<E>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&net.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for entry in &net.store.entries {
        let name = entry.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(TrainError::Checkpoint(format!(
                "parameter name too long: {}",
                entry.name
            )));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(E::DTYPE);
        let shape = entry.value.shape();
        if shape.len() > u8::MAX as usize {
            return Err(TrainError::Checkpoint("tensor rank above 255".into()));
        }
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.iter() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Rebuild a model from a checkpoint. The stored configuration drives
/// construction, so tensor names and shapes must line up exactly; any
/// missing, extra or reshaped tensor is an error.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Eafnet<E>> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "{}: bad magic",
            path.display()
        )));
    }
    let ver = r.u16()?;
    if ver != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint version {ver}"
        )));
    }
    let clen = r.u32()? as usize;
    let config: EafnetConfig = serde_json::from_slice(r.take(clen)?)?;
    let mut net = Eafnet::<E>::new(config, 0)?;

    let mut loaded = vec![false; net.store.entries.len()];
    while r.pos < r.buf.len() {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| TrainError::Checkpoint("non-utf8 tensor name".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != E::DTYPE {
            return Err(TrainError::Checkpoint(format!(
                "tensor {name}: dtype {dtype} does not match expected {}",
                E::DTYPE
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let bytes = r.take(count * E::BYTE_WIDTH)?;
        let data: Vec<E> = bytes
            .chunks_exact(E::BYTE_WIDTH)
            .map(E::read_le)
            .collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| TrainError::Checkpoint(format!("tensor {name}: {e}")))?;

        let idx = net
            .store
            .entries
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| {
                TrainError::Checkpoint(format!("tensor {name} not present in this configuration"))
            })?;
        let entry = &mut net.store.entries[idx];
        if entry.value.shape() != value.shape() {
            return Err(TrainError::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match model {:?}",
                value.shape(),
                entry.value.shape()
            )));
        }
        entry.value = value;
        loaded[idx] = true;
    }
    if let Some(i) = loaded.iter().position(|&l| !l) {
        return Err(TrainError::Checkpoint(format!(
            "tensor {} missing from checkpoint",
            net.store.entries[i].name
        )));
    }
    Ok(net)
}
