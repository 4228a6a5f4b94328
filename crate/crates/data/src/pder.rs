//! PDER: a small binary container for derived tensors.
//!
//! Layout: magic `PDER`, u16 version (=1), u8 dtype (0 = f32, 1 = f64),
//! u8 ndim, ndim x u32 dims, then the payload little-endian row-major.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::types::{DataError, Result};

const MAGIC: &[u8; 4] = b"PDER";
const VERSION: u16 = 1;

/// An n-dimensional tensor as stored in a PDER file.
#[derive(Debug, Clone, PartialEq)]
pub enum PderTensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl PderTensor {
    fn dtype(&self) -> u8 {
        match self {
            PderTensor::F32(_) => 0,
            PderTensor::F64(_) => 1,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            PderTensor::F32(a) => a.shape(),
            PderTensor::F64(a) => a.shape(),
        }
    }
}

pub fn save_derived(tensor: &PderTensor, path: &Path) -> Result<()> {
    let shape = tensor.shape();
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(DataError::Format(format!("empty dims {shape:?} rejected")));
    }
    for &d in shape {
        if d > u32::MAX as usize {
            return Err(DataError::Format(format!("dim {d} overflows u32")));
        }
    }
    let finite = match tensor {
        PderTensor::F32(a) => a.iter().all(|v| v.is_finite()),
        PderTensor::F64(a) => a.iter().all(|v| v.is_finite()),
    };
    if !finite {
        return Err(DataError::Format("non-finite values rejected".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(tensor.dtype());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match tensor {
        PderTensor::F32(a) => {
            for &v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        PderTensor::F64(a) => {
            for &v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = File::create(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(&buf).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_derived(path: &Path) -> Result<PderTensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    parse_pder(&bytes)
}

fn parse_pder(bytes: &[u8]) -> Result<PderTensor> {
    if bytes.len() < 8 {
        return Err(DataError::Format("truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(DataError::Format(format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    let ndim = bytes[7] as usize;
    let mut off = 8;
    if bytes.len() < off + 4 * ndim {
        return Err(DataError::Format("truncated dims".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| DataError::Format("dimension overflow".into()))?;
        dims.push(d);
        off += 4;
    }
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(DataError::Format(format!("unknown dtype {other}"))),
    };
    let need = count
        .checked_mul(width)
        .ok_or_else(|| DataError::Format("payload overflow".into()))?;
    if bytes.len() != off + need {
        return Err(DataError::Format(format!(
            "payload length {} does not match expected {}",
            bytes.len() - off,
            need
        )));
    }
    match dtype {
        0 => {
            let data: Vec<f32> = bytes[off..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(PderTensor::F32(
                ArrayD::from_shape_vec(IxDyn(&dims), data)
                    .map_err(|e| DataError::Format(e.to_string()))?,
            ))
        }
        _ => {
            let data: Vec<f64> = bytes[off..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(PderTensor::F64(
                ArrayD::from_shape_vec(IxDyn(&dims), data)
                    .map_err(|e| DataError::Format(e.to_string()))?,
            ))
        }
    }
}
