//! Binary checkpoint format for encoder weights and optimizer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CVNW" | version u32 = 1 | k u32 | e u32
//! tensor_count u32
//!   per tensor: name (u16 len + UTF-8) | rank u32 | dims u32 x rank | f32 payload
//! has_adam u8
//!   if 1: step u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!         tensor_count u32 | named tensors as above ("m." / "v." prefixes)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

use super::adam::AdamState;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVNW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub k: u32,
    pub e: u32,
    pub tensors: Vec<(String, Tensor)>,
    pub adam: Option<AdamCheckpoint>,
}

pub struct AdamCheckpoint {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub tensors: Vec<(String, Tensor)>,
}

impl AdamCheckpoint {
    pub fn from_state(state: &AdamState, param_names: &[String]) -> Self {
        let mut tensors = Vec::new();
        for (name, m) in param_names.iter().zip(&state.first_moment) {
            tensors.push((format!("m.{name}"), m.clone()));
        }
        for (name, v) in param_names.iter().zip(&state.second_moment) {
            tensors.push((format!("v.{name}"), v.clone()));
        }
        AdamCheckpoint {
            step: state.step,
            lr: state.lr,
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
            tensors,
        }
    }
}

fn write_named_tensor(w: &mut impl Write, name: &str, tensor: &Tensor) -> Result<()> {
    binio::write_str(w, name)?;
    binio::write_u32(w, tensor.shape().len() as u32)?;
    for &d in tensor.shape() {
        binio::write_u32(w, d as u32)?;
    }
    binio::write_f32_slice(w, tensor.values())
}

fn read_named_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let name = binio::read_str(r)?;
    let rank = binio::read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("tensor {name:?} has implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let d = binio::read_u32(r)? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::Format(format!("tensor {name:?} dims overflow")))?;
        dims.push(d);
    }
    let values = binio::read_f32_vec(r, count)?;
    Ok((name, Tensor::from_vec(&dims, values)))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_magic(&mut w, CHECKPOINT_MAGIC)?;
    binio::write_u32(&mut w, CHECKPOINT_VERSION)?;
    binio::write_u32(&mut w, ckpt.k)?;
    binio::write_u32(&mut w, ckpt.e)?;
    binio::write_u32(&mut w, ckpt.tensors.len() as u32)?;
    for (name, tensor) in &ckpt.tensors {
        write_named_tensor(&mut w, name, tensor)?;
    }
    match &ckpt.adam {
        None => binio::write_u8(&mut w, 0)?,
        Some(adam) => {
            binio::write_u8(&mut w, 1)?;
            binio::write_u64(&mut w, adam.step)?;
            binio::write_f64(&mut w, adam.lr)?;
            binio::write_f64(&mut w, adam.beta1)?;
            binio::write_f64(&mut w, adam.beta2)?;
            binio::write_f64(&mut w, adam.eps)?;
            binio::write_u32(&mut w, adam.tensors.len() as u32)?;
            for (name, tensor) in &adam.tensors {
                write_named_tensor(&mut w, name, tensor)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_magic(&mut r, CHECKPOINT_MAGIC, "checkpoint")?;
    let version = binio::read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let k = binio::read_u32(&mut r)?;
    let e = binio::read_u32(&mut r)?;
    let count = binio::read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(read_named_tensor(&mut r)?);
    }
    let adam = match binio::read_u8(&mut r)? {
        0 => None,
        1 => {
            let step = binio::read_u64(&mut r)?;
            let lr = binio::read_f64(&mut r)?;
            let beta1 = binio::read_f64(&mut r)?;
            let beta2 = binio::read_f64(&mut r)?;
            let eps = binio::read_f64(&mut r)?;
            let n = binio::read_u32(&mut r)? as usize;
            let mut ts = Vec::with_capacity(n);
            for _ in 0..n {
                ts.push(read_named_tensor(&mut r)?);
            }
            Some(AdamCheckpoint { step, lr, beta1, beta2, eps, tensors: ts })
        }
        v => return Err(Error::Format(format!("invalid adam flag {v}"))),
    };
    binio::expect_eof(&mut r, "checkpoint")?;
    Ok(Checkpoint { k, e, tensors, adam })
}
