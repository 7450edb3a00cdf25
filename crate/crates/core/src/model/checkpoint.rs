//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic         8 bytes   "LCLUSTCK"
//! version       u32       = 1
//! phase         u8        0 = initial, 1 = reconstruction, 2 = triplet
//! epoch         u32       epochs completed in that phase
//! tensor_count  u32
//! tensor_count × tensor record
//! has_optimizer u8        0 or 1
//! [optimizer]   step u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!               moment_count u32, moment_count × tensor record
//!
//! tensor record: name_len u32, name (UTF-8), rank u32, rank × dim u32,
//!                product(dims) × f32
//! ```
//!
//! Model tensors appear in canonical order: the 18 trainable parameters, then
//! the 6 batch-norm running statistics. Optimizer moments are named
//! `adam.m.<param>` / `adam.v.<param>`, interleaved per parameter.

use std::fs;
use std::path::Path;

use super::{Autoencoder, LATENT_DIM};
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LCLUSTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingPhase {
    Initial,
    Reconstruction,
    Triplet,
}

impl TrainingPhase {
    fn tag(self) -> u8 {
        match self {
            Self::Initial => 0,
            Self::Reconstruction => 1,
            Self::Triplet => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Initial),
            1 => Some(Self::Reconstruction),
            2 => Some(Self::Triplet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Reconstruction => "reconstruction",
            Self::Triplet => "triplet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Autoencoder<f32>,
    pub phase: TrainingPhase,
    pub epoch: u32,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.phase.tag());
        out.extend_from_slice(&self.epoch.to_le_bytes());

        let names = Autoencoder::<f32>::param_names()
            .iter()
            .chain(Autoencoder::<f32>::buffer_names());
        let tensors = self.model.params().into_iter().chain(self.model.buffers());
        out.extend_from_slice(&(18u32 + 6).to_le_bytes());
        for (name, t) in names.zip(tensors) {
            write_tensor(&mut out, name, t);
        }

        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.t.to_le_bytes());
                let c = adam.config;
                for x in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&(2 * adam.slots() as u32).to_le_bytes());
                let shapes = self.model.params();
                for (i, name) in Autoencoder::<f32>::param_names().iter().enumerate() {
                    let shape = shapes.get(i).map_or(vec![adam.m[i].len()], |p| p.shape().to_vec());
                    for (kind, buf) in [("m", &adam.m[i]), ("v", &adam.v[i])] {
                        let t = Tensor::new(&shape, buf.clone()).expect("moment shape");
                        write_tensor(&mut out, &format!("adam.{kind}.{name}"), &t);
                    }
                }
            }
        }
        out
    }

    /// Parse and validate against a model of the given latent size.
    pub fn from_bytes(bytes: &[u8], latent_dim: usize) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                supported: VERSION,
            });
        }
        let tag = r.u8()?;
        let phase = TrainingPhase::from_tag(tag)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown phase tag {tag}")))?;
        let epoch = r.u32()?;

        let mut model = Autoencoder::<f32>::with_latent_dim(latent_dim, 0);
        let count = r.u32()? as usize;
        let expected_names: Vec<&str> = Autoencoder::<f32>::param_names()
            .iter()
            .chain(Autoencoder::<f32>::buffer_names())
            .copied()
            .collect();
        if count != expected_names.len() {
            return Err(CheckpointError::Corrupt(format!(
                "expected {} tensors, header says {count}",
                expected_names.len()
            )));
        }
        let mut loaded = Vec::with_capacity(count);
        let shapes: Vec<Vec<usize>> = model
            .params()
            .into_iter()
            .chain(model.buffers())
            .map(|t| t.shape().to_vec())
            .collect();
        for (expected, shape) in expected_names.iter().zip(&shapes) {
            let (name, t) = r.tensor()?;
            if name != *expected {
                return Err(CheckpointError::Corrupt(format!(
                    "expected tensor `{expected}`, found `{name}`"
                )));
            }
            check_shape(&name, shape, t.shape())?;
            loaded.push(t);
        }
        let mut loaded = loaded.into_iter();
        for target in model.params_mut() {
            *target = loaded.next().expect("param count");
        }
        for target in model.buffers_mut() {
            *target = loaded.next().expect("buffer count");
        }

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let moments = r.u32()? as usize;
                let names = Autoencoder::<f32>::param_names();
                if moments != 2 * names.len() {
                    return Err(CheckpointError::Corrupt(format!("unexpected moment count {moments}")));
                }
                let mut adam = AdamState::new([], config);
                adam.t = t;
                for (name, p) in names.iter().zip(model.params()) {
                    for kind in ["m", "v"] {
                        let (found, tensor) = r.tensor()?;
                        let want = format!("adam.{kind}.{name}");
                        if found != want {
                            return Err(CheckpointError::Corrupt(format!("expected `{want}`, found `{found}`")));
                        }
                        check_shape(&found, p.shape(), tensor.shape())?;
                        let buf = tensor.into_data();
                        if kind == "m" {
                            adam.m.push(buf);
                        } else {
                            adam.v.push(buf);
                        }
                    }
                }
                Some(adam)
            }
            other => return Err(CheckpointError::Corrupt(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            model,
            phase,
            epoch,
            optimizer,
        })
    }
}

fn check_shape(name: &str, expected: &[usize], found: &[usize]) -> Result<(), CheckpointError> {
    if expected != found {
        return Err(CheckpointError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        self.array().map(f64::from_le_bytes)
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), CheckpointError> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("implausible rank {rank} for `{name}`")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Corrupt(format!("overflowing dims for `{name}`")))?;
        let payload = self.take(bytes)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok((name, t))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_with_latent(path, LATENT_DIM)
}

pub fn load_checkpoint_with_latent(path: &Path, latent_dim: usize) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(Checkpoint::from_bytes(&bytes, latent_dim)?)
}
