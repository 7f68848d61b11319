//! `ARFCKPT1` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ARFCKPT1" | u32 version | u64 meta_len | meta_len bytes of JSON
//! u32 tensor_count
//! per tensor: u32 name_len | name | u32 rank | rank × u32 extents | f32 data
//! ```
//!
//! Tensor names are the parameter names prefixed with `param/`, `ema/`,
//! `adam_m/` or `adam_v/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::fsutil::{put_f32s, write_atomic, Reader};
use crate::model::{param_layout, ModelConfig, ModelParams};
use crate::numcore::{RngState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARFCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const GROUPS: [&str; 4] = ["param", "ema", "adam_m", "adam_v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    step: u64,
    opt_step: u64,
    rng: RngState,
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self { trainer: t.clone() }
    }

    pub fn into_trainer(self) -> Trainer {
        self.trainer
    }

    /// Named tensors in file order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let t = &self.trainer;
        let names = t.model.names();
        let lists: [&[Tensor]; 4] = [t.model.tensors(), &t.ema, &t.opt.m, &t.opt.v];
        GROUPS
            .iter()
            .zip(lists)
            .flat_map(|(g, list)| names.iter().zip(list).map(move |(n, x)| (format!("{g}/{n}"), x)))
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let t = &self.trainer;
        let meta = Meta {
            step: t.step,
            opt_step: t.opt.step,
            rng: t.rng,
            model: *t.model.config(),
            train: t.config,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = self.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, x) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(x.shape().len() as u32).to_le_bytes());
            for &e in x.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            put_f32s(&mut out, x.data());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "ARFCKPT1");
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad ARFCKPT1 magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| Error::Format("metadata length overflows".into()))?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        meta.model.validate().map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;

        let layout = param_layout(&meta.model);
        let count = r.u32()? as usize;
        if count != 4 * layout.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, expected {}",
                4 * layout.len()
            )));
        }
        let mut groups: [Vec<Tensor>; 4] = Default::default();
        for (gi, g) in GROUPS.iter().enumerate() {
            for (pname, shape) in &layout {
                let len = r.u32()? as usize;
                let name = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
                let want = format!("{g}/{pname}");
                if name != want {
                    return Err(Error::Format(format!("expected tensor {want}, found {name}")));
                }
                let rank = r.u32()? as usize;
                let mut dims = Vec::with_capacity(rank);
                for _ in 0..rank {
                    dims.push(r.u32()? as usize);
                }
                if &dims != shape {
                    return Err(Error::Format(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
                }
                let data = r.f32s(dims.iter().product())?;
                groups[gi].push(Tensor::new(&dims, data)?);
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        let [params, ema, m, v] = groups;
        Ok(Self {
            trainer: Trainer {
                model: ModelParams::from_tensors(meta.model, params)?,
                ema,
                opt: OptimizerState {
                    step: meta.opt_step,
                    m,
                    v,
                },
                config: meta.train,
                rng: meta.rng,
                step: meta.step,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
