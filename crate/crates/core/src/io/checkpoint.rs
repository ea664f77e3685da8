use std::path::Path;

use thiserror::Error;

use super::write_atomic;
use crate::model::{build_model, ModelOptimizer, ModelParams};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        }
    }

    fn vector(name: impl Into<String>, data: &[f32]) -> Self {
        NamedTensor::new(name, &[data.len()], data.to_vec())
    }
}

/// Store integers as 16-bit chunks, each exactly representable as `f32`, so
/// bit patterns survive the float-only container.
pub fn encode_words(words: &[u64]) -> Vec<f32> {
    words
        .iter()
        .flat_map(|&w| (0..4).map(move |i| ((w >> (16 * i)) & 0xffff) as f32))
        .collect()
}

pub fn decode_words(chunks: &[f32]) -> Result<Vec<u64>> {
    if !chunks.len().is_multiple_of(4) || chunks.iter().any(|&c| !(0.0..=65535.0).contains(&c) || c.fract() != 0.0) {
        return Err(CheckpointError::Malformed("integer blob is not a sequence of 16-bit chunks".into()).into());
    }
    Ok(chunks
        .chunks(4)
        .map(|c| c.iter().enumerate().fold(0u64, |w, (i, &v)| w | (v as u64) << (16 * i)))
        .collect())
}

/// Iteration counter plus an ordered list of named float tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub iteration: u64,
    pub tensors: Vec<NamedTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { offset: self.bytes.len(), what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &e in &t.shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut c = Cursor { bytes, pos: 0 };
        let magic = c.take(4, "magic").map_err(|_| CheckpointError::BadMagic)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = c.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let iteration = c.u64("iteration")?;
        let count = c.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = c.u16("name length")? as usize;
            let name = std::str::from_utf8(c.take(len, "name")?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = c.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(c.u32("extent")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} is too large")))?;
            let data = c
                .take(n, "tensor data")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if c.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(Checkpoint { iteration, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint::from_bytes(&bytes)?)
    }

    fn take_tensor(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, CheckpointError> {
        let t = self.get(name).ok_or_else(|| CheckpointError::MissingTensor(name.into()))?;
        if t.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.into(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t.data.clone())
    }
}

const EXTRA_PREFIX: &str = "extra.";

/// Everything a checkpoint can restore.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub params: ModelParams<f32>,
    pub optimizer: Option<ModelOptimizer<f32>>,
    /// Caller-defined tensors (e.g. generator state), without their prefix.
    pub extra: Vec<NamedTensor>,
}

impl TrainingState {
    pub fn extra(&self, name: &str) -> Option<&NamedTensor> {
        self.extra.iter().find(|t| t.name == name)
    }
}

/// Build the container for a model, optional optimizer moments and extra tensors.
pub fn to_checkpoint(params: &ModelParams<f32>, adam: Option<&ModelOptimizer<f32>>, extra: &[NamedTensor]) -> Checkpoint {
    let mut tensors = Vec::new();
    for l in &params.layers {
        let n = l.def.name;
        tensors.push(NamedTensor::new(format!("{n}.weight"), l.weight.shape(), l.weight.data().to_vec()));
        tensors.push(NamedTensor::vector(format!("{n}.bias"), l.bias.data()));
        tensors.push(NamedTensor::vector(format!("{n}.bn.gamma"), &l.bn.gamma));
        tensors.push(NamedTensor::vector(format!("{n}.bn.beta"), &l.bn.beta));
        tensors.push(NamedTensor::vector(format!("{n}.bn.running_mean"), &l.bn.running_mean));
        tensors.push(NamedTensor::vector(format!("{n}.bn.running_var"), &l.bn.running_var));
    }
    if let Some(opt) = adam {
        for (name, st) in params.group_names().iter().zip(&opt.states) {
            tensors.push(NamedTensor::new(format!("adam.{name}.m"), st.m.shape(), st.m.data().to_vec()));
            tensors.push(NamedTensor::new(format!("adam.{name}.v"), st.v.shape(), st.v.data().to_vec()));
        }
        let steps: Vec<u64> = opt.states.iter().map(|s| s.t).collect();
        tensors.push(NamedTensor::vector("adam.steps", &encode_words(&steps)));
    }
    for t in extra {
        tensors.push(NamedTensor {
            name: format!("{EXTRA_PREFIX}{}", t.name),
            ..t.clone()
        });
    }
    Checkpoint {
        iteration: params.iteration,
        tensors,
    }
}

/// Rebuild model state from a container, checking every tensor against the
/// layer table.
pub fn from_checkpoint(ck: &Checkpoint) -> Result<TrainingState> {
    let mut params = build_model::<f32>(0);
    params.iteration = ck.iteration;
    for l in &mut params.layers {
        let n = l.def.name;
        let c = l.bn.channels();
        let wshape = l.weight.shape().to_vec();
        l.weight = Tensor::from_vec(&wshape, ck.take_tensor(&format!("{n}.weight"), &wshape)?)?;
        l.bias = Tensor::from_vec(&[c], ck.take_tensor(&format!("{n}.bias"), &[c])?)?;
        l.bn.gamma = ck.take_tensor(&format!("{n}.bn.gamma"), &[c])?;
        l.bn.beta = ck.take_tensor(&format!("{n}.bn.beta"), &[c])?;
        l.bn.running_mean = ck.take_tensor(&format!("{n}.bn.running_mean"), &[c])?;
        l.bn.running_var = ck.take_tensor(&format!("{n}.bn.running_var"), &[c])?;
    }
    let optimizer = match ck.get("adam.steps") {
        None => None,
        Some(steps) => {
            let steps = decode_words(&steps.data)?;
            let mut opt = ModelOptimizer::new(&params);
            if steps.len() != opt.states.len() {
                return Err(CheckpointError::Malformed("optimizer step count per group".into()).into());
            }
            for ((name, st), t) in params.group_names().iter().zip(&mut opt.states).zip(steps) {
                let shape = st.m.shape().to_vec();
                st.m = Tensor::from_vec(&shape, ck.take_tensor(&format!("adam.{name}.m"), &shape)?)?;
                st.v = Tensor::from_vec(&shape, ck.take_tensor(&format!("adam.{name}.v"), &shape)?)?;
                st.t = t;
            }
            Some(opt)
        }
    };
    let extra = ck
        .tensors
        .iter()
        .filter_map(|t| {
            t.name.strip_prefix(EXTRA_PREFIX).map(|n| NamedTensor {
                name: n.to_string(),
                ..t.clone()
            })
        })
        .collect();
    Ok(TrainingState {
        params,
        optimizer,
        extra,
    })
}

pub fn save_checkpoint(
    params: &ModelParams<f32>,
    adam: Option<&ModelOptimizer<f32>>,
    extra: &[NamedTensor],
    path: impl AsRef<Path>,
) -> Result<()> {
    to_checkpoint(params, adam, extra).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainingState> {
    from_checkpoint(&Checkpoint::load(path)?)
}
