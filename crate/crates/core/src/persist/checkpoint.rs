//! Binary checkpoint: magic, version, config digest, named `f32` tensors,
//! optimizer state in the same encoding, and a trailing SHA-256 checksum.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::{ConfigError, Model, NetworkConfig};
use crate::tensor::Real;
use crate::training::{Adam, AdamConfig, EarlyStop};

pub const MAGIC: &[u8; 4] = b"FGLN";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum does not match its contents")]
    Checksum,
    #[error("checkpoint was written for a different network config (use --force to load anyway)")]
    Digest,
    #[error("checkpoint has no tensor named {0}")]
    Missing(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint carries no optimizer state")]
    NoOptimizer,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn new<T: Real>(name: impl Into<String>, shape: &[usize], data: &[T]) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), data: data.iter().map(|v| v.as_f64() as f32).collect() }
    }

    fn values<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::from_f32(v).expect("f32 converts")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub step: u64,
    pub best_val: Option<f64>,
    pub stale: u64,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSection>,
}

pub fn config_digest(cfg: &NetworkConfig) -> [u8; 32] {
    Sha256::digest(cfg.canonical().as_bytes()).into()
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) {
    out.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend((t.name.len() as u32).to_le_bytes());
        out.extend(t.name.as_bytes());
        out.extend((t.shape.len() as u32).to_le_bytes());
        for &e in &t.shape {
            out.extend((e as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>, CheckpointError> {
        let count = self.u32()?;
        (0..count)
            .map(|_| {
                let len = self.u32()? as usize;
                let name = String::from_utf8(self.take(len)?.to_vec())
                    .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
                let rank = self.u32()? as usize;
                let shape = (0..rank).map(|_| self.u64().map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
                let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or(CheckpointError::Truncated)?;
                let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
                let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                Ok(NamedTensor { name, shape, data })
            })
            .collect()
    }
}

impl Checkpoint {
    /// Captures parameters, batch-norm buffers and, if given, optimizer state.
    pub fn capture<T: Real>(model: &Model<T>, optimizer: Option<(&Adam<T>, EarlyStop)>) -> Self {
        let mut tensors: Vec<NamedTensor> =
            model.params().iter().map(|p| NamedTensor::new(p.name.as_str(), &p.shape, &p.data)).collect();
        for b in model.bn_buffers() {
            let c = [b.stats.mean.len()];
            tensors.push(NamedTensor::new(format!("{}.running_mean", b.name), &c, &b.stats.mean));
            tensors.push(NamedTensor::new(format!("{}.running_var", b.name), &c, &b.stats.var));
        }
        let optimizer = optimizer.map(|(adam, es)| {
            let mut t = Vec::with_capacity(2 * adam.m.len());
            for (p, (m, v)) in model.params().iter().zip(adam.m.iter().zip(&adam.v)) {
                t.push(NamedTensor::new(format!("m/{}", p.name), &p.shape, m));
                t.push(NamedTensor::new(format!("v/{}", p.name), &p.shape, v));
            }
            OptimizerSection { step: adam.step, best_val: es.best, stale: es.stale as u64, tensors: t }
        });
        Self { digest: config_digest(model.config()), tensors, optimizer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.digest);
        put_tensors(&mut out, &self.tensors);
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend(o.step.to_le_bytes());
                out.extend(o.best_val.unwrap_or(f64::NAN).to_bits().to_le_bytes());
                out.extend(o.stale.to_le_bytes());
                put_tensors(&mut out, &o.tensors);
            }
        }
        let sum: [u8; CHECKSUM_LEN] = Sha256::digest(&out).into();
        out.extend(sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 8 + CHECKSUM_LEN {
            return Err(CheckpointError::Truncated);
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: &body[4..] };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let digest = r.take(32)?.try_into().expect("32 bytes");
        let tensors = r.tensors()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let best = f64::from_bits(r.u64()?);
                let stale = r.u64()?;
                Some(OptimizerSection { step, best_val: (!best.is_nan()).then_some(best), stale, tensors: r.tensors()? })
            }
            flag => return Err(CheckpointError::Malformed(format!("optimizer flag {flag}"))),
        };
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self { digest, tensors, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }

    fn find<'a>(tensors: &'a [NamedTensor], name: &str, shape: &[usize]) -> Result<&'a NamedTensor, CheckpointError> {
        let t = tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if t.shape != shape {
            return Err(CheckpointError::Shape { name: name.to_string(), expected: shape.to_vec(), found: t.shape.clone() });
        }
        Ok(t)
    }

    /// Rebuilds the model described by `cfg` with the stored weights.
    /// A config digest mismatch is an error unless `force` is set.
    pub fn restore_model<T: Real>(&self, cfg: &NetworkConfig, force: bool) -> Result<Model<T>, CheckpointError> {
        if !force && self.digest != config_digest(cfg) {
            return Err(CheckpointError::Digest);
        }
        let mut model = Model::<T>::build(cfg, 0)?;
        for p in model.params_mut() {
            p.data = Self::find(&self.tensors, &p.name, &p.shape)?.values();
        }
        for b in model.bn_buffers_mut() {
            let c = [b.stats.mean.len()];
            b.stats.mean = Self::find(&self.tensors, &format!("{}.running_mean", b.name), &c)?.values();
            b.stats.var = Self::find(&self.tensors, &format!("{}.running_var", b.name), &c)?.values();
        }
        Ok(model)
    }

    pub fn restore_optimizer<T: Real>(&self, model: &Model<T>, config: AdamConfig) -> Result<(Adam<T>, EarlyStop), CheckpointError> {
        let o = self.optimizer.as_ref().ok_or(CheckpointError::NoOptimizer)?;
        let mut adam = Adam::new(config, model.params());
        adam.step = o.step;
        for (i, p) in model.params().iter().enumerate() {
            adam.m[i] = Self::find(&o.tensors, &format!("m/{}", p.name), &p.shape)?.values();
            adam.v[i] = Self::find(&o.tensors, &format!("v/{}", p.name), &p.shape)?.values();
        }
        Ok((adam, EarlyStop { best: o.best_val, stale: o.stale as usize }))
    }
}
