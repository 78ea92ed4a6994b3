//! Single-file binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "STATCKPT"
//! version  u32
//! stage    u8       0 = pretrain, 1 = finetune
//! epoch    u64      completed epochs
//! seed     u64
//! config   u32 length + UTF-8 TOML
//! metrics  u32 count, then (u16 length + UTF-8 name, f64) each
//! adam     u64 step count
//! index    u32 count, then (u16 length + UTF-8 name, u32 rows, u32 cols, u64 offset) each
//! blob     f64 values; entry offsets count f64s from the blob start
//! digest   32-byte SHA-256 of every preceding byte
//! ```
//!
//! Parameters are indexed under their own names; Adam moments under
//! `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Result, StatError};
use crate::optim::Adam;
use crate::params::ParameterStore;

pub const MAGIC: &[u8; 8] = b"STATCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Array2<f64>>,
    pub second_moment: Vec<Array2<f64>>,
}

impl OptimizerState {
    pub fn from_adam(adam: &Adam) -> Self {
        OptimizerState {
            step: adam.step,
            first_moment: adam.first_moment.clone(),
            second_moment: adam.second_moment.clone(),
        }
    }

    pub fn restore_into(&self, adam: &mut Adam) -> Result<()> {
        if self.first_moment.len() != adam.first_moment.len() {
            return Err(StatError::ArchitectureMismatch("optimizer state size differs".into()));
        }
        adam.step = self.step;
        adam.first_moment = self.first_moment.clone();
        adam.second_moment = self.second_moment.clone();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub epoch: u64,
    pub seed: u64,
    /// The experiment configuration that produced this checkpoint.
    pub config_toml: String,
    pub metrics: BTreeMap<String, f64>,
    pub params: ParameterStore,
    pub optimizer: OptimizerState,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn name(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> StatError {
    StatError::CorruptCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        self.string(len)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.buf.push(match self.stage {
            Stage::Pretrain => 0,
            Stage::Finetune => 1,
        });
        w.u64(self.epoch);
        w.u64(self.seed);
        w.u32(self.config_toml.len() as u32);
        w.buf.extend_from_slice(self.config_toml.as_bytes());
        w.u32(self.metrics.len() as u32);
        for (k, v) in &self.metrics {
            w.name(k);
            w.f64(*v);
        }
        w.u64(self.optimizer.step);

        let mut entries: Vec<(String, &Array2<f64>)> = Vec::new();
        for (_, name, value) in self.params.iter() {
            entries.push((name.to_string(), value));
        }
        for ((_, name, _), m) in self.params.iter().zip(&self.optimizer.first_moment) {
            entries.push((format!("adam.m/{name}"), m));
        }
        for ((_, name, _), v) in self.params.iter().zip(&self.optimizer.second_moment) {
            entries.push((format!("adam.v/{name}"), v));
        }
        w.u32(entries.len() as u32);
        let mut offset = 0u64;
        for (name, a) in &entries {
            w.name(name);
            w.u32(a.nrows() as u32);
            w.u32(a.ncols() as u32);
            w.u64(offset);
            offset += a.len() as u64;
        }
        for (_, a) in &entries {
            for &v in a.iter() {
                w.f64(v);
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.buf.extend_from_slice(digest.as_slice());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let stage = match r.u8()? {
            0 => Stage::Pretrain,
            1 => Stage::Finetune,
            s => return Err(corrupt(format!("unknown stage {s}"))),
        };
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let config_len = r.u32()? as usize;
        let config_toml = r.string(config_len)?;
        let mut metrics = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.name()?;
            metrics.insert(k, r.f64()?);
        }
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.name()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let offset = r.u64()? as usize;
            index.push((name, rows, cols, offset));
        }
        let blob_start = r.pos;
        let blob_len = (body.len() - blob_start) / 8;
        let read_entry = |rows: usize, cols: usize, offset: usize| -> Result<Array2<f64>> {
            let n = rows * cols;
            if offset + n > blob_len {
                return Err(corrupt("entry outside blob"));
            }
            let start = blob_start + offset * 8;
            let values = body[start..start + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Array2::from_shape_vec((rows, cols), values).map_err(|e| corrupt(e.to_string()))
        };
        let mut params = ParameterStore::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, rows, cols, offset) in &index {
            let a = read_entry(*rows, *cols, *offset)?;
            if let Some(p) = name.strip_prefix("adam.m/") {
                first.insert(p.to_string(), a);
            } else if let Some(p) = name.strip_prefix("adam.v/") {
                second.insert(p.to_string(), a);
            } else {
                params.register(name.clone(), a).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        let mut first_moment = Vec::with_capacity(params.len());
        let mut second_moment = Vec::with_capacity(params.len());
        for (_, name, _) in params.iter() {
            first_moment.push(first.remove(name).ok_or_else(|| corrupt(format!("missing adam.m/{name}")))?);
            second_moment.push(second.remove(name).ok_or_else(|| corrupt(format!("missing adam.v/{name}")))?);
        }
        Ok(Checkpoint {
            stage,
            epoch,
            seed,
            config_toml,
            metrics,
            params,
            optimizer: OptimizerState { step: adam_step, first_moment, second_moment },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StatError::MissingFile(path.to_path_buf()),
            _ => StatError::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn config(&self) -> Result<crate::config::ExperimentConfig> {
        crate::config::ExperimentConfig::parse(&self.config_toml)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;
    use ndarray::array;

    fn sample() -> Checkpoint {
        let mut params = ParameterStore::new();
        params.register("a", array![[1.0, 2.0], [3.0, -4.5]]).unwrap();
        params.register("b", array![[f64::MIN_POSITIVE]]).unwrap();
        let mut adam = Adam::new(AdamConfig::new(1e-3, 0.0), &params);
        adam.step = 9;
        adam.first_moment[0][[1, 1]] = 0.25;
        let mut metrics = BTreeMap::new();
        metrics.insert("best_val_acc1".into(), 0.5);
        Checkpoint {
            stage: Stage::Finetune,
            epoch: 3,
            seed: 42,
            config_toml: "seed = 42\n".into(),
            metrics,
            params,
            optimizer: OptimizerState::from_adam(&adam),
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(StatError::CorruptCheckpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"garbage"), Err(StatError::CorruptCheckpoint(_))));
    }
}
