//! Named parameter storage and the binary checkpoint format.
//!
//! Parameters are keyed by dotted path names (`encoder.block0.msa.wq`) in a
//! `BTreeMap` so every iteration, and therefore every checkpoint byte
//! stream, is deterministic.
//!
//! Checkpoint layout (all integers little-endian):
//! ```text
//! magic "FTCK" | u32 version | u64 config_len | config JSON bytes |
//! u64 param_count | repeated: u64 name_len | name | u32 ndim |
//! u64 dims... | f32 payload (row-major, little-endian)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::TensorError;

const MAGIC: &[u8; 4] = b"FTCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    // AdamW moments
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n = data.len();
        assert_eq!(shape.iter().product::<usize>(), n);
        Param {
            shape,
            data,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.params
            .insert(name.to_string(), Param::new(shape.to_vec(), data));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        let n = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    /// Truncated normal init (resample outside 2 sigma), the usual
    /// transformer projection init.
    pub fn insert_trunc_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        sigma: f64,
        rng: &mut R,
    ) {
        let normal = Normal::new(0.0, sigma).unwrap();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| loop {
                let v = normal.sample(rng);
                if v.abs() <= 2.0 * sigma {
                    break v;
                }
            })
            .collect();
        self.insert(name, shape, data);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &[f64]) -> Result<(), TensorError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        assert_eq!(p.grad.len(), g.len());
        for (a, b) in p.grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, config_json: &str) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = config_json.as_bytes();
        buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        buf.extend_from_slice(cfg);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in &self.params {
            buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Load parameters and the embedded config JSON.
    pub fn load(path: &Path) -> Result<(ParamStore, String), CheckpointError> {
        let mut f = std::fs::File::open(path)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        let mut cur = std::io::Cursor::new(buf);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let cfg_len = read_u64(&mut cur)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        cur.read_exact(&mut cfg)?;
        let cfg = String::from_utf8(cfg)
            .map_err(|e| CheckpointError::Format(format!("config not utf-8: {e}")))?;
        let count = read_u64(&mut cur)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u64(&mut cur)? as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| CheckpointError::Format(format!("name not utf-8: {e}")))?;
            let ndim = read_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut cur)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 4];
                cur.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
            store.insert(&name, &shape, data);
        }
        Ok((store, cfg))
    }

    /// Byte-stream form of `save` without touching disk, for tests.
    pub fn to_bytes(&self, config_json: &str) -> Vec<u8> {
        let mut w: Vec<u8> = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = config_json.as_bytes();
        w.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        w.extend_from_slice(cfg);
        w.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in &self.params {
            w.extend_from_slice(&(name.len() as u64).to_le_bytes());
            w.extend_from_slice(name.as_bytes());
            w.write_all(&(p.shape.len() as u32).to_le_bytes()).unwrap();
            for &d in &p.shape {
                w.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                w.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w
    }
}

fn read_u32(cur: &mut std::io::Cursor<Vec<u8>>) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut std::io::Cursor<Vec<u8>>) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
