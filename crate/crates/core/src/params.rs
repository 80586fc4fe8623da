//! Named parameter arrays, their graph bindings, and the checkpoint format.
//!
//! Checkpoint layout (little-endian; strings are `u32` length + UTF-8):
//!
//! ```text
//! magic "SKICKPT\0", version u32
//! fingerprint str, meta str (key = value lines)
//! count u32, then per array: name str, trainable u8, rows u32, cols u32, rows*cols x f64
//! ```

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::synthdata::container::{ByteReader, ByteWriter};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    params: Vec<Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    /// Appends an array; returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(SkiError::arg("name", format!("duplicate parameter `{name}`")));
        }
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    pub fn any_trainable(&self) -> bool {
        self.params.iter().any(|p| p.trainable)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every array of `self` from the same-named array of `src`.
    pub fn assign_from(&mut self, src: &ParameterSet) -> Result<()> {
        for p in self.params.iter_mut() {
            let s = src
                .get(&p.name)
                .ok_or_else(|| SkiError::arg("parameters", format!("`{}` missing from source", p.name)))?;
            if s.value.shape() != p.value.shape() {
                return Err(SkiError::shape("assign_from", format!("`{}` is {:?}, expected {:?}", p.name, s.value.shape(), p.value.shape())));
            }
            p.value = s.value.clone();
        }
        Ok(())
    }

    /// Concatenation of several sets; names must stay unique.
    pub fn merged(sets: &[&ParameterSet]) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        for s in sets {
            for p in s.iter() {
                out.add(p.name.clone(), p.value.clone(), p.trainable)?;
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 over names, shapes and value bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Adds every array to `g` as a leaf; trainable arrays require gradients.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p.value.clone(), p.trainable)).collect(),
        }
    }

    /// Adds every array to `g` as a constant regardless of its flag.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.value.clone())).collect(),
        }
    }

    /// Gradients of the trainable arrays (zeros where the loss does not
    /// depend on them); `None` for frozen arrays.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Result<Vec<Option<Matrix>>> {
        let mut out = Vec::with_capacity(self.params.len());
        for (p, &v) in self.params.iter().zip(&bound.vars) {
            if !p.trainable {
                out.push(None);
                continue;
            }
            let g = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()));
            if g.shape() != p.value.shape() {
                return Err(SkiError::shape("collect_grads", format!("`{}` gradient {:?}", p.name, g.shape())));
            }
            if !g.is_finite() {
                return Err(SkiError::NonFiniteGradient(p.name.clone()));
            }
            out.push(Some(g));
        }
        Ok(out)
    }
}

/// Graph variables of one bound [`ParameterSet`], in declaration order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// `rows x cols` weights drawn from N(0, gain² / rows).
pub fn init_weight(rng: &mut impl Rng, rows: usize, cols: usize, gain: f64) -> Matrix {
    init_normal(rng, rows, cols, gain / (rows as f64).sqrt())
}

pub fn init_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub meta: KvConfig,
    pub params: ParameterSet,
}

pub const CKPT_MAGIC: &[u8; 8] = b"SKICKPT\0";
pub const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(CKPT_MAGIC);
        w.u32(CKPT_VERSION);
        w.str(&self.fingerprint);
        w.str(&self.meta.canonical());
        w.u32(self.params.len() as u32);
        for p in self.params.iter() {
            w.str(&p.name);
            w.u8(p.trainable as u8);
            w.u32(p.value.rows() as u32);
            w.u32(p.value.cols() as u32);
            p.value.data().iter().for_each(|&v| w.f64(v));
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |reason: String| SkiError::Corrupt {
            path: origin.to_path_buf(),
            reason,
        };
        let mut r = ByteReader::new(bytes);
        if r.take(8).map_err(&corrupt)? != CKPT_MAGIC {
            return Err(corrupt("bad magic bytes".into()));
        }
        let version = r.u32().map_err(&corrupt)?;
        if version != CKPT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let fingerprint = r.str().map_err(&corrupt)?;
        let meta = KvConfig::parse(&r.str().map_err(&corrupt)?)?;
        let n = r.u32().map_err(&corrupt)? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..n {
            let name = r.str().map_err(&corrupt)?;
            let trainable = r.u8().map_err(&corrupt)? != 0;
            let rows = r.u32().map_err(&corrupt)? as usize;
            let cols = r.u32().map_err(&corrupt)? as usize;
            let data = (0..rows * cols).map(|_| r.f64()).collect::<std::result::Result<Vec<f64>, String>>().map_err(&corrupt)?;
            params.add(name, Matrix::from_vec(rows, cols, data)?, trainable)?;
        }
        if !r.finished() {
            return Err(corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint {
            fingerprint,
            meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| SkiError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SkiError::io(format!("reading {}", path.display()), e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// One line per array: name, shape, L2 norm, trainable flag.
    pub fn inspect(&self) -> String {
        let mut out = format!("fingerprint {}\n", self.fingerprint);
        for p in self.params.iter() {
            out.push_str(&format!(
                "{:<28} {:>5}x{:<5} norm {:.6} {}\n",
                p.name,
                p.value.rows(),
                p.value.cols(),
                p.value.frobenius_norm(),
                if p.trainable { "trainable" } else { "frozen" }
            ));
        }
        out
    }
}
