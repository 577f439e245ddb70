//! Binary checkpoint container shared by every model.
//!
//! Layout (little-endian): `b"APSN"`, `u32` version, `u32` tensor count, then per
//! tensor `u32` name length, UTF-8 name, `u32` rank, `u32` dims, `f64` values.
//! Optimizer tensors use the reserved `opt/` prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::adam::AdamState;
use super::params::ParamSet;
use super::tensor::{Tensor, MAX_RANK};
use crate::error::{format_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"APSN";
pub const VERSION: u32 = 1;
pub const OPT_PREFIX: &str = "opt/";
pub const META_PREFIX: &str = "meta/";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        let tensors = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        Self { tensors }
    }

    pub fn with_optimizer(mut self, params: &ParamSet, adam: &AdamState) -> Self {
        let hyper = vec![
            adam.step_count() as f64,
            adam.lr,
            adam.beta1,
            adam.beta2,
            adam.eps,
            adam.weight_decay,
        ];
        self.tensors.push((format!("{OPT_PREFIX}hyper"), Tensor::vector(hyper)));
        for ((name, _), (m, v)) in
            params.iter().zip(adam.first_moments().iter().zip(adam.second_moments()))
        {
            self.tensors.push((format!("{OPT_PREFIX}m/{name}"), m.clone()));
            self.tensors.push((format!("{OPT_PREFIX}v/{name}"), v.clone()));
        }
        self
    }

    pub fn with_meta(mut self, key: &str, values: Vec<f64>) -> Self {
        self.tensors.push((format!("{META_PREFIX}{key}"), Tensor::vector(values)));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Option<&Tensor> {
        self.get(&format!("{META_PREFIX}{key}"))
    }

    /// Model parameters: everything outside the `opt/` and `meta/` namespaces.
    pub fn params(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        for (name, t) in &self.tensors {
            if !name.starts_with(OPT_PREFIX) && !name.starts_with(META_PREFIX) {
                p.insert(name.clone(), t.clone())?;
            }
        }
        Ok(p)
    }

    /// Restores optimizer state for `params`, if one was saved.
    pub fn optimizer(&self, params: &ParamSet) -> Result<Option<AdamState>> {
        let Some(hyper) = self.get(&format!("{OPT_PREFIX}hyper")) else {
            return Ok(None);
        };
        let h = hyper.values();
        if h.len() != 6 {
            return Err(format_err("checkpoint", "optimizer hyperparameters need 6 values"));
        }
        let mut first = Vec::with_capacity(params.len());
        let mut second = Vec::with_capacity(params.len());
        for (name, _) in params.iter() {
            let missing = || Error::InvalidState(format!("no optimizer moments for {name:?}"));
            first.push(self.get(&format!("{OPT_PREFIX}m/{name}")).ok_or_else(missing)?.clone());
            second.push(self.get(&format!("{OPT_PREFIX}v/{name}")).ok_or_else(missing)?.clone());
        }
        let mut state =
            AdamState::with_moments(params, h[1], h[5], h[0] as u64, Some((first, second)));
        state.beta1 = h[2];
        state.beta2 = h[3];
        state.eps = h[4];
        Ok(Some(state))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.dims() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("checkpoint", format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(format_err("checkpoint", format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| format_err("checkpoint", format!("tensor name: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(format_err("checkpoint", format!("tensor {name:?} has rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut values = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            tensors.push((name, Tensor::new(&dims, values)?));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
