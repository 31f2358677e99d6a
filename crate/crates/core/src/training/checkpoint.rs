//! Binary weight files.
//!
//! Layout (all integers u32 little-endian unless noted):
//!
//! ```text
//! "XSRN" version count
//! count × { name_len name(UTF-8) rank dims[rank] values(f32 LE)[∏dims] }
//! meta_len meta(UTF-8 "key=value\n" lines, sorted by key)
//! ```
//!
//! Optimizer moments are stored as extra tensors named `adam.m/<param>` and
//! `adam.v/<param>` after the parameters.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

use super::adam::Adam;

pub const MAGIC: &[u8; 4] = b"XSRN";
pub const VERSION: u32 = 1;
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub optimizer: Option<OptimizerState>,
    /// Model configuration plus free-form run state.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    /// Weights only, with the model configuration recorded.
    pub fn from_model(model: &Model<f32>) -> Self {
        Checkpoint {
            params: model.params().clone(),
            optimizer: None,
            meta: config::model_pairs(model.config()).into_iter().collect(),
        }
    }

    pub fn with_optimizer(mut self, adam: &Adam<f32>) -> Self {
        self.optimizer = Some(OptimizerState {
            step: adam.step_count(),
            m: adam.first_moments().to_vec(),
            v: adam.second_moments().to_vec(),
        });
        self
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        config::model_from_pairs(&self.meta)
    }

    /// Rebuild the model described by the metadata and load the weights.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let cfg = self.model_config()?;
        let mut model = Model::new(&cfg, 0)?;
        model.params_mut().load_from(&self.params)?;
        Ok(model)
    }

    /// Load the weights into an existing model; shapes must agree.
    pub fn load_into(&self, model: &mut Model<f32>) -> Result<()> {
        model.params_mut().load_from(&self.params)
    }

    pub fn adam(&self) -> Result<Option<Adam<f32>>> {
        self.optimizer
            .as_ref()
            .map(|s| Adam::from_state(&self.params, s.step, s.m.clone(), s.v.clone()))
            .transpose()
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("bad metadata `{key}` = `{raw}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        let mut meta = self.meta.clone();
        if let Some(opt) = &self.optimizer {
            let names: Vec<&str> = self.params.iter().map(|(n, _)| n).collect();
            for (n, t) in names.iter().zip(&opt.m) {
                tensors.push((format!("{MOMENT1}{n}"), t));
            }
            for (n, t) in names.iter().zip(&opt.v) {
                tensors.push((format!("{MOMENT2}{n}"), t));
            }
            meta.insert("adam_step".into(), opt.step.to_string());
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            let dims = t.shape().dims();
            put_u32(&mut out, dims.len() as u32);
            for d in dims {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a weight file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank != 4 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32()? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = r.take(shape.numel() * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, values)?;
            if let Some(p) = name.strip_prefix(MOMENT1) {
                m.push((p.to_string(), t));
            } else if let Some(p) = name.strip_prefix(MOMENT2) {
                v.push((p.to_string(), t));
            } else {
                if params.id(&name).is_some() {
                    return Err(Error::Checkpoint(format!("tensor `{name}` appears twice")));
                }
                params.add(name, t);
            }
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), val.to_string());
        }

        let optimizer = if m.is_empty() && v.is_empty() {
            None
        } else {
            let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
            for moments in [&m, &v] {
                let got: Vec<&str> = moments.iter().map(|(n, _)| n.as_str()).collect();
                if got != names {
                    return Err(Error::Checkpoint(
                        "optimizer moments do not match the parameter list".into(),
                    ));
                }
            }
            let step = meta
                .remove("adam_step")
                .ok_or_else(|| Error::Checkpoint("missing metadata `adam_step`".into()))?
                .parse()
                .map_err(|_| Error::Checkpoint("bad metadata `adam_step`".into()))?;
            Some(OptimizerState {
                step,
                m: m.into_iter().map(|(_, t)| t).collect(),
                v: v.into_iter().map(|(_, t)| t).collect(),
            })
        };
        Ok(Checkpoint {
            params,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
