//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QTF1"  u32 version
//! u32 n    n bytes of UTF-8 `key=value` lines (config, optimizer scalars, epoch)
//! u32 count
//! count × { u16 len, name, u8 rank, rank × u64 dim, f64 payload row-major }
//! ```
//!
//! Arrays are sorted by name. Adam moments are stored as `adam.m/<param>` and
//! `adam.v/<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use qdyn_core::trainer::{AdamConfig, AdamState, Checkpoint};
use qdyn_core::transformer::ModelConfig;
use qdyn_core::{ParamSet, Tensor};

use crate::config::{model_pairs, set_model_key, KeyValues};
use crate::error::{QdynError, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"QTF1";
pub const VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

fn config_block(ckpt: &Checkpoint) -> String {
    let mut s = String::new();
    for (k, v) in model_pairs(&ckpt.config) {
        s.push_str(&format!("{k}={v}\n"));
    }
    s.push_str(&format!("best_val_mse={}\n", ckpt.best_val_mse));
    s.push_str(&format!("epoch={}\n", ckpt.epoch));
    match &ckpt.adam {
        Some(a) => {
            s.push_str("adam=1\n");
            s.push_str(&format!("adam.lr={}\n", a.config.lr));
            s.push_str(&format!("adam.beta1={}\n", a.config.beta1));
            s.push_str(&format!("adam.beta2={}\n", a.config.beta2));
            s.push_str(&format!("adam.eps={}\n", a.config.eps));
            s.push_str(&format!("adam.step={}\n", a.step));
        }
        None => s.push_str("adam=0\n"),
    }
    s
}

fn push_array(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(2);
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut arrays: BTreeMap<String, &Tensor> =
        ckpt.params.iter().map(|(k, t)| (k.clone(), t)).collect();
    if let Some(a) = &ckpt.adam {
        for (k, t) in &a.m {
            arrays.insert(format!("{M_PREFIX}{k}"), t);
        }
        for (k, t) in &a.v {
            arrays.insert(format!("{V_PREFIX}{k}"), t);
        }
    }
    let block = config_block(ckpt);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        push_array(&mut out, &name, t);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fail(&self, message: String) -> QdynError {
        QdynError::parse(self.path, 0, message)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        let raw = self.take(n)?;
        std::str::from_utf8(raw).map_err(|_| self.fail("text is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.fail("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()? as usize;
    let block = r.text(n)?;
    let kv = KeyValues::parse(block, path)?;

    let mut config = ModelConfig::full();
    let mut best_val_mse = None;
    let mut epoch = None;
    let mut has_adam = None;
    let mut adam_cfg = AdamConfig::default();
    let mut step = None;
    for (line, k, v) in kv.iter() {
        let bad = || QdynError::parse(path, line, format!("bad value for {k}: {v:?}"));
        let real = || v.parse::<f64>().map_err(|_| bad());
        match k {
            "best_val_mse" => best_val_mse = Some(real()?),
            "epoch" => epoch = Some(v.parse::<usize>().map_err(|_| bad())?),
            "adam" => has_adam = Some(v == "1"),
            "adam.lr" => adam_cfg.lr = real()?,
            "adam.beta1" => adam_cfg.beta1 = real()?,
            "adam.beta2" => adam_cfg.beta2 = real()?,
            "adam.eps" => adam_cfg.eps = real()?,
            "adam.step" => step = Some(v.parse::<u64>().map_err(|_| bad())?),
            _ => {
                if !set_model_key(&mut config, k, v).map_err(|m| QdynError::parse(path, line, m))? {
                    return Err(QdynError::parse(path, line, format!("unknown key {k}")));
                }
            }
        }
    }
    let missing = |what: &str| QdynError::parse(path, 0, format!("config block lacks {what}"));
    let best_val_mse = best_val_mse.ok_or_else(|| missing("best_val_mse"))?;
    let epoch = epoch.ok_or_else(|| missing("epoch"))?;
    let has_adam = has_adam.ok_or_else(|| missing("adam"))?;

    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    let mut m = ParamSet::new();
    let mut v = ParamSet::new();
    let mut previous: Option<String> = None;
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = r.text(len)?.to_string();
        if previous.as_ref().is_some_and(|p| p >= &name) {
            return Err(r.fail(format!("arrays not sorted by name at {name}")));
        }
        let rank = r.u8()?;
        let dims: Vec<u64> = (0..rank).map(|_| r.u64()).collect::<Result<_>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [n] => (1, n as usize),
            [a, b] => (a as usize, b as usize),
            _ => return Err(r.fail(format!("{name}: rank {rank} is not supported"))),
        };
        let total = rows
            .checked_mul(cols)
            .filter(|t| t.checked_mul(8).is_some())
            .ok_or_else(|| r.fail(format!("{name}: dimensions overflow")))?;
        let raw = r.take(total * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(rows, cols, data)?;
        if let Some(k) = name.strip_prefix(M_PREFIX) {
            m.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix(V_PREFIX) {
            v.insert(k.to_string(), t);
        } else {
            params.insert(name.clone(), t);
        }
        previous = Some(name);
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let adam = if has_adam {
        let step = step.ok_or_else(|| missing("adam.step"))?;
        let shapes = |s: &ParamSet| s.iter().map(|(k, t)| (k.clone(), t.shape())).collect::<Vec<_>>();
        if shapes(&m) != shapes(&params) || shapes(&v) != shapes(&params) {
            return Err(QdynError::parse(path, 0, "Adam moments do not mirror the weights"));
        }
        Some(AdamState {
            config: adam_cfg,
            step,
            m,
            v,
        })
    } else {
        None
    };
    let ckpt = Checkpoint {
        config,
        params,
        adam,
        best_val_mse,
        epoch,
    };
    // shape and name check against the architecture
    ckpt.model()?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fsutil::write_atomic(path, &encode(ckpt))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fsutil::read(path)?, path)
}

/// SHA-256 of the encoded checkpoint, used to tag prediction files.
pub fn checksum(ckpt: &Checkpoint) -> String {
    fsutil::sha256_hex(&encode(ckpt))
}
