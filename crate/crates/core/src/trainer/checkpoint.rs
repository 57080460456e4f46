//! Little-endian tensor container:
//!
//! ```text
//! "SRCK" | u32 version | u32 entry count
//! entry*: u32 name length | name (UTF-8) | u8 dtype (1 = f32) | u8 ndim | ndim × u64 dims | payload
//! u64 step | u32 config length | config (UTF-8 JSON)
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::adam::{AdamHyper, AdamState};
use crate::error::{Error, Result};
use crate::models::{DiscriminatorConfig, GeneratorConfig, ModelParams};
use crate::nn_ops::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"SRCK";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: IndexMap<String, Tensor<f32>>,
    pub step: u64,
    /// JSON text, kept verbatim so a re-save is byte-identical.
    pub config: String,
}

/// Which training phase produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Pretrain,
    Gan,
}

/// Structured content of [`Checkpoint::config`] for checkpoints written by the trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: Option<DiscriminatorConfig>,
    #[serde(default)]
    pub adam_g: Option<AdamHyper>,
    #[serde(default)]
    pub adam_d: Option<AdamHyper>,
    /// Effective run configuration, echoed for reproducibility.
    #[serde(default)]
    pub run: serde_json::Value,
}

fn fmt_err(section: impl std::fmt::Display, detail: impl std::fmt::Display) -> Error {
    Error::Format(format!("checkpoint {section}: {detail}"))
}

impl Checkpoint {
    pub fn new(step: u64, config: String) -> Self {
        Self {
            tensors: IndexMap::new(),
            step,
            config,
        }
    }

    pub fn with_meta(step: u64, meta: &CheckpointMeta) -> Result<Self> {
        let config =
            serde_json::to_string(meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self::new(step, config))
    }

    pub fn meta(&self) -> Result<CheckpointMeta> {
        serde_json::from_str(&self.config).map_err(|e| fmt_err("config", e))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate checkpoint tensor '{name}'"
            )));
        }
        let mut t = t;
        t.clear_grad();
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Stores learnables as `{prefix}{name}` and running statistics as
    /// `{prefix}bn/{layer}.running_mean` / `.running_var`.
    pub fn put_model<T: Float>(&mut self, prefix: &str, params: &ModelParams<T>) -> Result<()> {
        for (name, p) in params.iter() {
            self.insert(format!("{prefix}{name}"), p.cast())?;
        }
        for (name, st) in params.bn_iter() {
            let c = st.channels();
            let mean = st.running_mean.iter().map(|v| v.as_f64() as f32).collect();
            let var = st.running_var.iter().map(|v| v.as_f64() as f32).collect();
            self.insert(
                format!("{prefix}bn/{name}.running_mean"),
                Tensor::from_vec(&[c], mean)?,
            )?;
            self.insert(
                format!("{prefix}bn/{name}.running_var"),
                Tensor::from_vec(&[c], var)?,
            )?;
        }
        Ok(())
    }

    /// Overwrites every tensor of `params` (built with the matching layout)
    /// with the stored values.
    pub fn take_model<T: Float>(&self, prefix: &str, params: &mut ModelParams<T>) -> Result<()> {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let src = self.expect(&format!("{prefix}{name}"), params.get(&name)?.shape())?;
            let dst = params.get_mut(&name)?;
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = T::lit(s as f64);
            }
            dst.zero_grad();
        }
        let layers: Vec<(String, usize)> = params
            .bn_iter()
            .map(|(n, s)| (n.to_string(), s.channels()))
            .collect();
        for (name, c) in layers {
            let mean = self.expect(&format!("{prefix}bn/{name}.running_mean"), &[c])?;
            let var = self.expect(&format!("{prefix}bn/{name}.running_var"), &[c])?;
            let st = params.bn_mut(&name)?;
            st.running_mean = mean.data().iter().map(|&v| T::lit(v as f64)).collect();
            st.running_var = var.data().iter().map(|&v| T::lit(v as f64)).collect();
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, st: &AdamState<f32>) -> Result<()> {
        for (name, m) in &st.m {
            self.insert(format!("{prefix}adam/m/{name}"), m.clone())?;
        }
        for (name, v) in &st.v {
            self.insert(format!("{prefix}adam/v/{name}"), v.clone())?;
        }
        Ok(())
    }

    /// Optimizer state for `params`, or `None` when the checkpoint holds no
    /// moment buffers under `prefix`.
    pub fn take_adam(
        &self,
        prefix: &str,
        params: &ModelParams<f32>,
        hyper: Option<AdamHyper>,
    ) -> Result<Option<AdamState<f32>>> {
        let tag = format!("{prefix}adam/");
        if !self.tensors.keys().any(|k| k.starts_with(&tag)) {
            return Ok(None);
        }
        let hyper = hyper.ok_or_else(|| {
            fmt_err(
                "config",
                format!("moment buffers under '{tag}' but no optimizer settings"),
            )
        })?;
        let mut st = AdamState::new(params, hyper.learning_rate).with_hyper(hyper);
        for (name, p) in params.iter() {
            st.m.insert(
                name.to_string(),
                self.expect(&format!("{tag}m/{name}"), p.shape())?.clone(),
            );
            st.v.insert(
                name.to_string(),
                self.expect(&format!("{tag}v/{name}"), p.shape())?.clone(),
            );
        }
        Ok(Some(st))
    }

    fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| fmt_err("entries", format!("missing tensor '{name}'")))?;
        if t.shape() != shape {
            return Err(fmt_err(
                "entries",
                format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                ),
            ));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.tensors.len())
                .map_err(|_| Error::InvalidArgument("too many tensors".into()))?
                .to_le_bytes(),
        );
        for (name, t) in &self.tensors {
            let nlen = u32::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("name too long: {name}")))?;
            let ndim = u8::try_from(t.shape().len())
                .map_err(|_| Error::InvalidArgument(format!("too many dims: {name}")))?;
            out.extend_from_slice(&nlen.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(ndim);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        let clen = u32::try_from(self.config.len())
            .map_err(|_| Error::InvalidArgument("config too long".into()))?;
        out.extend_from_slice(&clen.to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(fmt_err("magic", format!("expected SRCK, found {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(fmt_err("version", format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut ck = Checkpoint::default();
        for i in 0..count {
            let sec = |part: &str| format!("entry {i} {part}");
            let nlen = r.u32(&sec("name length"))? as usize;
            let name = std::str::from_utf8(r.take(nlen, &sec("name"))?)
                .map_err(|e| fmt_err(sec("name"), e))?
                .to_string();
            let dtype = r.u8(&sec("dtype"))?;
            if dtype != DTYPE_F32 {
                return Err(fmt_err(
                    sec("dtype"),
                    format!("unknown dtype code {dtype} for '{name}'"),
                ));
            }
            let ndim = r.u8(&sec("ndim"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut len: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64(&sec("dims"))?)
                    .map_err(|_| fmt_err(sec("dims"), "dimension overflow"))?;
                len = len
                    .checked_mul(d)
                    .ok_or_else(|| fmt_err(sec("dims"), "element count overflow"))?;
                shape.push(d);
            }
            let nbytes = len
                .checked_mul(4)
                .ok_or_else(|| fmt_err(sec("dims"), "payload size overflow"))?;
            let payload = r.take(nbytes, &sec("payload"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if ck.tensors.contains_key(&name) {
                return Err(fmt_err(sec("name"), format!("duplicate tensor '{name}'")));
            }
            ck.tensors.insert(
                name,
                Tensor::from_vec(&shape, data).map_err(|e| fmt_err(sec("dims"), e))?,
            );
        }
        ck.step = r.u64("step counter")?;
        let clen = r.u32("config length")? as usize;
        ck.config = std::str::from_utf8(r.take(clen, "config")?)
            .map_err(|e| fmt_err("config", e))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(fmt_err(
                "trailer",
                format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(fmt_err(
                section,
                format!("truncated: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ck.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(7, r#"{"a":1}"#.into());
        ck.insert(
            "x",
            Tensor::from_vec(&[2, 2], vec![1.0, -2.0, f32::MIN_POSITIVE, 3.5]).unwrap(),
        )
        .unwrap();
        ck.insert("s", Tensor::from_vec(&[], vec![0.25]).unwrap())
            .unwrap();
        ck
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn errors_name_the_section() {
        let bytes = sample().to_bytes().unwrap();
        let msg = |b: &[u8]| match Checkpoint::from_bytes(b) {
            Err(Error::Format(m)) => m,
            other => panic!("expected format error, got {other:?}"),
        };
        assert!(msg(&bytes[..2]).contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(msg(&bad).contains("version"));
        assert!(msg(&bytes[..bytes.len() - 3]).contains("config"));
        assert!(msg(&bytes[..30]).contains("entry 0"));
    }
}
