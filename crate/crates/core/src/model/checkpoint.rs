//! `TJW1` parameter checkpoints.
//!
//! Layout (little-endian): `"TJW1"`, `u32` config length, config text
//! (`key=value` lines), then one record per tensor until end of stream:
//! `u32` name length, name bytes, `u32` rank, `rank` × `u32` dims, `f32`
//! payload. Weights are held as `f64` in memory and stored as `f32`.

use super::config::parse_pairs;
use super::nn::Visit;
use super::{ModelConfig, ModelParams, Trajan};
use crate::io::{checked_len, dim_to_u32, put_f32s, put_u32, ByteReader};
use crate::{Error, Result};
use std::collections::HashMap;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TJW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Trajan,
    /// Test double: reconstructions are the ground-truth tracks themselves.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Trajan(Trajan),
    Identity,
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Checkpoint::Trajan(_) => CheckpointKind::Trajan,
            Checkpoint::Identity => CheckpointKind::Identity,
        }
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut text = String::new();
    match ckpt {
        Checkpoint::Identity => text.push_str("kind=identity\n"),
        Checkpoint::Trajan(m) => {
            text.push_str("kind=trajan\n");
            text.push_str(&m.config.to_text());
        }
    }
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_u32(&mut out, dim_to_u32(text.len(), "config length")?);
    out.extend_from_slice(text.as_bytes());
    if let Checkpoint::Trajan(m) = ckpt {
        let mut err = None;
        m.params.visit("", &mut |name, data, shape| {
            if err.is_some() {
                return;
            }
            let res = (|| -> Result<()> {
                put_u32(&mut out, dim_to_u32(name.len(), "name length")?);
                out.extend_from_slice(name.as_bytes());
                put_u32(&mut out, dim_to_u32(shape.len(), "rank")?);
                for &d in &shape {
                    put_u32(&mut out, dim_to_u32(d, "dimension")?);
                }
                put_f32s(&mut out, data.iter().map(|&v| v as f32));
                Ok(())
            })();
            if let Err(e) = res {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let mut pairs = parse_pairs(text)?;
    let kind = pairs
        .remove("kind")
        .ok_or_else(|| Error::Format("checkpoint config lacks `kind`".into()))?;
    match kind.as_str() {
        "identity" => {
            if !pairs.is_empty() || !r.is_empty() {
                return Err(Error::Format("identity checkpoint carries extra data".into()));
            }
            Ok(Checkpoint::Identity)
        }
        "trajan" => {
            let config = ModelConfig::default().with_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
            config.validate()?;
            let mut records: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
            while !r.is_empty() {
                let nlen = r.u32()? as usize;
                let name = String::from_utf8(r.take(nlen)?.to_vec())
                    .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
                let rank = r.u32()? as usize;
                let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n = checked_len(&dims)?;
                let data = r.f32s(n)?;
                if records.insert(name.clone(), (dims, data)).is_some() {
                    return Err(Error::Format(format!("duplicate tensor {name:?}")));
                }
            }
            let mut params = ModelParams::init(&config, 0)?;
            let mut err = None;
            params.visit_mut("", &mut |name, slot, shape| {
                if err.is_some() {
                    return;
                }
                match records.remove(&name) {
                    None => err = Some(Error::Format(format!("missing tensor {name:?}"))),
                    Some((dims, _)) if dims != shape => {
                        err = Some(Error::Format(format!(
                            "tensor {name:?} has shape {dims:?}, config implies {shape:?}"
                        )))
                    }
                    Some((_, data)) => {
                        for (s, v) in slot.iter_mut().zip(data) {
                            *s = f64::from(v);
                        }
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if let Some(name) = records.keys().next() {
                return Err(Error::Format(format!("unexpected tensor {name:?}")));
            }
            Ok(Checkpoint::Trajan(Trajan { config, params }))
        }
        other => Err(Error::Format(format!("unknown checkpoint kind {other:?}"))),
    }
}
