//! Binary checkpoint: magic, header length, JSON header, then every tensor
//! as little-endian `f64` in declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EncoderSpec, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IDMLCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: EncoderSpec,
    pub step: u64,
    pub epoch: usize,
    /// Seeds of every random stream used by the run.
    pub rng_seeds: BTreeMap<String, u64>,
    /// Class of each proxy, when the store carries proxies.
    pub proxy_labels: Option<Vec<u32>>,
    pub blocks: Vec<BlockInfo>,
    /// Free-form run information (configuration echo).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(
        spec: EncoderSpec,
        params: ParamStore,
        step: u64,
        epoch: usize,
        rng_seeds: BTreeMap<String, u64>,
        proxy_labels: Option<Vec<u32>>,
        extra: serde_json::Value,
    ) -> Self {
        let blocks = params
            .tensors
            .iter()
            .map(|t| BlockInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                spec,
                step,
                epoch,
                rng_seeds,
                proxy_labels,
                blocks,
                extra,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.n_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.params.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut rest = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(header.blocks.len());
        for b in &header.blocks {
            let n: usize = b.shape.iter().product();
            if rest.len() < 8 * n {
                return Err(bad(&format!("truncated block {}", b.name)));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor {
                name: b.name.clone(),
                shape: b.shape.clone(),
                data,
                frozen: false,
            });
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after last block"));
        }
        Ok(Self {
            header,
            params: ParamStore { tensors },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = EncoderSpec::default();
        let mut params = init_params(&spec).unwrap();
        params.tensors[0].data[3] = f64::from_bits(0x3ff0_0000_0000_0001);
        params.tensors[1].data[0] = -0.0;
        let mut seeds = BTreeMap::new();
        seeds.insert("init".to_string(), 7);
        let ck = Checkpoint::new(spec, params, 12, 3, seeds, None, serde_json::json!({"k": 1}));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.header, ck.header);
        let a: Vec<u64> = ck.params.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let spec = EncoderSpec::default();
        let ck = Checkpoint::new(
            spec.clone(),
            init_params(&spec).unwrap(),
            0,
            0,
            BTreeMap::new(),
            None,
            serde_json::Value::Null,
        );
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }
}
