//! `MHGC` checkpoint container.
//!
//! ```text
//! b"MHGC"
//! u32 version (= 1)
//! u32 config_len, config_len bytes of UTF-8 JSON (the ModelConfig)
//! u32 n_records
//! n_records x { u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data[prod(dims)] }
//! ```
//!
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams};
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"MHGC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(bad("bad magic bytes, expected \"MHGC\""));
        }
        let version = r.u32("version")? as u32;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config_len = r.u32("config length")?;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)
            .map_err(|e| bad(format!("config: {e}")))?;
        let n = r.u32("record count")?;
        let mut named = Vec::with_capacity(n.min(4096));
        for i in 0..n {
            let name_len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| bad(format!("record {i}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32("rank")?;
            if rank == 0 || rank > 8 {
                return Err(bad(format!("record `{name}`: unsupported rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>, _>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("record `{name}`: dims overflow")))?;
            let data: Vec<f32> = r
                .take(count.checked_mul(4).ok_or_else(|| bad("dims overflow"))?, "tensor data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("record `{name}` holds non-finite values")));
            }
            let t = Tensor::new(dims, data).map_err(|e| bad(format!("record `{name}`: {e}")))?;
            named.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = ModelParams::from_named(&config, named)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureWidths;

    fn small() -> Checkpoint {
        let config = ModelConfig {
            n_segments: 4,
            n_instances: 2,
            d: 3,
            gnn_hidden: 3,
            weight_head_hidden: 2,
            classifier_hidden: 2,
            widths: FeatureWidths { visual: 4, audio: 2, text: 4 },
            ..Default::default()
        };
        let params = ModelParams::init(&config, 5).unwrap();
        Checkpoint { config, params }
    }

    #[test]
    fn round_trip_bytes() {
        let ck = small();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_trailing_rejected() {
        let bytes = small().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(7);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
    }
}
