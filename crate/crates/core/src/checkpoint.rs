//! Binary checkpoint: magic, version, length-prefixed run configuration text,
//! then the parameter vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::field::FieldParams;

const MAGIC: &[u8; 8] = b"CQFCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: FieldParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut out = Vec::with_capacity(16 + text.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for v in &self.params.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let text_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + text_len).ok_or_else(|| bad("truncated header"))?;
        let text = std::str::from_utf8(body).map_err(|_| bad("config text is not UTF-8"))?;
        let config = TrainConfig::from_text(text)?;
        let arch = config.architecture()?;
        let raw = &bytes[16 + text_len..];
        if raw.len() != 8 * arch.parameter_count() {
            return Err(bad(&format!(
                "{} parameter bytes, architecture needs {}",
                raw.len(),
                8 * arch.parameter_count()
            )));
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = FieldParams::from_values(arch, values)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let mut config = TrainConfig::default();
        config.geometry_width = 8;
        config.color_width = 8;
        config.feature_dim = 4;
        let params = FieldParams::init(3, config.architecture().unwrap(), 0.1).unwrap();
        Checkpoint { config, params }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = small();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.params.values, ck.params.values);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = small().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
