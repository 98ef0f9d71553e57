//! Checkpoint file layout:
//!
//! ```text
//! 8 bytes   magic "ONTOEMB\0"
//! N bytes   UTF-8 JSON header, terminated by a single '\n'
//! 8*P bytes parameters as little-endian f64, in Params::flatten order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, Params};
use crate::error::{Error, Result};
use crate::io::{read_bytes, sha256_hex, write_atomic};

pub const MAGIC: &[u8; 8] = b"ONTOEMB\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Base,
    StsAdapted,
    Contrastive,
    SelfDistilled,
    Souped,
    XlingualStudent,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::StsAdapted => "sts_adapted",
            Phase::Contrastive => "contrastive",
            Phase::SelfDistilled => "self_distilled",
            Phase::Souped => "souped",
            Phase::XlingualStudent => "xlingual_student",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub phase: Phase,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: EncoderConfig,
    phase: Phase,
    param_count: usize,
    head_dim: Option<usize>,
}

impl Checkpoint {
    pub fn new(config: EncoderConfig, phase: Phase, params: Params) -> Result<Self> {
        config.validate()?;
        params.check_shape(&config)?;
        Ok(Self { config, phase, params })
    }

    /// A freshly initialized encoder.
    pub fn base(config: EncoderConfig) -> Result<Self> {
        let params = super::init_params(&config);
        Self::new(config, Phase::Base, params)
    }

    pub fn encode(&self, text: &str) -> super::Embedding {
        super::encode(&self.params, &self.config, text)
    }

    /// SHA-256 of the encoder parameters (head excluded) as little-endian bytes.
    pub fn digest(&self) -> String {
        let p = self.params.without_head();
        sha256_hex(&f64_bytes(&p.flatten()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.params.flatten();
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            phase: self.phase,
            param_count: flat.len(),
            head_dim: self.params.head.as_ref().map(|h| h.target_dim),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + flat.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&f64_bytes(&flat));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated("file shorter than magic".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Validation("not a checkpoint file (bad magic)".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        let newline = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Truncated("header not terminated".into()))?;
        let header_text = std::str::from_utf8(&rest[..newline])
            .map_err(|e| Error::Validation(format!("header is not UTF-8: {e}")))?;
        // Version is checked before the full header so future layouts give a clean error.
        let version: serde_json::Value =
            serde_json::from_str(header_text).map_err(|e| Error::Validation(format!("bad checkpoint header: {e}")))?;
        let found = version
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Validation("header lacks format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(version).map_err(|e| Error::Validation(format!("bad checkpoint header: {e}")))?;
        header.config.validate()?;

        let expected = header.config.param_count() + header.head_dim.map_or(0, |k| header.config.head_param_count(k));
        if header.param_count != expected {
            return Err(Error::Validation(format!(
                "header declares {} parameters, config implies {expected}",
                header.param_count
            )));
        }
        let block = &rest[newline + 1..];
        if block.len() < expected * 8 {
            return Err(Error::Truncated(format!(
                "parameter block has {} bytes, expected {}",
                block.len(),
                expected * 8
            )));
        }
        if block.len() > expected * 8 {
            return Err(Error::Validation("trailing bytes after parameter block".into()));
        }
        let flat: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let params = Params::unflatten(&header.config, &flat)?;
        Self::new(header.config, header.phase, params)
    }
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?)
}
