//! Versioned little-endian checkpoint file.
//!
//! ```text
//! magic        4 bytes  "SGCK"
//! version      u32
//! config_len   u32      then config_len bytes of UTF-8 TOML (RunConfig)
//! n_dims       u32      then n_dims × u32 layer widths [obs, hidden…, actions]
//! n_curve      u32      then n_curve × (u64 step, f64 r_bar)
//! n_params     u64      then n_params × f64 weights in Mlp layout order
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex_prefix, ConfigError, RunConfig};
use crate::types::TargetEnd;

use super::mlp::Mlp;
use super::policy::Policy;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("embedded config: {0}")]
    Config(#[from] ConfigError),
    #[error("embedded config is not UTF-8")]
    Utf8,
    #[error("dimension table {dims:?} does not match {n_params} weights")]
    Shape { dims: Vec<usize>, n_params: usize },
}

/// One learning-curve sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub r_bar: f64,
}

/// Trained network plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub config: RunConfig,
    pub net: Mlp,
    pub curve: Vec<CurvePoint>,
}

impl PolicyCheckpoint {
    /// The direction this network was trained to guide toward.
    pub fn target_end(&self) -> TargetEnd {
        self.config.reward.target_end
    }

    pub fn policy(&self) -> Policy {
        Policy::new(self.net.clone(), self.target_end())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.to_toml_string();
        let dims = self.net.layer_dims();
        let mut out = Vec::with_capacity(64 + config.len() + 8 * self.net.n_params());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.curve.len() as u32).to_le_bytes());
        for c in &self.curve {
            out.extend_from_slice(&c.step.to_le_bytes());
            out.extend_from_slice(&c.r_bar.to_le_bytes());
        }
        out.extend_from_slice(&(self.net.n_params() as u64).to_le_bytes());
        for p in &self.net.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(config_len, "config")?)
            .map_err(|_| CheckpointError::Utf8)?;
        let config = RunConfig::from_toml_str(text)?;
        let n_dims = r.u32("dimension count")? as usize;
        let dims = (0..n_dims)
            .map(|_| r.u32("dimension table").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n_curve = r.u32("curve length")? as usize;
        let curve = (0..n_curve)
            .map(|_| {
                Ok(CurvePoint {
                    step: r.u64("curve")?,
                    r_bar: f64::from_bits(r.u64("curve")?),
                })
            })
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        let n_params = r.u64("weight count")? as usize;
        if n_params > r.remaining() / 8 {
            return Err(CheckpointError::Truncated("weights"));
        }
        let params = (0..n_params)
            .map(|_| r.u64("weights").map(f64::from_bits))
            .collect::<Result<Vec<_>, _>>()?;
        if r.remaining() > 0 {
            return Err(CheckpointError::Trailing(r.remaining()));
        }
        let net = Mlp::from_layer_dims(&dims, Some(params))
            .ok_or(CheckpointError::Shape { dims, n_params })?;
        Ok(PolicyCheckpoint { config, net, curve })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Short content hash of the serialized checkpoint.
    pub fn id(&self) -> String {
        hex_prefix(&Sha256::digest(self.to_bytes()), 16)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::dist::softmax;
    use crate::rng::make_rng;

    fn sample() -> PolicyCheckpoint {
        let mut rng = make_rng(9, 0);
        PolicyCheckpoint {
            config: RunConfig::default(),
            net: Mlp::init(&[64, 64], &mut rng),
            curve: vec![
                CurvePoint { step: 0, r_bar: -0.25 },
                CurvePoint { step: 20_000, r_bar: 0.125 },
            ],
        }
    }

    #[test]
    fn round_trip_preserves_probe_distributions() {
        let ck = sample();
        let back = PolicyCheckpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut rng = make_rng(10, 0);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
            assert_eq!(softmax(&ck.net.forward(&obs).0), softmax(&back.net.forward(&obs).0));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"SGCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PolicyCheckpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(PolicyCheckpoint::from_bytes(&v2), Err(CheckpointError::Version(2))));
        assert!(matches!(
            PolicyCheckpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(PolicyCheckpoint::from_bytes(&long), Err(CheckpointError::Trailing(1))));
    }

    #[test]
    fn file_round_trip_and_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = PolicyCheckpoint::load(&path).unwrap();
        assert_eq!(back.id(), ck.id());
        assert_eq!(ck.id().len(), 16);
    }
}
