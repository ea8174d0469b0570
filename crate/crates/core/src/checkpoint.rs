//! Trained-policy files.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
//! the flat parameter vector as length-prefixed little-endian f64, and a
//! trailing CRC32 of everything before it. Parameters are always written as
//! f64, which is exact for both supported scalar types.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{put_f64s, NormStats, ObsStats, Reader, FORMAT_VERSION};
use crate::diffusion::{DenoiserConfig, DenoiserParams, ScheduleSpec};
use crate::error::{DatasetError, Result};
use crate::geometry::ActionSpace;
use crate::scalar::Real;

const CKPT_MAGIC: &[u8; 8] = b"VSCKPT\0\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub network: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub stats: NormStats,
    pub obs_stats: ObsStats,
    pub space: ActionSpace,
    pub n_obs: usize,
    pub horizon: usize,
    /// Rig cameras whose pseudo-demonstrations were used for training.
    pub train_views: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: DenoiserParams<T>,
}

fn encode<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>, DatasetError> {
    if ckpt.params.config != ckpt.header.network
        || ckpt.params.data.len() != ckpt.header.network.n_params()
    {
        return Err(DatasetError::Malformed {
            what: "checkpoint".into(),
            detail: "parameters do not match the declared network".into(),
        });
    }
    let header = serde_json::to_vec(&ckpt.header).map_err(|e| DatasetError::Malformed {
        what: "checkpoint header".into(),
        detail: e.to_string(),
    })?;
    let mut buf = Vec::with_capacity(header.len() + 8 * ckpt.params.data.len() + 32);
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    let data: Vec<f64> = ckpt.params.data.iter().map(|v| v.as_f64()).collect();
    put_f64s(&mut buf, &data);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn decode<T: Real>(bytes: &[u8], name: &str) -> Result<Checkpoint<T>, DatasetError> {
    if bytes.len() < 4 {
        return Err(DatasetError::Malformed {
            what: name.into(),
            detail: "truncated".into(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader::new(body, name);
    if r.take(8)? != CKPT_MAGIC {
        return Err(r.malformed("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DatasetError::Checksum {
            file: name.into(),
            stored,
            computed,
        });
    }
    let len = r.u64()? as usize;
    if len > body.len() {
        return Err(r.malformed("implausible header length"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| r.malformed(e.to_string()))?;
    let data = r.f64s(header.network.n_params())?;
    if !r.finished() {
        return Err(r.malformed("trailing bytes"));
    }
    let params = DenoiserParams {
        config: header.network.clone(),
        data: data.into_iter().map(T::lit).collect(),
    };
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint<T: Real>(
    ckpt: &Checkpoint<T>,
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, &path.display().to_string())
}
