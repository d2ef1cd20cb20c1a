//! Checkpoint container: magic `UGCK`, little-endian `u32` header length,
//! a JSON header, then each tensor's weights as little-endian `f64` in
//! header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConvWeight, UGridParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"UGCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    depth: usize,
    channels: usize,
    pre_convs: usize,
    post_convs: usize,
    seed: u64,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

/// Free-form creation metadata. Kept free of timestamps so identical
/// training runs produce identical files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub note: Option<String>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &UGridParams, meta: &CheckpointMeta) -> Result<()> {
    let (pre, post) = params.convs_per_stage();
    let header = Header {
        schema_version: CHECKPOINT_VERSION,
        depth: params.depth,
        channels: params.channels,
        pre_convs: pre,
        post_convs: post,
        seed: params.seed,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, w)| TensorEntry {
                name,
                shape: [w.c_out, w.c_in, 3, 3],
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UGridParams, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a UGCK checkpoint"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::format(path, format!("corrupt header: {e}")))?;
    if header.schema_version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let mut params = UGridParams::zeros(header.depth, header.channels, 0);
    for level in params.levels.iter_mut() {
        level.pre = vec![ConvWeight::zeros(header.channels, header.channels); header.pre_convs];
        level.post = vec![ConvWeight::zeros(header.channels, header.channels); header.post_convs];
    }
    params.seed = header.seed;
    let expected: Vec<TensorEntry> = params
        .tensors()
        .into_iter()
        .map(|(name, w)| TensorEntry {
            name,
            shape: [w.c_out, w.c_in, 3, 3],
        })
        .collect();
    if expected != header.tensors {
        return Err(Error::format(path, "tensor table does not match declared architecture"));
    }

    let payload = &bytes[8 + hlen..];
    if payload.len() != 8 * params.param_count() {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * params.param_count()
            ),
        ));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite weight"));
    }
    params.assign_flat(&flat)?;
    Ok((params, header.meta))
}

impl UGridParams {
    /// Verifies that these parameters fit a network of the given depth and
    /// width, naming the first offending level.
    pub fn expect_architecture(&self, depth: usize, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::Shape(format!(
                "checkpoint has {} channels, expected {channels}",
                self.channels
            )));
        }
        if self.depth > depth {
            return Err(Error::Shape(format!(
                "checkpoint has level {} but expected depth is {depth} (levels 0..{})",
                depth,
                depth - 1
            )));
        }
        if self.depth < depth {
            return Err(Error::Shape(format!(
                "checkpoint is missing level {} (has depth {}, expected {depth})",
                self.depth, self.depth
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ugck");
        let p = init_params(3, 4, 99);
        let meta = CheckpointMeta {
            family: Some("poisson".into()),
            epoch: Some(7),
            note: None,
        };
        save_checkpoint(&path, &p, &meta).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
    }

    #[test]
    fn wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ugck");
        save_checkpoint(&path, &init_params(1, 1, 0), &CheckpointMeta::default()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[8..8 + hlen].to_vec()).unwrap();
        let patched = json.replace("\"schema_version\":1", "\"schema_version\":9");
        let mut out = bytes[..4].to_vec();
        out.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[8 + hlen..]);
        fs::write(&path, out).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn corrupt_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ugck");
        save_checkpoint(&path, &init_params(2, 2, 0), &CheckpointMeta::default()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn depth_mismatch_names_level() {
        let p = init_params(6, 2, 0);
        let err = p.expect_architecture(4, 2).unwrap_err().to_string();
        assert!(err.contains("level 4"), "{err}");
        assert!(init_params(4, 2, 0).expect_architecture(4, 2).is_ok());
    }
}
