//! Single-file checkpoints: an 8-byte magic, a little-endian u64 header
//! length, a JSON header, then every parameter and buffer as little-endian
//! f32 in visit order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{NetSpec, Network};
use crate::{NetError, Result};

const MAGIC: &[u8; 8] = b"LIMBPNN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetSpec,
    pub seed: u64,
    /// Length of every stored array in order.
    pub lengths: Vec<usize>,
    /// Caller-defined context such as the pipeline configuration.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, net: &mut Network, extra: serde_json::Value) -> Result<()> {
    let state = net.state();
    let header = CheckpointHeader {
        spec: net.spec.clone(),
        seed: net.seed,
        lengths: state.iter().map(Vec::len).collect(),
        extra,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    })?;
    let total: usize = header.lengths.iter().sum();
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in state.iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // Write to a sibling file first so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| NetError::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| NetError::io(&tmp, e))?;
    f.sync_all().map_err(|e| NetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| NetError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let bad = |m: &str| NetError::Checkpoint {
        path: path.into(),
        message: m.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| NetError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + json_len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut rest = &bytes[16 + json_len..];
    let total: usize = header.lengths.iter().sum();
    if rest.len() != 4 * total {
        return Err(bad(&format!("expected {} weight bytes, found {}", 4 * total, rest.len())));
    }
    let mut state = Vec::with_capacity(header.lengths.len());
    for &n in &header.lengths {
        let (chunk, tail) = rest.split_at(4 * n);
        state.push(
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
        rest = tail;
    }
    let mut net = Network::build(header.spec.clone(), header.seed)?;
    net.load_state(&state).map_err(|e| bad(&e.to_string()))?;
    Ok((net, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectionNetSpec;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        let spec = DetectionNetSpec {
            base_width: 4,
            ..DetectionNetSpec::new(16, 16, 2)
        };
        let mut net = Network::detection(spec, 5).unwrap();
        // Perturb the running statistics so buffers are exercised too.
        net.visit_buffers(&mut |b| b.iter_mut().for_each(|v| *v += 0.25));
        save_checkpoint(&path, &mut net, serde_json::json!({"note": "x"})).unwrap();
        let (mut loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.extra["note"], "x");
        let x = Tensor::from_vec([1, 1, 2, 16, 16], (0..512).map(|i| (i % 7) as f32).collect()).unwrap();
        assert_eq!(net.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NetError::Checkpoint { .. })));
    }
}
