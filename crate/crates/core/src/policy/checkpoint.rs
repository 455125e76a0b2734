//! Checkpoint container: magic, a length-prefixed JSON header describing the
//! architecture and every tensor, then raw little-endian `f64` data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, Policy, PolicyError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LYAPCKP1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    dim: usize,
    tensors: Vec<(String, [usize; 2])>,
}

pub fn save_checkpoint(p: &Policy, path: &Path) -> Result<(), PolicyError> {
    let header = Header {
        arch: p.arch().clone(),
        dim: p.dim(),
        tensors: p
            .param_names()
            .iter()
            .zip(p.params())
            .map(|(n, a)| (n.clone(), [a.nrows(), a.ncols()]))
            .collect(),
    };
    let h = serde_json::to_vec(&header).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + h.len() + 8 * p.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(h.len() as u64).to_le_bytes());
    buf.extend_from_slice(&h);
    for a in p.params() {
        for &x in a.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Policy, PolicyError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
    if buf.len() < 16 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hl = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let body = buf.get(16..16 + hl).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let mut off = 16 + hl;
    let mut params = Vec::with_capacity(header.tensors.len());
    for (name, [r, c]) in &header.tensors {
        let n = r * c;
        let bytes = buf
            .get(off..off + 8 * n)
            .ok_or_else(|| bad(&format!("truncated tensor {name}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.push(Array2::from_shape_vec((*r, *c), data).expect("sized"));
        off += 8 * n;
    }
    if off != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let p = Policy::from_parts(&header.arch, header.dim, params)?;
    if p.param_names().iter().ne(header.tensors.iter().map(|(n, _)| n)) {
        return Err(bad("tensor names do not match the architecture"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let arch = ArchConfig {
            d_model: 8,
            heads: 2,
            dyn_layers: 1,
            tree_layers: 1,
            dec_layers: 1,
            latent_p: 4,
            latent_k: 4,
            ff_dim: 8,
            max_vars: 8,
        };
        let p = Policy::new(&arch, 3, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(q.arch(), p.arch());
        assert_eq!(q.dim(), 3);
        assert_eq!(q.params(), p.params());

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
