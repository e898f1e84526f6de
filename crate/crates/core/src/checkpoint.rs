//! Binary checkpoint format.
//!
//! Single file, little-endian throughout:
//!
//! ```text
//! magic    4 bytes  "C2GN"
//! version  u32      currently 1
//! seed     u64
//! step     u64
//! cfg_len  u32      length of the config echo
//! cfg      bytes    UTF-8 JSON, written back verbatim on load/save
//! n        u32      tensor count
//! then per tensor:
//!   name_len u32, name bytes
//!   ndim     u32, dims (u64 each)
//!   data     f32 per element, row-major
//! ```
//!
//! Parameters are f64 in memory and narrowed to f32 on disk, so
//! load(save(p)) is a rounded copy, but save(load(f)) reproduces the
//! file byte for byte.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layout, ModelParams};

const MAGIC: &[u8; 4] = b"C2GN";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub step: u64,
    pub config_json: String,
}

pub fn save(
    path: &Path,
    params: &ModelParams,
    seed: u64,
    step: u64,
    config_json: &str,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    let tensors = params.layout.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, range) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for &x in &params.theta[range] {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64()?;
    let step = r.u64()?;
    let cfg_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|e| Error::Checkpoint(format!("config echo is not UTF-8: {e}")))?;
    let n_tensors = r.u32()? as usize;

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            data.push(raw as f64);
        }
        tensors.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    // Reconstruct the layout from the embedding and w1 shapes, then
    // verify every tensor against it.
    let emb = tensors
        .iter()
        .find(|(n, _, _)| n == "emb")
        .ok_or_else(|| Error::Checkpoint("missing emb tensor".into()))?;
    let w1 = tensors
        .iter()
        .find(|(n, _, _)| n == "w1")
        .ok_or_else(|| Error::Checkpoint("missing w1 tensor".into()))?;
    if emb.1.len() != 2 || w1.1.len() != 2 {
        return Err(Error::Checkpoint("emb/w1 must be rank 2".into()));
    }
    let layout = Layout::new(emb.1[0], emb.1[1], w1.1[0]);
    let mut theta = vec![0.0; layout.total];
    let expected = layout.tensors();
    if expected.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, file has {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((name, shape, range), (got_name, got_shape, data)) in expected.into_iter().zip(tensors) {
        if name != got_name || shape != got_shape {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: expected {name} {shape:?}, found {got_name} {got_shape:?}"
            )));
        }
        theta[range].copy_from_slice(&data);
    }
    Ok(Checkpoint {
        params: ModelParams { layout, theta },
        seed,
        step,
        config_json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_params() -> ModelParams {
        ModelParams::init(Layout::new(23, 6, 5), 0.1, 9)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let params = sample_params();
        save(&p1, &params, 42, 1234, "{\"note\":\"cfg\"}").unwrap();
        let ck = load(&p1).unwrap();
        assert_eq!(ck.seed, 42);
        assert_eq!(ck.step, 1234);
        assert_eq!(ck.config_json, "{\"note\":\"cfg\"}");
        assert_eq!(ck.params.layout, params.layout);
        save(&p2, &ck.params, ck.seed, ck.step, &ck.config_json).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_values_match_to_f32_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let params = sample_params();
        save(&path, &params, 0, 0, "{}").unwrap();
        let ck = load(&path).unwrap();
        for (a, b) in params.theta.iter().zip(&ck.params.theta) {
            assert_eq!(*a as f32, *b as f32);
            assert!((a - b).abs() <= f32::EPSILON as f64 * a.abs().max(1.0));
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let params = sample_params();
        save(&path, &params, 7, 7, "{}").unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("trunc.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load(&truncated).is_err());

        bytes[0] = b'X';
        let bad_magic = dir.path().join("magic.bin");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(load(&bad_magic).is_err());

        assert!(load(&dir.path().join("missing.bin")).is_err());
    }
}
