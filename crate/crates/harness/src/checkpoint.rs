//! Versioned binary container of named 64-bit real arrays.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                         |
//! |-------|-------------------------------------------------|
//! | 8     | magic `DGFCKPT\0`                               |
//! | 4     | format version (u32)                            |
//! | 32    | configuration digest (SHA-256)                  |
//! | 8     | global timestep (u64)                           |
//! | 4     | array count (u32)                               |
//! | ...   | per array: name length (u32), UTF-8 name, value count (u64), values (f64) |
//! | 32    | SHA-256 of every preceding byte                 |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 8] = *b"DGFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub digest: [u8; 32],
    pub timestep: u64,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(digest: [u8; 32], timestep: u64, arrays: Vec<(String, Vec<f64>)>) -> Self {
        Self { version: FORMAT_VERSION, digest, timestep, arrays }
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.timestep.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        out
    }

    /// Parses and integrity-checks a container; version and digest are not judged here.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let min = MAGIC.len() + 4 + 32 + 8 + 4 + HASH_LEN;
        if bytes.len() < min {
            return Err(integrity(bytes.len(), format!("file has {} bytes, at least {min} needed", bytes.len())));
        }
        let body_len = bytes.len() - HASH_LEN;
        let (body, stored) = bytes.split_at(body_len);
        if Sha256::digest(body).as_slice() != stored {
            return Err(integrity(body_len, "checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(integrity(0, "bad magic".into()));
        }
        let version = r.u32()?;
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let timestep = r.u64()?;
        let count = r.u32()?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| integrity(at, "array name is not UTF-8".into()))?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| integrity(r.pos, "array length overflow".into()))?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, values));
        }
        if r.pos != body.len() {
            return Err(integrity(r.pos, format!("{} trailing bytes before checksum", body.len() - r.pos)));
        }
        Ok(Self { version, digest, timestep, arrays })
    }
}

fn integrity(offset: usize, reason: String) -> HarnessError {
    HarnessError::Integrity { offset: offset as u64, reason }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(integrity(self.pos, format!("need {n} bytes, {} remain", self.bytes.len() - self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.encode())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, refusing version or digest mismatches unless `force` is set.
pub fn load_checkpoint(path: &Path, expected_digest: Option<&[u8; 32]>, force: bool) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt = Checkpoint::decode(&bytes)?;
    if !force {
        if ckpt.version != FORMAT_VERSION {
            return Err(HarnessError::Mismatch(format!(
                "format version {} (expected {FORMAT_VERSION})",
                ckpt.version
            )));
        }
        if let Some(d) = expected_digest {
            if &ckpt.digest != d {
                return Err(HarnessError::Mismatch("configuration digest differs from the checkpoint's".into()));
            }
        }
    }
    Ok(ckpt)
}

/// File name of the checkpoint taken at `timestep`.
pub fn checkpoint_name(timestep: u64) -> String {
    format!("checkpoint_{timestep:012}.ckpt")
}
