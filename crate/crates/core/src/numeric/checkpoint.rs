//! Versioned parameter checkpoints.
//!
//! Layout (all header lines are UTF-8, `\n` terminated):
//!
//! ```text
//! KIXCKPT 1
//! meta <key> <value>                      (zero or more, value is one line)
//! text <key> <byte-count>                 (zero or more, followed by the raw bytes and `\n`)
//! param <set> <name> <d0,d1,..> <offset> <count>
//! payload <byte-count> <sha256-hex>
//! <payload: little-endian f32 values>
//! ```
//!
//! Offsets and counts are in `f32` elements relative to the payload start.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "KIXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("checkpoint checksum failure: {0}")]
    Checksum(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint manifest mismatch: {0}")]
    Manifest(String),
}

/// Named parameter sets plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub texts: Vec<(String, String)>,
    pub sets: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.texts.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&self, name: &str) -> Option<&ParamSet> {
        self.sets.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut header = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut texts = Vec::new();
        for (k, v) in &self.texts {
            texts.push(format!("text {k} {}\n", v.len()));
            texts.push(format!("{v}\n"));
        }
        let mut params = String::new();
        let mut offset = 0usize;
        for (set, ps) in &self.sets {
            for (name, t) in ps.iter() {
                let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
                params.push_str(&format!("param {set} {name} {} {offset} {}\n", dims.join(","), t.len()));
                for &v in t.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
                offset += t.len();
            }
        }
        let digest = hex(&Sha256::digest(&payload));
        let mut out = header.into_bytes();
        for t in texts {
            out.extend_from_slice(t.as_bytes());
        }
        out.extend_from_slice(params.as_bytes());
        out.extend_from_slice(format!("payload {} {digest}\n", payload.len()).as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let first = cur.line()?;
        let mut parts = first.split(' ');
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        let version = parts.next().unwrap_or("");
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(CheckpointError::Version {
                found: version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut ckpt = Checkpoint::default();
        let mut entries: Vec<(String, String, Vec<usize>, usize, usize)> = Vec::new();
        loop {
            let line = cur.line()?;
            let (kind, rest) = line.split_once(' ').ok_or_else(|| malformed(&line))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.push((k.to_string(), v.to_string()));
                }
                "text" => {
                    let (k, n) = rest.split_once(' ').ok_or_else(|| malformed(&line))?;
                    let n: usize = n.parse().map_err(|_| malformed(&line))?;
                    let body = cur.take(n)?;
                    let body = String::from_utf8(body.to_vec()).map_err(|_| malformed(k))?;
                    if cur.take(1)? != b"\n" {
                        return Err(malformed(k));
                    }
                    ckpt.texts.push((k.to_string(), body));
                }
                "param" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 5 {
                        return Err(malformed(&line));
                    }
                    let dims = f[2]
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| malformed(&line))?;
                    let offset = f[3].parse().map_err(|_| malformed(&line))?;
                    let count = f[4].parse().map_err(|_| malformed(&line))?;
                    entries.push((f[0].to_string(), f[1].to_string(), dims, offset, count));
                }
                "payload" => {
                    let (n, digest) = rest.split_once(' ').ok_or_else(|| malformed(&line))?;
                    let n: usize = n.parse().map_err(|_| malformed(&line))?;
                    let payload = &bytes[cur.pos..];
                    if payload.len() != n {
                        return Err(CheckpointError::Checksum(format!(
                            "payload is {} bytes, header declares {n}",
                            payload.len()
                        )));
                    }
                    if hex(&Sha256::digest(payload)) != digest {
                        return Err(CheckpointError::Checksum("payload digest differs".into()));
                    }
                    for (set, name, dims, offset, count) in entries {
                        let end = (offset + count) * 4;
                        if end > payload.len() {
                            return Err(malformed(&name));
                        }
                        let data = payload[offset * 4..end]
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                            .collect();
                        let t = Tensor::new(&dims, data).map_err(|e| malformed(&e.to_string()))?;
                        let idx = match ckpt.sets.iter().position(|(s, _)| *s == set) {
                            Some(i) => i,
                            None => {
                                ckpt.sets.push((set.clone(), ParamSet::new()));
                                ckpt.sets.len() - 1
                            }
                        };
                        ckpt.sets[idx].1.insert(&name, t).map_err(|e| malformed(&e.to_string()))?;
                    }
                    return Ok(ckpt);
                }
                _ => return Err(malformed(&line)),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn malformed(what: &str) -> CheckpointError {
    CheckpointError::Malformed(what.to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<String, CheckpointError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CheckpointError::Checksum("header truncated".into()))?;
        self.pos += end + 1;
        String::from_utf8(rest[..end].to_vec()).map_err(|_| malformed("non-utf8 header"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Checksum("header truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
