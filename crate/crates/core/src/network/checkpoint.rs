//! Binary checkpoint container.
//!
//! ```text
//! "MHTN" | u32 version | 32-byte config digest | u32 group count
//! per group: u32 name length | name (utf-8) | u32 matrix count
//!            | matrix count × (u32 rows, u32 cols) | f64 payloads
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{NetworkConfig, StarNetwork};
use crate::autodiff::{DenseMatrix, ParamGroup};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MHTN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Raw checkpoint contents before they are matched against a network.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub version: u32,
    pub config_digest: [u8; 32],
    pub groups: Vec<(String, Vec<DenseMatrix>)>,
}

fn u32_le(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("{n} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(net: &StarNetwork, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.config().digest());
    buf.extend_from_slice(&u32_le(net.groups().len())?);
    for g in net.groups() {
        buf.extend_from_slice(&u32_le(g.name.len())?);
        buf.extend_from_slice(g.name.as_bytes());
        buf.extend_from_slice(&u32_le(g.matrices.len())?);
        for m in &g.matrices {
            buf.extend_from_slice(&u32_le(m.rows())?);
            buf.extend_from_slice(&u32_le(m.cols())?);
        }
        for m in &g.matrices {
            for v in m.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<CheckpointData> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not an MHTN checkpoint".into()));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config_digest: [u8; 32] = c.take(32)?.try_into().expect("32 bytes");
    let n_groups = c.u32()?;
    let mut groups = Vec::with_capacity(n_groups.min(64));
    for _ in 0..n_groups {
        let len = c.u32()?;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("group name is not utf-8".into()))?;
        let count = c.u32()?;
        let mut shapes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            shapes.push((c.u32()?, c.u32()?));
        }
        let mut matrices = Vec::with_capacity(shapes.len());
        for (rows, cols) in shapes {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("matrix size overflow".into()))?;
            let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("matrix size overflow".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            matrices.push(
                DenseMatrix::from_vec(rows, cols, values)
                    .map_err(|e| Error::Checkpoint(format!("group {name}: {e}")))?,
            );
        }
        groups.push((name, matrices));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last group",
            bytes.len() - c.pos
        )));
    }
    Ok(CheckpointData {
        version,
        config_digest,
        groups,
    })
}

/// Builds a network for `config` and fills it from `data`, refusing a
/// checkpoint written under a different configuration.
pub fn restore(config: NetworkConfig, data: CheckpointData) -> Result<StarNetwork> {
    if data.config_digest != config.digest() {
        return Err(Error::Checkpoint(format!(
            "config digest mismatch: checkpoint {} vs active config {}",
            hex::encode(data.config_digest),
            config.digest_hex()
        )));
    }
    let mut net = StarNetwork::build(config, 0)?;
    let groups = net
        .groups()
        .iter()
        .zip(data.groups)
        .map(|(have, (name, matrices))| {
            if matrices.len() != have.labels.len() {
                return Err(Error::Checkpoint(format!(
                    "group {name}: {} matrices, expected {}",
                    matrices.len(),
                    have.labels.len()
                )));
            }
            let mut g = ParamGroup::new(name, have.learning_rate, have.weight_decay)?;
            for (label, m) in have.labels.iter().zip(matrices) {
                g.push(label.clone(), m);
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    net.set_groups(groups)?;
    Ok(net)
}

/// Writes through a temporary file and renames, so an interrupted save never
/// clobbers the previous checkpoint.
pub fn save_checkpoint(net: &StarNetwork, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    crate::data::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path, config: NetworkConfig) -> Result<StarNetwork> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    restore(config, read_checkpoint(std::io::BufReader::new(file))?)
}

/// SHA-256 of the serialized checkpoint, hex encoded.
pub fn checkpoint_digest(net: &StarNetwork) -> String {
    use sha2::{Digest, Sha256};
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes).expect("in-memory write");
    hex::encode(Sha256::digest(&bytes))
}
