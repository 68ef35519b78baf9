//! Binary checkpoints of propagated sector states.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes   b"SPINBATH"
//! version    u32       FORMAT_VERSION
//! n_records  u32
//! record * n_records:
//!   n_spins     u32
//!   n_up        u32     (u32::MAX for the full space)
//!   time_index  u64     index into the run's time grid
//!   t           f64
//!   seed        u64     seed of the member's random draw
//!   plan_hash   u64     digest of the propagator plan
//!   weight      f64
//!   n_amp       u64
//!   amplitudes  n_amp * (re f64, im f64)
//!   n_values    u64
//!   values      n_values * f64   samples recorded up to time_index
//! checksum   u64       first 8 bytes of SHA-256 over everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::operator::C64;

pub const MAGIC: &[u8; 8] = b"SPINBATH";
pub const FORMAT_VERSION: u32 = 1;
pub const FULL_SPACE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub n_spins: u32,
    pub n_up: u32,
    pub time_index: u64,
    pub t: f64,
    pub seed: u64,
    pub plan_hash: u64,
    pub weight: f64,
    pub amplitudes: Vec<C64>,
    pub values: Vec<f64>,
}

pub fn encode(records: &[CheckpointRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r.n_spins.to_le_bytes());
        buf.extend_from_slice(&r.n_up.to_le_bytes());
        buf.extend_from_slice(&r.time_index.to_le_bytes());
        buf.extend_from_slice(&r.t.to_le_bytes());
        buf.extend_from_slice(&r.seed.to_le_bytes());
        buf.extend_from_slice(&r.plan_hash.to_le_bytes());
        buf.extend_from_slice(&r.weight.to_le_bytes());
        buf.extend_from_slice(&(r.amplitudes.len() as u64).to_le_bytes());
        for z in &r.amplitudes {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        buf.extend_from_slice(&(r.values.len() as u64).to_le_bytes());
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        // Reject lengths that cannot fit in the remaining bytes.
        if n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointRecord>> {
    if bytes.len() < 24 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if checksum(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let n_spins = c.u32()?;
        let n_up = c.u32()?;
        let time_index = c.u64()?;
        let t = c.f64()?;
        let seed = c.u64()?;
        let plan_hash = c.u64()?;
        let weight = c.f64()?;
        let n_amp = c.len()?;
        let mut amplitudes = Vec::with_capacity(n_amp);
        for _ in 0..n_amp {
            let re = c.f64()?;
            let im = c.f64()?;
            amplitudes.push(C64::new(re, im));
        }
        let n_values = c.len()?;
        let values = (0..n_values).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        records.push(CheckpointRecord {
            n_spins,
            n_up,
            time_index,
            t,
            seed,
            plan_hash,
            weight,
            amplitudes,
            values,
        });
    }
    if c.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(records)
}

/// Writes atomically through a temporary sibling file.
pub fn save(path: &Path, records: &[CheckpointRecord]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode(records))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<CheckpointRecord>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
