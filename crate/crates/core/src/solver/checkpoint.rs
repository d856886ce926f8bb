//! Frontier checkpoints for long-running searches.
//!
//! The file is self-describing: a magic tag and version, the precision
//! the search was started with, the variable table in declaration order,
//! and then the δ-thin record (if any) followed by the unexplored boxes.
//! Every box stores its branch path and one `[lo, hi]` pair per variable
//! as little-endian 64-bit floats, in declaration order. Loading
//! validates the precision and the variable table against the resuming
//! task, so a checkpoint cannot silently resume a different query.

use super::{Frontier, WorkItem};
use crate::expr::{IntervalBox, VarSet};
use crate::interval::Interval;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"OVCKPT01";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint precision {found} does not match the configured {expected}")]
    DeltaMismatch { expected: f64, found: f64 },
    #[error("checkpoint variable table does not match the task: {detail}")]
    VarMismatch { detail: String },
    #[error("checkpoint file is truncated or corrupt")]
    Corrupt,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(b);
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_item(out: &mut Vec<u8>, item: &WorkItem) {
    put_u32(out, item.path.len() as u32);
    put_bytes(out, &item.path);
    for iv in &item.enclosure.0 {
        put_f64(out, iv.lo);
        put_f64(out, iv.hi);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Corrupt)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Corrupt);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn item(&mut self, nvars: usize) -> Result<WorkItem, CheckpointError> {
        let plen = self.u32()? as usize;
        let path = self.take(plen)?.to_vec();
        if path.iter().any(|&b| b > 1) {
            return Err(CheckpointError::Corrupt);
        }
        let mut iv = Vec::with_capacity(nvars);
        for _ in 0..nvars {
            let lo = self.f64()?;
            let hi = self.f64()?;
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(CheckpointError::Corrupt);
            }
            iv.push(Interval::new(lo, hi));
        }
        Ok(WorkItem {
            path,
            enclosure: IntervalBox(iv),
        })
    }
}

pub fn encode(delta: f64, vars: &VarSet, frontier: &Frontier) -> Vec<u8> {
    let mut out = Vec::new();
    put_bytes(&mut out, MAGIC);
    put_u32(&mut out, VERSION);
    put_f64(&mut out, delta);
    put_u64(&mut out, frontier.processed);
    put_u32(&mut out, vars.len() as u32);
    for name in vars.names() {
        put_u32(&mut out, name.len() as u32);
        put_bytes(&mut out, name.as_bytes());
    }
    match &frontier.record {
        Some(item) => {
            out.push(1);
            put_item(&mut out, item);
        }
        None => out.push(0),
    }
    put_u64(&mut out, frontier.items.len() as u64);
    for item in &frontier.items {
        put_item(&mut out, item);
    }
    out
}

pub fn decode(buf: &[u8], delta: f64, vars: &VarSet) -> Result<Frontier, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let found = r.f64()?;
    if found.to_bits() != delta.to_bits() {
        return Err(CheckpointError::DeltaMismatch {
            expected: delta,
            found,
        });
    }
    let processed = r.u64()?;
    let nvars = r.u32()? as usize;
    if nvars != vars.len() {
        return Err(CheckpointError::VarMismatch {
            detail: format!("{nvars} variables, task has {}", vars.len()),
        });
    }
    for (i, expected) in vars.names().enumerate() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::Corrupt)?;
        if name != expected {
            return Err(CheckpointError::VarMismatch {
                detail: format!("variable {i} is {name:?}, task declares {expected:?}"),
            });
        }
    }
    let record = match r.take(1)?[0] {
        0 => None,
        1 => Some(r.item(nvars)?),
        _ => return Err(CheckpointError::Corrupt),
    };
    let count = r.u64()? as usize;
    let mut items = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        items.push(r.item(nvars)?);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt);
    }
    Ok(Frontier {
        items,
        record,
        processed,
    })
}

/// Writes atomically: the bytes land in a sibling temp file first, so an
/// interrupted save cannot clobber the previous checkpoint.
pub fn save(
    path: &Path,
    delta: f64,
    vars: &VarSet,
    frontier: &Frontier,
) -> Result<(), CheckpointError> {
    let bytes = encode(delta, vars, frontier);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path, delta: f64, vars: &VarSet) -> Result<Frontier, CheckpointError> {
    let buf = fs::read(path)?;
    decode(&buf, delta, vars)
}
