//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"KGN1"  version: u32
//! repeated until EOF:
//!     name_len: u64, name: [u8; name_len] (UTF-8)
//!     rank: u64, dims: [u64; rank]
//!     payload: [f64; product(dims)]
//! ```

use std::io::{Read, Write};

use crate::matrix::Matrix;
use crate::params::ParamStore;
use crate::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"KGN1";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (_, p) in store.iter() {
        write_entry(&mut w, &p.name, p.value())?;
    }
    w.flush()?;
    Ok(())
}

fn write_entry<W: Write>(w: &mut W, name: &str, value: &Matrix) -> Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&2u64.to_le_bytes())?;
    w.write_all(&(value.rows() as u64).to_le_bytes())?;
    w.write_all(&(value.cols() as u64).to_le_bytes())?;
    for x in value.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let bytes = buf
        .get(*pos..*pos + 8)
        .ok_or_else(|| NnError::Format("truncated integer".into()))?;
    *pos += 8;
    Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")))
}

/// Reads every `(name, value)` entry. Rank 0 and 1 entries become `1 x 1` and
/// `1 x n` matrices.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..4] != MAGIC {
        return Err(NnError::Format("missing KGN1 magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < buf.len() {
        let len = read_u64(&buf, &mut pos)? as usize;
        let name_bytes = buf
            .get(pos..pos.saturating_add(len))
            .ok_or_else(|| NnError::Format("truncated name".into()))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| NnError::Format(format!("name is not UTF-8: {e}")))?
            .to_owned();
        pos += len;
        let rank = read_u64(&buf, &mut pos)? as usize;
        if rank > 2 {
            return Err(NnError::Format(format!("{name}: rank {rank} unsupported")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&buf, &mut pos)? as usize);
        }
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!(),
        };
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| NnError::Format(format!("{name}: shape overflow")))?;
        let bytes = buf
            .get(pos..pos.saturating_add(count.saturating_mul(8)))
            .ok_or_else(|| NnError::Format(format!("{name}: truncated payload")))?;
        pos += count * 8;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(out)
}

/// Copies checkpoint values into same-named parameters. Every parameter in
/// `store` must be present with a matching shape; extra entries are returned.
pub fn load_into(store: &mut ParamStore, entries: Vec<(String, Matrix)>) -> Result<Vec<(String, Matrix)>> {
    let mut extra = Vec::new();
    let mut seen = vec![false; store.len()];
    for (name, value) in entries {
        match store.find(&name) {
            Some(id) => {
                store.set_value(id, value)?;
                seen[id.index()] = true;
            }
            None => extra.push((name, value)),
        }
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !seen[id.index()]) {
        return Err(NnError::Format(format!("checkpoint lacks parameter {}", p.name)));
    }
    Ok(extra)
}
