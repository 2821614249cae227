//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"URLM"                       magic
//! u32                           format version
//! u32                           tensor count
//! per tensor, in name order:
//!   u32 + bytes                 name length, UTF-8 name
//!   u32                         rank
//!   u64 * rank                  dims
//!   f64 * prod(dims)            values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DiffError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"URLM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<(), DiffError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint. Rank 0 and rank 1 tensors load as `1 x 1` and
/// `1 x n`.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore, DiffError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DiffError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)?;
        let dims = (0..rank).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n as usize),
            [a, b] => (*a as usize, *b as usize),
            _ => return Err(DiffError::Checkpoint(format!("{name}: rank {rank} unsupported"))),
        };
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        let t = Tensor::from_shape_vec((rows, cols), values)
            .map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        if store.contains(&name) {
            return Err(DiffError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        store.insert(name, t);
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), DiffError> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, DiffError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
