//! MFCK1 parameter files: the magic bytes, then one record per parameter:
//! name length (u64), UTF-8 name, rank (u64), dims (u64 each), then the
//! values as f32. All integers and floats little-endian.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 5] = b"MFCK1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an MFCK1 file")]
    BadMagic,
    #[error("truncated record for parameter {0:?}")]
    Truncated(String),
    #[error("parameter name is not UTF-8")]
    BadName,
    #[error("checkpoint has no parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?}: checkpoint shape {found:?}, model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub fn write_params<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn to_bytes<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(store, &mut out).expect("writing to memory");
    out
}

fn read_u64(r: &mut impl Read, ctx: &str) -> Result<Option<u64>, CheckpointError> {
    let mut b = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let n = r.read(&mut b[got..])?;
        if n == 0 {
            return if got == 0 { Ok(None) } else { Err(CheckpointError::Truncated(ctx.to_string())) };
        }
        got += n;
    }
    Ok(Some(u64::from_le_bytes(b)))
}

pub fn read_params<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>, CheckpointError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut store = ParamStore::new();
    while let Some(len) = read_u64(&mut r, "<name>")? {
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(|_| CheckpointError::Truncated("<name>".into()))?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let trunc = || CheckpointError::Truncated(name.clone());
        let rank = read_u64(&mut r, &name)?.ok_or_else(trunc)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, &name)?.ok_or_else(trunc)? as usize);
        }
        let mut raw = vec![0u8; numel(&shape) * 4];
        r.read_exact(&mut raw).map_err(|_| trunc())?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.add(name, Tensor::new(shape, data).expect("length from shape"));
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> io::Result<()> {
    std::fs::write(path, to_bytes(store))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamStore<T>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_params(bytes.as_slice())
}

/// Copies every parameter of `into` from `from` by name, checking shapes.
pub fn restore<T: Scalar>(into: &mut ParamStore<T>, from: &ParamStore<T>) -> Result<(), CheckpointError> {
    for i in 0..into.len() {
        let name = into.name(i).to_string();
        let j = from.index_of(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        let src = from.value(j);
        if src.shape() != into.value(i).shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: into.value(i).shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
        *into.value_mut(i) = src.clone();
    }
    Ok(())
}
