//! Versioned binary archive of named tensors plus a metadata text blob.
//!
//! Layout (all integers little-endian):
//! `"MSFS1\0"` magic, u32 version, u8 scalar width (4 or 8),
//! u64 meta length + UTF-8 metadata, u64 tensor count, then per tensor:
//! u64 name length + name, u64 ndim + dims, raw scalar data.
//!
//! Writing the same contents twice produces byte-identical files, which
//! makes save -> load -> save idempotent.

use crate::error::{Error, Result};
use crate::tape::Scalar;
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"MSFS1\0";
const VERSION: u32 = 1;

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Load("unexpected end of archive".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn scalar_width<T: Scalar>() -> u8 {
    std::mem::size_of::<T>() as u8
}

fn write_scalar<T: Scalar, W: Write>(w: &mut W, v: T) -> Result<()> {
    // f32 and f64 are the only Scalar impls; route through bit patterns.
    if scalar_width::<T>() == 4 {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    } else {
        w.write_all(&v.to_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Writes metadata and tensors; overwrites the target atomically enough for
/// single-writer use (temp file then rename).
pub fn write_tensor_archive<T: Scalar>(
    path: &Path,
    meta: &str,
    tensors: &[(String, &ArrayD<T>)],
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[scalar_width::<T>()])?;
        let meta_bytes = meta.as_bytes();
        write_u64(&mut w, meta_bytes.len() as u64)?;
        w.write_all(meta_bytes)?;
        write_u64(&mut w, tensors.len() as u64)?;
        for (name, t) in tensors {
            let name_bytes = name.as_bytes();
            write_u64(&mut w, name_bytes.len() as u64)?;
            w.write_all(name_bytes)?;
            write_u64(&mut w, t.ndim() as u64)?;
            for d in t.shape() {
                write_u64(&mut w, *d as u64)?;
            }
            for v in t.iter() {
                write_scalar(&mut w, *v)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads an archive written by `write_tensor_archive` with the same scalar
/// type. Returns the metadata text and tensors keyed by name.
pub fn read_tensor_archive_with_meta<T: Scalar>(
    path: &Path,
) -> Result<(String, BTreeMap<String, ArrayD<T>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Load("file too short for archive header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Load(format!(
            "bad magic {:?}, not a model archive",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf)
        .map_err(|_| Error::Load("unexpected end of archive".into()))?;
    let version = u32::from_le_bytes(vbuf);
    if version != VERSION {
        return Err(Error::Load(format!(
            "archive version {version} unsupported (expected {VERSION})"
        )));
    }
    let mut wbuf = [0u8; 1];
    r.read_exact(&mut wbuf)
        .map_err(|_| Error::Load("unexpected end of archive".into()))?;
    if wbuf[0] != scalar_width::<T>() {
        return Err(Error::Load(format!(
            "archive stores {}-byte scalars but {}-byte requested",
            wbuf[0],
            scalar_width::<T>()
        )));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Load("truncated metadata".into()))?;
    let meta = String::from_utf8(meta_bytes)
        .map_err(|_| Error::Load("metadata is not UTF-8".into()))?;

    let count = read_u64(&mut r)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::Load("truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Load("tensor name is not UTF-8".into()))?;
        let ndim = read_u64(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u64(&mut r)? as usize);
        }
        let len: usize = dims.iter().product();
        let width = scalar_width::<T>() as usize;
        let mut raw = vec![0u8; len * width];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Load(format!("truncated data for tensor {name}")))?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(width) {
            let v = if width == 4 {
                T::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64)
            } else {
                T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap()))
            };
            data.push(v);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Load(format!("tensor {name}: {e}")))?;
        tensors.insert(name, arr);
    }
    Ok((meta, tensors))
}

pub fn read_tensor_archive<T: Scalar>(path: &Path) -> Result<BTreeMap<String, ArrayD<T>>> {
    read_tensor_archive_with_meta(path).map(|(_, t)| t)
}
