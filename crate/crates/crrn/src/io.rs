//! The "SPT1" binary tensor format used by every module: magic bytes
//! `SPT1`, u8 rank, rank little-endian u32 dims, then f32 little-endian
//! data in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

pub const MAGIC: [u8; 4] = *b"SPT1";

pub fn write_record<W: Write>(w: &mut W, dims: &[u32], data: &[f32]) -> Result<()> {
    let len: usize = dims.iter().map(|&d| d as usize).product();
    if len != data.len() {
        return Err(Error::Format(format!(
            "dims {:?} do not match data length {}",
            dims,
            data.len()
        )));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_record<R: Read>(r: &mut R) -> Result<(Vec<u32>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let rank = rank[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b));
    }
    let len: usize = dims.iter().map(|&d| d as usize).product();
    let mut data = Vec::with_capacity(len);
    let mut b = [0u8; 4];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        data.push(f32::from_le_bytes(b));
    }
    Ok((dims, data))
}

/// Byte length of a record with the given dims.
pub fn record_len(dims: &[u32]) -> u64 {
    let len: u64 = dims.iter().map(|&d| d as u64).product();
    4 + 1 + 4 * dims.len() as u64 + 4 * len
}

pub fn save_tensor<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = t.dims();
    let dims = [d.n as u32, d.c as u32, d.h as u32, d.w as u32];
    let data: Vec<f32> = t.data().iter().map(|&v| v.as_f64() as f32).collect();
    write_record(&mut w, &dims, &data)
}

pub fn load_tensor<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let mut r = BufReader::new(File::open(path)?);
    let (dims, data) = read_record(&mut r)?;
    if dims.len() != 4 {
        return Err(Error::Format(format!("expected rank 4, got {}", dims.len())));
    }
    let d = Dims::new(
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        dims[3] as usize,
    );
    Tensor::new(d, data.into_iter().map(|v| S::from_real(v as f64)).collect())
}

/// A time-ordered stack of (1, c, h, w) frames stored as one rank-4 record
/// with dims (T, c, h, w).
pub fn save_frames<S: Scalar>(path: &Path, frames: &[Tensor<S>]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("cannot save an empty frame stack"))?;
    let d = first.dims();
    let mut w = BufWriter::new(File::create(path)?);
    let dims = [frames.len() as u32, d.c as u32, d.h as u32, d.w as u32];
    let mut data = Vec::with_capacity(frames.len() * d.len());
    for f in frames {
        if f.dims() != d {
            return Err(Error::ShapeMismatch {
                context: "save_frames",
                expected: d,
                got: f.dims(),
            });
        }
        data.extend(f.data().iter().map(|&v| v.as_f64() as f32));
    }
    write_record(&mut w, &dims, &data)
}

pub fn load_frames<S: Scalar>(path: &Path) -> Result<Vec<Tensor<S>>> {
    let mut r = BufReader::new(File::open(path)?);
    let (dims, data) = read_record(&mut r)?;
    if dims.len() != 4 {
        return Err(Error::Format(format!("expected rank 4, got {}", dims.len())));
    }
    let t = dims[0] as usize;
    let d = Dims::new(1, dims[1] as usize, dims[2] as usize, dims[3] as usize);
    let per = d.len();
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let slice = &data[i * per..(i + 1) * per];
        frames.push(Tensor::new(
            d,
            slice.iter().map(|&v| S::from_real(v as f64)).collect(),
        )?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.spt1");
        let t = Tensor::<f32>::new(
            Dims::new(2, 3, 2, 2),
            (0..24).map(|i| i as f32 * 0.5 - 3.0).collect(),
        )
        .unwrap();
        save_tensor(&p, &t).unwrap();
        let back: Tensor<f32> = load_tensor(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn wrong_magic_rejected() {
        let buf = vec![b'X', b'P', b'T', b'1', 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let res = read_record(&mut buf.as_slice());
        assert!(matches!(res, Err(Error::Format(_))));
    }
}
