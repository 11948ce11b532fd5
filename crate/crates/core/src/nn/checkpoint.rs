//! Little-endian binary container for named tensors.
//!
//! ```text
//! magic    4 bytes  "OBCK"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (u64 each)
//!   payload  product(dims) x f64
//! ```
//!
//! Elements are always stored as `f64`; `f32` tensors widen losslessly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"OBCK";
pub const VERSION: u32 = 1;

pub fn write_tensors<T: Real, W: Write>(params: &ParamSet<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for e in params.iter() {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in e.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in e.tensor.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_tensors<T: Real, R: Read>(mut r: R) -> Result<ParamSet<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::lit(f64::from_bits(read_u64(&mut r)?)));
        }
        out.push(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn save<T: Real>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    write_tensors(params, BufWriter::new(File::create(path)?))
}

pub fn load<T: Real>(path: &Path) -> Result<ParamSet<T>> {
    read_tensors(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![2], vec![1.5f64, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_tensors(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"OBCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        // 12 header + 4 + 1 name + 4 ndim + 8 dim + 16 payload
        assert_eq!(buf.len(), 45);
        assert_eq!(read_tensors::<f64, _>(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        assert!(matches!(
            read_tensors::<f64, _>(&b"NOPE\x01\0\0\0\0\0\0\0"[..]),
            Err(Error::Checkpoint(_))
        ));
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![2], vec![1.5f64, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_tensors(&p, &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_tensors::<f64, _>(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
