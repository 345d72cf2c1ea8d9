//! NST tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 4E 53 54 31          magic "NST1"
//! u8                   dtype: 0 = f32, 1 = u8
//! u8                   ndim
//! ndim x u32           extents
//! payload              row-major elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NST1";
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum NstValue {
    F32(Tensor),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_record<W: Write>(w: &mut W, value: &NstValue) -> Result<()> {
    let (dtype, shape) = match value {
        NstValue::F32(t) => (DTYPE_F32, t.shape()),
        NstValue::U8 { shape, data } => {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::shape("write_nst", "u8 payload does not match shape"));
            }
            (DTYPE_U8, shape.as_slice())
        }
    };
    if shape.len() > u8::MAX as usize {
        return Err(Error::DimOverflow(format!(
            "rank {} exceeds 255",
            shape.len()
        )));
    }
    let mut header = Vec::with_capacity(6 + 4 * shape.len());
    header.extend_from_slice(&MAGIC);
    header.push(dtype);
    header.push(shape.len() as u8);
    for &d in shape {
        let d =
            u32::try_from(d).map_err(|_| Error::DimOverflow(format!("extent {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&header).map_err(io_err)?;
    match value {
        NstValue::F32(t) => {
            let mut buf = Vec::with_capacity(4 * t.numel());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io_err)
        }
        NstValue::U8 { data, .. } => w.write_all(data).map_err(io_err),
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => io_err(e),
    })
}

pub fn read_record<R: Read>(r: &mut R) -> Result<NstValue> {
    let mut head = [0u8; 6];
    read_exact_or(r, &mut head, "header")?;
    if head[..4] != MAGIC {
        return Err(Error::BadMagic(format!("{:02X?}", &head[..4])));
    }
    let dtype = head[4];
    let elem = match dtype {
        DTYPE_F32 => 4usize,
        DTYPE_U8 => 1,
        other => return Err(Error::Dtype(other)),
    };
    let ndim = head[5] as usize;
    let mut dims = vec![0u8; 4 * ndim];
    read_exact_or(r, &mut dims, "extents")?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let bytes = shape
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .filter(|&b| b <= isize::MAX as usize)
        .ok_or_else(|| Error::DimOverflow(format!("{shape:?}")))?;
    let mut payload = Vec::new();
    r.take(bytes as u64)
        .read_to_end(&mut payload)
        .map_err(io_err)?;
    if payload.len() != bytes {
        return Err(Error::Truncated(format!(
            "payload has {} of {bytes} bytes",
            payload.len()
        )));
    }
    Ok(match dtype {
        DTYPE_F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            NstValue::F32(Tensor::new(shape, data)?)
        }
        _ => NstValue::U8 {
            shape,
            data: payload,
        },
    })
}

pub fn write_nst(path: &Path, value: &NstValue) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_record(&mut w, value).map_err(|e| relabel(e, path))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a single-record NST file; trailing bytes are an error.
pub fn read_nst(path: &Path) -> Result<NstValue> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let v = read_record(&mut r).map_err(|e| relabel(e, path))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Parse(format!("{}: trailing bytes", path.display())));
    }
    Ok(v)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::BadMagic(m) => Error::BadMagic(format!("{} ({m})", path.display())),
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn read_f32(path: &Path) -> Result<Tensor> {
    match read_nst(path)? {
        NstValue::F32(t) => Ok(t),
        NstValue::U8 { .. } => Err(Error::Parse(format!(
            "{}: expected f32 payload",
            path.display()
        ))),
    }
}

pub fn read_u8(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    match read_nst(path)? {
        NstValue::U8 { shape, data } => Ok((shape, data)),
        NstValue::F32(_) => Err(Error::Parse(format!(
            "{}: expected u8 payload",
            path.display()
        ))),
    }
}
