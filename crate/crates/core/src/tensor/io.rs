//! FFTN binary tensor files.
//!
//! Layout: magic `FFTN`, version `0x01`, dtype `0x00` (f32), rank byte, then
//! `rank` little-endian `u32` extents and the row-major little-endian payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FFTN";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;

pub fn write_fftn<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32, t.rank() as u8])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {} exceeds u32", d)))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_fftn<R: Read>(mut r: R) -> Result<Tensor> {
    let mut header = [0u8; 7];
    r.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(Error::Format("bad FFTN magic".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!(
            "unsupported FFTN version {}",
            header[4]
        )));
    }
    if header[5] != DTYPE_F32 {
        return Err(Error::Format(format!(
            "unsupported FFTN dtype {}",
            header[5]
        )));
    }
    let rank = header[6] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!(
            "FFTN rank {} exceeds {}",
            rank, MAX_RANK
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let len: usize = shape.iter().product();
    let mut payload = vec![0u8; len * 4];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fftn(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    read_fftn(BufReader::new(File::open(path)?))
}
