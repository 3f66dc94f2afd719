//! Little-endian binary primitives shared by the on-disk formats.
//!
//! Truncated input surfaces as a format error, never as a partial value.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file".into())
        } else {
            Error::Io(e)
        }
    })
}

macro_rules! scalar_io {
    ($write:ident, $read:ident, $ty:ty) => {
        pub fn $write(w: &mut impl Write, v: $ty) -> Result<()> {
            w.write_all(&v.to_le_bytes())?;
            Ok(())
        }
        pub fn $read(r: &mut impl Read) -> Result<$ty> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            read_exact(r, &mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

scalar_io!(write_u16, read_u16, u16);
scalar_io!(write_u32, read_u32, u32);
scalar_io!(write_u64, read_u64, u64);
scalar_io!(write_f32, read_f32, f32);
scalar_io!(write_f64, read_f64, f64);

pub fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    read_exact(r, &mut buf)?;
    Ok(buf[0])
}

pub fn write_magic(w: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// String encoded as u16 length + UTF-8 bytes.
pub fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Format(format!("string of {} bytes exceeds u16 length", bytes.len())));
    }
    write_u16(w, bytes.len() as u16)?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8 string: {e}")))
}

const CHUNK: usize = 8192;

pub fn write_f32_slice(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = [0u8; CHUNK * 4];
    for chunk in values.chunks(CHUNK) {
        for (i, v) in chunk.iter().enumerate() {
            buf[i * 4..(i + 1) * 4].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf[..chunk.len() * 4])?;
    }
    Ok(())
}

pub fn read_f32_vec(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; CHUNK * 4];
    let mut remaining = count;
    while remaining > 0 {
        let take = remaining.min(CHUNK);
        read_exact(r, &mut buf[..take * 4])?;
        for i in 0..take {
            out.push(f32::from_le_bytes(buf[i * 4..(i + 1) * 4].try_into().unwrap()));
        }
        remaining -= take;
    }
    Ok(out)
}

/// Fails with a format error if any bytes remain in the reader.
pub fn expect_eof(r: &mut impl Read, what: &str) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format(format!("{what}: trailing bytes after payload"))),
        Err(e) => Err(Error::Io(e)),
    }
}
