//! F0 salience file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "F0CQ" | version u32 = 1
//! time_frames u32 | freq_bins u32 | bins_per_semitone u16
//! f_min f64 | hop_seconds f64
//! track_id (u16 len + UTF-8)
//! salience f32 x (time_frames * freq_bins), row-major, time-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::mat::Matrix;

use super::F0Matrix;

pub const F0_MAGIC: &[u8; 4] = b"F0CQ";
pub const F0_VERSION: u32 = 1;

pub fn save_f0(f0: &F0Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_magic(&mut w, F0_MAGIC)?;
    binio::write_u32(&mut w, F0_VERSION)?;
    binio::write_u32(&mut w, f0.time_frames() as u32)?;
    binio::write_u32(&mut w, f0.freq_bins() as u32)?;
    binio::write_u16(&mut w, f0.bins_per_semitone as u16)?;
    binio::write_f64(&mut w, f0.f_min)?;
    binio::write_f64(&mut w, f0.hop_seconds)?;
    binio::write_str(&mut w, &f0.track_id)?;
    binio::write_f32_slice(&mut w, f0.salience.data())?;
    w.flush()?;
    Ok(())
}

pub fn load_f0(path: &Path) -> Result<F0Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_magic(&mut r, F0_MAGIC, "f0 file")?;
    let version = binio::read_u32(&mut r)?;
    if version != F0_VERSION {
        return Err(Error::Format(format!("unsupported f0 file version {version}")));
    }
    let time_frames = binio::read_u32(&mut r)? as usize;
    let freq_bins = binio::read_u32(&mut r)? as usize;
    let bins_per_semitone = binio::read_u16(&mut r)? as usize;
    let f_min = binio::read_f64(&mut r)?;
    let hop_seconds = binio::read_f64(&mut r)?;
    let track_id = binio::read_str(&mut r)?;
    let count = time_frames
        .checked_mul(freq_bins)
        .ok_or_else(|| Error::Format("f0 file dims overflow".into()))?;
    let values = binio::read_f32_vec(&mut r, count)?;
    binio::expect_eof(&mut r, "f0 file")?;
    Ok(F0Matrix {
        salience: Matrix::from_vec(time_frames, freq_bins, values),
        bins_per_semitone,
        f_min,
        hop_seconds,
        track_id,
    })
}
