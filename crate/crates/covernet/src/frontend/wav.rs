//! Minimal mono WAV ingestion: PCM 16-bit and IEEE float 32-bit.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Read a mono WAV file, returning `(samples, sample_rate)` with samples in
/// `[-1, 1]` for PCM input.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, f64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("wav: file shorter than RIFF header".into()))?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(Error::Format("wav: not a RIFF/WAVE file".into()));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // (codec, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;

    loop {
        let mut chunk_header = [0u8; 8];
        match r.read_exact(&mut chunk_header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::Io(e)),
        }
        let id = &chunk_header[0..4];
        let size = u32::from_le_bytes(chunk_header[4..8].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; size];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format("wav: truncated chunk".into()))?;
        if size % 2 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read(&mut pad);
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("wav: fmt chunk too small".into()));
                }
                let codec = u16::from_le_bytes(payload[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(payload[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(payload[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(payload[14..16].try_into().unwrap());
                format = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some(payload),
            _ => {} // skip LIST/fact/etc.
        }
    }

    let (codec, channels, rate, bits) =
        format.ok_or_else(|| Error::Format("wav: missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("wav: missing data chunk".into()))?;
    if channels != 1 {
        return Err(Error::InvalidInput(format!(
            "wav: expected mono audio, got {channels} channels"
        )));
    }

    let samples = match (codec, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        _ => {
            return Err(Error::Format(format!(
                "wav: unsupported codec {codec} at {bits} bits (need PCM16 or float32)"
            )))
        }
    };
    Ok((samples, f64::from(rate)))
}

/// Test/demo helper: write a mono PCM16 WAV.
pub fn write_wav_mono_pcm16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    use std::io::Write;
    let mut payload = Vec::with_capacity(samples.len() * 2);
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = std::io::BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + payload.len() as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}
