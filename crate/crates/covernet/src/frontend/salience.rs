//! Baseline dominant-melody extraction by decaying harmonic summation.
//!
//! For each frame the salience of a candidate fundamental at bin b is
//! `s(b) = sum_h w_h * cqt(b + round(B * log2(h)))` with `w_h = 0.8^(h-1)`
//! and B bins per octave. Only the per-frame argmax survives; frames whose
//! maximum falls below `salience_floor` times the global maximum emit
//! silence, mirroring a melody extractor that reports no melody.

use crate::error::Result;
use crate::mat::Matrix;
use crate::par;

use super::{CqtMatrix, F0Matrix};

pub const DEFAULT_HARMONIC_DECAY: f64 = 0.8;
pub const DEFAULT_SALIENCE_FLOOR: f32 = 0.05;

/// Bin offsets of harmonics 1..=n relative to the fundamental.
fn harmonic_offsets(n_harmonics: usize, bins_per_octave: usize) -> Vec<usize> {
    (1..=n_harmonics)
        .map(|h| (bins_per_octave as f64 * (h as f64).log2()).round() as usize)
        .collect()
}

/// Extract a monophonic dominant-melody salience matrix from a CQT.
pub fn extract_f0_baseline(
    cqt: &CqtMatrix,
    n_harmonics: usize,
    salience_floor: f32,
    track_id: impl Into<String>,
) -> Result<F0Matrix> {
    cqt.params.validate()?;
    let frames = cqt.time_frames();
    let bins = cqt.freq_bins();
    let offsets = harmonic_offsets(n_harmonics.max(1), cqt.params.bins_per_octave());
    let weights: Vec<f64> =
        (0..offsets.len()).map(|i| DEFAULT_HARMONIC_DECAY.powi(i as i32)).collect();

    // Per frame: harmonic sum, then keep only the argmax bin.
    let picked: Vec<(usize, f32)> = par::map_indexed(frames, |t| {
        let row = cqt.values.row(t);
        let mut best_bin = 0usize;
        let mut best = f64::MIN;
        for b in 0..bins {
            let mut s = 0.0f64;
            for (&off, &w) in offsets.iter().zip(&weights) {
                if b + off < bins {
                    s += w * f64::from(row[b + off]);
                }
            }
            if s > best {
                best = s;
                best_bin = b;
            }
        }
        (best_bin, best.max(0.0) as f32)
    });

    let global_max = picked.iter().map(|&(_, s)| s).fold(0.0f32, f32::max);
    let floor = salience_floor * global_max;

    let mut salience = Matrix::zeros(frames, bins);
    for (t, &(bin, s)) in picked.iter().enumerate() {
        if s > 0.0 && s >= floor {
            *salience.at_mut(t, bin) = s;
        }
    }

    Ok(F0Matrix {
        salience,
        bins_per_semitone: cqt.params.bins_per_semitone,
        f_min: cqt.params.f_min,
        hop_seconds: cqt.params.hop_seconds,
        track_id: track_id.into(),
    })
}
