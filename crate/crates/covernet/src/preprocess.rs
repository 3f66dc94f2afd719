//! Converts a salience matrix into the fixed 1024x36 network input.
//!
//! Stages: trim a 3-octave window around the salience-weighted mean pitch
//! and cap the duration at 3 minutes, downsample both axes by 5 with
//! bilinear interpolation, then stretch or shrink the time axis to 1024
//! bins. A tempo-shifted rendition of the same melody lands on (nearly)
//! the same fixed-size input.

use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::F0Matrix;
use crate::mat::Matrix;
use crate::par;

pub const INPUT_TIME: usize = 1024;
pub const INPUT_FREQ: usize = 36;
pub const DOWNSAMPLE_FACTOR: usize = 5;
pub const DEFAULT_OCTAVE_SPAN: usize = 3;
pub const DEFAULT_MAX_SECONDS: f64 = 180.0;

/// Fixed-shape encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedInput {
    /// `INPUT_TIME x INPUT_FREQ`, nonnegative and finite.
    pub values: Matrix,
    pub track_id: String,
}

/// Salience-weighted mean of bin indices over all cells.
fn mean_pitch_bin(f0: &F0Matrix) -> Option<f64> {
    let mut weight = 0.0f64;
    let mut weighted = 0.0f64;
    for t in 0..f0.time_frames() {
        for (b, &v) in f0.salience.row(t).iter().enumerate() {
            if v > 0.0 {
                weight += f64::from(v);
                weighted += f64::from(v) * b as f64;
            }
        }
    }
    (weight > 0.0).then(|| weighted / weight)
}

/// Keep `octave_span` octaves around the mean pitch and at most
/// `max_seconds` of audio. Shorter tracks keep their duration.
///
/// The frequency window is shifted to stay within the matrix when possible;
/// if the matrix has fewer bins than the window, the output is zero-padded
/// evenly so the span contract still holds.
pub fn trim(f0: &F0Matrix, octave_span: usize, max_seconds: f64) -> Result<F0Matrix> {
    let mean = mean_pitch_bin(f0).ok_or_else(|| Error::EmptyMelody(f0.track_id.clone()))?;

    let span = octave_span * 12 * f0.bins_per_semitone;
    let bins = f0.freq_bins();
    let center = mean.round() as isize;
    // Desired [start, start+span), shifted into bounds when it fits.
    let desired_start = center - (span / 2) as isize;
    let (src_start, pad_lo) = if span <= bins {
        (desired_start.clamp(0, (bins - span) as isize) as usize, 0usize)
    } else {
        (0, (span - bins) / 2)
    };
    let copy_bins = span.min(bins);

    let max_frames = ((max_seconds / f0.hop_seconds).round() as usize).max(1);
    let frames = f0.time_frames().min(max_frames);

    let mut out = Matrix::zeros(frames, span);
    for t in 0..frames {
        let src = f0.salience.row(t);
        let dst = out.row_mut(t);
        dst[pad_lo..pad_lo + copy_bins].copy_from_slice(&src[src_start..src_start + copy_bins]);
    }

    Ok(F0Matrix {
        salience: out,
        bins_per_semitone: f0.bins_per_semitone,
        f_min: f0.f_min * 2f64.powf(src_start as f64 / (12 * f0.bins_per_semitone) as f64),
        hop_seconds: f0.hop_seconds,
        track_id: f0.track_id.clone(),
    })
}

#[inline]
fn source_coord(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    // align-corners=false sample grid, clamped to the valid range.
    let s = (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let s = s.clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Standard 2D bilinear interpolation to an arbitrary output size.
pub fn bilinear_resize(input: &Matrix, out_rows: usize, out_cols: usize) -> Result<Matrix> {
    if input.rows() == 0 || input.cols() == 0 || out_rows == 0 || out_cols == 0 {
        return Err(Error::Shape("bilinear_resize: dimensions must be at least 1".into()));
    }
    let in_cols = input.cols();
    let col_coords: Vec<(usize, usize, f64)> =
        (0..out_cols).map(|j| source_coord(j, out_cols, in_cols)).collect();

    let mut out = Matrix::zeros(out_rows, out_cols);
    let in_rows = input.rows();
    par::for_each_row_mut(out.data_mut(), out_cols, |i, row| {
        let (r0, r1, wr) = source_coord(i, out_rows, in_rows);
        let top = input.row(r0);
        let bottom = input.row(r1);
        for (j, out_v) in row.iter_mut().enumerate() {
            let (c0, c1, wc) = col_coords[j];
            let t = f64::from(top[c0]) * (1.0 - wc) + f64::from(top[c1]) * wc;
            let b = f64::from(bottom[c0]) * (1.0 - wc) + f64::from(bottom[c1]) * wc;
            *out_v = (t * (1.0 - wr) + b * wr) as f32;
        }
    });
    Ok(out)
}

/// Full pipeline: trim, factor-5 bilinear downsample on both axes, then
/// bilinear time resize to the fixed input length.
pub fn preprocess_pipeline(f0: &F0Matrix) -> Result<PreprocessedInput> {
    preprocess_with(f0, DEFAULT_OCTAVE_SPAN, DEFAULT_MAX_SECONDS)
}

pub fn preprocess_with(f0: &F0Matrix, octave_span: usize, max_seconds: f64) -> Result<PreprocessedInput> {
    let trimmed = trim(f0, octave_span, max_seconds)?;
    let down_t = ((trimmed.time_frames() as f64 / DOWNSAMPLE_FACTOR as f64).round() as usize).max(1);
    let down_f = ((trimmed.freq_bins() as f64 / DOWNSAMPLE_FACTOR as f64).round() as usize).max(1);
    let down = bilinear_resize(&trimmed.salience, down_t, down_f)?;
    let resized = bilinear_resize(&down, INPUT_TIME, down_f)?;
    if resized.cols() != INPUT_FREQ {
        return Err(Error::Shape(format!(
            "preprocess: expected {INPUT_FREQ} frequency bins after downsampling, got {} \
             (input had {} bins)",
            resized.cols(),
            f0.freq_bins()
        )));
    }
    Ok(PreprocessedInput { values: resized, track_id: f0.track_id.clone() })
}

/// Cached inputs reuse the F0 container with the fixed post-pipeline shape.
pub fn save_preprocessed(input: &PreprocessedInput, hop_seconds: f64, path: &Path) -> Result<()> {
    let f0 = F0Matrix {
        salience: input.values.clone(),
        bins_per_semitone: 1,
        f_min: 0.0,
        hop_seconds,
        track_id: input.track_id.clone(),
    };
    crate::frontend::save_f0(&f0, path)
}

/// Recognize a cached fixed-shape input loaded through the F0 container.
pub fn as_preprocessed(f0: &F0Matrix) -> Option<PreprocessedInput> {
    (f0.time_frames() == INPUT_TIME && f0.freq_bins() == INPUT_FREQ).then(|| PreprocessedInput {
        values: f0.salience.clone(),
        track_id: f0.track_id.clone(),
    })
}

/// Load a track input: pass cached fixed-shape files through, run the
/// pipeline on anything else.
pub fn load_or_preprocess(path: &Path) -> Result<PreprocessedInput> {
    let f0 = crate::frontend::load_f0(path)?;
    match as_preprocessed(&f0) {
        Some(p) => Ok(p),
        None => preprocess_pipeline(&f0),
    }
}
