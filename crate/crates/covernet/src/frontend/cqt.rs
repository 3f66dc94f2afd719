//! Constant-Q transform as a per-bin windowed complex filterbank.
//!
//! Each bin k correlates the signal around every frame center with a
//! Hann-windowed complex exponential at the bin's center frequency. Kernels
//! are precomputed in f64 once per (params, sample rate) pair; frames are
//! processed in parallel. Samples outside the signal count as zero.

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::par;

use super::{CqtMatrix, CqtParams};

struct BinKernel {
    /// Window half-length in samples; the kernel covers `[-half, half)`.
    half: isize,
    /// Hann-windowed complex exponential, normalized by the window sum.
    re: Vec<f64>,
    im: Vec<f64>,
}

fn build_kernels(params: &CqtParams, sample_rate: f64) -> Vec<BinKernel> {
    let bins = params.total_bins();
    let q = 1.0 / (2f64.powf(1.0 / params.bins_per_octave() as f64) - 1.0);
    par::map_indexed(bins, |k| {
        let freq = params.bin_frequency(k);
        let n = ((q * sample_rate / freq).ceil() as usize).max(2);
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        let mut wsum = 0.0f64;
        for i in 0..n {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            wsum += w;
        }
        let half = (n / 2) as isize;
        for i in 0..n {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            let t = (i as isize - half) as f64 / sample_rate;
            let phase = -2.0 * std::f64::consts::PI * freq * t;
            re.push(w * phase.cos() / wsum);
            im.push(w * phase.sin() / wsum);
        }
        BinKernel { half, re, im }
    })
}

/// Compute the constant-Q magnitude spectrogram of a mono signal.
pub fn compute_cqt(audio: &[f32], sample_rate: f64, params: &CqtParams) -> Result<CqtMatrix> {
    params.validate()?;
    if audio.is_empty() {
        return Err(Error::InvalidInput("compute_cqt: empty audio".into()));
    }
    let bins = params.total_bins();
    let f_max = params.bin_frequency(bins - 1);
    if sample_rate < 2.0 * f_max {
        return Err(Error::Config(format!(
            "sample rate {sample_rate} Hz cannot represent the top bin at {f_max:.1} Hz"
        )));
    }

    let hop = ((params.hop_seconds * sample_rate).round() as usize).max(1);
    let frames = (audio.len() - 1) / hop + 1;
    let kernels = build_kernels(params, sample_rate);

    let mut values = Matrix::zeros(frames, bins);
    par::for_each_row_mut(values.data_mut(), bins, |frame, row| {
        let center = (frame * hop) as isize;
        for (k, kernel) in kernels.iter().enumerate() {
            let start = center - kernel.half;
            let lo = (-start).max(0) as usize;
            let hi = kernel.re.len().min((audio.len() as isize - start).max(0) as usize);
            let mut acc_re = 0.0f64;
            let mut acc_im = 0.0f64;
            if lo < hi {
                let base = (start + lo as isize) as usize;
                let xs = &audio[base..base + (hi - lo)];
                let res = &kernel.re[lo..hi];
                let ims = &kernel.im[lo..hi];
                for ((&x, &re), &im) in xs.iter().zip(res).zip(ims) {
                    let xv = f64::from(x);
                    acc_re += xv * re;
                    acc_im += xv * im;
                }
            }
            row[k] = acc_re.hypot(acc_im) as f32;
        }
    });

    Ok(CqtMatrix { values, params: params.clone(), sample_rate })
}
