//! Audio front end: constant-Q magnitude spectra and dominant-melody
//! salience matrices, plus their on-disk format.

mod cqt;
mod f0_io;
mod salience;
mod wav;

pub use cqt::compute_cqt;
pub use f0_io::{load_f0, save_f0, F0_MAGIC, F0_VERSION};
pub use salience::{extract_f0_baseline, DEFAULT_HARMONIC_DECAY, DEFAULT_SALIENCE_FLOOR};
pub use wav::{read_wav_mono, write_wav_mono_pcm16};

use crate::error::{Error, Result};
use crate::mat::Matrix;

/// Constant-Q analysis parameters. Defaults span 6 octaves from C1 at 5 bins
/// per semitone with an ~11 ms hop.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtParams {
    pub f_min: f64,
    pub n_octaves: usize,
    pub bins_per_semitone: usize,
    pub hop_seconds: f64,
}

impl Default for CqtParams {
    fn default() -> Self {
        CqtParams { f_min: 32.70, n_octaves: 6, bins_per_semitone: 5, hop_seconds: 0.011 }
    }
}

impl CqtParams {
    pub fn total_bins(&self) -> usize {
        self.n_octaves * 12 * self.bins_per_semitone
    }

    pub fn bins_per_octave(&self) -> usize {
        12 * self.bins_per_semitone
    }

    /// Center frequency of `bin`.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.f_min * 2f64.powf(bin as f64 / self.bins_per_octave() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0) {
            return Err(Error::Config(format!("f_min must be positive, got {}", self.f_min)));
        }
        if self.n_octaves < 1 || self.bins_per_semitone < 1 {
            return Err(Error::Config(
                "n_octaves and bins_per_semitone must be at least 1".into(),
            ));
        }
        if !(self.hop_seconds > 0.0) {
            return Err(Error::Config(format!(
                "hop_seconds must be positive, got {}",
                self.hop_seconds
            )));
        }
        Ok(())
    }
}

/// Constant-Q magnitude spectrogram, time frames by frequency bins.
#[derive(Debug, Clone)]
pub struct CqtMatrix {
    pub values: Matrix,
    pub params: CqtParams,
    pub sample_rate: f64,
}

impl CqtMatrix {
    pub fn time_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn freq_bins(&self) -> usize {
        self.values.cols()
    }
}

/// Dominant-melody salience matrix: nonnegative, time frames by frequency
/// bins. The baseline extractor leaves at most one nonzero bin per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Matrix {
    pub salience: Matrix,
    pub bins_per_semitone: usize,
    pub f_min: f64,
    pub hop_seconds: f64,
    pub track_id: String,
}

impl F0Matrix {
    pub fn time_frames(&self) -> usize {
        self.salience.rows()
    }

    pub fn freq_bins(&self) -> usize {
        self.salience.cols()
    }

    pub fn is_silent(&self) -> bool {
        self.salience.iter().all(|v| v == 0.0)
    }
}
