//! Synthetic cover dataset generator for tests and demos.
//!
//! A "work" is a random monophonic pitch contour (a sequence of held notes);
//! its "covers" are renditions with a global transposition, a tempo change,
//! per-note amplitude/ornament variation and salience noise. This mirrors
//! what distinguishes real covers while staying fully self-contained.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Manifest, ManifestRecord};
use crate::error::Result;
use crate::frontend::{save_f0, F0Matrix};
use crate::mat::Matrix;
use crate::preprocess;
use crate::training::WorkTracks;

/// Hop that puts the 3-minute cap exactly at 15500 frames.
pub const SYNTH_HOP_SECONDS: f64 = 180.0 / 15500.0;
pub const SYNTH_FREQ_BINS: usize = 360;
pub const SYNTH_BINS_PER_SEMITONE: usize = 5;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub works: usize,
    /// Prefix of generated work ids; distinct datasets need distinct
    /// prefixes to keep work ids globally unique.
    pub work_prefix: String,
    pub covers_per_work: usize,
    /// Covers are transposed by a uniform integer in `[-x, x]` semitones.
    pub max_transpose_semitones: i32,
    /// Covers are tempo-scaled by a uniform factor in this range.
    pub tempo_range: (f64, f64),
    /// Salience jitter amplitude relative to the note level.
    pub noise: f32,
    /// Base contour length range in frames.
    pub base_frames: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            works: 40,
            work_prefix: "work".into(),
            covers_per_work: 8,
            max_transpose_semitones: 6,
            tempo_range: (0.7, 1.4),
            noise: 0.15,
            base_frames: (2600, 4200),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthWork {
    pub work_id: String,
    pub covers: Vec<F0Matrix>,
}

#[derive(Debug, Clone)]
struct Note {
    /// Pitch in semitones relative to the contour center.
    semitone: i32,
    /// Duration as a fraction of the whole contour.
    weight: f64,
}

fn random_contour(rng: &mut ChaCha8Rng) -> Vec<Note> {
    let n_notes = rng.gen_range(10..20);
    let mut semitone: i32 = 0;
    let mut notes = Vec::with_capacity(n_notes);
    for _ in 0..n_notes {
        // Melodic steps, mostly small, clamped to +-14 semitones.
        let step = *[-7, -5, -4, -3, -2, -2, -1, 1, 2, 2, 3, 4, 5, 7]
            .iter()
            .nth(rng.gen_range(0..14))
            .unwrap();
        semitone = (semitone + step).clamp(-14, 14);
        notes.push(Note { semitone, weight: rng.gen_range(0.5..1.5) });
    }
    let total: f64 = notes.iter().map(|n| n.weight).sum();
    for n in notes.iter_mut() {
        n.weight /= total;
    }
    notes
}

fn render_cover(
    work_id: &str,
    track_id: &str,
    contour: &[Note],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> F0Matrix {
    let base_len = rng.gen_range(config.base_frames.0..=config.base_frames.1);
    let tempo = rng.gen_range(config.tempo_range.0..config.tempo_range.1);
    let frames = ((base_len as f64 / tempo).round() as usize).max(64);
    let transpose = rng.gen_range(-config.max_transpose_semitones..=config.max_transpose_semitones);

    // Per-cover note variations: amplitude and the occasional +-1 semitone
    // ornament.
    let center_bin = 180i32;
    let rendered: Vec<(i32, f32)> = contour
        .iter()
        .map(|n| {
            let ornament = if rng.gen::<f32>() < 0.15 { rng.gen_range(-1..=1) } else { 0 };
            let bin = center_bin
                + SYNTH_BINS_PER_SEMITONE as i32 * (n.semitone + transpose + ornament);
            let amp = rng.gen_range(0.6..1.0f32);
            (bin.clamp(0, SYNTH_FREQ_BINS as i32 - 1), amp)
        })
        .collect();

    let mut salience = Matrix::zeros(frames, SYNTH_FREQ_BINS);
    let mut boundaries = Vec::with_capacity(contour.len() + 1);
    let mut acc = 0.0f64;
    boundaries.push(0usize);
    for n in contour {
        acc += n.weight;
        boundaries.push(((acc * frames as f64).round() as usize).min(frames));
    }
    for (i, &(bin, amp)) in rendered.iter().enumerate() {
        for t in boundaries[i]..boundaries[i + 1] {
            if rng.gen::<f32>() < 0.01 {
                continue; // occasional missed melody frame
            }
            let jitter = 1.0 + config.noise * (rng.gen::<f32>() - 0.5);
            *salience.at_mut(t, bin as usize) = (amp * jitter).max(0.05);
        }
    }

    let _ = work_id;
    F0Matrix {
        salience,
        bins_per_semitone: SYNTH_BINS_PER_SEMITONE,
        f_min: 32.70,
        hop_seconds: SYNTH_HOP_SECONDS,
        track_id: track_id.to_string(),
    }
}

/// Generate `works` contours with `covers_per_work` renditions each.
pub fn generate(config: &SynthConfig) -> Vec<SynthWork> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.works)
        .map(|w| {
            let work_id = format!("{}{w:03}", config.work_prefix);
            let contour = random_contour(&mut rng);
            let covers = (0..config.covers_per_work)
                .map(|c| {
                    let track_id = format!("{work_id}_cover{c}");
                    render_cover(&work_id, &track_id, &contour, config, &mut rng)
                })
                .collect();
            SynthWork { work_id, covers }
        })
        .collect()
}

/// Run the preprocessing pipeline over generated works, yielding the
/// in-memory groups the batch sampler consumes.
pub fn preprocess_works(works: &[SynthWork]) -> Result<Vec<WorkTracks>> {
    works
        .iter()
        .map(|w| {
            let tracks = w
                .covers
                .iter()
                .map(|f0| preprocess::preprocess_pipeline(f0).map(std::sync::Arc::new))
                .collect::<Result<Vec<_>>>()?;
            Ok(WorkTracks { work_id: w.work_id.clone(), tracks })
        })
        .collect()
}

/// Write the dataset as F0 files plus a manifest.
pub fn write_dataset(works: &[SynthWork], dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for work in works {
        for f0 in &work.covers {
            let path = dir.join(format!("{}.f0", f0.track_id));
            save_f0(f0, &path)?;
            records.push(ManifestRecord {
                track_id: f0.track_id.clone(),
                work_id: work.work_id.clone(),
                duration_sec: f0.time_frames() as f64 * f0.hop_seconds,
                f0_path: Some(path),
                audio_path: None,
            });
        }
    }
    Manifest::new(records)
}
