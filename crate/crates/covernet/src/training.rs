//! Triplet-loss training with online semi-hard negative mining.
//!
//! Within a batch every track is successively the anchor and is paired with
//! each of its in-batch covers. For a pair with distance `d_ap`, negatives
//! closer than the positive (`d_an < d_ap`) are semi-hard: the farthest of
//! them is kept. When none exists, the nearest negative overall is kept.
//! The hinge `max(0, d_ap + margin - d_an)` is averaged over all pairs.
//!
//! The loop samples batches as fixed works-times-covers blocks, follows an
//! Adam schedule that halves the learning rate when the eval loss plateaus,
//! and stops at a step budget or a learning-rate floor.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Manifest, Split};
use crate::encoder::{
    batch_from_inputs, encoder_backward, encoder_forward_eval, encoder_forward_train,
    EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::nncore::{adam_step, AdamState, Tensor};
use crate::preprocess::{self, PreprocessedInput};

/// Unit-norm tolerance for distance-matrix inputs.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;
/// Fixed eval batches used for the plateau schedule.
pub const EVAL_BATCH_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub works_per_batch: usize,
    pub covers_per_work: usize,
    pub initial_lr: f64,
    pub plateau_window: u64,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: 1.0,
            batch_size: 100,
            works_per_batch: 20,
            covers_per_work: 5,
            initial_lr: 1e-4,
            plateau_window: 5000,
            lr_factor: 0.5,
            min_lr: 1e-7,
            max_steps: 100_000,
            eval_every: 500,
            seed: 42,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.works_per_batch * self.covers_per_work != self.batch_size {
            return Err(Error::Config(format!(
                "works_per_batch ({}) x covers_per_work ({}) must equal batch_size ({})",
                self.works_per_batch, self.covers_per_work, self.batch_size
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.works_per_batch < 2 {
            return Err(Error::Config("a batch needs at least 2 works to mine negatives".into()));
        }
        if self.eval_every == 0 || self.max_steps == 0 {
            return Err(Error::Config("eval_every and max_steps must be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor must be in (0,1), got {}", self.lr_factor)));
        }
        Ok(())
    }
}

/// Squared Euclidean distances between unit-norm embedding rows.
///
/// Uses `d^2 = 2 - 2 <u, v>` with f64 dot products; the result is exactly
/// symmetric with a zero diagonal.
pub fn pairwise_sq_distances(embeddings: &Tensor) -> Result<Matrix> {
    let (b, e) = match *embeddings.shape() {
        [b, e] => (b, e),
        _ => return Err(Error::Shape(format!("expected [B,E] embeddings, got {:?}", embeddings.shape()))),
    };
    if !embeddings.all_finite() {
        return Err(Error::Numeric("pairwise_sq_distances: non-finite embedding".into()));
    }
    let v = embeddings.values();
    for i in 0..b {
        let row = &v[i * e..(i + 1) * e];
        let norm = crate::nncore::l2_norm(row);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "pairwise_sq_distances: row {i} has norm {norm:.6}, expected 1"
            )));
        }
    }
    let mut d = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let mut dot = 0.0f64;
            let (ri, rj) = (&v[i * e..(i + 1) * e], &v[j * e..(j + 1) * e]);
            for (&x, &y) in ri.iter().zip(rj) {
                dot += f64::from(x) * f64::from(y);
            }
            let dist = (2.0 - 2.0 * dot).max(0.0) as f32;
            *d.at_mut(i, j) = dist;
            *d.at_mut(j, i) = dist;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningKind {
    /// A negative with `d_an < d_ap` existed; the farthest such was kept.
    SemiHard,
    /// No negative inside the positive radius; the nearest one was kept.
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub d_ap: f32,
    pub d_an: f32,
    pub kind: MiningKind,
}

/// Core mining rule over `(index, distance)` negatives in index order.
/// Ties keep the lowest index.
fn mine_from_candidates(
    d_ap: f64,
    negatives: impl Iterator<Item = (usize, f64)>,
) -> Option<(usize, f64, MiningKind)> {
    let mut best_semi: Option<(usize, f64)> = None;
    let mut best_near: Option<(usize, f64)> = None;
    for (idx, d_an) in negatives {
        if d_an < d_ap && best_semi.map_or(true, |(_, d)| d_an > d) {
            best_semi = Some((idx, d_an));
        }
        if best_near.map_or(true, |(_, d)| d_an < d) {
            best_near = Some((idx, d_an));
        }
    }
    match (best_semi, best_near) {
        (Some((i, d)), _) => Some((i, d, MiningKind::SemiHard)),
        (None, Some((i, d))) => Some((i, d, MiningKind::Nearest)),
        (None, None) => None,
    }
}

/// Pick the negative for `(anchor, positive)` from a squared-distance
/// matrix and per-row work labels.
pub fn mine_negative<L: PartialEq>(
    d: &Matrix,
    labels: &[L],
    anchor: usize,
    positive: usize,
) -> Result<MiningOutcome> {
    let b = labels.len();
    if d.rows() != b || d.cols() != b {
        return Err(Error::Shape(format!(
            "distance matrix is {}x{}, labels have {b} entries",
            d.rows(),
            d.cols()
        )));
    }
    if anchor == positive || labels[anchor] != labels[positive] {
        return Err(Error::Mining(format!(
            "anchor {anchor} and positive {positive} must be distinct covers of one work"
        )));
    }
    let d_ap = f64::from(d.at(anchor, positive));
    let negatives = (0..b).filter(|&j| labels[j] != labels[anchor]).map(|j| (j, f64::from(d.at(anchor, j))));
    let (negative, d_an, kind) = mine_from_candidates(d_ap, negatives)
        .ok_or_else(|| Error::Mining("batch contains a single work; no negatives exist".into()))?;
    Ok(MiningOutcome {
        anchor,
        positive,
        negative,
        d_ap: d_ap as f32,
        d_an: d_an as f32,
        kind,
    })
}

pub struct TripletLossOutcome {
    pub loss: f64,
    pub grad: Tensor,
    /// Fraction of (anchor, positive) pairs with a nonzero hinge.
    pub active_fraction: f64,
    pub pairs: usize,
}

/// Mean hinge loss over all in-batch (anchor, positive) pairs with their
/// mined negatives, plus its gradient w.r.t. the embeddings.
///
/// Distances are recomputed in f64 by direct subtraction; gradients flow
/// only through triplets with an active hinge.
pub fn batch_triplet_loss<L: PartialEq>(
    embeddings: &Tensor,
    labels: &[L],
    margin: f64,
) -> Result<TripletLossOutcome> {
    let (b, e) = match *embeddings.shape() {
        [b, e] => (b, e),
        _ => return Err(Error::Shape(format!("expected [B,E] embeddings, got {:?}", embeddings.shape()))),
    };
    if labels.len() != b {
        return Err(Error::Shape(format!("{b} embeddings but {} labels", labels.len())));
    }
    if !embeddings.all_finite() {
        return Err(Error::Numeric("batch_triplet_loss: non-finite embedding".into()));
    }
    for i in 0..b {
        if !labels.iter().enumerate().any(|(j, l)| j != i && *l == labels[i]) {
            return Err(Error::Mining(format!("track {i} has no in-batch positive")));
        }
    }

    let v = embeddings.values();
    let dist = |i: usize, j: usize| -> f64 {
        let (ri, rj) = (&v[i * e..(i + 1) * e], &v[j * e..(j + 1) * e]);
        let mut s = 0.0f64;
        for (&x, &y) in ri.iter().zip(rj) {
            let d = f64::from(x) - f64::from(y);
            s += d * d;
        }
        s
    };

    // Count pairs first so each active triplet contributes grad/pairs.
    let mut pairs = 0usize;
    for a in 0..b {
        pairs += (0..b).filter(|&p| p != a && labels[p] == labels[a]).count();
    }
    if pairs == 0 {
        return Err(Error::Mining("no (anchor, positive) pairs in batch".into()));
    }

    let mut loss_sum = 0.0f64;
    let mut active = 0usize;
    let mut grad = vec![0.0f64; b * e];
    let scale = 1.0 / pairs as f64;

    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = dist(a, p);
            let negatives = (0..b).filter(|&j| labels[j] != labels[a]).map(|j| (j, dist(a, j)));
            let (n, d_an, _) = mine_from_candidates(d_ap, negatives)
                .ok_or_else(|| Error::Mining("batch contains a single work".into()))?;
            let hinge = d_ap + margin - d_an;
            if hinge > 0.0 {
                loss_sum += hinge;
                active += 1;
                // d(d_ap)/d(v_a) = 2(v_a - v_p); d(-d_an)/d(v_a) = -2(v_a - v_n)
                for k in 0..e {
                    let va = f64::from(v[a * e + k]);
                    let vp = f64::from(v[p * e + k]);
                    let vn = f64::from(v[n * e + k]);
                    grad[a * e + k] += scale * 2.0 * (vn - vp);
                    grad[p * e + k] += scale * 2.0 * (vp - va);
                    grad[n * e + k] += scale * 2.0 * (va - vn);
                }
            }
        }
    }

    Ok(TripletLossOutcome {
        loss: loss_sum * scale,
        grad: Tensor::from_vec(&[b, e], grad.into_iter().map(|g| g as f32).collect()),
        active_fraction: active as f64 / pairs as f64,
        pairs,
    })
}

/// One work's usable tracks, inputs already in memory.
#[derive(Clone)]
pub struct WorkTracks {
    pub work_id: String,
    pub tracks: Vec<Arc<PreprocessedInput>>,
}

/// In-memory pool of preprocessed inputs grouped by work; what the batch
/// sampler draws from.
pub struct BatchSource {
    pub works: Vec<WorkTracks>,
}

impl BatchSource {
    pub fn new(works: Vec<WorkTracks>) -> Self {
        BatchSource { works }
    }

    /// Load every split track through the preprocessing cache.
    pub fn load(manifest: &Manifest, split: &Split) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, &crate::dataset::ManifestRecord> =
            manifest.records.iter().map(|r| (r.track_id.as_str(), r)).collect();
        let mut works: Vec<WorkTracks> = Vec::new();
        let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        for track_id in &split.track_ids {
            let record = by_id.get(track_id.as_str()).ok_or_else(|| {
                Error::Data(format!("split references unknown track {track_id:?}"))
            })?;
            let path = record.f0_path.as_ref().ok_or_else(|| {
                Error::Data(format!("track {track_id:?} has no f0_path; run preprocess first"))
            })?;
            let mut input = preprocess::load_or_preprocess(path)?;
            input.track_id = record.track_id.clone();
            let slot = *index.entry(record.work_id.clone()).or_insert_with(|| {
                works.push(WorkTracks { work_id: record.work_id.clone(), tracks: vec![] });
                works.len() - 1
            });
            works[slot].tracks.push(Arc::new(input));
        }
        Ok(BatchSource { works })
    }

    pub fn total_tracks(&self) -> usize {
        self.works.iter().map(|w| w.tracks.len()).sum()
    }

    fn usable_works(&self, covers_per_work: usize) -> Vec<usize> {
        (0..self.works.len())
            .filter(|&i| self.works[i].tracks.len() >= covers_per_work)
            .collect()
    }
}

/// Draw a batch: `works_per_batch` distinct works, `covers_per_work`
/// distinct tracks each, no track repeated. Returns the stacked input
/// tensor and per-row work labels.
pub fn sample_batch(
    source: &BatchSource,
    config: &TripletConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<String>)> {
    config.validate()?;
    let usable = source.usable_works(config.covers_per_work);
    if usable.len() < config.works_per_batch {
        return Err(Error::Config(format!(
            "need {} works with at least {} covers, found {}",
            config.works_per_batch,
            config.covers_per_work,
            usable.len()
        )));
    }
    let mut work_order = usable;
    work_order.shuffle(rng);

    let mut inputs: Vec<Arc<PreprocessedInput>> = Vec::with_capacity(config.batch_size);
    let mut labels = Vec::with_capacity(config.batch_size);
    for &wi in work_order.iter().take(config.works_per_batch) {
        let work = &source.works[wi];
        let mut track_idx: Vec<usize> = (0..work.tracks.len()).collect();
        track_idx.shuffle(rng);
        for &ti in track_idx.iter().take(config.covers_per_work) {
            inputs.push(Arc::clone(&work.tracks[ti]));
            labels.push(work.work_id.clone());
        }
    }
    let batch = batch_from_inputs(inputs.iter().map(|a| a.as_ref()));
    Ok((batch, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub lr: f64,
    pub active_fraction: f64,
}

pub struct TrainOutcome {
    /// Parameters at the best eval loss seen (final parameters if the run
    /// never reached an eval point).
    pub best_params: EncoderParams,
    pub final_params: EncoderParams,
    pub log: Vec<TrainLogRow>,
    pub best_eval_loss: f64,
    pub best_step: u64,
    pub steps_run: u64,
}

fn works_overlap(a: &BatchSource, b: &BatchSource) -> bool {
    let set: std::collections::HashSet<&str> =
        a.works.iter().map(|w| w.work_id.as_str()).collect();
    b.works.iter().any(|w| set.contains(w.work_id.as_str()))
}

/// Full training loop. `progress` receives every log row as it is produced.
pub fn train(
    train_source: &BatchSource,
    eval_source: &BatchSource,
    encoder_config: &EncoderConfig,
    config: &TripletConfig,
    mut progress: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    encoder_config.validate()?;
    if works_overlap(train_source, eval_source) {
        return Err(Error::Config("train and eval sources share a work".into()));
    }

    let mut params = EncoderParams::init(encoder_config, config.seed)?;
    let mut adam = AdamState::new(&params.trainable(), config.initial_lr);

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5a5a));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xd0d0));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xe7a1));

    // The eval protocol: a fixed set of seeded batches, scored in eval mode.
    let eval_batches: Vec<(Tensor, Vec<String>)> = (0..EVAL_BATCH_COUNT)
        .map(|_| sample_batch(eval_source, config, &mut eval_rng))
        .collect::<Result<_>>()?;
    let eval_loss = |params: &EncoderParams| -> Result<f64> {
        let mut total = 0.0f64;
        for (batch, labels) in &eval_batches {
            let emb = encoder_forward_eval(batch, params)?;
            total += batch_triplet_loss(&emb, labels, config.margin)?.loss;
        }
        Ok(total / eval_batches.len() as f64)
    };

    let mut log = Vec::new();
    let mut best_params = params.clone();
    let mut best_eval = f64::INFINITY;
    let mut best_step = 0u64;
    let mut last_schedule_event = 0u64;
    let mut steps_run = 0u64;

    for step in 1..=config.max_steps {
        let (batch, labels) = sample_batch(train_source, config, &mut batch_rng)?;
        let (embeddings, cache) = encoder_forward_train(&batch, &mut params, &mut dropout_rng)?;
        let outcome = batch_triplet_loss(&embeddings, &labels, config.margin)?;
        if !outcome.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {} at step {step} (lr {:.3e})",
                outcome.loss, adam.lr
            )));
        }
        let grads = encoder_backward(&params, &cache, &outcome.grad)?;
        adam_step(&mut params.trainable_mut(), &grads.as_refs(), &mut adam)?;
        steps_run = step;

        let mut row = TrainLogRow {
            step,
            train_loss: outcome.loss,
            eval_loss: None,
            lr: adam.lr,
            active_fraction: outcome.active_fraction,
        };

        if step % config.eval_every == 0 {
            let ev = eval_loss(&params)?;
            row.eval_loss = Some(ev);
            if ev < best_eval {
                best_eval = ev;
                best_step = step;
                best_params = params.clone();
                last_schedule_event = step;
            } else if step - last_schedule_event >= config.plateau_window {
                adam.lr *= config.lr_factor;
                last_schedule_event = step;
            }
        }

        progress(&row);
        log.push(row);

        if adam.lr < config.min_lr {
            break;
        }
    }

    if best_eval.is_infinite() {
        best_params = params.clone();
    }
    Ok(TrainOutcome {
        best_params,
        final_params: params,
        log,
        best_eval_loss: best_eval,
        best_step,
        steps_run,
    })
}
