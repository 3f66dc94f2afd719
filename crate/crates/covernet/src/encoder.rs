//! Five-block convolutional encoder mapping a 1024x36 melody input to an
//! L2-normalized embedding of dimension E.
//!
//! Each block runs dropout -> batchnorm -> 3x3 conv (ReLU) -> 3x2 mean-pool;
//! kernel counts double per block (K, 2K, 4K, 8K, 16K) while the spatial
//! grid shrinks 1024x36 -> 341x18 -> 113x9 -> 37x4 -> 12x2 -> 4x1. A global
//! time/frequency average then feeds a dense layer of width E whose output
//! is scaled to unit norm, so squared distances between embeddings live in
//! [0, 4].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ManifestRecord;
use crate::error::{Error, Result};
use crate::nncore::{self, AdamState, BatchNormState, Mode, Tensor};
use crate::par;
use crate::preprocess::{self, PreprocessedInput, INPUT_FREQ, INPUT_TIME};

pub const NUM_BLOCKS: usize = 5;
pub const DEFAULT_INFERENCE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Kernel count of the first convolution; later blocks double it.
    pub k: usize,
    /// Embedding dimension.
    pub e: usize,
    /// Per-block dropout rates, applied at each block's input.
    pub dropout_rates: [f32; NUM_BLOCKS],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { k: 64, e: 512, dropout_rates: [0.0, 0.1, 0.1, 0.2, 0.3] }
    }
}

impl EncoderConfig {
    pub fn with_dims(k: usize, e: usize) -> Self {
        EncoderConfig { k, e, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.e < 1 {
            return Err(Error::Config(format!("K and E must be at least 1, got K={} E={}", self.k, self.e)));
        }
        if self.dropout_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Input channels per block: 1, K, 2K, 4K, 8K.
    pub fn channels_in(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            self.k << (block - 1)
        }
    }

    /// Output channels per block: K, 2K, 4K, 8K, 16K.
    pub fn channels_out(&self, block: usize) -> usize {
        self.k << block
    }

    /// Width of the globally pooled feature vector (16K).
    pub fn feature_width(&self) -> usize {
        self.channels_out(NUM_BLOCKS - 1)
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn_state: BatchNormState,
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
}

/// All weights of the encoder plus its architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub blocks: Vec<BlockParams>,
    pub dense_weight: Tensor,
    pub dense_bias: Tensor,
}

impl EncoderParams {
    /// He-normal conv/dense weights, BN gamma 1 / beta 0.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for b in 0..NUM_BLOCKS {
            let cin = config.channels_in(b);
            let cout = config.channels_out(b);
            blocks.push(BlockParams {
                bn_gamma: Tensor::filled(&[cin], 1.0),
                bn_beta: Tensor::zeros(&[cin]),
                bn_state: BatchNormState::new(cin),
                conv_weight: Tensor::he_normal(&[3, 3, cin, cout], 9 * cin, &mut rng),
                conv_bias: Tensor::zeros(&[cout]),
            });
        }
        let fw = config.feature_width();
        Ok(EncoderParams {
            config: config.clone(),
            blocks,
            dense_weight: Tensor::he_normal(&[fw, config.e], fw, &mut rng),
            dense_bias: Tensor::zeros(&[config.e]),
        })
    }

    /// Trainable tensors in the fixed optimizer order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(4 * NUM_BLOCKS + 2);
        for b in &self.blocks {
            out.push(&b.bn_gamma);
            out.push(&b.bn_beta);
            out.push(&b.conv_weight);
            out.push(&b.conv_bias);
        }
        out.push(&self.dense_weight);
        out.push(&self.dense_bias);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(4 * NUM_BLOCKS + 2);
        for b in &mut self.blocks {
            out.push(&mut b.bn_gamma);
            out.push(&mut b.bn_beta);
            out.push(&mut b.conv_weight);
            out.push(&mut b.conv_bias);
        }
        out.push(&mut self.dense_weight);
        out.push(&mut self.dense_bias);
        out
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(4 * NUM_BLOCKS + 2);
        for i in 1..=NUM_BLOCKS {
            names.push(format!("block{i}.bn.gamma"));
            names.push(format!("block{i}.bn.beta"));
            names.push(format!("block{i}.conv.weight"));
            names.push(format!("block{i}.conv.bias"));
        }
        names.push("head.dense.weight".into());
        names.push("head.dense.bias".into());
        names
    }

    /// Total trainable parameter count.
    pub fn trainable_len(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn save(&self, path: &Path, adam: Option<&AdamState>) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .trainable_names()
            .into_iter()
            .zip(self.trainable().into_iter().cloned())
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            tensors.push((format!("block{}.bn.running_mean", i + 1), b.bn_state.running_mean.clone()));
            tensors.push((format!("block{}.bn.running_var", i + 1), b.bn_state.running_var.clone()));
        }
        let ckpt = nncore::Checkpoint {
            k: self.config.k as u32,
            e: self.config.e as u32,
            tensors,
            adam: adam.map(|a| nncore::AdamCheckpoint::from_state(a, &self.trainable_names())),
        };
        nncore::save_checkpoint(&ckpt, path)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<AdamState>)> {
        let ckpt = nncore::load_checkpoint(path)?;
        let config = EncoderConfig::with_dims(ckpt.k as usize, ckpt.e as usize);
        let mut params = EncoderParams::init(&config, 0)?;
        let lookup: std::collections::HashMap<String, Tensor> = ckpt.tensors.into_iter().collect();
        let take = |name: &str| -> Result<Tensor> {
            lookup
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name:?}")))
        };
        for (i, b) in params.blocks.iter_mut().enumerate() {
            let n = i + 1;
            b.bn_gamma = take(&format!("block{n}.bn.gamma"))?;
            b.bn_beta = take(&format!("block{n}.bn.beta"))?;
            b.conv_weight = take(&format!("block{n}.conv.weight"))?;
            b.conv_bias = take(&format!("block{n}.conv.bias"))?;
            b.bn_state.running_mean = take(&format!("block{n}.bn.running_mean"))?;
            b.bn_state.running_var = take(&format!("block{n}.bn.running_var"))?;
        }
        params.dense_weight = take("head.dense.weight")?;
        params.dense_bias = take("head.dense.bias")?;
        params.check_shapes()?;

        let adam = match ckpt.adam {
            None => None,
            Some(a) => {
                let names = params.trainable_names();
                let lookup: std::collections::HashMap<String, Tensor> = a.tensors.into_iter().collect();
                let mut first = Vec::new();
                let mut second = Vec::new();
                for name in &names {
                    first.push(lookup.get(&format!("m.{name}")).cloned().ok_or_else(|| {
                        Error::Format(format!("checkpoint is missing optimizer tensor m.{name}"))
                    })?);
                    second.push(lookup.get(&format!("v.{name}")).cloned().ok_or_else(|| {
                        Error::Format(format!("checkpoint is missing optimizer tensor v.{name}"))
                    })?);
                }
                Some(AdamState {
                    first_moment: first,
                    second_moment: second,
                    step: a.step,
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                })
            }
        };
        Ok((params, adam))
    }

    fn check_shapes(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            let cin = self.config.channels_in(i);
            let cout = self.config.channels_out(i);
            b.bn_gamma.require_shape(&[cin], "bn gamma")?;
            b.bn_beta.require_shape(&[cin], "bn beta")?;
            b.conv_weight.require_shape(&[3, 3, cin, cout], "conv weight")?;
            b.conv_bias.require_shape(&[cout], "conv bias")?;
        }
        self.dense_weight.require_shape(&[self.config.feature_width(), self.config.e], "dense weight")?;
        self.dense_bias.require_shape(&[self.config.e], "dense bias")?;
        Ok(())
    }
}

/// L2-normalized track representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub track_id: String,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

struct BlockCache {
    dropout_mask: Option<Vec<f32>>,
    bn_cache: nncore::BnCache,
    /// BN output = conv input, flat `[B,T,F,Cin]`.
    conv_input: Vec<f32>,
    /// Post-ReLU conv output, flat `[B,T,F,Cout]`.
    post_relu: Vec<f32>,
    t: usize,
    f: usize,
}

/// Everything `encoder_backward` needs from a train-mode forward.
pub struct ForwardCache {
    batch: usize,
    blocks: Vec<BlockCache>,
    /// Last block output dims (time, freq).
    final_t: usize,
    final_f: usize,
    /// Globally pooled features `[B, 16K]`.
    pooled: Tensor,
    /// Pre-normalization norms per row.
    norms: Vec<f64>,
    /// Normalized embeddings `[B, E]`.
    embeddings: Tensor,
}

fn check_input_shape(batch: &Tensor) -> Result<usize> {
    match *batch.shape() {
        [b, t, f, c] if t == INPUT_TIME && f == INPUT_FREQ && c == 1 => Ok(b),
        _ => Err(Error::Shape(format!(
            "encoder input must be [B, {INPUT_TIME}, {INPUT_FREQ}, 1], got {:?}",
            batch.shape()
        ))),
    }
}

/// Train-mode forward: batch statistics, live dropout, full cache.
pub fn encoder_forward_train(
    batch: &Tensor,
    params: &mut EncoderParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, ForwardCache)> {
    let b = check_input_shape(batch)?;
    if b < 2 {
        return Err(Error::InvalidInput("train-mode forward needs a batch of at least 2".into()));
    }
    let config = params.config.clone();
    let mut x = batch.clone();
    let (mut t, mut f) = (INPUT_TIME, INPUT_FREQ);
    let mut caches = Vec::with_capacity(NUM_BLOCKS);

    for (i, block) in params.blocks.iter_mut().enumerate() {
        let cin = config.channels_in(i);
        let cout = config.channels_out(i);

        let (dropped, dropout_mask) = nncore::dropout(&x, config.dropout_rates[i], Mode::Train, rng)?;
        let (bn_out, bn_cache) =
            nncore::batchnorm_train(&dropped, &block.bn_gamma, &block.bn_beta, &mut block.bn_state)?;

        let mut conv_out = vec![0.0f32; b * t * f * cout];
        nncore::conv2d_batch_forward(
            bn_out.values(),
            block.conv_weight.values(),
            block.conv_bias.values(),
            b,
            t,
            f,
            cin,
            cout,
            &mut conv_out,
        );
        nncore::relu_inplace(&mut conv_out);

        let (ot, of) = nncore::pooled_dims(t, f);
        let mut pooled = vec![0.0f32; b * ot * of * cout];
        nncore::meanpool_batch_forward(&conv_out, b, t, f, cout, &mut pooled);

        caches.push(BlockCache {
            dropout_mask,
            bn_cache,
            conv_input: bn_out.into_values(),
            post_relu: conv_out,
            t,
            f,
        });
        x = Tensor::from_vec(&[b, ot, of, cout], pooled);
        t = ot;
        f = of;
    }

    let pooled = nncore::global_mean(&x)?;
    let dense_out = nncore::dense(&pooled, &params.dense_weight, &params.dense_bias)?;

    let e = config.e;
    let mut embeddings = dense_out.clone();
    let mut norms = Vec::with_capacity(b);
    for row in embeddings.values_mut().chunks_mut(e) {
        norms.push(nncore::l2_normalize_slice(row)?);
    }

    let cache = ForwardCache {
        batch: b,
        blocks: caches,
        final_t: t,
        final_f: f,
        pooled,
        norms,
        embeddings: embeddings.clone(),
    };
    Ok((embeddings, cache))
}

/// Eval-mode forward: running statistics, dropout off, pure in the params.
pub fn encoder_forward_eval(batch: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let b = check_input_shape(batch)?;
    let config = &params.config;
    let mut x = batch.clone();
    let (mut t, mut f) = (INPUT_TIME, INPUT_FREQ);

    for (i, block) in params.blocks.iter().enumerate() {
        let cin = config.channels_in(i);
        let cout = config.channels_out(i);
        let bn_out = nncore::batchnorm_eval(&x, &block.bn_gamma, &block.bn_beta, &block.bn_state)?;
        let mut conv_out = vec![0.0f32; b * t * f * cout];
        nncore::conv2d_batch_forward(
            bn_out.values(),
            block.conv_weight.values(),
            block.conv_bias.values(),
            b,
            t,
            f,
            cin,
            cout,
            &mut conv_out,
        );
        nncore::relu_inplace(&mut conv_out);
        let (ot, of) = nncore::pooled_dims(t, f);
        let mut pooled = vec![0.0f32; b * ot * of * cout];
        nncore::meanpool_batch_forward(&conv_out, b, t, f, cout, &mut pooled);
        x = Tensor::from_vec(&[b, ot, of, cout], pooled);
        t = ot;
        f = of;
    }

    let pooled = nncore::global_mean(&x)?;
    let mut out = nncore::dense(&pooled, &params.dense_weight, &params.dense_bias)?;
    for row in out.values_mut().chunks_mut(config.e) {
        nncore::l2_normalize_slice(row)?;
    }
    Ok(out)
}

/// Mode-dispatching forward. Train mode updates BN running statistics and
/// consumes dropout randomness; eval mode is a pure function of the inputs.
pub fn encoder_forward(
    batch: &Tensor,
    params: &mut EncoderParams,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    match mode {
        Mode::Train => encoder_forward_train(batch, params, rng).map(|(out, _)| out),
        Mode::Eval => encoder_forward_eval(batch, params),
    }
}

/// Parameter gradients in the same fixed order as
/// [`EncoderParams::trainable`].
pub struct EncoderGrads {
    pub tensors: Vec<Tensor>,
}

impl EncoderGrads {
    pub fn as_refs(&self) -> Vec<&Tensor> {
        self.tensors.iter().collect()
    }
}

/// Reverse pass through a cached train-mode forward.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_embeddings: &Tensor,
) -> Result<EncoderGrads> {
    let b = cache.batch;
    let e = params.config.e;
    grad_embeddings.require_shape(&[b, e], "encoder grad_embeddings")?;

    // L2 normalization backward, row by row.
    let mut grad_dense_out = vec![0.0f32; b * e];
    for bi in 0..b {
        let y = &cache.embeddings.values()[bi * e..(bi + 1) * e];
        let g = &grad_embeddings.values()[bi * e..(bi + 1) * e];
        nncore::l2_normalize_backward(y, cache.norms[bi], g, &mut grad_dense_out[bi * e..(bi + 1) * e]);
    }
    let grad_dense_out = Tensor::from_vec(&[b, e], grad_dense_out);

    let (grad_pooled, grad_dense_w, grad_dense_b) =
        nncore::dense_backward(&cache.pooled, &params.dense_weight, &grad_dense_out)?;

    // Global mean backward into the last block's pooled grid.
    let fw = params.config.feature_width();
    let (ft, ff) = (cache.final_t, cache.final_f);
    let mut grad = vec![0.0f32; b * ft * ff * fw];
    nncore::global_mean_backward(grad_pooled.values(), b, ft, ff, fw, &mut grad);

    let mut block_grads: Vec<(Tensor, Tensor, Tensor, Tensor)> = Vec::with_capacity(NUM_BLOCKS);
    for (i, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let cin = params.config.channels_in(i);
        let cout = params.config.channels_out(i);
        let (t, f) = (bc.t, bc.f);

        // meanpool backward: grad currently has the pooled dims.
        let mut grad_relu = vec![0.0f32; b * t * f * cout];
        nncore::meanpool_batch_backward(&grad, b, t, f, cout, &mut grad_relu);
        nncore::relu_backward_inplace(&bc.post_relu, &mut grad_relu);

        let mut grad_conv_in = vec![0.0f32; b * t * f * cin];
        let mut grad_w = Tensor::zeros(&[3, 3, cin, cout]);
        let mut grad_cb = Tensor::zeros(&[cout]);
        nncore::conv2d_batch_backward(
            &bc.conv_input,
            block.conv_weight.values(),
            &grad_relu,
            b,
            t,
            f,
            cin,
            cout,
            &mut grad_conv_in,
            grad_w.values_mut(),
            grad_cb.values_mut(),
        );

        let grad_conv_in = Tensor::from_vec(&[b, t, f, cin], grad_conv_in);
        let (mut grad_x, grad_gamma, grad_beta) =
            nncore::batchnorm_backward(&bc.bn_cache, &block.bn_gamma, &grad_conv_in)?;
        if let Some(mask) = &bc.dropout_mask {
            nncore::dropout_backward_inplace(mask, grad_x.values_mut());
        }

        block_grads.push((grad_gamma, grad_beta, grad_w, grad_cb));
        grad = grad_x.into_values();
    }
    block_grads.reverse();

    let mut tensors = Vec::with_capacity(4 * NUM_BLOCKS + 2);
    for (gamma, beta, w, bias) in block_grads {
        tensors.push(gamma);
        tensors.push(beta);
        tensors.push(w);
        tensors.push(bias);
    }
    tensors.push(grad_dense_w);
    tensors.push(grad_dense_b);
    Ok(EncoderGrads { tensors })
}

/// Stack fixed-shape inputs into a `[B, 1024, 36, 1]` batch tensor.
pub fn batch_from_inputs<'a, I>(inputs: I) -> Tensor
where
    I: IntoIterator<Item = &'a PreprocessedInput>,
{
    let mut values = Vec::new();
    let mut count = 0;
    for input in inputs {
        debug_assert_eq!(input.values.rows(), INPUT_TIME);
        debug_assert_eq!(input.values.cols(), INPUT_FREQ);
        values.extend_from_slice(input.values.data());
        count += 1;
    }
    Tensor::from_vec(&[count, INPUT_TIME, INPUT_FREQ, 1], values)
}

#[derive(Debug, Clone)]
pub struct TrackFailure {
    pub track_id: String,
    pub error: String,
}

/// Embed every manifest track in eval mode.
///
/// Inputs are loaded from each record's `f0_path` (cached fixed-shape files
/// pass straight through, anything else runs the preprocessing pipeline).
/// Per-track failures are collected and reported; the run continues. Results
/// are in manifest order and independent of `parallelism`.
pub fn embed_tracks(
    records: &[ManifestRecord],
    params: &EncoderParams,
    parallelism: usize,
    batch_size: usize,
) -> (Vec<Embedding>, Vec<TrackFailure>) {
    let batch_size = batch_size.max(1);
    par::with_parallelism(parallelism, || {
        let loaded: Vec<std::result::Result<PreprocessedInput, TrackFailure>> =
            par::map_indexed(records.len(), |i| {
                let record = &records[i];
                let path = record.f0_path.as_ref().ok_or_else(|| TrackFailure {
                    track_id: record.track_id.clone(),
                    error: "record has no f0_path".into(),
                })?;
                match preprocess::load_or_preprocess(path) {
                    Ok(mut input) => {
                        input.track_id = record.track_id.clone();
                        Ok(input)
                    }
                    Err(e) => Err(TrackFailure {
                        track_id: record.track_id.clone(),
                        error: e.to_string(),
                    }),
                }
            });

        let mut failures = Vec::new();
        let mut inputs = Vec::new();
        for item in loaded {
            match item {
                Ok(input) => inputs.push(input),
                Err(f) => failures.push(f),
            }
        }

        let mut embeddings = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch_size) {
            match embed_batch(chunk, params) {
                Ok(mut embs) => embeddings.append(&mut embs),
                Err(e) => {
                    for input in chunk {
                        failures.push(TrackFailure {
                            track_id: input.track_id.clone(),
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
        (embeddings, failures)
    })
}

/// Eval-mode embeddings for a slice of in-memory inputs.
pub fn embed_batch(inputs: &[PreprocessedInput], params: &EncoderParams) -> Result<Vec<Embedding>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let batch = batch_from_inputs(inputs);
    let out = encoder_forward_eval(&batch, params)?;
    let e = params.config.e;
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(i, input)| Embedding {
            track_id: input.track_id.clone(),
            vector: out.values()[i * e..(i + 1) * e].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Matrix;

    fn tiny_params(seed: u64) -> EncoderParams {
        EncoderParams::init(&EncoderConfig::with_dims(2, 8), seed).unwrap()
    }

    fn random_batch(b: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0f32; b * INPUT_TIME * INPUT_FREQ];
        for v in values.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        Tensor::from_vec(&[b, INPUT_TIME, INPUT_FREQ, 1], values)
    }

    #[test]
    fn outputs_are_unit_norm() {
        let mut params = tiny_params(1);
        let batch = random_batch(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = encoder_forward(&batch, &mut params, Mode::Train, &mut rng).unwrap();
        for row in out.values().chunks(8) {
            let norm: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        }
    }

    #[test]
    fn feature_width_is_sixteen_k() {
        let config = EncoderConfig::with_dims(2, 8);
        assert_eq!(config.feature_width(), 32);
        assert_eq!(config.channels_in(0), 1);
        assert_eq!(config.channels_in(4), 16);
        assert_eq!(config.channels_out(4), 32);
    }

    #[test]
    fn eval_forward_is_deterministic_and_per_sample() {
        let params = tiny_params(5);
        let a = random_batch(1, 10);
        let b = random_batch(1, 11);
        let ab = Tensor::from_vec(
            &[2, INPUT_TIME, INPUT_FREQ, 1],
            [a.values(), b.values()].concat(),
        );
        let out_a = encoder_forward_eval(&a, &params).unwrap();
        let out_ab = encoder_forward_eval(&ab, &params).unwrap();
        assert_eq!(out_a.values(), &out_ab.values()[..8]);
        let again = encoder_forward_eval(&ab, &params).unwrap();
        assert_eq!(out_ab.values(), again.values());
    }

    #[test]
    fn wrong_input_shape_is_shape_error() {
        let mut params = tiny_params(1);
        let batch = Tensor::zeros(&[2, 512, 36, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            encoder_forward(&batch, &mut params, Mode::Eval, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // Independent arithmetic: conv 9*cin*cout + cout, BN 2*cin per
        // block, dense 16K*E + E.
        for (k, e) in [(2usize, 8usize), (64, 512)] {
            let mut expected = 0usize;
            let mut cin = 1usize;
            for block in 0..NUM_BLOCKS {
                let cout = k * (1 << block);
                expected += 9 * cin * cout + cout; // conv
                expected += 2 * cin; // bn affine
                cin = cout;
            }
            expected += 16 * k * e + e; // dense
            let params = EncoderParams::init(&EncoderConfig::with_dims(k, e), 0).unwrap();
            assert_eq!(params.trainable_len(), expected, "K={k} E={e}");
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_params() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.cvnw");
        let params = tiny_params(42);
        params.save(&path, None).unwrap();
        let (loaded, adam) = EncoderParams::load(&path).unwrap();
        assert!(adam.is_none());
        for (a, b) in params.trainable().iter().zip(loaded.trainable()) {
            assert_eq!(a.values(), b.values());
        }
        assert_eq!(
            params.blocks[0].bn_state.running_var.values(),
            loaded.blocks[0].bn_state.running_var.values()
        );
    }

    #[test]
    fn embed_batch_assigns_track_ids_in_order() {
        let params = tiny_params(3);
        let inputs: Vec<PreprocessedInput> = (0..3)
            .map(|i| PreprocessedInput {
                values: Matrix::from_vec(
                    INPUT_TIME,
                    INPUT_FREQ,
                    (0..INPUT_TIME * INPUT_FREQ)
                        .map(|j| ((i * 31 + j) % 17) as f32 / 17.0)
                        .collect(),
                ),
                track_id: format!("t{i}"),
            })
            .collect();
        let embs = embed_batch(&inputs, &params).unwrap();
        assert_eq!(embs.len(), 3);
        assert_eq!(embs[0].track_id, "t0");
        assert_eq!(embs[2].track_id, "t2");
        assert_eq!(embs[0].dim(), 8);
    }

    #[test]
    fn empty_manifest_embeds_to_empty_list() {
        let params = tiny_params(3);
        let (embs, failures) = embed_tracks(&[], &params, 1, 4);
        assert!(embs.is_empty());
        assert!(failures.is_empty());
    }
}
