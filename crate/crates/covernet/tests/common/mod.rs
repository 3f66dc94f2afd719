//! Independent f64 reference implementations used as oracles.
//!
//! Everything here is written as plain nested loops from the mathematical
//! definitions, deliberately sharing no code with the library. Finite
//! differences are taken through these references so f32 storage noise in
//! the implementation under test never contaminates the derivative
//! estimate.

#![allow(dead_code)]

pub mod gradcheck;

use covernet::encoder::EncoderParams;

// ---------------------------------------------------------------------------
// Reference kernels (f64, single image unless noted)
// ---------------------------------------------------------------------------

/// Same-padded 3x3 cross-correlation over `[T,F,Cin]`.
pub fn conv2d_ref(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; t_dim * f_dim * cout];
    for t in 0..t_dim as isize {
        for f in 0..f_dim as isize {
            for co in 0..cout {
                let mut acc = bias[co];
                for kh in 0..3isize {
                    for kw in 0..3isize {
                        let (ti, fi) = (t + kh - 1, f + kw - 1);
                        if ti < 0 || ti >= t_dim as isize || fi < 0 || fi >= f_dim as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let x = input[(ti as usize * f_dim + fi as usize) * cin + ci];
                            let k = kernels[(((kh * 3 + kw) as usize) * cin + ci) * cout + co];
                            acc += x * k;
                        }
                    }
                }
                out[(t as usize * f_dim + f as usize) * cout + co] = acc;
            }
        }
    }
    out
}

/// Train-mode batch normalization over `[B,T,F,C]` with eps 1e-5.
pub fn batchnorm_ref(
    input: &[f64],
    gamma: &[f64],
    beta: &[f64],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    c: usize,
) -> Vec<f64> {
    let n = (b_dim * t_dim * f_dim) as f64;
    let mut out = vec![0.0; input.len()];
    for ci in 0..c {
        let mut mean = 0.0;
        for pos in 0..input.len() / c {
            mean += input[pos * c + ci];
        }
        mean /= n;
        let mut var = 0.0;
        for pos in 0..input.len() / c {
            let d = input[pos * c + ci] - mean;
            var += d * d;
        }
        var /= n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for pos in 0..input.len() / c {
            out[pos * c + ci] = gamma[ci] * (input[pos * c + ci] - mean) * inv + beta[ci];
        }
    }
    out
}

/// 3x2 mean pooling with 3x2 stride, floor semantics, over `[T,F,C]`.
pub fn meanpool_ref(input: &[f64], t_dim: usize, f_dim: usize, c: usize) -> (Vec<f64>, usize, usize) {
    let (ot, of) = (t_dim / 3, f_dim / 2);
    let mut out = vec![0.0; ot * of * c];
    for to in 0..ot {
        for fo in 0..of {
            for ci in 0..c {
                let mut acc = 0.0;
                for dt in 0..3 {
                    for df in 0..2 {
                        acc += input[((to * 3 + dt) * f_dim + fo * 2 + df) * c + ci];
                    }
                }
                out[(to * of + fo) * c + ci] = acc / 6.0;
            }
        }
    }
    (out, ot, of)
}

pub fn relu_ref(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

pub fn dense_ref(input: &[f64], weights: &[f64], bias: &[f64], b_dim: usize, d: usize, e: usize) -> Vec<f64> {
    let mut out = vec![0.0; b_dim * e];
    for bi in 0..b_dim {
        for ei in 0..e {
            let mut acc = bias[ei];
            for di in 0..d {
                acc += input[bi * d + di] * weights[di * e + ei];
            }
            out[bi * e + ei] = acc;
        }
    }
    out
}

pub fn l2_normalize_ref(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    v.iter().map(|&x| x / norm).collect()
}

pub fn global_mean_ref(input: &[f64], b_dim: usize, n_spatial: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; b_dim * c];
    for bi in 0..b_dim {
        for ci in 0..c {
            let mut acc = 0.0;
            for pos in 0..n_spatial {
                acc += input[(bi * n_spatial + pos) * c + ci];
            }
            out[bi * c + ci] = acc / n_spatial as f64;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Reference mining and triplet loss
// ---------------------------------------------------------------------------

pub fn sq_dist_ref(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Exhaustive-scan mining rule: among negatives with d_an < d_ap keep the
/// highest d_an; otherwise keep the lowest d_an. Ties keep the lowest index.
/// Returns `(negative_index, d_an, was_semi_hard)`.
pub fn mine_ref<L: PartialEq>(
    dists: &dyn Fn(usize) -> f64,
    labels: &[L],
    anchor: usize,
    d_ap: f64,
) -> Option<(usize, f64, bool)> {
    let mut semi: Option<(usize, f64)> = None;
    let mut nearest: Option<(usize, f64)> = None;
    for j in 0..labels.len() {
        if labels[j] == labels[anchor] {
            continue;
        }
        let d_an = dists(j);
        if d_an < d_ap {
            match semi {
                Some((_, best)) if d_an <= best => {}
                _ => semi = Some((j, d_an)),
            }
        }
        match nearest {
            Some((_, best)) if d_an >= best => {}
            _ => nearest = Some((j, d_an)),
        }
    }
    match (semi, nearest) {
        (Some((j, d)), _) => Some((j, d, true)),
        (None, Some((j, d))) => Some((j, d, false)),
        _ => None,
    }
}

/// Brute-force batch triplet loss: every (anchor, positive) pair, the
/// verbatim mining rule, mean hinge. Also returns the mined triplets and
/// which were active, which doubles as a smoothness fingerprint for
/// finite-difference probing.
pub fn triplet_loss_ref<L: PartialEq>(
    embeddings: &[Vec<f64>],
    labels: &[L],
    margin: f64,
) -> (f64, Vec<(usize, usize, usize, bool)>) {
    let b = embeddings.len();
    let mut loss = 0.0;
    let mut pairs = 0usize;
    let mut triplets = Vec::new();
    for a in 0..b {
        for p in 0..b {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            pairs += 1;
            let d_ap = sq_dist_ref(&embeddings[a], &embeddings[p]);
            let dist_to = |j: usize| sq_dist_ref(&embeddings[a], &embeddings[j]);
            let (n, d_an, _) = mine_ref(&dist_to, labels, a, d_ap).expect("batch has negatives");
            let hinge = d_ap + margin - d_an;
            let active = hinge > 0.0;
            if active {
                loss += hinge;
            }
            triplets.push((a, p, n, active));
        }
    }
    (loss / pairs as f64, triplets)
}

// ---------------------------------------------------------------------------
// Reference encoder (f64 copy of EncoderParams, dropout off)
// ---------------------------------------------------------------------------

pub struct OracleBlock {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct OracleEncoder {
    pub k: usize,
    pub e: usize,
    pub blocks: Vec<OracleBlock>,
    pub dense_weight: Vec<f64>,
    pub dense_bias: Vec<f64>,
}

fn widen(t: &covernet::nncore::Tensor) -> Vec<f64> {
    t.values().iter().map(|&x| f64::from(x)).collect()
}

impl OracleEncoder {
    pub fn from_params(params: &EncoderParams) -> Self {
        OracleEncoder {
            k: params.config.k,
            e: params.config.e,
            blocks: params
                .blocks
                .iter()
                .map(|b| OracleBlock {
                    gamma: widen(&b.bn_gamma),
                    beta: widen(&b.bn_beta),
                    weight: widen(&b.conv_weight),
                    bias: widen(&b.conv_bias),
                })
                .collect(),
            dense_weight: widen(&params.dense_weight),
            dense_bias: widen(&params.dense_bias),
        }
    }

    /// Mutable access to a trainable tensor by its position in the
    /// optimizer order: per block (gamma, beta, weight, bias), then the
    /// dense weight and bias.
    pub fn trainable_mut(&mut self, tensor_idx: usize) -> &mut Vec<f64> {
        let per_block = 4;
        let n_block_tensors = self.blocks.len() * per_block;
        if tensor_idx < n_block_tensors {
            let block = &mut self.blocks[tensor_idx / per_block];
            match tensor_idx % per_block {
                0 => &mut block.gamma,
                1 => &mut block.beta,
                2 => &mut block.weight,
                _ => &mut block.bias,
            }
        } else if tensor_idx == n_block_tensors {
            &mut self.dense_weight
        } else {
            &mut self.dense_bias
        }
    }

    /// Train-mode forward to embeddings. The fingerprint folds in the ReLU
    /// activation pattern so probes that cross a kink can be discarded.
    pub fn forward(&self, batch: &[f64], b_dim: usize) -> (Vec<Vec<f64>>, u64) {
        let (mut t, mut f) = (1024usize, 36usize);
        let mut x = batch.to_vec();
        let mut cin = 1usize;
        let mut fingerprint = 0u64;
        for (bi, block) in self.blocks.iter().enumerate() {
            let cout = self.k << bi;
            let bn = batchnorm_ref(&x, &block.gamma, &block.beta, b_dim, t, f, cin);
            // Per-sample conv; padding must not straddle samples.
            let mut conv = vec![0.0; b_dim * t * f * cout];
            for s in 0..b_dim {
                let sample = &bn[s * t * f * cin..(s + 1) * t * f * cin];
                let out = conv2d_ref(sample, &block.weight, &block.bias, t, f, cin, cout);
                conv[s * t * f * cout..(s + 1) * t * f * cout].copy_from_slice(&out);
            }
            for (i, v) in conv.iter_mut().enumerate() {
                if *v > 0.0 {
                    fingerprint = fingerprint
                        .wrapping_mul(1099511628211)
                        .wrapping_add(i as u64 + 1);
                } else {
                    *v = 0.0;
                }
            }
            let mut pooled = vec![0.0; b_dim * (t / 3) * (f / 2) * cout];
            for s in 0..b_dim {
                let sample = &conv[s * t * f * cout..(s + 1) * t * f * cout];
                let (out, ot, of) = meanpool_ref(sample, t, f, cout);
                pooled[s * ot * of * cout..(s + 1) * ot * of * cout].copy_from_slice(&out);
            }
            t /= 3;
            f /= 2;
            x = pooled;
            cin = cout;
        }
        let feats = global_mean_ref(&x, b_dim, t * f, cin);
        let dense = dense_ref(&feats, &self.dense_weight, &self.dense_bias, b_dim, cin, self.e);
        let embeddings = (0..b_dim)
            .map(|s| l2_normalize_ref(&dense[s * self.e..(s + 1) * self.e]))
            .collect();
        (embeddings, fingerprint)
    }

    /// Forward plus triplet loss; fingerprint covers ReLU pattern, mined
    /// indices and the active set.
    pub fn loss<L: PartialEq>(
        &self,
        batch: &[f64],
        b_dim: usize,
        labels: &[L],
        margin: f64,
    ) -> (f64, u64) {
        let (embeddings, mut fingerprint) = self.forward(batch, b_dim);
        let (loss, triplets) = triplet_loss_ref(&embeddings, labels, margin);
        for (a, p, n, active) in triplets {
            fingerprint = fingerprint
                .wrapping_mul(31)
                .wrapping_add((a * 7919 + p * 104729 + n * 1299709 + active as usize) as u64);
        }
        (loss, fingerprint)
    }
}

// ---------------------------------------------------------------------------
// Reference bilinear interpolation (pointwise scalar evaluation)
// ---------------------------------------------------------------------------

/// Evaluate one output pixel of an align-corners=false bilinear resize.
pub fn bilinear_point_ref(
    input: &[f64],
    in_rows: usize,
    in_cols: usize,
    out_rows: usize,
    out_cols: usize,
    i: usize,
    j: usize,
) -> f64 {
    let coord = |idx: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        let s = (idx as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
        let s = s.clamp(0.0, (in_len - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(in_len - 1), s - lo as f64)
    };
    let (r0, r1, wr) = coord(i, out_rows, in_rows);
    let (c0, c1, wc) = coord(j, out_cols, in_cols);
    let v = |r: usize, c: usize| input[r * in_cols + c];
    (v(r0, c0) * (1.0 - wc) + v(r0, c1) * wc) * (1.0 - wr)
        + (v(r1, c0) * (1.0 - wc) + v(r1, c1) * wc) * wr
}

// ---------------------------------------------------------------------------
// Reference ranking metrics (brute force, O(n^2) rescans)
// ---------------------------------------------------------------------------

/// Average precision by re-scanning the prefix for every relevant rank.
pub fn average_precision_ref(flags: &[bool]) -> f64 {
    let total = flags.iter().filter(|&&f| f).count();
    assert!(total > 0);
    let mut sum = 0.0;
    for (rank0, &f) in flags.iter().enumerate() {
        if f {
            let hits_to_here = flags[..=rank0].iter().filter(|&&x| x).count();
            sum += hits_to_here as f64 / (rank0 + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn first_rank_ref(flags: &[bool]) -> u64 {
    flags.iter().position(|&f| f).map(|p| p as u64 + 1).expect("at least one cover")
}

pub fn top10_ref(flags: &[bool]) -> u64 {
    flags.iter().take(10).filter(|&&f| f).count() as u64
}

/// AuC by exhaustive pair counting: P(d_cover < d_noncover) + 0.5 P(equal).
pub fn auc_pairs_ref(covers: &[f32], noncovers: &[f32]) -> f64 {
    let mut score = 0.0f64;
    for &c in covers {
        for &n in noncovers {
            if c < n {
                score += 1.0;
            } else if c == n {
                score += 0.5;
            }
        }
    }
    score / (covers.len() as f64 * noncovers.len() as f64)
}

// ---------------------------------------------------------------------------
// Finite-difference helpers
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-3;

/// Central finite difference of a scalar f64 function.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a floor so zero-gradient probes compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
