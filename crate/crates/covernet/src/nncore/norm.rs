//! Per-channel batch normalization over `[B,T,F,C]` activations.

use crate::error::{Error, Result};
use crate::par;

use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running statistics carried between training steps and used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }
}

/// Everything the backward pass needs from a train-mode forward.
pub struct BnCache {
    normalized: Vec<f32>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
}

fn check_bn_shapes(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<[usize; 4]> {
    let dims: [usize; 4] = match *input.shape() {
        [b, t, f, c] => [b, t, f, c],
        _ => {
            return Err(Error::Shape(format!(
                "batchnorm input must be rank 4 [B,T,F,C], got {:?}",
                input.shape()
            )))
        }
    };
    gamma.require_shape(&[dims[3]], "batchnorm gamma")?;
    beta.require_shape(&[dims[3]], "batchnorm beta")?;
    Ok(dims)
}

/// Train-mode forward: normalize with batch statistics, update running stats.
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BatchNormState,
) -> Result<(Tensor, BnCache)> {
    let dims = check_bn_shapes(input, gamma, beta)?;
    let [b, t, f, c] = dims;
    if b < 2 {
        return Err(Error::InvalidInput(
            "batchnorm in train mode requires a batch of at least 2".into(),
        ));
    }
    let n = b * t * f;
    let x = input.values();

    // Channel statistics accumulated in f64; the sums run over the whole
    // batch so f32 would lose digits at realistic batch sizes.
    let stats: Vec<(f64, f64)> = par::map_indexed(c, |ci| {
        let mut sum = 0.0f64;
        for pos in 0..n {
            sum += f64::from(x[pos * c + ci]);
        }
        let mean = sum / n as f64;
        let mut var_sum = 0.0f64;
        for pos in 0..n {
            let d = f64::from(x[pos * c + ci]) - mean;
            var_sum += d * d;
        }
        (mean, var_sum / n as f64)
    });

    let inv_std: Vec<f64> = stats.iter().map(|&(_, v)| 1.0 / (v + BN_EPS).sqrt()).collect();
    let means: Vec<f64> = stats.iter().map(|&(m, _)| m).collect();
    let g = gamma.values();
    let bt = beta.values();

    let mut normalized = vec![0.0f32; x.len()];
    par::for_each_row_mut(&mut normalized, c, |pos, row| {
        for ci in 0..c {
            row[ci] = ((f64::from(x[pos * c + ci]) - means[ci]) * inv_std[ci]) as f32;
        }
    });
    let mut out = vec![0.0f32; x.len()];
    par::for_each_row_mut(&mut out, c, |pos, row| {
        for ci in 0..c {
            row[ci] = normalized[pos * c + ci] * g[ci] + bt[ci];
        }
    });

    for ci in 0..c {
        let rm = &mut state.running_mean.values_mut()[ci];
        *rm = (BN_MOMENTUM * f64::from(*rm) + (1.0 - BN_MOMENTUM) * means[ci]) as f32;
        let rv = &mut state.running_var.values_mut()[ci];
        *rv = (BN_MOMENTUM * f64::from(*rv) + (1.0 - BN_MOMENTUM) * stats[ci].1) as f32;
    }

    Ok((
        Tensor::from_vec(&dims, out),
        BnCache { normalized, inv_std, shape: dims },
    ))
}

/// Eval-mode forward: normalize with the stored running statistics.
pub fn batchnorm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
) -> Result<Tensor> {
    let dims = check_bn_shapes(input, gamma, beta)?;
    let c = dims[3];
    state.running_mean.require_shape(&[c], "batchnorm running mean")?;
    state.running_var.require_shape(&[c], "batchnorm running var")?;

    let scale: Vec<f32> = (0..c)
        .map(|ci| {
            (f64::from(gamma.values()[ci])
                / (f64::from(state.running_var.values()[ci]) + BN_EPS).sqrt()) as f32
        })
        .collect();
    let shift: Vec<f32> = (0..c)
        .map(|ci| {
            (f64::from(beta.values()[ci])
                - f64::from(scale[ci]) * f64::from(state.running_mean.values()[ci])) as f32
        })
        .collect();

    let x = input.values();
    let mut out = vec![0.0f32; x.len()];
    par::for_each_row_mut(&mut out, c, |pos, row| {
        let xrow = &x[pos * c..(pos + 1) * c];
        for ci in 0..c {
            row[ci] = xrow[ci] * scale[ci] + shift[ci];
        }
    });
    Ok(Tensor::from_vec(&dims, out))
}

/// Backward through a train-mode forward.
///
/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [b, t, f, c] = cache.shape;
    grad_out.require_shape(&[b, t, f, c], "batchnorm grad_out")?;
    let n = b * t * f;
    let g = grad_out.values();
    let xh = &cache.normalized;

    // Per-channel sums of dy and dy*xhat, f64.
    let sums: Vec<(f64, f64)> = par::map_indexed(c, |ci| {
        let mut s = 0.0f64;
        let mut sx = 0.0f64;
        for pos in 0..n {
            let gv = f64::from(g[pos * c + ci]);
            s += gv;
            sx += gv * f64::from(xh[pos * c + ci]);
        }
        (s, sx)
    });

    let mut grad_input = vec![0.0f32; g.len()];
    let gm = gamma.values();
    let inv_n = 1.0 / n as f64;
    par::for_each_row_mut(&mut grad_input, c, |pos, row| {
        for ci in 0..c {
            let (s, sx) = sums[ci];
            let gv = f64::from(g[pos * c + ci]);
            let xv = f64::from(xh[pos * c + ci]);
            let d = f64::from(gm[ci])
                * cache.inv_std[ci]
                * (gv - inv_n * s - xv * inv_n * sx);
            row[ci] = d as f32;
        }
    });

    let grad_gamma: Vec<f32> = sums.iter().map(|&(_, sx)| sx as f32).collect();
    let grad_beta: Vec<f32> = sums.iter().map(|&(s, _)| s as f32).collect();

    Ok((
        Tensor::from_vec(&[b, t, f, c], grad_input),
        Tensor::from_vec(&[c], grad_gamma),
        Tensor::from_vec(&[c], grad_beta),
    ))
}
