//! Mean pooling with a 3x2 window and 3x2 stride, plus the global
//! time/frequency average that feeds the dense head.

use crate::error::{Error, Result};
use crate::par;

use super::tensor::Tensor;

pub const POOL_T: usize = 3;
pub const POOL_F: usize = 2;

/// Non-overlapping window means over `[T,F,C]`; trailing remainder rows and
/// columns are dropped (floor semantics).
pub fn meanpool(input: &Tensor) -> Result<Tensor> {
    let (t, f, c) = match *input.shape() {
        [t, f, c] => (t, f, c),
        _ => return Err(Error::Shape(format!("meanpool input must be rank 3, got {:?}", input.shape()))),
    };
    if t < POOL_T || f < POOL_F {
        return Err(Error::Shape(format!(
            "meanpool input {t}x{f} smaller than the {POOL_T}x{POOL_F} window"
        )));
    }
    let (ot, of) = (t / POOL_T, f / POOL_F);
    let mut out = Tensor::zeros(&[ot, of, c]);
    meanpool_batch_forward(input.values(), 1, t, f, c, out.values_mut());
    Ok(out)
}

pub(crate) fn pooled_dims(t: usize, f: usize) -> (usize, usize) {
    (t / POOL_T, f / POOL_F)
}

pub(crate) fn meanpool_batch_forward(
    input: &[f32],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    c: usize,
    out: &mut [f32],
) {
    let (ot, of) = pooled_dims(t_dim, f_dim);
    debug_assert_eq!(out.len(), b_dim * ot * of * c);
    let sample_in = t_dim * f_dim * c;
    let inv = 1.0 / (POOL_T * POOL_F) as f32;
    par::for_each_row_mut(out, of * c, |r, out_row| {
        let b = r / ot;
        let to = r % ot;
        let sample = &input[b * sample_in..(b + 1) * sample_in];
        for fo in 0..of {
            let dst = &mut out_row[fo * c..(fo + 1) * c];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for dt in 0..POOL_T {
                for df in 0..POOL_F {
                    let src = ((to * POOL_T + dt) * f_dim + fo * POOL_F + df) * c;
                    for (d, &s) in dst.iter_mut().zip(&sample[src..src + c]) {
                        *d += s;
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
    });
}

/// Backward: each window cell receives 1/6 of the pooled gradient; dropped
/// remainder cells receive zero.
pub(crate) fn meanpool_batch_backward(
    grad_out: &[f32],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    c: usize,
    grad_input: &mut [f32],
) {
    let (ot, of) = pooled_dims(t_dim, f_dim);
    debug_assert_eq!(grad_out.len(), b_dim * ot * of * c);
    let sample_out = ot * of * c;
    let inv = 1.0 / (POOL_T * POOL_F) as f32;
    par::for_each_row_mut(grad_input, f_dim * c, |r, gin_row| {
        let b = r / t_dim;
        let t = r % t_dim;
        gin_row.iter_mut().for_each(|v| *v = 0.0);
        let to = t / POOL_T;
        if to >= ot {
            return;
        }
        let gout = &grad_out[b * sample_out..(b + 1) * sample_out];
        for fi in 0..f_dim {
            let fo = fi / POOL_F;
            if fo >= of {
                continue;
            }
            let src = (to * of + fo) * c;
            let dst = &mut gin_row[fi * c..(fi + 1) * c];
            for (d, &g) in dst.iter_mut().zip(&gout[src..src + c]) {
                *d = g * inv;
            }
        }
    });
}

/// Backward through [`meanpool`] for a `[T,F,C]` input of the given
/// spatial dims.
pub fn meanpool_backward(grad_out: &Tensor, t_dim: usize, f_dim: usize) -> Result<Tensor> {
    let (ot, of, c) = match *grad_out.shape() {
        [ot, of, c] => (ot, of, c),
        _ => return Err(Error::Shape("meanpool grad_out must be rank 3".into())),
    };
    if pooled_dims(t_dim, f_dim) != (ot, of) {
        return Err(Error::Shape(format!(
            "meanpool grad_out {ot}x{of} does not match input {t_dim}x{f_dim}"
        )));
    }
    let mut grad_input = Tensor::zeros(&[t_dim, f_dim, c]);
    meanpool_batch_backward(grad_out.values(), 1, t_dim, f_dim, c, grad_input.values_mut());
    Ok(grad_input)
}

/// Global mean over time and frequency: `[B,T,F,C] -> [B,C]`, f64 sums.
pub fn global_mean(input: &Tensor) -> Result<Tensor> {
    let (b, t, f, c) = match *input.shape() {
        [b, t, f, c] => (b, t, f, c),
        _ => {
            return Err(Error::Shape(format!(
                "global_mean input must be rank 4, got {:?}",
                input.shape()
            )))
        }
    };
    let n = t * f;
    let x = input.values();
    let mut out = vec![0.0f32; b * c];
    par::for_each_row_mut(&mut out, c, |bi, row| {
        let sample = &x[bi * n * c..(bi + 1) * n * c];
        for ci in 0..c {
            let mut s = 0.0f64;
            for pos in 0..n {
                s += f64::from(sample[pos * c + ci]);
            }
            row[ci] = (s / n as f64) as f32;
        }
    });
    Ok(Tensor::from_vec(&[b, c], out))
}

pub(crate) fn global_mean_backward(
    grad_out: &[f32],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    c: usize,
    grad_input: &mut [f32],
) {
    let n = t_dim * f_dim;
    debug_assert_eq!(grad_input.len(), b_dim * n * c);
    let inv = 1.0 / n as f32;
    par::for_each_row_mut(grad_input, c, |pos, row| {
        let b = pos / n;
        for ci in 0..c {
            row[ci] = grad_out[b * c + ci] * inv;
        }
    });
}
