//! 3x3 same-padded cross-correlation with reverse-mode gradients.
//!
//! Layout is channels-last: activations are `[T, F, C]`, kernels are
//! `[3, 3, Cin, Cout]`. The innermost loops run over contiguous channel
//! spans so they auto-vectorize; each output element is accumulated in a
//! fixed order, which keeps results independent of the parallel row split.

use crate::error::{Error, Result};
use crate::par;

use super::tensor::Tensor;

pub const KERNEL_SIZE: usize = 3;

fn check_conv_shapes(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (t, f, cin) = match *input.shape() {
        [t, f, c] => (t, f, c),
        _ => return Err(Error::Shape(format!("conv2d input must be rank 3, got {:?}", input.shape()))),
    };
    let (kh, kw, kcin, cout) = match *kernels.shape() {
        [kh, kw, kcin, cout] => (kh, kw, kcin, cout),
        _ => return Err(Error::Shape(format!("conv2d kernels must be rank 4, got {:?}", kernels.shape()))),
    };
    if kh != KERNEL_SIZE || kw != KERNEL_SIZE {
        return Err(Error::Shape(format!("conv2d kernels must be 3x3, got {kh}x{kw}")));
    }
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {cin}, kernels expect {kcin}"
        )));
    }
    bias.require_shape(&[cout], "conv2d bias")?;
    Ok((t, f, cin, cout))
}

/// Forward pass for one image: `[T,F,Cin] * [3,3,Cin,Cout] + bias -> [T,F,Cout]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (t, f, cin, cout) = check_conv_shapes(input, kernels, bias)?;
    let mut out = Tensor::zeros(&[t, f, cout]);
    conv2d_forward_into(
        input.values(),
        kernels.values(),
        bias.values(),
        t,
        f,
        cin,
        cout,
        out.values_mut(),
    );
    Ok(out)
}

/// Row-parallel forward over a flat `[T,F,Cin]` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward_into(
    input: &[f32],
    kernels: &[f32],
    bias: &[f32],
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    out: &mut [f32],
) {
    par::for_each_row_mut(out, f_dim * cout, |t, out_row| {
        conv2d_forward_row(input, kernels, bias, t_dim, f_dim, cin, cout, t, out_row);
    });
}

/// Sequential twin of [`conv2d_forward_into`].
#[cfg(test)]
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward_into_seq(
    input: &[f32],
    kernels: &[f32],
    bias: &[f32],
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    out: &mut [f32],
) {
    par::for_each_row_mut_seq(out, f_dim * cout, |t, out_row| {
        conv2d_forward_row(input, kernels, bias, t_dim, f_dim, cin, cout, t, out_row);
    });
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward_row(
    input: &[f32],
    kernels: &[f32],
    bias: &[f32],
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    t: usize,
    out_row: &mut [f32],
) {
    let mut acc = vec![0.0f32; cout];
    for fo in 0..f_dim {
        acc.copy_from_slice(bias);
        for kh in 0..KERNEL_SIZE {
            let ti = t as isize + kh as isize - 1;
            if ti < 0 || ti >= t_dim as isize {
                continue;
            }
            for kw in 0..KERNEL_SIZE {
                let fi = fo as isize + kw as isize - 1;
                if fi < 0 || fi >= f_dim as isize {
                    continue;
                }
                let in_base = (ti as usize * f_dim + fi as usize) * cin;
                let k_base = (kh * KERNEL_SIZE + kw) * cin * cout;
                for ci in 0..cin {
                    let x = input[in_base + ci];
                    let krow = &kernels[k_base + ci * cout..k_base + (ci + 1) * cout];
                    for (a, &k) in acc.iter_mut().zip(krow) {
                        *a += x * k;
                    }
                }
            }
        }
        out_row[fo * cout..(fo + 1) * cout].copy_from_slice(&acc);
    }
}

/// Batched forward over `[B,T,F,Cin]`; padding never crosses sample
/// boundaries. Parallel over the `B*T` output rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_batch_forward(
    input: &[f32],
    kernels: &[f32],
    bias: &[f32],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    out: &mut [f32],
) {
    debug_assert_eq!(input.len(), b_dim * t_dim * f_dim * cin);
    debug_assert_eq!(out.len(), b_dim * t_dim * f_dim * cout);
    let sample_in = t_dim * f_dim * cin;
    par::for_each_row_mut(out, f_dim * cout, |r, out_row| {
        let b = r / t_dim;
        let t = r % t_dim;
        let sample = &input[b * sample_in..(b + 1) * sample_in];
        conv2d_forward_row(sample, kernels, bias, t_dim, f_dim, cin, cout, t, out_row);
    });
}

/// Batched backward; same layout rules as [`conv2d_batch_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_batch_backward(
    input: &[f32],
    kernels: &[f32],
    grad_out: &[f32],
    b_dim: usize,
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    grad_input: &mut [f32],
    grad_kernels: &mut [f32],
    grad_bias: &mut [f32],
) {
    let kernels_t = transpose_kernels(kernels, cin, cout);
    let sample_out = t_dim * f_dim * cout;

    par::for_each_row_mut(grad_input, f_dim * cin, |r, gin_row| {
        let b = r / t_dim;
        let t = r % t_dim;
        let gout = &grad_out[b * sample_out..(b + 1) * sample_out];
        let mut acc = vec![0.0f32; cin];
        for fi in 0..f_dim {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for kh in 0..KERNEL_SIZE {
                let to = t as isize - kh as isize + 1;
                if to < 0 || to >= t_dim as isize {
                    continue;
                }
                for kw in 0..KERNEL_SIZE {
                    let fo = fi as isize - kw as isize + 1;
                    if fo < 0 || fo >= f_dim as isize {
                        continue;
                    }
                    let g_base = (to as usize * f_dim + fo as usize) * cout;
                    let k_base = (kh * KERNEL_SIZE + kw) * cin * cout;
                    for co in 0..cout {
                        let g = gout[g_base + co];
                        let krow = &kernels_t[k_base + co * cin..k_base + (co + 1) * cin];
                        for (a, &k) in acc.iter_mut().zip(krow) {
                            *a += g * k;
                        }
                    }
                }
            }
            gin_row[fi * cin..(fi + 1) * cin].copy_from_slice(&acc);
        }
    });

    let sample_in = t_dim * f_dim * cin;
    par::for_each_row_mut(grad_kernels, cout, |row_idx, gk_row| {
        let k = row_idx / cin;
        let ci = row_idx % cin;
        let kh = k / KERNEL_SIZE;
        let kw = k % KERNEL_SIZE;
        let mut acc = vec![0.0f32; cout];
        for b in 0..b_dim {
            let sample = &input[b * sample_in..(b + 1) * sample_in];
            let gout = &grad_out[b * sample_out..(b + 1) * sample_out];
            for to in 0..t_dim {
                let ti = to as isize + kh as isize - 1;
                if ti < 0 || ti >= t_dim as isize {
                    continue;
                }
                for fo in 0..f_dim {
                    let fi = fo as isize + kw as isize - 1;
                    if fi < 0 || fi >= f_dim as isize {
                        continue;
                    }
                    let x = sample[(ti as usize * f_dim + fi as usize) * cin + ci];
                    if x == 0.0 {
                        continue;
                    }
                    let g_base = (to * f_dim + fo) * cout;
                    let grow = &gout[g_base..g_base + cout];
                    for (a, &g) in acc.iter_mut().zip(grow) {
                        *a += x * g;
                    }
                }
            }
        }
        gk_row.copy_from_slice(&acc);
    });

    for (co, gb) in grad_bias.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for pos in 0..b_dim * t_dim * f_dim {
            s += f64::from(grad_out[pos * cout + co]);
        }
        *gb = s as f32;
    }
}

/// Gradients of the conv output w.r.t. input, kernels and bias.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (t, f, cin, cout) = check_conv_shapes(input, kernels, bias)?;
    grad_out.require_shape(&[t, f, cout], "conv2d grad_out")?;

    let mut grad_input = Tensor::zeros(&[t, f, cin]);
    let mut grad_kernels = Tensor::zeros(&[KERNEL_SIZE, KERNEL_SIZE, cin, cout]);
    let mut grad_bias = Tensor::zeros(&[cout]);

    conv2d_backward_into(
        input.values(),
        kernels.values(),
        grad_out.values(),
        t,
        f,
        cin,
        cout,
        grad_input.values_mut(),
        grad_kernels.values_mut(),
        grad_bias.values_mut(),
    );

    Ok(ConvGrads { input: grad_input, kernels: grad_kernels, bias: grad_bias })
}

/// Kernels transposed to `[3,3,Cout,Cin]` so the input-gradient inner loop is
/// contiguous over `cin`.
fn transpose_kernels(kernels: &[f32], cin: usize, cout: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; kernels.len()];
    for k in 0..KERNEL_SIZE * KERNEL_SIZE {
        let src = &kernels[k * cin * cout..(k + 1) * cin * cout];
        let dst = &mut t[k * cin * cout..(k + 1) * cin * cout];
        for ci in 0..cin {
            for co in 0..cout {
                dst[co * cin + ci] = src[ci * cout + co];
            }
        }
    }
    t
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_into(
    input: &[f32],
    kernels: &[f32],
    grad_out: &[f32],
    t_dim: usize,
    f_dim: usize,
    cin: usize,
    cout: usize,
    grad_input: &mut [f32],
    grad_kernels: &mut [f32],
    grad_bias: &mut [f32],
) {
    conv2d_batch_backward(
        input,
        kernels,
        grad_out,
        1,
        t_dim,
        f_dim,
        cin,
        cout,
        grad_input,
        grad_kernels,
        grad_bias,
    );
}
