//! Dense layer, ReLU, dropout and L2 normalization.

use crate::error::{Error, Result};
use crate::par;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::Mode;

/// `[B,D] x [D,E] + bias -> [B,E]` (a single `[D]` vector is treated as B=1).
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, d) = match *input.shape() {
        [d] => (1, d),
        [b, d] => (b, d),
        _ => return Err(Error::Shape(format!("dense input must be rank 1 or 2, got {:?}", input.shape()))),
    };
    let (wd, e) = match *weights.shape() {
        [wd, e] => (wd, e),
        _ => return Err(Error::Shape(format!("dense weights must be rank 2, got {:?}", weights.shape()))),
    };
    if wd != d {
        return Err(Error::Shape(format!("dense input width {d} does not match weights {wd}")));
    }
    bias.require_shape(&[e], "dense bias")?;

    let x = input.values();
    let w = weights.values();
    let bs = bias.values();
    let mut out = vec![0.0f32; b * e];
    par::for_each_row_mut(&mut out, e, |bi, row| {
        row.copy_from_slice(bs);
        let xrow = &x[bi * d..(bi + 1) * d];
        for (di, &xv) in xrow.iter().enumerate() {
            let wrow = &w[di * e..(di + 1) * e];
            for (r, &wv) in row.iter_mut().zip(wrow) {
                *r += xv * wv;
            }
        }
    });
    let shape = if input.shape().len() == 1 { vec![e] } else { vec![b, e] };
    Ok(Tensor::from_vec(&shape, out))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d) = match *input.shape() {
        [d] => (1, d),
        [b, d] => (b, d),
        _ => return Err(Error::Shape("dense input must be rank 1 or 2".into())),
    };
    let e = weights.shape()[1];
    if grad_out.len() != b * e {
        return Err(Error::Shape(format!(
            "dense grad_out has {} values, expected {}",
            grad_out.len(),
            b * e
        )));
    }
    let x = input.values();
    let w = weights.values();
    let g = grad_out.values();

    let mut grad_input = vec![0.0f32; b * d];
    par::for_each_row_mut(&mut grad_input, d, |bi, row| {
        let grow = &g[bi * e..(bi + 1) * e];
        for (di, r) in row.iter_mut().enumerate() {
            let wrow = &w[di * e..(di + 1) * e];
            let mut s = 0.0f64;
            for (&gv, &wv) in grow.iter().zip(wrow) {
                s += f64::from(gv) * f64::from(wv);
            }
            *r = s as f32;
        }
    });

    let mut grad_weights = vec![0.0f32; d * e];
    par::for_each_row_mut(&mut grad_weights, e, |di, row| {
        for bi in 0..b {
            let xv = x[bi * d + di];
            if xv == 0.0 {
                continue;
            }
            let grow = &g[bi * e..(bi + 1) * e];
            for (r, &gv) in row.iter_mut().zip(grow) {
                *r += xv * gv;
            }
        }
    });

    let mut grad_bias = vec![0.0f32; e];
    for (ei, gb) in grad_bias.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for bi in 0..b {
            s += f64::from(g[bi * e + ei]);
        }
        *gb = s as f32;
    }

    Ok((
        Tensor::from_vec(input.shape(), grad_input),
        Tensor::from_vec(&[d, e], grad_weights),
        Tensor::from_vec(&[e], grad_bias),
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.values_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    out
}

/// ReLU gradient in terms of the forward input.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.require_shape(input.shape(), "relu grad_out")?;
    let mut grad = grad_out.clone();
    for (g, &x) in grad.values_mut().iter_mut().zip(input.values()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

pub(crate) fn relu_inplace(values: &mut [f32]) {
    values.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
}

/// ReLU gradient from the forward *output* (nonzero output means the unit
/// was active; ties at exactly 0 pass no gradient).
pub(crate) fn relu_backward_inplace(output: &[f32], grad: &mut [f32]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Dropout. In train mode each unit is zeroed with probability `rate` and
/// survivors are scaled by `1/(1-rate)`; eval mode is the identity. The
/// returned mask holds the per-unit scale factors for backward.
pub fn dropout(input: &Tensor, rate: f32, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Tensor, Option<Vec<f32>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut mask = vec![0.0f32; input.len()];
    for m in mask.iter_mut() {
        if rng.gen::<f32>() >= rate {
            *m = keep_scale;
        }
    }
    let mut out = input.clone();
    for (v, &m) in out.values_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub(crate) fn dropout_backward_inplace(mask: &[f32], grad: &mut [f32]) {
    for (g, &m) in grad.iter_mut().zip(mask) {
        *g *= m;
    }
}

/// Dropout gradient given the mask a train-mode forward returned.
pub fn dropout_backward(mask: &[f32], grad_out: &Tensor) -> Result<Tensor> {
    if mask.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "dropout mask has {} entries, grad_out {}",
            mask.len(),
            grad_out.len()
        )));
    }
    let mut grad = grad_out.clone();
    dropout_backward_inplace(mask, grad.values_mut());
    Ok(grad)
}

pub const L2_NORM_FLOOR: f64 = 1e-12;

/// Scale a vector to unit Euclidean norm. Errors on (near-)zero input.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let mut out = v.clone();
    l2_normalize_slice(out.values_mut())?;
    Ok(out)
}

pub(crate) fn l2_normalize_slice(v: &mut [f32]) -> Result<f64> {
    let norm = l2_norm(v);
    if norm <= L2_NORM_FLOOR {
        return Err(Error::Numeric(format!(
            "cannot L2-normalize a vector with norm {norm:.3e}"
        )));
    }
    let inv = 1.0 / norm;
    v.iter_mut().for_each(|x| *x = (f64::from(*x) * inv) as f32);
    Ok(norm)
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Gradient of `y = x / ||x||` in terms of the forward input.
pub fn l2_normalize_backward_from_input(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.require_shape(input.shape(), "l2_normalize grad_out")?;
    let normalized = l2_normalize(input)?;
    let norm = l2_norm(input.values());
    let mut grad = Tensor::zeros(input.shape());
    l2_normalize_backward(normalized.values(), norm, grad_out.values(), grad.values_mut());
    Ok(grad)
}

/// Backward through `y = x / ||x||`: `dx = (dy - y (y . dy)) / ||x||`.
pub(crate) fn l2_normalize_backward(normalized: &[f32], norm: f64, grad_out: &[f32], grad_in: &mut [f32]) {
    let mut dot = 0.0f64;
    for (&y, &g) in normalized.iter().zip(grad_out) {
        dot += f64::from(y) * f64::from(g);
    }
    let inv = 1.0 / norm;
    for ((gi, &y), &g) in grad_in.iter_mut().zip(normalized).zip(grad_out) {
        *gi = ((f64::from(g) - f64::from(y) * dot) * inv) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn l2_normalize_three_four() {
        let v = Tensor::from_vec(&[2], vec![3.0, 4.0]);
        let out = l2_normalize(&v).unwrap();
        assert!((out.values()[0] - 0.6).abs() < 1e-6);
        assert!((out.values()[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_zero_vector_errors() {
        let v = Tensor::zeros(&[3]);
        assert!(l2_normalize(&v).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Tensor::from_vec(&[4], vec![1.0, -2.0, 3.0, 4.0]);
        let (out, mask) = dropout(&v, 0.3, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out.values(), v.values());
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_train_zeroes_and_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Tensor::filled(&[10_000], 1.0);
        let (out, mask) = dropout(&v, 0.25, Mode::Train, &mut rng).unwrap();
        let mask = mask.unwrap();
        let zeros = out.values().iter().filter(|&&x| x == 0.0).count();
        let frac = zeros as f64 / 10_000.0;
        assert!((frac - 0.25).abs() < 0.02, "dropout fraction {frac}");
        for (&o, &m) in out.values().iter().zip(&mask) {
            assert!(o == 0.0 || (o - 1.0 / 0.75).abs() < 1e-6);
            assert!(m == 0.0 || (m - 1.0 / 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let v = Tensor::filled(&[64], 1.0);
        let a = dropout(&v, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout(&v, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.0.values(), b.0.values());
    }

    #[test]
    fn dense_shapes_and_values() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 2.0, 1.0]);
        let b = Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]);
        let out = dense(&x, &w, &b).unwrap();
        assert_eq!(out.shape(), &[3]);
        assert_eq!(out.values(), &[2.0, 5.0, 1.0]);
    }
}
