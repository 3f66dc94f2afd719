//! Minimal dense tensor: a shape plus a row-major `f32` buffer.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f32>) -> Self {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "tensor buffer does not match shape {shape:?}"
        );
        Tensor { shape: shape.to_vec(), values }
    }

    /// He-normal initialization with `fan_in` inputs per output unit.
    pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            // Box-Muller; keeps us off rand_distr for one distribution.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            values.push((z * std) as f32);
        }
        Tensor { shape: shape.to_vec(), values }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn require_shape(&self, expected: &[usize], what: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::Shape(format!(
                "{what}: expected shape {expected:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}
