use rand::Rng;

use crate::{DenseArray, Real, Shape};

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseArray<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(Shape::Matrix(fan_in, fan_out), limit, rng)
}

pub fn uniform<T: Real, R: Rng + ?Sized>(shape: Shape, limit: f64, rng: &mut R) -> DenseArray<T> {
    let data = (0..shape.numel())
        .map(|_| T::of(rng.random_range(-limit..=limit)))
        .collect();
    DenseArray::from_vec(shape, data).expect("length matches shape")
}
