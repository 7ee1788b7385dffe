//! Weight initialization helpers. All draws come from an explicit RNG so
//! model construction is reproducible from the seed alone.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Uniform(-limit, limit) with the Glorot limit sqrt(6 / (fan_in + fan_out)).
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(shape), 1.0)
}

/// Conv1d weight `[Cout, Cin, K]`.
pub fn conv1d_weight(rng: &mut impl Rng, cout: usize, cin: usize, k: usize) -> ArrayD<f64> {
    glorot(rng, &[cout, cin, k], cin * k, cout * k)
}

/// ConvTranspose1d weight `[Cin, Cout, K]`.
pub fn convt1d_weight(rng: &mut impl Rng, cin: usize, cout: usize, k: usize) -> ArrayD<f64> {
    glorot(rng, &[cin, cout, k], cin * k, cout * k)
}

/// Conv3d weight `[Cout, Cin, kd, kf, kt]`.
pub fn conv3d_weight(
    rng: &mut impl Rng,
    cout: usize,
    cin: usize,
    kd: usize,
    kf: usize,
    kt: usize,
) -> ArrayD<f64> {
    let kvol = kd * kf * kt;
    glorot(rng, &[cout, cin, kd, kf, kt], cin * kvol, cout * kvol)
}

/// Dense weight `[In, Out]` (used as `x · W`).
pub fn linear_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    glorot(rng, &[fan_in, fan_out], fan_in, fan_out)
}
