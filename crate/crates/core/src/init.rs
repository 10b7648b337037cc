use glyco_autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for conv and
/// linear weights.
pub(crate) fn fan_in_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}
