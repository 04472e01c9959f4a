//! He (Kaiming) normal initialization.

use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Draws `shape.numel()` values from N(0, 2 / fan_in), deterministically for
/// a given seed.
pub fn he_init(shape: Shape, fan_in: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("he_init", "fan_in must be positive"));
    }
    let std = libm::sqrtf(2.0 / fan_in as f32);
    let normal = Normal::new(0.0f32, std).map_err(|_| Error::invalid("he_init", "invalid standard deviation"))?;
    let mut rng = rng::chacha(seed);
    let data: Vec<f32> = (0..shape.numel()).map(|_| normal.sample(&mut rng)).collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_matches_fan_in() {
        let t = he_init(Shape::vector(100_000), 2, 11).unwrap();
        let n = t.data().len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn seeded() {
        let s = Shape::new(4, 3, 3, 3);
        assert_eq!(he_init(s, 27, 5).unwrap(), he_init(s, 27, 5).unwrap());
        assert_ne!(he_init(s, 27, 5).unwrap(), he_init(s, 27, 6).unwrap());
    }

    #[test]
    fn zero_fan_in_rejected() {
        assert!(he_init(Shape::vector(3), 0, 1).is_err());
    }
}
