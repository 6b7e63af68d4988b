use ndarray::{Array2, Zip};
use rand::Rng;

use super::perturbation::PerturbationBatch;
use super::spec::ValueRange;
use crate::error::{Error, Result};

/// Model-independent baseline: each coordinate of `δ` is drawn uniformly
/// from `[−ε, ε]`, then `x + δ` is clipped into `range`. Success flags are
/// all false; [`super::generate`] fills them in against a model.
pub fn noise<R: Rng + ?Sized>(x: &Array2<f64>, eps: f64, range: Option<ValueRange>, rng: &mut R) -> Result<PerturbationBatch> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("noise budget {eps} must be finite and >= 0")));
    }
    let mut delta = Array2::from_shape_fn(x.dim(), |_| if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 });
    if let Some(r) = range {
        Zip::from(&mut delta).and(x).for_each(|d, &xi| *d = r.clamp(xi + *d) - xi);
    }
    let n = x.nrows();
    PerturbationBatch::new(delta, vec![false; n])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn draws_fill_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::zeros((1000, 100));
        let out = noise(&x, 0.1, None, &mut rng).unwrap();
        let max = out.deltas().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.0999 && max <= 0.1, "{max}");
        let mean = out.deltas().mean().unwrap();
        assert!(mean.abs() < 1e-3, "{mean}");
    }

    #[test]
    fn same_seed_same_noise() {
        let x = Array2::from_elem((4, 3), 0.5);
        let a = noise(&x, 0.2, Some(ValueRange::UNIT), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = noise(&x, 0.2, Some(ValueRange::UNIT), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }
}
