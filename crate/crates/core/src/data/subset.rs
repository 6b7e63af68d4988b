use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Deterministic stratified sample of `n` examples. Slots go one at a
/// time to the class furthest below its exact proportional share, after
/// every class first receives one example when `n` allows it, so class
/// counts stay within one example of exact proportionality.
pub fn subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let total = dataset.len();
    if n > total {
        return Err(Error::InvalidArgument(format!("subset of {n} from {total} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let nonempty = by_class.iter().filter(|c| !c.is_empty()).count();
    let mut quota: Vec<usize> = by_class
        .iter()
        .map(|c| usize::from(n >= nonempty && !c.is_empty()))
        .collect();
    // Deficit of class k scaled by `total`: size·n − quota·total.
    let deficit = |k: usize, q: usize| (by_class[k].len() * n) as i128 - (q * total) as i128;
    for _ in quota.iter().sum::<usize>()..n {
        let k = (0..by_class.len())
            .filter(|&k| quota[k] < by_class[k].len())
            .max_by(|&a, &b| deficit(a, quota[a]).cmp(&deficit(b, quota[b])).then(b.cmp(&a)))
            .expect("n <= total leaves a class with room");
        quota[k] += 1;
    }
    let mut picked = Vec::with_capacity(n);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..q]);
    }
    picked.shuffle(&mut rng);
    Ok(dataset.select(&picked))
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    fn toy() -> Dataset {
        let labels: Vec<usize> = (0..103).map(|i| if i < 60 { 0 } else if i < 90 { 1 } else { 2 }).collect();
        let images = Array2::from_shape_fn((103, 1), |(i, _)| i as f64);
        Dataset::new(images, labels, 3, "toy", "train").unwrap()
    }

    #[test]
    fn full_size_is_a_permutation() {
        let ds = toy();
        let s = subset(&ds, ds.len(), 1).unwrap();
        let mut ids: Vec<i64> = s.images.column(0).iter().map(|&v| v as i64).collect();
        ids.sort();
        assert_eq!(ids, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn one_per_class() {
        let s = subset(&toy(), 3, 4).unwrap();
        let mut l = s.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn proportions_and_determinism() {
        let ds = toy();
        let a = subset(&ds, 50, 9).unwrap();
        assert_eq!(a, subset(&ds, 50, 9).unwrap());
        assert_ne!(a, subset(&ds, 50, 10).unwrap());
        for (k, size) in [(0usize, 60.0), (1, 30.0), (2, 13.0)] {
            let got = a.labels.iter().filter(|&&l| l == k).count() as f64;
            assert!((got - size * 50.0 / 103.0).abs() <= 1.0);
        }
        assert!(subset(&ds, 104, 0).is_err());
    }
}
