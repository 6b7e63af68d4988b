use std::path::{Path, PathBuf};

use bat_core::data::{encode_idx, load_idx, parse_idx, parse_config_str, emit};
use ndarray::Array2;
use proptest::prelude::*;

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn mnist_test_split_has_the_published_shape() {
    let dir = mnist_dir();
    let images = dir.join("t10k-images-idx3-ubyte");
    let labels = dir.join("t10k-labels-idx1-ubyte");
    assert!(
        images.is_file() && labels.is_file(),
        "MNIST IDX files missing under {}; see the README for how to fetch them",
        dir.display()
    );
    let data = load_idx(&images, &labels).unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.dim(), 784);
    assert!(data.labels.iter().all(|&l| l < 10));
    assert!(data.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    for class in 0..10 {
        assert!(data.labels.contains(&class));
    }
}

proptest! {
    #[test]
    fn loaded_pixels_stay_in_the_unit_range(
        pixels in proptest::collection::vec(0u8..=255, 1..64),
        label in 0usize..10,
    ) {
        let d = pixels.len();
        let img = Array2::from_shape_vec((1, d), pixels.iter().map(|&p| f64::from(p) / 255.0).collect()).unwrap();
        let (ib, lb) = encode_idx(&img, 1, d, &[label]);
        let (back, labels) = parse_idx(&ib, Path::new("i"), &lb, Path::new("l")).unwrap();
        prop_assert_eq!(labels, vec![label]);
        for (&v, &p) in back.iter().zip(&pixels) {
            prop_assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            prop_assert_eq!(v, f64::from(p) / 255.0);
        }
    }

    #[test]
    fn emitted_configs_parse_back_unchanged(seed in any::<u64>(), rho in 0.0f64..=1.0, epochs in 1usize..500) {
        let text = format!("seed = {seed}\n[train]\nrho = {rho:?}\nepochs = {epochs}\n");
        let config = parse_config_str(&text).unwrap();
        let emitted = emit(&config).unwrap();
        let again = parse_config_str(&emitted).unwrap();
        prop_assert_eq!(&again, &config);
        prop_assert_eq!(emit(&again).unwrap(), emitted);
    }
}
