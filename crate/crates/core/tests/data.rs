mod common;

use common::{random_tensor, rng, synthetic_scene};
use ierd_core::data::{add_awgn, load_image, save_image, Dataset, GeometricTransform, ImagePlane, NoiseModel, PatchSampler};
use ierd_core::{Shape, Tensor};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn any_transform() -> impl Strategy<Value = GeometricTransform> {
    (0u8..8).prop_map(|id| GeometricTransform::new(id).unwrap())
}

proptest! {
    #[test]
    fn transforms_round_trip(t in any_transform(), h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let x = random_tensor(&mut rng(seed), Shape::new(2, 3, h, w), 0.0, 1.0);
        let y = t.apply(&x);
        prop_assert_eq!(y.len(), x.len());
        if t.rotations() % 2 == 1 {
            prop_assert_eq!((y.shape().h, y.shape().w), (w, h));
        }
        prop_assert_eq!(t.invert(&y), x);
    }

    #[test]
    fn composition_matches_sequential_application(a in any_transform(), b in any_transform(), seed in any::<u64>()) {
        let x = random_tensor(&mut rng(seed), Shape::new(1, 1, 4, 6), 0.0, 1.0);
        prop_assert_eq!(a.then(b).apply(&x), b.apply(&a.apply(&x)));
    }

    #[test]
    fn images_survive_a_png_round_trip(channels in prop_oneof![Just(1usize), Just(3usize)], h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let bytes: Vec<u8> = (0..channels * h * w).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = ImagePlane::from_u8_interleaved(channels, h, w, &bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for ext in ["png", if channels == 1 { "pgm" } else { "ppm" }] {
            let path = dir.path().join(format!("x.{ext}"));
            save_image(&img, &path).unwrap();
            prop_assert_eq!(&load_image(&path).unwrap(), &img);
        }
    }
}

#[test]
fn transforms_form_a_closed_group() {
    let all: Vec<_> = GeometricTransform::all().collect();
    for &a in &all {
        assert!(all.contains(&a.inverse()));
        assert_eq!(a.then(a.inverse()), GeometricTransform::IDENTITY);
        let row: std::collections::BTreeSet<_> = all.iter().map(|&b| a.then(b)).collect();
        assert_eq!(row.len(), 8, "row of {a:?} is not a permutation");
    }
}

#[test]
fn noise_passes_a_kolmogorov_smirnov_test() {
    let n = 100_000;
    let sigma = 25.0;
    let clean = Tensor::<f32>::full(Shape::new(1, 1, 250, 400), 0.5).unwrap();
    let noisy = add_awgn(&clean, sigma, 1234);
    let mut samples: Vec<f64> = noisy.data().iter().map(|&v| f64::from(v) - 0.5).collect();
    assert_eq!(samples.len(), n);
    samples.sort_by(f64::total_cmp);
    let dist = Normal::new(0.0, f64::from(sigma) / 255.0).unwrap();
    let d = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic 1% critical value of the one-sample statistic
    let critical = 1.6276 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn noise_is_unclamped_and_seeded() {
    let clean = Tensor::<f32>::full(Shape::new(1, 1, 64, 64), 0.0).unwrap();
    let a = add_awgn(&clean, 50.0, 3);
    assert!(a.data().iter().any(|&v| v < 0.0));
    assert_eq!(a, add_awgn(&clean, 50.0, 3));
    assert_ne!(a, add_awgn(&clean, 50.0, 4));
}

#[test]
fn every_patch_can_be_rebuilt_from_its_provenance() {
    let images: Vec<ImagePlane> = (0..3).map(|i| synthetic_scene(i, 40 + 8 * i as usize, 50)).collect();
    let names = (0..3).map(|i| format!("img{i}")).collect();
    let dataset = Dataset::new(images, names).unwrap();
    let sampler = PatchSampler::new(&dataset, 16, 6, NoiseModel::Agnostic { min: 0.0, max: 55.0 }, 99).unwrap();
    for step in [0, 1, 17, 1_000_000] {
        let batch = sampler.batch(step).unwrap();
        assert_eq!(batch.clean.shape(), Shape::new(6, 1, 16, 16));
        for (i, item) in batch.items.iter().enumerate() {
            assert!((0.0..=55.0).contains(&item.sigma));
            let crop = dataset.images()[item.image].crop(item.top, item.left, 16, 16).unwrap();
            let clean = item.transform.apply(&crop.to_tensor());
            let noisy = add_awgn(&clean, item.sigma, item.noise_seed);
            assert_eq!(batch.clean.item(i), clean.data());
            assert_eq!(batch.noisy.item(i), noisy.data());
        }
        let again = sampler.batch(step).unwrap();
        assert_eq!(again.noisy, batch.noisy);
    }
}
