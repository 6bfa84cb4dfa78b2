use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn origin_spec(sigma: f64) -> SyntheticSpec {
    SyntheticSpec {
        dim: 2,
        label_dim: 2,
        label_directions: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        base_centers: vec![vec![0.0, 0.0]],
        noise_sigma: sigma,
        samples_per_combo: 50,
        seed: 3,
    }
}

fn mean_of(data: &LabeledDataset, label: &[f64]) -> Vec<f64> {
    let idx = data.indices_with_label(label);
    let d = data.sample_shape()[0];
    let mut m = vec![0.0; d];
    for &i in &idx {
        for j in 0..d {
            m[j] += data.samples.data()[i * d + j];
        }
    }
    m.iter().map(|v| v / idx.len() as f64).collect()
}

#[test]
fn zero_noise_label_one_is_exactly_mu1() {
    let data = make_synthetic(&origin_spec(0.0)).unwrap();
    let idx = data.indices_with_label(&[1.0, 0.0]);
    assert_eq!(idx.len(), 50);
    for i in idx {
        assert_eq!(&data.samples.data()[i * 2..i * 2 + 2], &[1.0, 0.0]);
    }
}

#[test]
fn zero_labels_sit_at_base() {
    let mut spec = origin_spec(0.0);
    spec.base_centers = vec![vec![0.25, -0.5], vec![-0.25, 0.5]];
    let data = make_synthetic(&spec).unwrap();
    let desc = data.descriptor.synthetic().unwrap();
    let idx = data.indices_with_label(&[0.0, 0.0]);
    for (n, i) in idx.into_iter().enumerate() {
        let raw = desc.denormalize(&data.samples.data()[i * 2..i * 2 + 2]);
        let base = &spec.base_centers[n % 2];
        assert!(raw.iter().zip(base).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn mean_difference_matches_directions() {
    let sigma = 0.15;
    let mut spec = SyntheticSpec::standard(2, 2, sigma, 2000, 11);
    spec.seed = 12;
    let data = make_synthetic(&spec).unwrap();
    let scale = data.descriptor.synthetic().unwrap().scale;
    let hi = mean_of(&data, &[1.0, 1.0]);
    let lo = mean_of(&data, &[0.0, 0.0]);
    let tol = 3.0 * sigma / (2000f64).sqrt();
    for j in 0..2 {
        let diff = (hi[j] - lo[j]) * scale;
        assert!((diff - 1.0).abs() < tol, "axis {j}: {diff}");
    }
}

#[test]
fn projection_oracle_recovers_labels() {
    let data = make_synthetic(&SyntheticSpec::standard(3, 2, 0.1, 1000, 5)).unwrap();
    let desc = data.descriptor.synthetic().unwrap().clone();
    for combo in desc.spec.label_combos() {
        let idx = data.indices_with_label(&combo);
        for k in 0..2 {
            let mean: f64 = idx
                .iter()
                .map(|&i| desc.projection(&data.samples.data()[i * 3..i * 3 + 3], k))
                .sum::<f64>()
                / idx.len() as f64;
            assert!((mean - combo[k]).abs() < 3.0 * 0.1 / (1000f64).sqrt() + 1e-12);
        }
    }
}

#[test]
fn more_labels_than_dims_uses_unit_directions() {
    let spec = SyntheticSpec::standard(2, 5, 0.05, 4, 9);
    spec.validate().unwrap();
    let data = make_synthetic(&spec).unwrap();
    assert_eq!(data.len(), 32 * 4);
    assert_eq!(data.label_dim(), 5);
}

#[test]
fn invalid_spec_rejected() {
    let mut spec = origin_spec(0.1);
    spec.label_directions[0] = vec![2.0, 0.0];
    assert!(matches!(
        make_synthetic(&spec),
        Err(DataError::InvalidSpec(_))
    ));
    let mut spec = origin_spec(0.1);
    spec.samples_per_combo = 0;
    assert!(make_synthetic(&spec).is_err());
    let mut spec = origin_spec(-1.0);
    spec.noise_sigma = -1.0;
    assert!(make_synthetic(&spec).is_err());
}

#[test]
fn descriptor_round_trips() {
    let data = make_synthetic(&SyntheticSpec::standard(2, 2, 0.15, 3, 1)).unwrap();
    let json = data.descriptor.to_json();
    assert_eq!(
        DatasetDescriptor::from_json(&json).unwrap(),
        data.descriptor
    );
    let dir = DatasetDescriptor::ImageDir {
        dir: "faces".into(),
        label_file: "faces/labels.csv".into(),
        scale: 64,
        channels: 3,
        label_names: vec!["smiling".into(), "male".into()],
    };
    assert_eq!(DatasetDescriptor::from_json(&dir.to_json()).unwrap(), dir);
}

#[test]
fn noise_in_open_interval_and_deterministic() {
    let mut a = ChaCha8Rng::seed_from_u64(4);
    let mut b = ChaCha8Rng::seed_from_u64(4);
    let x: Tensor<f64> = sample_noise(&mut a, 64, 50);
    let y: Tensor<f64> = sample_noise(&mut b, 64, 50);
    assert_eq!(x, y);
    assert_eq!(x.shape(), &[64, 50]);
    assert!(x.data().iter().all(|v| *v > -1.0 && *v < 1.0));
}

#[test]
fn noise_mean_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Tensor<f64> = sample_noise(&mut rng, 1000, 100);
    let mean = x.data().iter().sum::<f64>() / x.numel() as f64;
    assert!(mean.abs() < 0.01, "{mean}");
}

#[test]
fn ten_samples_batch_three() {
    let b = epoch_batches(10, 3, 0, 0).unwrap();
    assert_eq!(b.len(), 3);
    assert!(b.iter().all(|x| x.len() == 3));
    assert_eq!(b, epoch_batches(10, 3, 0, 0).unwrap());
    assert_ne!(b, epoch_batches(10, 3, 0, 1).unwrap());
}

#[test]
fn batch_larger_than_data_rejected() {
    assert!(matches!(
        epoch_batches(10, 11, 0, 0),
        Err(DataError::BatchTooLarge { batch: 11, len: 10 })
    ));
    assert!(matches!(
        epoch_batches(10, 0, 0, 0),
        Err(DataError::ZeroBatch)
    ));
}

proptest! {
    #[test]
    fn epoch_is_duplicate_free(len in 1usize..200, bs in 1usize..50, seed: u64, epoch in 0u64..100) {
        prop_assume!(bs <= len);
        let b = epoch_batches(len, bs, seed, epoch).unwrap();
        prop_assert_eq!(b.len(), len / bs);
        let mut seen = HashSet::new();
        for i in b.iter().flatten() {
            prop_assert!(*i < len);
            prop_assert!(seen.insert(*i));
        }
    }

    #[test]
    fn synthetic_samples_bounded(sigma in 0.0f64..2.0, seed: u64, dim in 1usize..4, k in 1usize..4) {
        let data = make_synthetic(&SyntheticSpec::standard(dim, k, sigma, 5, seed)).unwrap();
        prop_assert!(data.samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(data.samples.shape()[0], data.labels.shape()[0]);
    }

    #[test]
    fn area_resize_preserves_constant(h in 1usize..20, w in 1usize..20, oh in 1usize..20, ow in 1usize..20, v in 0.0f64..255.0) {
        let out = area_resize(&vec![v; h * w * 2], h, w, 2, oh, ow);
        prop_assert!(out.iter().all(|x| (x - v).abs() < 1e-9 * (1.0 + v)));
    }
}

#[test]
fn area_resize_halves_by_averaging() {
    let src = [0.0, 2.0, 4.0, 6.0];
    assert_eq!(area_resize(&src, 2, 2, 1, 1, 1), vec![3.0]);
    let up = area_resize(&[1.0, 3.0], 1, 2, 1, 1, 4);
    assert_eq!(up, vec![1.0, 1.0, 3.0, 3.0]);
}

mod images {
    use super::*;
    use std::io::Write;

    fn write_set(dir: &Path, n: usize) -> std::path::PathBuf {
        let labels = dir.join("labels.csv");
        let mut f = std::fs::File::create(&labels).unwrap();
        writeln!(f, "filename,smiling,glasses").unwrap();
        for i in 0..n {
            let name = format!("img{i}.png");
            let img = image::GrayImage::from_fn(12, 12, |x, y| {
                image::Luma([((x + y + i as u32) * 9) as u8])
            });
            img.save(dir.join(&name)).unwrap();
            writeln!(f, "{name},{},{}", i % 2, (i / 2) % 2).unwrap();
        }
        labels
    }

    use std::path::Path;

    #[test]
    fn loads_ten_grayscale() {
        let tmp = tempfile::tempdir().unwrap();
        let labels = write_set(tmp.path(), 10);
        let data = load_image_dataset(tmp.path(), &labels, 8, 1).unwrap();
        assert_eq!(data.len(), 10);
        assert_eq!(data.label_dim(), 2);
        assert_eq!(data.sample_shape(), &[8, 8, 1]);
        assert!(data.samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(&data.labels.data()[2..4], &[1.0, 0.0]);
        let rgb = load_image_dataset(tmp.path(), &labels, 4, 3).unwrap();
        assert_eq!(rgb.sample_shape(), &[4, 4, 3]);
    }

    #[test]
    fn black_image_is_all_minus_one() {
        let tmp = tempfile::tempdir().unwrap();
        image::GrayImage::new(16, 16)
            .save(tmp.path().join("black.png"))
            .unwrap();
        let labels = tmp.path().join("l.csv");
        std::fs::write(&labels, "filename,a\nblack.png,1\n").unwrap();
        let data = load_image_dataset(tmp.path(), &labels, 8, 1).unwrap();
        assert!(data.samples.data().iter().all(|v| *v == -1.0));
    }

    #[test]
    fn empty_directory_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_image_dataset(tmp.path(), &tmp.path().join("l.csv"), 8, 1).unwrap_err();
        assert!(matches!(err, DataError::EmptyDirectory(_)));
    }

    #[test]
    fn bad_rows_report_row_number() {
        let tmp = tempfile::tempdir().unwrap();
        let labels = write_set(tmp.path(), 3);
        let mut text = std::fs::read_to_string(&labels).unwrap();
        text.push_str("img0.png,2,0\n");
        std::fs::write(&labels, &text).unwrap();
        match load_image_dataset(tmp.path(), &labels, 8, 1) {
            Err(DataError::BadRow { row: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        let labels2 = tmp.path().join("m.csv");
        std::fs::write(&labels2, "filename,a,b\nimg0.png,1,0\nnope.png,0,0\n").unwrap();
        match load_image_dataset(tmp.path(), &labels2, 8, 1) {
            Err(DataError::MissingImage { row: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let labels3 = tmp.path().join("n.csv");
        std::fs::write(&labels3, "filename,a,b\nimg0.png,1\n").unwrap();
        match load_image_dataset(tmp.path(), &labels3, 8, 1) {
            Err(DataError::BadRow { row: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
