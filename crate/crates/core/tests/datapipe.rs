use cgaf::datapipe::augment::{apply, traditional_augment, AugmentParams};
use cgaf::datapipe::corpus::{generate_synthetic_corpus, CorpusConfig, DEFAULT_COUNTS, MAX_PATIENT_IMAGES};
use cgaf::datapipe::split::{split_by_patient, DEFAULT_RATIOS};
use cgaf::datapipe::{read_dataset, write_dataset, Dataset, LabeledImage, Provenance, NUM_CLASSES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> CorpusConfig {
    CorpusConfig { counts: [40, 9, 17, 3], height: 16, width: 32 }
}

#[test]
fn corpus_is_deterministic_and_honours_counts() {
    let a = generate_synthetic_corpus(11, &small_cfg()).unwrap();
    let b = generate_synthetic_corpus(11, &small_cfg()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.class_counts(), [40, 9, 17, 3]);
    let c = generate_synthetic_corpus(12, &small_cfg()).unwrap();
    assert_ne!(a, c);
    assert!(a.images.iter().all(|i| i.provenance() == Provenance::Real));
}

#[test]
fn default_corpus_shape() {
    let ds = generate_synthetic_corpus(1, &CorpusConfig::default()).unwrap();
    assert_eq!(ds.class_counts(), DEFAULT_COUNTS);
    assert!(ds.images.iter().all(|i| (i.height, i.width) == (32, 64)));
    for (_, &(_, n)) in ds.patients().iter() {
        assert!((4..=MAX_PATIENT_IMAGES).contains(&n), "patient with {n} images");
    }
}

#[test]
fn nearest_class_mean_beats_chance() {
    let ds = generate_synthetic_corpus(5, &CorpusConfig::default()).unwrap();
    let [train, _, test] = split_by_patient(&ds, DEFAULT_RATIOS, 5).unwrap().apply(&ds);
    let dim = train.images[0].pixels.len();
    let mut means = vec![vec![0.0f64; dim]; NUM_CLASSES];
    let counts = train.class_counts();
    for img in &train.images {
        for (m, &p) in means[img.label].iter_mut().zip(&img.pixels) {
            *m += p as f64 / counts[img.label] as f64;
        }
    }
    let correct = test
        .images
        .iter()
        .filter(|img| {
            let d: Vec<f64> = means
                .iter()
                .map(|m| m.iter().zip(&img.pixels).map(|(a, &b)| (a - b as f64).powi(2)).sum())
                .collect();
            let best = (0..NUM_CLASSES).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            best == img.label
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.25, "nearest-mean accuracy {acc}");
}

#[test]
fn split_sizes_within_one_patient_of_targets() {
    let ds = generate_synthetic_corpus(2, &CorpusConfig::default()).unwrap();
    let s = split_by_patient(&ds, DEFAULT_RATIOS, 2).unwrap();
    let total = ds.len() as f64;
    for (k, &size) in s.sizes().iter().enumerate() {
        let target = DEFAULT_RATIOS[k] / 10.0 * total;
        assert!((size as f64 - target).abs() <= MAX_PATIENT_IMAGES as f64, "split {k}: {size} vs {target}");
    }
    let counts = ds.class_counts();
    for class in 0..NUM_CLASSES {
        for k in 0..3 {
            let target = DEFAULT_RATIOS[k] / 10.0 * counts[class] as f64;
            let got = s.histograms[k][class] as f64;
            assert!((got - target).abs() <= MAX_PATIENT_IMAGES as f64, "class {class} split {k}");
        }
    }
    assert_eq!(s, split_by_patient(&ds, DEFAULT_RATIOS, 2).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn splits_are_patient_disjoint(seed in any::<u64>()) {
        let ds = generate_synthetic_corpus(seed, &CorpusConfig { counts: [30, 6, 13, 12], height: 4, width: 4 }).unwrap();
        let s = split_by_patient(&ds, DEFAULT_RATIOS, seed).unwrap();
        for a in 0..3 {
            for b in a + 1..3 {
                prop_assert!(s.patients[a].is_disjoint(&s.patients[b]));
            }
        }
        let parts = s.apply(&ds);
        prop_assert_eq!(parts.iter().map(Dataset::len).sum::<usize>(), ds.len());
    }
}

fn gray(v: f32) -> LabeledImage {
    LabeledImage::new(4, 6, vec![v; 72], 0, 0, Provenance::Real).unwrap()
}

#[test]
fn identity_augmentation() {
    let ds = generate_synthetic_corpus(3, &small_cfg()).unwrap();
    let img = &ds.images[0];
    let out = apply(img, &AugmentParams::IDENTITY);
    assert_eq!(out.pixels, img.pixels);
    assert_eq!(out.provenance(), Provenance::Augmented);
    assert_eq!(img.provenance(), Provenance::Real);
}

#[test]
fn double_flip_is_identity() {
    let ds = generate_synthetic_corpus(3, &small_cfg()).unwrap();
    let img = &ds.images[5];
    for (h, v) in [(true, false), (false, true), (true, true)] {
        let p = AugmentParams { hflip: h, vflip: v, ..AugmentParams::IDENTITY };
        let once = apply(img, &p);
        assert_ne!(once.pixels, img.pixels);
        assert_eq!(apply(&once, &p).pixels, img.pixels);
    }
}

#[test]
fn brightness_on_gray() {
    let p = AugmentParams { brightness: 1.2, ..AugmentParams::IDENTITY };
    let out = apply(&gray(0.5), &p);
    assert!(out.pixels.iter().all(|&v| (v - 0.6).abs() < 1e-6));
}

#[test]
fn augmentation_preserves_dims_and_range() {
    let ds = generate_synthetic_corpus(4, &small_cfg()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for img in &ds.images {
        let out = traditional_augment(img, &mut rng);
        assert_eq!((out.height, out.width, out.label), (img.height, img.width, img.label));
        assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(traditional_augment(&ds.images[0], &mut r1), traditional_augment(&ds.images[0], &mut r2));
}

#[test]
fn dataset_directory_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_corpus(8, &small_cfg()).unwrap();
    let [train, val, test] = split_by_patient(&ds, DEFAULT_RATIOS, 8).unwrap().apply(&ds);
    write_dataset(dir.path(), &[("train", &train), ("val", &val), ("test", &test)]).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    // quantized to 8 bits on disk
    for (name, orig) in [("train", &train), ("val", &val), ("test", &test)] {
        let got = &back[name];
        assert_eq!(got.len(), orig.len());
        for (a, b) in got.images.iter().zip(&orig.images) {
            assert_eq!((a.label, a.patient), (b.label, b.patient));
            assert!(a.pixels.iter().zip(&b.pixels).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
    assert!(dir.path().join("train/0").is_dir());
}
