use cgaf::classify::{Classifier, ClassifierConfig};
use cgaf::datapipe::image::SyntheticOrigin;
use cgaf::datapipe::{Dataset, LabeledImage, Provenance};
use cgaf::featfilter::*;
use cgaf::gan::{generate, pool_origins, GanConfig, GanModel};
use cgaf::layers::NormKind;
use cgaf::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureMap {
    FeatureMap::new(c, h, w, data).unwrap()
}

fn random_stack(rng: &mut ChaCha8Rng, dims: &[(usize, usize, usize)]) -> FeatureStack {
    dims.iter()
        .map(|&(c, h, w)| {
            // post-ReLU-like: non-negative with some exact zeros
            let data = (0..c * h * w).map(|_| rng.gen_range(-0.5f64..2.0).max(0.0)).collect();
            map(c, h, w, data)
        })
        .collect()
}

/// Direct transcription of the distance with explicit (l, h, w, a) loops.
fn distance_oracle(x: &FeatureStack, c: &FeatureStack) -> f64 {
    let mut total = 0.0;
    for (mx, mc) in x.iter().zip(c) {
        let (a_n, h_n, w_n) = (mx.channels, mx.height, mx.width);
        let mut layer = 0.0;
        for h in 0..h_n {
            for w in 0..w_n {
                let at = |m: &FeatureMap, a: usize| m.data[(a * h_n + h) * w_n + w];
                let mut nx = 0.0;
                let mut nc = 0.0;
                for a in 0..a_n {
                    nx += at(mx, a) * at(mx, a);
                    nc += at(mc, a) * at(mc, a);
                }
                let (nx, nc) = (nx.sqrt().max(1e-12), nc.sqrt().max(1e-12));
                for a in 0..a_n {
                    let d = at(mx, a) / nx - at(mc, a) / nc;
                    layer += d * d;
                }
            }
        }
        total += layer / (h_n * w_n) as f64;
    }
    total
}

const DIMS: [(usize, usize, usize); 3] = [(4, 3, 5), (6, 2, 2), (3, 1, 1)];

#[test]
fn unit_normalization_per_location() {
    let m = map(2, 1, 2, vec![3.0, 0.0, 4.0, 0.0]);
    let n = unit_normalize(&m);
    assert!((n.data[0] - 0.6).abs() < 1e-15 && (n.data[2] - 0.8).abs() < 1e-15);
    // the all-zero location stays zero
    assert_eq!((n.data[1], n.data[3]), (0.0, 0.0));
    let unit = map(2, 1, 1, vec![0.6, 0.8]);
    assert_eq!(unit_normalize(&unit), unit);
    assert!(FeatureMap::new(2, 2, 2, vec![0.0; 7]).is_err());
}

#[test]
fn distance_examples_and_oracle() {
    let a = vec![map(2, 1, 1, vec![1.0, 0.0])];
    let b = vec![map(2, 1, 1, vec![0.0, 1.0])];
    assert!((feature_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
    let wrong = vec![map(3, 1, 1, vec![0.0, 1.0, 0.0])];
    assert!(feature_distance(&a, &wrong).is_err());
    assert!(feature_distance(&a, &[]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x = random_stack(&mut rng, &DIMS);
        let c = random_stack(&mut rng, &DIMS);
        let d = feature_distance(&x, &c).unwrap();
        assert!((d - distance_oracle(&x, &c)).abs() < 1e-6);
        assert!((0.0..=4.0 * DIMS.len() as f64).contains(&d));
        assert!((d - feature_distance(&c, &x).unwrap()).abs() < 1e-12);

        // rescale every raw location vector by its own positive factor
        let mut scaled = x.clone();
        for m in &mut scaled {
            let hw = m.height * m.width;
            for p in 0..hw {
                let s = rng.gen_range(0.01..100.0);
                for a in 0..m.channels {
                    m.data[a * hw + p] *= s;
                }
            }
        }
        assert!((feature_distance(&scaled, &c).unwrap() - d).abs() < 1e-6);
    }
}

#[test]
fn opposite_vectors_reach_the_upper_bound() {
    let x = vec![map(1, 2, 2, vec![1.0; 4]), map(2, 1, 1, vec![1.0, 0.0])];
    let c = vec![map(1, 2, 2, vec![-3.0; 4]), map(2, 1, 1, vec![-2.0, 0.0])];
    assert!((feature_distance(&x, &c).unwrap() - 8.0).abs() < 1e-12);
}

#[test]
fn centroids_match_accumulate_then_divide() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.gen_range(3..12);
        let stacks: Vec<FeatureStack> = (0..n).map(|_| random_stack(&mut rng, &DIMS)).collect();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        labels[..3].copy_from_slice(&[0, 1, 2]);
        let cents = centroids_from_stacks(labels.iter().copied().zip(&stacks), 3).unwrap();
        for k in 0..3 {
            let members: Vec<&FeatureStack> = stacks.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(s, _)| s).collect();
            assert_eq!(cents[k].class, k);
            assert_eq!(cents[k].count, members.len());
            for (l, m) in cents[k].layers.iter().enumerate() {
                for i in 0..m.data.len() {
                    let mut sum = 0.0;
                    for s in &members {
                        sum += s[l].data[i];
                    }
                    assert!((m.data[i] - sum / members.len() as f64).abs() < 1e-6);
                }
            }
        }
    }
    let one = random_stack(&mut rng, &DIMS);
    let c = centroids_from_stacks([(0, &one)], 1).unwrap();
    assert_eq!(c[0].layers, one);
    let err = centroids_from_stacks([(0, &one)], 2).unwrap_err();
    assert!(matches!(err, Error::MissingClass { class: 1, .. }), "{err}");
}

#[test]
fn scorer_agrees_with_direct_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stacks: Vec<FeatureStack> = (0..6).map(|_| random_stack(&mut rng, &DIMS)).collect();
    let cents = centroids_from_stacks((0..6).map(|i| (i % 2, &stacks[i])), 2).unwrap();
    let scorer = CentroidScorer::new(&cents);
    let x = random_stack(&mut rng, &DIMS);
    for k in 0..2 {
        let want = feature_distance(&x, &cents[k].layers).unwrap();
        assert!((scorer.distance(&x, k).unwrap() - want).abs() < 1e-14);
    }
    assert!(scorer.distance(&x, 2).is_err());
}

fn extractor(seed: u64) -> Classifier<f32> {
    let cfg = ClassifierConfig { widths: vec![4, 8], num_classes: 2, ..ClassifierConfig::default() };
    Classifier::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn noise_images(n: usize, seed: u64, provenance: Provenance) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let px = (0..8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            LabeledImage::new(8, 8, px, i % 2, i as u32, provenance).unwrap()
        })
        .collect()
}

#[test]
fn extraction_requires_a_trained_model_and_ignores_batch_mates() {
    let mut model = extractor(1);
    let images = noise_images(5, 4, Provenance::Real);
    let refs: Vec<&LabeledImage> = images.iter().collect();
    assert!(matches!(extract_features(&model, &refs, &[0, 1]), Err(Error::Untrained)));
    model.set_trained(true);
    assert!(extract_features(&model, &refs, &[2]).is_err());
    assert!(extract_features(&model, &refs, &[]).is_err());

    let all = extract_features(&model, &refs, &[0, 1]).unwrap();
    assert_eq!(all.len(), 5);
    assert_eq!(all[0].len(), 2);
    assert_eq!((all[0][0].channels, all[0][0].height, all[0][0].width), (4, 8, 8));
    assert_eq!((all[0][1].channels, all[0][1].height, all[0][1].width), (8, 4, 4));
    for (i, img) in images.iter().enumerate() {
        let single = extract_features(&model, &[img], &[0, 1]).unwrap();
        for (a, b) in single[0].iter().zip(&all[i]) {
            let diff = a.data.iter().zip(&b.data).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-5, "image {i}: {diff}");
        }
    }
    let twice = extract_features(&model, &[refs[0], refs[0]], &[1]).unwrap();
    assert_eq!(twice[0], twice[1]);
}

#[test]
fn centroids_use_only_real_training_images() {
    let mut model = extractor(2);
    model.set_trained(true);
    let real = noise_images(6, 5, Provenance::Real);
    let base = compute_centroids(&model, &Dataset::new(real.clone()), &[0, 1]).unwrap();
    assert_eq!(base.iter().map(|c| c.count).collect::<Vec<_>>(), [3, 3]);

    let mut mixed = real.clone();
    for (i, img) in noise_images(4, 6, Provenance::Real).into_iter().enumerate() {
        let origin = SyntheticOrigin { class: img.label, index: i as u64, z_seed: 9 };
        mixed.insert(i, LabeledImage::synthetic(8, 8, img.pixels.clone(), origin).unwrap());
        mixed.push(img.augmented(img.pixels.iter().map(|v| 1.0 - v).collect()));
    }
    assert_eq!(compute_centroids(&model, &Dataset::new(mixed), &[0, 1]).unwrap(), base);

    let only_class_0 = Dataset::new(real.into_iter().filter(|i| i.label == 0).collect());
    let err = compute_centroids(&model, &only_class_0, &[0]).unwrap_err();
    assert!(matches!(err, Error::MissingClass { class: 1, .. }), "{err}");
}

fn cand(class: usize, index: u64, distance: f64) -> ScoredCandidate {
    ScoredCandidate { origin: SyntheticOrigin { class, index, z_seed: index * 7 + class as u64 }, distance }
}

#[test]
fn quotas_round_to_nearest_with_ties_down() {
    assert_eq!(quotas(2.0, &[1112, 181, 463, 454]), [2224, 362, 926, 908]);
    assert_eq!(quotas(0.5, &[278, 45, 116, 114]), [139, 22, 58, 57]);
    assert_eq!(quota(0.5, 3), 1);
    assert_eq!(quota(0.6, 3), 2);
    assert_eq!(quota(0.0, 100), 0);
}

#[test]
fn tie_break_example() {
    let pool: Vec<ScoredCandidate> = [0.5, 0.2, 0.9, 0.2].iter().enumerate().map(|(i, &d)| cand(0, i as u64, d)).collect();
    let picked = rank_and_filter(&pool, &[1], 2.0).unwrap();
    assert_eq!(picked.iter().map(|c| c.origin.index).collect::<Vec<_>>(), [1, 3]);
    let all = rank_and_filter(&pool, &[2], 2.0).unwrap();
    assert_eq!(all.len(), 4);
    let err = rank_and_filter(&pool, &[3], 2.0).unwrap_err();
    assert!(matches!(err, Error::PoolTooSmall { class: 0, required: 6, available: 4 }), "{err}");
    assert!(rank_and_filter(&pool, &[1], f64::NAN).is_err());
}

#[test]
fn filtering_matches_a_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let counts: Vec<usize> = (0..3).map(|_| rng.gen_range(1..10)).collect();
        let r = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let mut pool = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            for i in 0..(quota(r, c) + rng.gen_range(0..15)) as u64 {
                // coarse grid: plenty of equal distances
                pool.push(cand(k, i, rng.gen_range(0..8) as f64 / 4.0));
            }
        }
        pool.shuffle(&mut rng);
        let got = rank_and_filter(&pool, &counts, r).unwrap();

        let mut want = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            let mut members: Vec<(f64, u64)> =
                pool.iter().filter(|x| x.origin.class == k).map(|x| (x.distance, x.origin.index)).collect();
            members.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = quota(r, c);
            want.extend(members[..q].iter().map(|&(d, i)| (k, i, d)));

            let sel: Vec<f64> = got.iter().filter(|x| x.origin.class == k).map(|x| x.distance).collect();
            let worst_kept = sel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unselected = members[q..].iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
            assert!(worst_kept <= unselected);
            if !sel.is_empty() {
                let mean_sel = sel.iter().sum::<f64>() / sel.len() as f64;
                let mean_pool = members.iter().map(|m| m.0).sum::<f64>() / members.len() as f64;
                assert!(mean_sel <= mean_pool);
            }
        }
        let got_t: Vec<(usize, u64, f64)> = got.iter().map(|c| (c.origin.class, c.origin.index, c.distance)).collect();
        assert_eq!(got_t, want);

        pool.reverse();
        assert_eq!(rank_and_filter(&pool, &counts, r).unwrap(), got);
    }
}

#[test]
fn unfiltered_selection_takes_the_lowest_indices() {
    let pool: Vec<ScoredCandidate> = (0..6u64).rev().map(|i| cand((i % 2) as usize, i, 1.0 / (i + 1) as f64)).collect();
    let got = first_by_index(&pool, &[1, 1], 2.0).unwrap();
    let idx: Vec<(usize, u64)> = got.iter().map(|c| (c.origin.class, c.origin.index)).collect();
    assert_eq!(idx, [(0, 0), (0, 2), (1, 1), (1, 3)]);
}

#[test]
fn score_file_round_trip() {
    let pool = vec![cand(0, 0, 0.125), cand(0, 1, 1.0 / 3.0), cand(1, 0, 2.5)];
    let selected = rank_and_filter(&pool, &[1, 1], 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    write_scores(&path, &pool, &selected).unwrap();
    let (p, s) = read_scores(&path).unwrap();
    assert_eq!(p, pool);
    assert_eq!(s, selected);
    std::fs::write(&path, "class,index,z_seed,distance,selected\n0,x,1,0.5,true\n").unwrap();
    assert!(read_scores(&path).is_err());
}

#[test]
fn streamed_pool_scores_match_scoring_generated_images() {
    let gan_cfg = GanConfig {
        height: 8,
        width: 8,
        num_classes: 2,
        latent_dim: 6,
        gen_z_width: 6,
        gen_c_width: 2,
        gen_widths: vec![6, 4],
        gen_upsample: vec![(2, 2), (2, 2)],
        gen_out_kernel: 3,
        critic_widths: vec![4, 6],
        critic_strides: vec![(2, 2), (2, 2)],
        critic_norm: NormKind::Layer,
        mb_kernels: 3,
        mb_kernel_dim: 2,
        ..GanConfig::default()
    };
    let gan = GanModel::<f32>::new(gan_cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut model = extractor(3);
    model.set_trained(true);
    let cents = compute_centroids(&model, &Dataset::new(noise_images(8, 1, Provenance::Real)), &[0, 1]).unwrap();
    let scorer = CentroidScorer::new(&cents);

    let origins = pool_origins(11, &[70, 60]);
    let streamed = score_pool(&gan.generator, &model, &scorer, &origins, &[0, 1]).unwrap();
    let images = generate(&gan.generator, &origins, 130).unwrap();
    let refs: Vec<&LabeledImage> = images.iter().collect();
    let direct = score_images(&model, &scorer, &refs, &[0, 1]).unwrap();
    assert_eq!(streamed.len(), 130);
    for (a, b) in streamed.iter().zip(&direct) {
        assert_eq!(a.origin, b.origin);
        assert!((a.distance - b.distance).abs() < 1e-5);
        assert!((0.0..=8.0).contains(&a.distance));
    }
    let real = noise_images(1, 2, Provenance::Real);
    assert!(score_images(&model, &scorer, &[&real[0]], &[0]).is_err());
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
fn jacobi(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..100 {
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut out: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (a[j][j], (0..n).map(|i| v[i][j]).collect())).collect();
    out.sort_by(|x, y| y.0.total_cmp(&x.0));
    out
}

#[test]
fn pca_matches_a_jacobi_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.gen_range(10..40);
        let scale = [3.0, 1.5, 0.4];
        let data: Vec<Vec<f64>> =
            (0..n).map(|_| scale.iter().map(|s| rng.gen_range(-1.0..1.0) * s + 5.0).collect()).collect();
        let mean: Vec<f64> = (0..3).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let eig = jacobi(cov);
        let total: f64 = eig.iter().map(|e| e.0).sum();
        let pca = Pca::fit(&data, 2).unwrap();
        for k in 0..2 {
            assert!((pca.variance[k] - eig[k].0).abs() < 1e-6);
            assert!((pca.explained_ratio[k] - eig[k].0 / total).abs() < 1e-6);
            let align: f64 = pca.components[k].iter().zip(&eig[k].1).map(|(a, b)| a * b).sum();
            assert!((align.abs() - 1.0).abs() < 1e-6, "component {k}: {align}");
            let c = &pca.components[k];
            let big = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
        let coords = project_features(&data).unwrap();
        assert_eq!(coords.len(), n);
        assert_eq!(project_features(&data).unwrap(), coords);
    }
}

#[test]
fn pca_degenerate_inputs() {
    let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    let pca = Pca::fit(&line, 2).unwrap();
    assert!((pca.explained_ratio[0] - 1.0).abs() < 1e-9);
    assert!(pca.explained_ratio[1].abs() < 1e-9);
    let dot: f64 = pca.components[0].iter().zip(&pca.components[1]).map(|(a, b)| a * b).sum();
    assert!(dot.abs() < 1e-9);
    assert!(pca.components[1].iter().map(|x| x * x).sum::<f64>() > 0.99);

    let constant = vec![vec![1.0, 2.0]; 4];
    let p = Pca::fit(&constant, 2).unwrap();
    assert_eq!(p.variance, [0.0, 0.0]);
    assert_eq!(project_features(&constant).unwrap(), vec![[0.0, 0.0]; 4]);

    assert!(Pca::fit(&[], 2).is_err());
    assert!(Pca::fit(&[vec![1.0]], 2).is_err());
    assert!(Pca::fit(&[vec![1.0, 2.0], vec![1.0]], 1).is_err());
    assert!(Pca::fit(&[vec![f64::NAN, 2.0]], 1).is_err());
}
