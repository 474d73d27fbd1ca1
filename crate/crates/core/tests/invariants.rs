use std::collections::BTreeMap;

use geoprior::dataio::{longtail_counts, read_binary, read_csv, write_binary, write_csv, FeatureSet};
use geoprior::fur::{compose_balanced_batch, fur_translate, FurConfig, HeadDonors, Provenance};
use geoprior::geometry::{alignment_matrix, geometry_similarity, GeometryBasis};
use geoprior::linalg::{covariance, sym_eigen, Matrix, SymMatrix};
use geoprior::model::{FrozenGroups, Model, ModelConfig, Sgd};
use geoprior::randvec::{angle_pdf, inner_product_cdf, inner_product_pdf, sample_orthonormal_basis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sym(dim: usize, seed: u64) -> SymMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    SymMatrix::from_upper(dim, |i, j| vals[i * dim + j]).unwrap()
}

fn random_basis(class: u32, dim: usize, seed: u64) -> GeometryBasis<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..3 * dim)
        .map(|_| (0..dim).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    GeometryBasis::from_rows(class, &refs, dim, true).unwrap()
}

/// Two head classes (0, 1) and two tail classes (2, 3) in `dim` dimensions.
fn toy_dataset(dim: usize, seed: u64) -> (FeatureSet<f64>, HeadDonors<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = [40usize, 30, 5, 3];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            rows.push((0..dim).map(|j| rng.random_range(-1.0..1.0) + if j == c { 2.0 } else { 0.0 }).collect());
            labels.push(c as u32);
        }
    }
    let set = FeatureSet::from_rows(&rows, labels).unwrap();
    let mut geometries = BTreeMap::new();
    for h in [0u32, 1] {
        geometries.insert(h, GeometryBasis::from_rows(h, &set.rows_of(h), dim, true).unwrap());
    }
    let donors = HeadDonors { matching: BTreeMap::from([(2, 0), (3, 1)]), geometries };
    (set, donors)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_reconstructs_orthonormal_and_preserves_trace(dim in 1usize..24, seed in any::<u64>()) {
        let s = random_sym(dim, seed);
        let e = sym_eigen(&s).unwrap();
        let scale = s.frobenius_norm().max(1.0);
        let diff = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| (e.reconstruct().get(i, j) - s.get(i, j)).abs())
            .fold(0.0, f64::max);
        prop_assert!(diff <= 1e-9 * scale, "reconstruction error {diff}");
        let v = e.vectors();
        let vtv = v.transpose().matmul(v).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((vtv.get(i, j) - want).abs() < 1e-10);
            }
        }
        let sum: f64 = e.values().iter().sum();
        prop_assert!((sum - s.trace()).abs() <= 1e-10 * scale);
        prop_assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_is_deterministic(dim in 1usize..16, seed in any::<u64>()) {
        let s = random_sym(dim, seed);
        let a = sym_eigen(&s).unwrap();
        let b = sym_eigen(&s).unwrap();
        prop_assert_eq!(a.values(), b.values());
        prop_assert_eq!(a.vectors().as_slice(), b.vectors().as_slice());
    }

    #[test]
    fn covariance_is_psd(n in 1usize..40, dim in 1usize..12, centered in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Matrix<f64> = Matrix::from_fn(n, dim, |_, _| rng.random_range(-3.0..3.0));
        let c = covariance(&x, centered).unwrap();
        let e = sym_eigen(&c).unwrap();
        let tol = 1e-9 * c.trace().max(1e-300);
        prop_assert!(e.values().iter().all(|&v| v >= -tol));
    }

    #[test]
    fn similarity_bounds_symmetry_and_sign_invariance(dim in 2usize..16, seed in any::<u64>(), flip in 0usize..16) {
        let a = random_basis(0, dim, seed);
        let b = random_basis(1, dim, seed.wrapping_add(1));
        for top in 1..=dim {
            let s = geometry_similarity(&a, &b, top).unwrap();
            prop_assert!((0.0..=top as f64 + 1e-12).contains(&s));
            prop_assert_eq!(s, geometry_similarity(&b, &a, top).unwrap());
            let flipped = geometry_similarity(&a.with_flipped(flip % dim), &b, top).unwrap();
            prop_assert!((flipped - s).abs() < 1e-12);
            prop_assert!((geometry_similarity(&a, &a, top).unwrap() - top as f64).abs() < 1e-9);
            let m = alignment_matrix(&a, &b).unwrap();
            prop_assert!((m.diagonal_mass(top) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_rows_unit_mass_and_sampled_bases_orthonormal(dim in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Matrix<f64> = sample_orthonormal_basis(dim, &mut rng);
        let a = random_basis(0, dim, seed);
        let b = random_basis(1, dim, seed ^ 0x55);
        let m = alignment_matrix(&a, &b).unwrap();
        for i in 0..dim {
            let sq: f64 = (0..dim).map(|j| m.get(i, j).powi(2)).sum();
            prop_assert!((sq - 1.0).abs() < 1e-9);
        }
        let vtv = basis.transpose().matmul(&basis).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((vtv.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_product_density_symmetry_and_change_of_variables(p in 2usize..200, x in -0.999f64..0.999) {
        let f = inner_product_pdf(p, x).unwrap();
        prop_assert!((f - inner_product_pdf(p, -x).unwrap()).abs() <= 1e-12 * f.max(1.0));
        let theta = x.acos();
        let g = angle_pdf(p, theta).unwrap();
        prop_assert!((g - f * theta.sin()).abs() <= 1e-9 * g.max(1e-300).max(f));
        let c = inner_product_cdf(p, x).unwrap();
        prop_assert!((c + inner_product_cdf(p, -x).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fur_zero_noise_is_identity(dim in 2usize..10, seed in any::<u64>()) {
        let g = random_basis(0, dim, seed);
        let z: Vec<f64> = (0..dim).map(|i| i as f64 * 0.3 - 1.0).collect();
        let out = fur_translate(&z, &g, &vec![0.0; dim], &FurConfig::default()).unwrap();
        prop_assert_eq!(out, z);
    }

    #[test]
    fn balanced_batch_labels_balance_and_determinism(
        dim in 2usize..8, n_t in 1usize..12, n_a in 0usize..5, seed in any::<u64>(),
    ) {
        let (set, donors) = toy_dataset(dim, seed);
        let cfg = FurConfig { n_t, n_a, scale: 0.5, ..FurConfig::default() };
        let draw = |s: u64| compose_balanced_batch(&set, &[2, 3], &[0, 1], &donors, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let batch = draw(seed);
        prop_assert_eq!(batch.len(), 2 * n_t * (1 + n_a));
        let tail = batch.labels.iter().filter(|&&l| l >= 2).count();
        prop_assert_eq!(tail, n_t * (1 + n_a));
        prop_assert_eq!(batch.count(|p| matches!(p, Provenance::RealTail)), n_t);
        prop_assert_eq!(batch.count(|p| matches!(p, Provenance::SyntheticTail { .. })), n_t * n_a);
        for (i, p) in batch.provenance.iter().enumerate() {
            prop_assert_eq!(set.label(batch.dataset_rows[i]), batch.labels[i]);
            match p {
                Provenance::SyntheticTail { source_row } => {
                    prop_assert_eq!(batch.labels[*source_row], batch.labels[i]);
                    prop_assert_eq!(batch.provenance[*source_row], Provenance::RealTail);
                }
                Provenance::RealTail => prop_assert!(batch.labels[i] >= 2),
                Provenance::RealHead => prop_assert!(batch.labels[i] < 2),
            }
        }
        let again = draw(seed);
        prop_assert_eq!(batch.features.as_slice(), again.features.as_slice());
        prop_assert_eq!(batch.labels, again.labels);
    }

    #[test]
    fn csv_and_binary_round_trip(n in 1usize..30, dim in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1e3..1e3)).collect()).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let set = FeatureSet::from_rows(&rows, labels).unwrap();
        let mut buf = Vec::new();
        write_csv(&set, &mut buf, None).unwrap();
        let back: FeatureSet<f64> = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.raw_features(), set.raw_features());
        prop_assert_eq!(back.labels(), set.labels());

        let single = set.cast::<f32>();
        let mut bin = Vec::new();
        write_binary(&single, &mut bin).unwrap();
        let back: FeatureSet<f32> = read_binary(&mut bin.as_slice()).unwrap();
        prop_assert_eq!(back.raw_features(), single.raw_features());
        prop_assert_eq!(back.labels(), single.labels());
    }

    #[test]
    fn longtail_profile(classes in 2usize..60, max in 1usize..5000, imbalance in 1.0f64..500.0) {
        let counts = longtail_counts(classes, max, imbalance);
        prop_assert_eq!(counts.len(), classes);
        prop_assert_eq!(counts[0], max);
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(counts.iter().all(|&c| c >= 1));
        let last = ((max as f64 / imbalance).round() as usize).max(1);
        prop_assert_eq!(counts[classes - 1], last);
    }

    #[test]
    fn frozen_groups_do_not_move(seed in any::<u64>(), freeze_features in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { input_dim: 4, hidden: vec![6], feature_dim: 5, classes: 3 };
        let mut model: Model<f64> = Model::new(&cfg, &mut rng).unwrap();
        let x: Matrix<f64> = Matrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<u32> = (0..12).map(|i| i % 3).collect();
        model.set_frozen(if freeze_features { FrozenGroups::FEATURES } else { FrozenGroups::CLASSIFIER });
        let (f0, c0) = (model.feature_params(), model.classifier_params());
        let mut sgd = Sgd::new(0.9).unwrap();
        for _ in 0..5 {
            sgd.train_step(&mut model, &x, &labels, 0.1).unwrap();
        }
        if freeze_features {
            prop_assert_eq!(model.feature_params(), f0);
            prop_assert_ne!(model.classifier_params(), c0);
        } else {
            prop_assert_eq!(model.classifier_params(), c0);
            prop_assert_ne!(model.feature_params(), f0);
        }
    }
}
