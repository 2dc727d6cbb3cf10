use ndarray::{Array1, Array2};
use proptest::prelude::*;

use rfmkrr::bounds;
use rfmkrr::dataset::{normalize_dense, preprocess, RawDataset};
use rfmkrr::krr::rfm_predict_dual;
use rfmkrr::linalg::min_eigenvalue;
use rfmkrr::{FeatureFamily, FeatureMap, FeatureMode, KernelFamily, KernelSpec, RfmModel};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn vector(n: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(Array1::from)
}

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Rbf), Just(KernelFamily::Laplace), Just(KernelFamily::Angular)]
}

fn kernel(family: KernelFamily, sigma: f64) -> KernelSpec {
    match family {
        KernelFamily::Angular => KernelSpec::angular(),
        f => KernelSpec::new(f, sigma).unwrap(),
    }
}

/// `(K, y)` with `K = GGᵀ`.
fn psd_instance() -> impl Strategy<Value = (Array2<f64>, Array1<f64>)> {
    (1usize..20, 1usize..20)
        .prop_flat_map(|(n, r)| (matrix(n, r), vector(n)))
        .prop_map(|(g, y)| (g.dot(&g.t()), y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocessing_is_idempotent(x in matrix(12, 3), y in vector(12)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        let once = normalize_dense(&x, &y).unwrap();
        let twice = normalize_dense(&once.x, &once.y).unwrap();
        let dx = (&once.x - &twice.x).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let dy = (&once.y - &twice.y).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(dx < 1e-12 && dy < 1e-12);
        prop_assert!(once.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn gram_matrices_are_symmetric_psd_with_unit_diagonal(
        x in matrix(8, 3), f in family(), sigma in 0.3..4.0f64,
    ) {
        let k = kernel(f, sigma).matrix(&x).unwrap();
        let n = k.nrows() as f64;
        for i in 0..k.nrows() {
            prop_assert!((k[[i, i]] - 1.0).abs() < 1e-12);
            for j in 0..k.ncols() {
                prop_assert_eq!(k[[i, j]], k[[j, i]]);
                prop_assert!(k[[i, j]].abs() <= 1.0 + 1e-12);
            }
        }
        prop_assert!(min_eigenvalue(k.view()).unwrap() > -1e-9 * n);
        prop_assert!(rfmkrr::linalg::max_eigenvalue(k.view()).unwrap() <= n + 1e-9);
    }

    #[test]
    fn primal_and_dual_predictions_agree(
        x in matrix(10, 2), x_test in matrix(4, 2), y in vector(10),
        f in family(), s in 1usize..25, seed: u64, log_lambda in -3.0..0.0f64,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let fm = FeatureMap::for_kernel(&kernel(f, 1.0), 2, s, seed, FeatureMode::Unbiased).unwrap();
        let dual = rfm_predict_dual(&fm, &x, &y, lambda, &x_test).unwrap();
        let primal = RfmModel::fit(fm, &x, &y, lambda).unwrap().predict(&x_test).unwrap();
        for (a, b) in primal.iter().zip(dual.iter()) {
            prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn features_respect_their_bound(
        x in matrix(6, 4), fam in prop_oneof![
            Just(FeatureFamily::FourierRbf), Just(FeatureFamily::FourierLaplace), Just(FeatureFamily::RandomSign)
        ],
        mode in prop_oneof![Just(FeatureMode::Unbiased), Just(FeatureMode::PaperExact)],
        seed: u64,
    ) {
        let fm = FeatureMap::draw(fam, 4, 30, 1.3, seed, mode).unwrap();
        for row in x.rows() {
            let raw = fm.raw_features(row).unwrap();
            prop_assert!(raw.iter().all(|v| v * v <= fm.b() + 1e-12));
        }
        if fam == FeatureFamily::RandomSign {
            for col in fm.directions().columns() {
                prop_assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn core_norm_is_capped_and_dominates_lower((k, y) in psd_instance(), log_lambda in -4.0..1.0f64, s in 1usize..300) {
        let lambda = 10f64.powf(log_lambda);
        let core = bounds::core_norm(&k, &y, lambda).unwrap();
        prop_assert!(core <= bounds::cap(&y, lambda) * (1.0 + 1e-10));
        let lower = bounds::lower_quantity(&k, &y, lambda, s).unwrap();
        prop_assert!(lower <= bounds::plot_bound(&k, &y, lambda, s).unwrap() + 1e-12);
    }

    #[test]
    fn core_norm_shrinks_as_lambda_grows((k, y) in psd_instance(), log_lambda in -4.0..1.0f64) {
        let lambda = 10f64.powf(log_lambda);
        let a = bounds::core_norm(&k, &y, lambda).unwrap();
        let b = bounds::core_norm(&k, &y, 2.0 * lambda).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-10) + 1e-300);
    }

    #[test]
    fn dual_and_eigen_core_norms_agree((k, y) in psd_instance(), log_lambda in -2.0..1.0f64) {
        let lambda = 10f64.powf(log_lambda);
        let alpha = rfmkrr::krr::dual_coefficients(&k, &y, lambda).unwrap();
        let eigen = bounds::core_norm(&k, &y, lambda).unwrap();
        let dual = bounds::core_norm_from_dual(&k, &alpha);
        prop_assert!((eigen - dual).abs() <= 1e-8 * eigen.max(1e-12));
    }
}

#[test]
fn libsvm_preprocessing_matches_dense_route() {
    let raw: RawDataset = rfmkrr::dataset::parse_libsvm_str("3 1:1 3:2\n1 2:5\n-2 1:-1 2:1 3:4\n").unwrap();
    let (x, y) = raw.densify();
    assert_eq!(preprocess(&raw).unwrap(), normalize_dense(&x, &y).unwrap());
}
