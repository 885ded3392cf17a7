use fellbundle::bimodule::{Bimodule, FinDimCStar, HilbertModule};
use fellbundle::csalgebra::{algebra_image, operator_norm, sup_norm, Section};
use fellbundle::fellbundle::{compacts_bundle, from_cocycle, validate_fell_bundle, Cocycle};
use fellbundle::groupoid::{cyclic_table, from_group, pair_groupoid, FiniteGroupoid};
use fellbundle::matrixcore::{
    null_space, orthonormal_range, pseudo_inverse, random_matrix, random_unitary, spectral_norm, Tolerance,
};
use fellbundle::morita::{derive_action_sigma, linking_algebra, MoritaCertificate};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerance {
    Tolerance::default()
}

// random phases, 1 on the units so the coboundary is normalized
fn phases(g: &FiniteGroupoid, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.arrows()
        .map(|a| {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            if g.is_unit(a) { Complex64::new(1.0, 0.0) } else { Complex64::from_polar(1.0, t) }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // a coboundary twist of an abelian group algebra is still commutative
    #[test]
    fn coboundary_twists_stay_commutative(n in 2usize..6, seed in any::<u64>()) {
        let g = from_group(&cyclic_table(n)).unwrap();
        let c = phases(&g, seed);
        let e = from_cocycle(&Cocycle::coboundary(g, |a| c[a]), tol()).unwrap();
        let report = validate_fell_bundle(&e, tol()).unwrap();
        prop_assert!(report.saturated);
        let image = algebra_image(&e, tol()).unwrap();
        prop_assert_eq!(image.dim(), n);
        prop_assert_eq!(image.center_dim(tol()), n);
    }

    // compact operators on the sum of the spaces form one full matrix algebra
    #[test]
    fn compacts_bundles_are_simple(dims in prop::collection::vec(1usize..3, 1..4)) {
        let e = compacts_bundle(&dims, tol()).unwrap();
        let report = validate_fell_bundle(&e, tol()).unwrap();
        prop_assert!(report.saturated && report.nondegenerate);
        let total: usize = dims.iter().sum();
        let image = algebra_image(&e, tol()).unwrap();
        prop_assert_eq!(image.dim(), total * total);
        prop_assert_eq!(image.center_dim(tol()), 1);
    }

    #[test]
    fn linking_algebra_dimension_law(sizes in prop::collection::vec(1usize..3, 1..3), seed in any::<u64>()) {
        let n: usize = sizes.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = FinDimCStar::block_diagonal(&sizes).conjugate(&random_unitary(&mut rng, n));
        let l = linking_algebra(&Bimodule::identity(&b), tol()).unwrap();
        prop_assert_eq!(l.image.dim(), 4 * b.dim());
        prop_assert_eq!(l.image.center_dim(tol()), b.center_dim(tol()));

        let text = serde_json::to_string(&l.certificate).unwrap();
        let back: MoritaCertificate = serde_json::from_str(&text).unwrap();
        prop_assert!(back.check(tol()).unwrap().passes());
        prop_assert_eq!(back.corner_dims, vec![b.dim(), b.dim()]);
    }

    // columns C^k are an M_k-C equivalence bimodule, linking algebra M_{k+1}
    #[test]
    fn column_linking_algebra(k in 1usize..5) {
        let c = Bimodule::new(FinDimCStar::matrix_algebra(k), HilbertModule::column(k), tol()).unwrap();
        let l = linking_algebra(&c, tol()).unwrap();
        prop_assert_eq!(l.image.dim(), (k + 1) * (k + 1));
        prop_assert_eq!(l.image.center_dim(tol()), 1);
    }

    #[test]
    fn sigma_is_an_action_on_twisted_pair_groupoids(n in 2usize..4, seed in any::<u64>()) {
        let g = pair_groupoid(n).unwrap();
        let c = phases(&g, seed);
        let e = from_cocycle(&Cocycle::coboundary(g, |a| c[a]), tol()).unwrap();
        let sigma = derive_action_sigma(&e, tol()).unwrap();
        prop_assert!(sigma.max_residual() <= 1e-9);
        prop_assert!(sigma.max_transport_residual() <= 1e-9);
    }

    // sup norm <= reduced norm <= sum of fiber norms
    #[test]
    fn reduced_norm_is_sandwiched(n in 2usize..5, seed in any::<u64>()) {
        let g = pair_groupoid(n).unwrap();
        let c = phases(&g, seed);
        let e = from_cocycle(&Cocycle::coboundary(g, |a| c[a]), tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let f = Section::random(&e, &mut rng);
        let reduced = operator_norm(&f, tol()).unwrap();
        let sum: f64 = f.values().iter().map(spectral_norm).sum();
        prop_assert!(sup_norm(&f) <= reduced * (1.0 + 1e-9));
        prop_assert!(reduced <= sum * (1.0 + 1e-9));
    }

    #[test]
    fn range_null_space_and_pseudo_inverse(rows in 1usize..7, cols in 1usize..7, k in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_matrix(&mut rng, rows, k) * random_matrix(&mut rng, k, cols);
        let r = k.min(rows).min(cols);
        for g in [g.clone(), g.adjoint().qr().r().adjoint()] {
            let q = orthonormal_range(&g, tol());
            prop_assert_eq!(q.ncols(), r);
            prop_assert!((&q * q.adjoint() * &g - &g).norm() < 1e-9);
            let ns = null_space(&g, tol());
            prop_assert_eq!(ns.ncols(), g.ncols() - r);
            prop_assert!((&g * &ns).norm() < 1e-9);
            let pi = pseudo_inverse(&g, tol());
            prop_assert!((&g * &pi * &g - &g).norm() < 1e-9);
        }
    }
}
