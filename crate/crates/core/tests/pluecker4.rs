use anisocheck::grassmann::sample_frame;
use anisocheck::pluecker4::{
    dims, lp_b, lp_integrand, plane_of, plucker_residual, subminor_analysis, two_vector_of, wedge, EvenMeasure4,
    TwoVector, DET_FLOOR, PAIRS,
};
use anisocheck::sampling::rng_for;
use anisocheck::Plane;
use nalgebra::{DMatrix, Vector4};
use proptest::prelude::*;

/// 2×2 minors of a 4×2 frame in the order 12, 13, 14, 23, 24, 34.
fn minors(q: &DMatrix<f64>) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        out[k] = q[(i, 0)] * q[(j, 1)] - q[(j, 0)] * q[(i, 1)];
    }
    out
}

fn column(q: &DMatrix<f64>, j: usize) -> Vector4<f64> {
    Vector4::new(q[(0, j)], q[(1, j)], q[(2, j)], q[(3, j)])
}

#[test]
fn coordinate_plane() {
    let e = |i: usize| Vector4::from_fn(|k, _| if k == i { 1.0 } else { 0.0 });
    let tau = wedge(&e(0), &e(1)).unwrap();
    assert_eq!(tau.coords(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let p = plane_of(&tau).unwrap();
    let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
    assert!((p.matrix() - want).norm() <= 1e-15);
    assert!(wedge(&e(2), &(e(2) * 3.0)).is_err());
    assert!(TwoVector::new([1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).is_err());
}

#[test]
fn lp_value_matches_minor_oracle() {
    let mut rng = rng_for(4, 0);
    for p in [1.5, 2.0, 3.0, 4.0] {
        let psi = lp_integrand(p).unwrap();
        for _ in 0..200 {
            let q = sample_frame(&mut rng, dims());
            let c = minors(&q);
            let want = c.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            let t = Plane::from_frame(&q).unwrap();
            assert!((psi.evaluate(&t).unwrap() - want).abs() <= 1e-12, "p = {p}");
        }
    }
}

#[test]
fn l2_is_area() {
    let psi = lp_integrand(2.0).unwrap();
    let mut rng = rng_for(6, 0);
    for _ in 0..200 {
        let q = sample_frame(&mut rng, dims());
        let tau = wedge(&column(&q, 0), &column(&q, 1)).unwrap();
        let t = plane_of(&tau).unwrap();
        assert!((psi.evaluate(&t).unwrap() - 1.0).abs() <= 1e-10);
        assert!((lp_b(&tau, 2.0).unwrap() - t.matrix()).norm() <= 1e-10);
    }
}

#[test]
fn dirac_measures_have_small_kernel() {
    let mut rng = rng_for(2, 0);
    for p in [1.5, 3.0] {
        for _ in 0..50 {
            let q = sample_frame(&mut rng, dims());
            let tau = wedge(&column(&q, 0), &column(&q, 1)).unwrap();
            let mu = EvenMeasure4::dirac(tau).unwrap();
            let r = subminor_analysis(&mu, p, 1e-7).unwrap();
            assert!(r.kernel_dim <= 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wedge_satisfies_pluecker_relation(seed in any::<u64>()) {
        let q = sample_frame(&mut rng_for(seed, 0), dims());
        let tau = wedge(&column(&q, 0), &column(&q, 1)).unwrap();
        let c = tau.coords();
        let relation = c[0] * c[5] - c[1] * c[4] + c[2] * c[3];
        prop_assert!(relation.abs() <= 1e-12);
        prop_assert!(plucker_residual(c) <= 1e-12);
        let want = minors(&q);
        for k in 0..6 {
            prop_assert!((c[k] - want[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn minors_recover_the_two_vector(seed in any::<u64>()) {
        let q = sample_frame(&mut rng_for(seed, 1), dims());
        let tau = wedge(&column(&q, 0), &column(&q, 1)).unwrap().normalized();
        let back = two_vector_of(&plane_of(&tau).unwrap()).unwrap();
        let same = tau.coords().iter().zip(back.coords()).all(|(a, b)| (a - b).abs() <= 1e-9);
        let flipped = tau.coords().iter().zip(back.coords()).all(|(a, b)| (a + b).abs() <= 1e-9);
        prop_assert!(same || flipped);
    }

    #[test]
    fn subminors_are_nonnegative(seed in any::<u64>(), p in prop::sample::select(vec![1.5, 2.0, 3.0, 4.0])) {
        let mu = EvenMeasure4::random(&mut rng_for(seed, 2), 8);
        let r = subminor_analysis(&mu, p, 1e-7).unwrap();
        prop_assert!(r.dets.iter().all(|&d| d >= -DET_FLOOR));
        prop_assert!(r.kernel_dim <= 2);
        prop_assert!(r.rank_at_least_two);
    }
}
