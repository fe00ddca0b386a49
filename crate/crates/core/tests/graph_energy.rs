use anisocheck::graph_energy::{
    df_psi, df_psi_fd, excess, f_psi, legendre_hadamard_min, mean_curvature_residual, quasiconvexity_gap, random_test_field,
    rank_one_second_derivative, stress_pair, GraphField, GridSpec,
};
use anisocheck::integrand::{resolve, Integrand};
use anisocheck::sampling::rng_for;
use anisocheck::Dims;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn area(m: usize, n: usize) -> Integrand {
    Integrand::area(Dims::new(m + n, m).unwrap())
}

/// `F = √det(I + XᵗX)` and `DF = F·X(I + XᵗX)⁻¹`, by hand.
fn area_oracle(x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let g = DMatrix::identity(x.ncols(), x.ncols()) + x.transpose() * x;
    let f = g.determinant().sqrt();
    (f, x * g.try_inverse().unwrap() * f)
}

#[test]
fn affine_graphs_are_flat_in_higher_codimension() {
    let spec = GridSpec::cube(2, 2, 17, -1.0, 1.0).unwrap();
    let u = GraphField::from_fn(spec, |x| vec![0.3 * x[0] - 0.1 * x[1] + 2.0, 0.05 * x[0] + 0.2 * x[1]]).unwrap();
    let psi = resolve("perturbed-area:0.05:3", Dims::new(4, 2).unwrap()).unwrap();
    let h = mean_curvature_residual(&psi, &u).unwrap();
    let defined: Vec<_> = h.iter().flatten().collect();
    assert!(!defined.is_empty());
    assert!(defined.iter().all(|v| v.norm() <= 1e-8));
    assert!(excess(&u, &[0.0, 0.0], 0.5).unwrap() <= 1e-26);
}

#[test]
fn stress_pair_matches_area_oracle() {
    let mut rng = rng_for(3, 0);
    for (m, n) in [(2, 1), (2, 2), (1, 3)] {
        let psi = area(m, n);
        for _ in 0..20 {
            let x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let (f, df) = area_oracle(&x);
            assert!((f_psi(&psi, &x).unwrap() - f).abs() <= 1e-12);
            assert!((df_psi(&psi, &x).unwrap() - &df).norm() <= 1e-7);
            let (b, a) = stress_pair(&psi, &x).unwrap();
            assert!((a - &df).norm() <= 1e-7);
            let want_b = x.transpose() * &df - DMatrix::identity(m, m) * f;
            assert!((b - want_b).norm() <= 1e-7);
        }
    }
}

#[test]
fn stress_block_matches_difference_quotients() {
    let mut rng = rng_for(4, 0);
    let cases = [
        ("perturbed-area:0.2:3", Dims::new(3, 2).unwrap()),
        ("perturbed-area:0.2:5", Dims::new(4, 2).unwrap()),
        ("lp-pluecker:1.5", Dims::new(4, 2).unwrap()),
        ("lp-pluecker:3", Dims::new(4, 2).unwrap()),
    ];
    for (label, dims) in cases {
        let psi = resolve(label, dims).unwrap();
        for _ in 0..20 {
            let x = DMatrix::from_fn(dims.codim(), dims.plane, |_, _| rng.random_range(-1.0..1.0));
            let exact = df_psi(&psi, &x).unwrap();
            let approx = df_psi_fd(&psi, &x).unwrap();
            assert!((exact - approx).norm() <= 1e-6, "{label}");
        }
    }
}

#[test]
fn rank_one_curvature_of_area_at_flat_slope() {
    // t ↦ √(1 + t²|a|²|b|²) has second derivative |a|²|b|² at t = 0.
    let psi = area(2, 2);
    let x = DMatrix::zeros(2, 2);
    let v = rank_one_second_derivative(&psi, &x, &[0.6, 0.8], &[1.0, 0.0]).unwrap();
    assert!((v - 1.0).abs() <= 1e-4);
    assert!((legendre_hadamard_min(&psi, &x).unwrap() - 1.0).abs() <= 1e-4);
}

#[test]
fn gridfield_text_round_trip_is_exact() {
    let spec = GridSpec::new(2, 2, vec![5, 7], 0.1, vec![-0.3, 0.2]).unwrap();
    let u = GraphField::from_fn(spec, |x| vec![(3.0 * x[0]).sin() / 7.0, x[1].exp() * 0.1]).unwrap();
    let back = GraphField::from_text(&u.to_text()).unwrap();
    assert_eq!(back.spec(), u.spec());
    for i in 0..u.spec().len() {
        assert_eq!(back.value(i), u.value(i));
    }
    assert!(GraphField::from_text("gridfield 2 1 3 3 spacing=0.5 origin=0,0\n1\n2\n").is_err());
    assert!(GraphField::from_text("nonsense").is_err());
}

#[test]
fn grid_indexing_is_row_major_with_last_axis_fastest() {
    let spec = GridSpec::new(2, 1, vec![3, 4], 1.0, vec![0.0, 0.0]).unwrap();
    assert_eq!(spec.multi(1), vec![0, 1]);
    assert_eq!(spec.multi(4), vec![1, 0]);
    assert_eq!(spec.flat(&[2, 3]), 11);
    assert_eq!(spec.coords(5), vec![1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn area_is_quasiconvex_on_test_fields(seed in any::<u64>(), a in -0.5f64..0.5, b in -0.5f64..0.5) {
        let grid = GridSpec::cube(2, 1, 17, 0.0, 1.0).unwrap();
        let phi = random_test_field(&grid, seed).unwrap();
        let slope = DMatrix::from_row_slice(1, 2, &[a, b]);
        prop_assert!(quasiconvexity_gap(&area(2, 1), &slope, &phi, 1.0).unwrap() >= -1e-8);
    }

    #[test]
    fn legendre_hadamard_is_positive_for_area(seed in any::<u64>()) {
        let mut rng = rng_for(seed, 0);
        let x = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
        prop_assert!(legendre_hadamard_min(&area(2, 1), &x).unwrap() > 0.0);
    }
}
