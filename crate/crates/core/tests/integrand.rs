use anisocheck::grassmann::{complement, sample_plane};
use anisocheck::integrand::{
    dual_stress, pairing, perturbed_area, resolve, stress, Integrand, SmoothPerturbation,
};
use anisocheck::sampling::rng_for;
use anisocheck::{Dims, Error, Plane};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn g42() -> Dims {
    Dims::new(4, 2).unwrap()
}

fn a_of(psi: &Integrand, t: &Plane) -> DMatrix<f64> {
    let b = stress(psi, t).unwrap();
    b.matrix - t.matrix() * b.psi_value
}

fn registry() -> Vec<Integrand> {
    let d = g42();
    vec![
        Integrand::area(d),
        resolve("perturbed-area:0.01:4", d).unwrap(),
        resolve("lp-pluecker:1.5", d).unwrap(),
        resolve("lp-pluecker:2", d).unwrap(),
        resolve("lp-pluecker:3", d).unwrap(),
        resolve("perturbed-area:0.05:1", Dims::new(5, 2).unwrap()).unwrap(),
        resolve("perturbed-area:0.05:2", Dims::new(3, 1).unwrap()).unwrap(),
    ]
}

#[test]
fn linear_perturbation_matches_extension_oracle() {
    // Ψ = 1 + ε⟨T,D⟩ extends linearly to all matrices, with Euclidean gradient εD,
    // so B = ΨT + 2ε T^⊥ D T.
    for dims in [g42(), Dims::new(5, 3).unwrap()] {
        let mut rng = rng_for(21, 0);
        let g = DMatrix::from_fn(dims.ambient, dims.ambient, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let d = (&g + g.transpose()) * 0.05;
        let phi = SmoothPerturbation::linear(d.clone());
        let eps = 0.3;
        let psi = perturbed_area(dims, move |t| phi.value(t), eps, "linear").unwrap();
        for _ in 0..20 {
            let t = sample_plane(&mut rng, dims);
            let value = 1.0 + eps * t.matrix().component_mul(&d).sum();
            let oracle = t.matrix() * value + t.perp() * &d * t.matrix() * (2.0 * eps);
            let b = stress(&psi, &t).unwrap();
            assert!((b.matrix - oracle).norm() <= 1e-7);
        }
    }
}

#[test]
fn stress_identities_for_registry() {
    for psi in registry() {
        let dims = psi.dims();
        let (m, n) = (dims.plane as f64, dims.codim() as f64);
        let mut rng = rng_for(5, 0);
        for _ in 0..100 {
            let t = sample_plane(&mut rng, dims);
            let s = sample_plane(&mut rng, dims);
            let bt = stress(&psi, &t).unwrap();
            assert!((bt.matrix.trace() - m * bt.psi_value).abs() <= 1e-8 * (1.0 + bt.psi_value.abs()), "{}", psi.label());

            let bs = stress(&psi, &s).unwrap();
            let ds = dual_stress(&psi, &s).unwrap();
            assert!((bs.matrix.transpose() * &ds.matrix).norm() <= 1e-8, "{}", psi.label());
            assert!((ds.matrix.trace() - n * ds.psi_value).abs() <= 1e-8 * (1.0 + ds.psi_value.abs()));

            let (at, as_) = (a_of(&psi, &t), a_of(&psi, &s));
            let lhs = t.matrix().component_mul(&as_.transpose()).sum()
                - at.component_mul(&s.perp()).sum();
            let rhs = -(&at - &as_).component_mul(&(t.matrix() - s.matrix())).sum();
            assert!((lhs - rhs).abs() <= 1e-7, "{}", psi.label());

            assert!(pairing(&psi, &t, &t).unwrap().abs() <= 1e-8);
        }
    }
}

#[test]
fn area_pairing_is_half_squared_distance() {
    let psi = Integrand::area(Dims::new(6, 2).unwrap());
    let mut rng = rng_for(8, 0);
    for _ in 0..100 {
        let t = sample_plane(&mut rng, psi.dims());
        let s = sample_plane(&mut rng, psi.dims());
        let want = 0.5 * (t.matrix() - s.matrix()).norm_squared();
        assert!((pairing(&psi, &t, &s).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn finite_differences_agree_with_closed_forms() {
    let mut rng = rng_for(13, 0);
    for p in [1.5, 2.0, 3.0, 4.0] {
        let psi = resolve(&format!("lp-pluecker:{p}"), g42()).unwrap();
        let fd = psi.without_closed_form();
        for _ in 0..100 {
            let t = sample_plane(&mut rng, g42());
            let exact = stress(&psi, &t).unwrap().matrix;
            let approx = stress(&fd, &t).unwrap().matrix;
            assert!((exact - approx).norm() <= 1e-5, "p = {p}");
        }
    }
}

#[test]
fn dual_integrand_is_evaluated_on_complements() {
    let psi = resolve("perturbed-area:0.1:3", g42()).unwrap();
    let t = sample_plane(&mut rng_for(2, 0), g42());
    let d = dual_stress(&psi, &t).unwrap();
    assert!((d.psi_value - psi.evaluate(&t).unwrap()).abs() == 0.0);
    let c = complement(&t);
    // B_{Ψ*}(S^⊥)·S^⊥ = B_{Ψ*}(S^⊥), as B_Ψ(T)·T = B_Ψ(T)
    assert!((&d.matrix * c.matrix() - &d.matrix).norm() <= 1e-12);
    let b = stress(&psi, &t).unwrap();
    assert!((&b.matrix * t.matrix() - &b.matrix).norm() <= 1e-12);
}

#[test]
fn registry_errors() {
    assert!(matches!(resolve("cubic", g42()), Err(Error::UnknownIntegrand(_))));
    assert!(resolve("lp-pluecker:3", Dims::new(5, 2).unwrap()).is_err());
    assert!(resolve("lp-pluecker:1", g42()).is_err());
    assert!(resolve("perturbed-area:x:1", g42()).is_err());
    let bad = Integrand::new(g42(), "negative", |t: &Plane| t.matrix()[(0, 0)] - 0.5);
    assert!(matches!(bad, Err(Error::PositivityViolation { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stress_is_linear_in_the_integrand(seed in any::<u64>(), eps in 0.0f64..0.2) {
        let dims = g42();
        let phi = SmoothPerturbation::random(dims, seed);
        let phi2 = phi.clone();
        let one = perturbed_area(dims, move |t| phi.value(t), eps, "one").unwrap();
        let two = perturbed_area(dims, move |t| phi2.value(t), 2.0 * eps, "two").unwrap();
        let t = sample_plane(&mut rng_for(seed, 1), dims);
        let area = t.matrix().clone();
        let b1 = stress(&one, &t).unwrap().matrix - &area;
        let b2 = stress(&two, &t).unwrap().matrix - &area;
        prop_assert!((b2 - b1 * 2.0).norm() <= 1e-8);
    }
}
