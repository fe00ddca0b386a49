//! G(4,2) in Plücker coordinates: simple 2-vectors, integrands of the form
//! `Ψ_G(T) = G(τ/‖τ‖)`, their closed-form stress, and the ℓᵖ family.

use std::fmt;

use nalgebra::{DMatrix, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{kernel_dim, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::grassmann::{Dims, Plane};
use crate::integrand::Integrand;
use crate::sampling::{rng_for, sub_seed};

pub const TOL_PL: f64 = 1e-10;

/// Index pairs (i, j), i < j, in coordinate order v12, v13, v14, v23, v24, v34.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Atoms with some |v_ij| below this are flagged: ℓᵖ is not C² there for p < 2.
pub const NEAR_ZERO_COORDINATE: f64 = 1e-8;

pub fn dims() -> Dims {
    Dims { ambient: 4, plane: 2 }
}

/// A simple 2-vector of ℝ⁴.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoVector {
    coords: [f64; 6],
}

impl fmt::Display for TwoVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.coords;
        write!(f, "({}, {}, {}, {}, {}, {})", c[0], c[1], c[2], c[3], c[4], c[5])
    }
}

fn norm6(c: &[f64; 6]) -> f64 {
    c.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v12·v34 − v13·v24 + v14·v23`.
pub fn plucker_residual(c: &[f64; 6]) -> f64 {
    c[0] * c[5] - c[1] * c[4] + c[2] * c[3]
}

impl TwoVector {
    /// Accepts coordinates satisfying the Plücker relation within `TOL_PL·‖c‖²`.
    pub fn new(coords: [f64; 6]) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                label: "two-vector".into(),
            });
        }
        let residual = plucker_residual(&coords);
        let scale = norm6(&coords).powi(2);
        if residual.abs() > TOL_PL * scale {
            return Err(Error::NotSimple { residual });
        }
        if scale == 0.0 {
            return Err(Error::DependentVectors);
        }
        Ok(TwoVector { coords })
    }

    /// Nearest simple 2-vector in the Frobenius sense: the top rank-2 block
    /// of the antisymmetric coordinate matrix.
    pub fn project_simple(coords: [f64; 6]) -> Result<Self> {
        let v = antisymmetric(&coords);
        let svd = v.svd(true, false);
        let u = svd.u.ok_or(Error::DependentVectors)?;
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let e1 = Vector4::from_iterator(u.column(order[0]).iter().copied());
        let e2 = Vector4::from_iterator(u.column(order[1]).iter().copied());
        let unit = wedge(&e1, &e2)?.normalized();
        let scale: f64 = unit.coords.iter().zip(&coords).map(|(a, b)| a * b).sum();
        if scale.abs() <= TOL_PL {
            return Err(Error::DependentVectors);
        }
        Ok(TwoVector {
            coords: unit.coords.map(|x| x * scale),
        })
    }

    pub fn coords(&self) -> &[f64; 6] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        norm6(&self.coords)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= TOL_PL
    }

    pub fn normalized(&self) -> TwoVector {
        let n = self.norm();
        TwoVector {
            coords: self.coords.map(|x| x / n),
        }
    }

    pub fn neg(&self) -> TwoVector {
        TwoVector {
            coords: self.coords.map(|x| -x),
        }
    }

    /// Representative of ±τ whose first coordinate above `TOL_PL` is positive.
    pub fn canonical(&self) -> TwoVector {
        match self.coords.iter().find(|x| x.abs() > TOL_PL) {
            Some(&x) if x < 0.0 => self.neg(),
            _ => *self,
        }
    }

    /// Antisymmetric 4×4 matrix `V` with `V_ij = v_ij` for i < j.
    pub fn antisymmetric(&self) -> DMatrix<f64> {
        antisymmetric(&self.coords)
    }

    pub fn min_abs_coordinate(&self) -> f64 {
        self.coords.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs()))
    }
}

fn antisymmetric(c: &[f64; 6]) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(4, 4);
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        v[(i, j)] = c[k];
        v[(j, i)] = -c[k];
    }
    v
}

/// `v1 ∧ v2` in Plücker coordinates.
pub fn wedge(v1: &Vector4<f64>, v2: &Vector4<f64>) -> Result<TwoVector> {
    let mut coords = [0.0; 6];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        coords[k] = v1[i] * v2[j] - v1[j] * v2[i];
    }
    let scale = (v1.norm() * v2.norm()).max(1.0);
    if norm6(&coords) <= TOL_PL * scale {
        return Err(Error::DependentVectors);
    }
    Ok(TwoVector { coords })
}

/// Orthogonal projection onto the plane of `τ`: `V Vᵗ / ‖τ‖²`.
pub fn plane_of(tau: &TwoVector) -> Result<Plane> {
    let residual = plucker_residual(&tau.coords);
    if residual.abs() > TOL_PL * tau.norm().powi(2) {
        return Err(Error::NotSimple { residual });
    }
    let v = tau.antisymmetric();
    let p = &v * v.transpose() / tau.norm().powi(2);
    Plane::new(p, 2)
}

/// Unit 2-vector of a plane (up to sign), read off the 2×2 minors of `T`:
/// `det T[I,J] = v_I v_J` by Cauchy–Binet.
pub fn two_vector_of(t: &Plane) -> Result<TwoVector> {
    if t.dims() != dims() {
        return Err(Error::mismatch(dims(), t.dims()));
    }
    let m = t.matrix();
    let minor = |(i, j): (usize, usize), (k, l): (usize, usize)| {
        m[(i, k)] * m[(j, l)] - m[(i, l)] * m[(j, k)]
    };
    let (pivot, d) = PAIRS
        .iter()
        .map(|&p| (p, minor(p, p)))
        .fold(((0, 1), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let root = d.sqrt();
    let mut coords = [0.0; 6];
    for (k, &pair) in PAIRS.iter().enumerate() {
        coords[k] = minor(pair, pivot) / root;
    }
    Ok(TwoVector { coords }.normalized().canonical())
}

/// An even, 1-homogeneous function on ℝ⁶ defining `Ψ_G`.
pub trait PlueckerNorm: Send + Sync {
    fn label(&self) -> String;
    fn value(&self, x: &[f64; 6]) -> f64;
    /// Partial derivatives `∂_(ij)G`, when available in closed form.
    fn gradient(&self, _x: &[f64; 6]) -> Option<[f64; 6]> {
        None
    }
}

/// The ℓᵖ norm on Plücker coordinates, 1 < p < ∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpNorm {
    p: f64,
}

impl LpNorm {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Usage(format!("ℓᵖ exponent must lie in (1, ∞), got {p}")));
        }
        Ok(LpNorm { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// `sign(t)|t|^e` with `sign(0) = 0`.
fn signed_pow(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(e)
    }
}

impl PlueckerNorm for LpNorm {
    fn label(&self) -> String {
        format!("lp-pluecker:{}", self.p)
    }

    fn value(&self, x: &[f64; 6]) -> f64 {
        if self.p == 2.0 {
            return norm6(x);
        }
        x.iter().map(|t| t.abs().powf(self.p)).sum::<f64>().powf(1.0 / self.p)
    }

    fn gradient(&self, x: &[f64; 6]) -> Option<[f64; 6]> {
        let g = self.value(x);
        if g == 0.0 {
            return None;
        }
        let scale = g.powf(self.p - 1.0);
        Some(x.map(|t| signed_pow(t, self.p - 1.0) / scale))
    }
}

const NORM_CHECK_SAMPLES: usize = 1000;
const NORM_CHECK_TOL: f64 = 1e-10;

fn spot_check_norm(g: &dyn PlueckerNorm) -> Result<()> {
    let mut rng = rng_for(0x6E_0B_11, 0);
    for _ in 0..NORM_CHECK_SAMPLES {
        let x: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let gx = g.value(&x);
        let tol = NORM_CHECK_TOL * (1.0 + gx.abs());
        if (g.value(&x.map(|t| -t)) - gx).abs() > tol {
            return Err(Error::NormCheck(format!("{} is not even", g.label())));
        }
        if (g.value(&x.map(|t| 2.0 * t)) - 2.0 * gx).abs() > 2.0 * tol {
            return Err(Error::NormCheck(format!("{} is not 1-homogeneous", g.label())));
        }
    }
    Ok(())
}

/// Closed-form stress of Lemma-type `B_G(τ) = Ĝ Vᵗ`, where `Ĝ` is the
/// antisymmetric matrix of partials `∂_(ij)G(τ)` and `V` that of `τ`.
pub fn b_g(g: &dyn PlueckerNorm, tau: &TwoVector) -> Result<DMatrix<f64>> {
    let grad = g
        .gradient(&tau.coords)
        .ok_or_else(|| Error::NormCheck(format!("{} has no closed-form partials", g.label())))?;
    Ok(antisymmetric(&grad) * tau.antisymmetric().transpose())
}

/// `(B)_ab = Σ_j sign(v_aj)|v_aj|^{p−1} v_bj / ‖τ‖_p^{p−1}`.
pub fn lp_b(tau: &TwoVector, p: f64) -> Result<DMatrix<f64>> {
    let norm = LpNorm::new(p)?;
    let v = tau.antisymmetric();
    let scale = norm.value(&tau.coords).powf(p - 1.0);
    let powered = v.map(|t| signed_pow(t, p - 1.0) / scale);
    Ok(powered * v.transpose())
}

/// `Ψ_G(T) = G(τ/‖τ‖)` with `τ` the 2-vector of `T`. When `G` has partials
/// the integrand carries the closed form `A = B_G(τ) − Ψ(T)·T`.
pub fn psi_from_norm<G: PlueckerNorm + 'static>(g: G) -> Result<Integrand> {
    spot_check_norm(&g)?;
    let label = g.label();
    let has_partials = g.gradient(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_some();
    let g = std::sync::Arc::new(g);
    let eval_norm = g.clone();
    let psi = Integrand::new(dims(), label, move |t: &Plane| match two_vector_of(t) {
        Ok(tau) => eval_norm.value(&tau.coords),
        Err(_) => f64::NAN,
    })?;
    if !has_partials {
        return Ok(psi);
    }
    Ok(psi.with_closed_form(move |t: &Plane| {
        let fallback = || DMatrix::from_element(4, 4, f64::NAN);
        let Ok(tau) = two_vector_of(t) else {
            return fallback();
        };
        match b_g(g.as_ref(), &tau) {
            Ok(b) => b - t.matrix() * g.value(&tau.coords),
            Err(_) => fallback(),
        }
    }))
}

/// The ℓᵖ Plücker integrand.
pub fn lp_integrand(p: f64) -> Result<Integrand> {
    psi_from_norm(LpNorm::new(p)?)
}

/// An even probability measure on unit simple 2-vectors, stored on the
/// quotient τ ~ −τ by canonical signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenMeasure4 {
    atoms: Vec<(TwoVector, f64)>,
}

impl EvenMeasure4 {
    pub fn new(atoms: Vec<(TwoVector, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let mut total = 0.0;
        for (tau, w) in &atoms {
            if !tau.is_normalized() {
                return Err(Error::InvalidMeasure(format!("atom {tau} is not a unit 2-vector")));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(EvenMeasure4 {
            atoms: atoms.into_iter().map(|(t, w)| (t.canonical(), w)).collect(),
        })
    }

    pub fn dirac(tau: TwoVector) -> Result<Self> {
        Self::new(vec![(tau.normalized(), 1.0)])
    }

    /// Between 1 and `max_atoms` Haar-random atoms with random weights.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize) -> Self {
        let k = rng.random_range(1..=max_atoms.max(1));
        let mut atoms = Vec::with_capacity(k);
        while atoms.len() < k {
            let v1 = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let v2 = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            if let Ok(tau) = wedge(&v1, &v2) {
                atoms.push((tau.normalized().canonical(), rng.random_range(0.05..1.0)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        EvenMeasure4 { atoms }
    }

    pub fn atoms(&self) -> &[(TwoVector, f64)] {
        &self.atoms
    }

    pub fn to_discrete(&self) -> Result<DiscreteMeasure> {
        let atoms = self
            .atoms
            .iter()
            .map(|(tau, w)| Ok((plane_of(tau)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        DiscreteMeasure::new(atoms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `a_ij = ∫|v_ij|^p dμ′`, symmetric with zero diagonal.
    pub a: DMatrix<f64>,
    /// `σ(μ′) = ∫ B_G Φ^{p−1} dμ′`, which equals `A(μ)`.
    pub sigma: DMatrix<f64>,
}

/// Moments under the lifted measure `μ′ = Φ^{1−p} μ`.
pub fn moment_matrix(mu: &EvenMeasure4, p: f64) -> Result<Moments> {
    let norm = LpNorm::new(p)?;
    let mut a = DMatrix::zeros(4, 4);
    let mut sigma = DMatrix::zeros(4, 4);
    for (tau, w) in &mu.atoms {
        let lifted = w / norm.value(&tau.coords).powf(p - 1.0);
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            let m = lifted * tau.coords[k].abs().powf(p);
            a[(i, j)] += m;
            a[(j, i)] += m;
        }
        sigma += lp_b(tau, p)? * *w;
    }
    Ok(Moments { a, sigma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubminorReport {
    pub p: f64,
    /// det(S_ij) in pair order 12, 13, 14, 23, 24, 34.
    pub dets: [f64; 6],
    pub kernel_dim: usize,
    /// Every det ≥ −`DET_FLOOR` and at least one det > `DET_CERTIFY`.
    pub rank_at_least_two: bool,
    /// min over i ≠ j of `Σ_{s≠i,j} a_js^{(p−1)/p} a_is^{1/p} − |σ_ji|`.
    pub holder_slack: f64,
    pub moment_sum: f64,
    /// Some atom has a coordinate with |v_ij| < 1e-8.
    pub near_zero_coordinate: bool,
}

pub const DET_FLOOR: f64 = 1e-10;
pub const DET_CERTIFY: f64 = 1e-6;

pub fn subminor_analysis(mu: &EvenMeasure4, p: f64, tol_rank: f64) -> Result<SubminorReport> {
    let Moments { a, sigma } = moment_matrix(mu, p)?;
    let mut dets = [0.0; 6];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        dets[k] = sigma[(i, i)] * sigma[(j, j)] - sigma[(i, j)] * sigma[(j, i)];
    }
    let rank_at_least_two =
        dets.iter().all(|&d| d >= -DET_FLOOR) && dets.iter().any(|&d| d > DET_CERTIFY);

    let mut holder_slack = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let bound: f64 = (0..4)
                .filter(|&s| s != i && s != j)
                .map(|s| a[(j, s)].powf((p - 1.0) / p) * a[(i, s)].powf(1.0 / p))
                .sum();
            holder_slack = holder_slack.min(bound - sigma[(j, i)].abs());
        }
    }
    let moment_sum = PAIRS.iter().map(|&(i, j)| a[(i, j)]).sum();
    let near_zero_coordinate = mu
        .atoms
        .iter()
        .any(|(tau, _)| tau.min_abs_coordinate() < NEAR_ZERO_COORDINATE);
    Ok(SubminorReport {
        p,
        dets,
        kernel_dim: kernel_dim(&sigma, tol_rank),
        rank_at_least_two,
        holder_slack,
        moment_sum,
        near_zero_coordinate,
    })
}

/// Subminor analysis over `count` random even measures; measure `i` is drawn
/// from `sub_seed(seed, i)`, so the result is independent of scheduling.
pub fn subminor_batch(
    p: f64,
    count: usize,
    max_atoms: usize,
    seed: u64,
    tol_rank: f64,
) -> Result<Vec<(EvenMeasure4, SubminorReport)>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(sub_seed(seed, i as u64), 0);
            let mu = EvenMeasure4::random(&mut rng, max_atoms);
            let report = subminor_analysis(&mu, p, tol_rank)?;
            Ok((mu, report))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::sample_plane;
    use crate::integrand::{manifold_gradient_fd, stress};

    fn e(i: usize) -> Vector4<f64> {
        let mut v = Vector4::zeros();
        v[i] = 1.0;
        v
    }

    fn e12() -> TwoVector {
        TwoVector::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn diag1100() -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]))
    }

    #[test]
    fn wedge_cases() {
        assert_eq!(wedge(&e(0), &e(1)).unwrap(), e12());
        let t = wedge(&(e(0) + e(2)), &e(1)).unwrap();
        assert_eq!(t.coords(), &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert!(matches!(wedge(&e(0), &(e(0) * 2.0)), Err(Error::DependentVectors)));
        let mut rng = rng_for(3, 0);
        for _ in 0..100 {
            let a = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let b = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let w = wedge(&a, &b).unwrap();
            let gram = a.norm_squared() * b.norm_squared() - a.dot(&b).powi(2);
            assert!((w.norm().powi(2) - gram).abs() < 1e-10 * (1.0 + gram));
            assert_eq!(wedge(&b, &a).unwrap(), w.neg());
        }
    }

    #[test]
    fn non_simple_rejected_and_projected() {
        let c = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(TwoVector::new(c), Err(Error::NotSimple { .. })));
        let near = [1.0, 0.0, 0.0, 0.0, 0.0, 1e-3];
        let s = TwoVector::project_simple(near).unwrap();
        assert!(plucker_residual(s.coords()).abs() < 1e-14);
        assert!((s.coords()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn plane_of_cases() {
        assert_eq!(plane_of(&e12()).unwrap().matrix(), &diag1100());
        let mut rng = rng_for(4, 0);
        for _ in 0..100 {
            let a = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let b = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let tau = wedge(&a, &b).unwrap();
            let t = plane_of(&tau).unwrap();
            let (ta, tb) = (t.matrix() * nalgebra::DVector::from_column_slice(a.as_slice()),
                t.matrix() * nalgebra::DVector::from_column_slice(b.as_slice()));
            assert!((ta - nalgebra::DVector::from_column_slice(a.as_slice())).norm() < 1e-10 * a.norm());
            assert!((tb - nalgebra::DVector::from_column_slice(b.as_slice())).norm() < 1e-10 * b.norm());
            assert!((plane_of(&tau.neg()).unwrap().matrix() - t.matrix()).norm() < 1e-15);
            assert!((plane_of(&tau.normalized()).unwrap().matrix() - t.matrix()).norm() < 1e-12);
            let back = two_vector_of(&t).unwrap();
            assert!((back.coords().iter().zip(tau.normalized().canonical().coords()))
                .all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn l2_recovers_area_and_lp_at_e12() {
        let l2 = lp_integrand(2.0).unwrap();
        let mut rng = rng_for(5, 0);
        for _ in 0..100 {
            let t = sample_plane(&mut rng, dims());
            assert!((l2.evaluate(&t).unwrap() - 1.0).abs() < 1e-12);
        }
        for p in [1.5, 3.0, 7.0] {
            let psi = lp_integrand(p).unwrap();
            assert!((psi.evaluate(&plane_of(&e12()).unwrap()).unwrap() - 1.0).abs() < 1e-15);
            assert!((lp_b(&e12(), p).unwrap() - diag1100()).norm() < 1e-15);
        }
    }

    #[test]
    fn evaluation_is_frame_independent() {
        let psi = lp_integrand(3.0).unwrap();
        let mut rng = rng_for(6, 0);
        for _ in 0..100 {
            let a = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let b = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
            let t1 = plane_of(&wedge(&a, &b).unwrap()).unwrap();
            let t2 = plane_of(&wedge(&(a * 2.0 + b), &(a - b * 3.0)).unwrap()).unwrap();
            assert!((psi.evaluate(&t1).unwrap() - psi.evaluate(&t2).unwrap()).abs() < 1e-10);
        }
    }

    struct Odd;
    impl PlueckerNorm for Odd {
        fn label(&self) -> String {
            "odd".into()
        }
        fn value(&self, x: &[f64; 6]) -> f64 {
            norm6(x) + 0.1 * x[0]
        }
    }

    #[test]
    fn norm_spot_check_rejects_odd() {
        assert!(matches!(psi_from_norm(Odd), Err(Error::NormCheck(_))));
        assert!(LpNorm::new(1.0).is_err());
        assert!(LpNorm::new(f64::INFINITY).is_err());
    }

    #[test]
    fn lp_b_matches_generic_b_g_and_is_even() {
        let mut rng = rng_for(7, 0);
        for p in [1.5, 2.0, 3.0] {
            let g = LpNorm::new(p).unwrap();
            for _ in 0..50 {
                let t = sample_plane(&mut rng, dims());
                let tau = two_vector_of(&t).unwrap();
                let b = lp_b(&tau, p).unwrap();
                assert!((&b - b_g(&g, &tau).unwrap()).norm() < 1e-13);
                assert_eq!(b, lp_b(&tau.neg(), p).unwrap());
                assert!((b.trace() - 2.0 * g.value(tau.coords())).abs() < 1e-12);
                if p == 2.0 {
                    assert!((&b - t.matrix()).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        let mut rng = rng_for(8, 0);
        for p in [1.5, 3.0, 4.0] {
            let psi = lp_integrand(p).unwrap();
            for _ in 0..50 {
                let t = sample_plane(&mut rng, dims());
                let closed = stress(&psi, &t).unwrap().matrix;
                let fd = manifold_gradient_fd(&psi, &t).unwrap() + t.matrix() * psi.evaluate(&t).unwrap();
                assert!((closed - fd).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn dirac_moments() {
        let mu = EvenMeasure4::dirac(e12()).unwrap();
        for p in [1.5, 3.0] {
            let m = moment_matrix(&mu, p).unwrap();
            assert_eq!(m.a[(0, 1)], 1.0);
            assert_eq!(m.a.iter().filter(|&&x| x != 0.0).count(), 2);
            assert_eq!(m.sigma, diag1100());
            let r = subminor_analysis(&mu, p, 1e-7).unwrap();
            assert_eq!(r.dets[0], 1.0);
            assert!(r.rank_at_least_two);
            assert_eq!(r.kernel_dim, 2);
            assert!(r.near_zero_coordinate);
        }
    }

    #[test]
    fn measures_validate() {
        assert!(EvenMeasure4::new(vec![]).is_err());
        assert!(EvenMeasure4::new(vec![(e12(), 0.5)]).is_err());
        let long = TwoVector::new([2.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(EvenMeasure4::new(vec![(long, 1.0)]).is_err());
        let mu = EvenMeasure4::new(vec![(e12().neg(), 1.0)]).unwrap();
        assert_eq!(mu.atoms()[0].0, e12());
    }

    #[test]
    fn sigma_equals_averaged_stress_and_holder_holds() {
        let mut rng = rng_for(9, 0);
        for p in [1.5, 3.0] {
            let psi = lp_integrand(p).unwrap();
            for _ in 0..50 {
                let mu = EvenMeasure4::random(&mut rng, 8);
                let m = moment_matrix(&mu, p).unwrap();
                let a = crate::conditions::a_matrix(&psi, &mu.to_discrete().unwrap()).unwrap();
                assert!((&m.sigma - a).norm() < 1e-8);
                let r = subminor_analysis(&mu, p, 1e-7).unwrap();
                assert!(r.holder_slack >= -1e-9);
                assert!(r.moment_sum > 0.0);
            }
        }
    }

    #[test]
    fn batch_is_deterministic() {
        let a = subminor_batch(3.0, 20, 8, 11, 1e-7).unwrap();
        let b = subminor_batch(3.0, 20, 8, 11, 1e-7).unwrap();
        assert_eq!(a, b);
    }
}
