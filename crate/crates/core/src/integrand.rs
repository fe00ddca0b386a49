//! Positive integrands on the Grassmannian and their stress tensors.
//!
//! For an integrand Ψ the primal stress is `B_Ψ(T) = Ψ(T)T + A_Ψ(T)`, where
//! `A_Ψ(T) = T^⊥ dΨ(T) T` is the manifold differential. `A_Ψ(T)` is
//! characterized intrinsically by `⟨A_Ψ(T), V⟩ = D_VΨ(T)` for every tangent
//! vector `V` together with its block form, so no off-manifold extension of Ψ
//! is ever chosen. The dual stress on the complement is
//! `B_{Ψ*}(S^⊥) = Ψ(S)S^⊥ − A_Ψ(S)ᵗ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{self, Dims, Plane};
use crate::linalg;
use crate::pluecker4;
use crate::sampling::rng_for;

/// Central-difference step along tangent directions.
pub const FD_STEP: f64 = 1e-5;
/// Stress tolerance: absolute part (a relative part of the same size applies).
pub const TOL_STRESS: f64 = 1e-8;

const POSITIVITY_SAMPLES: usize = 1000;
const POSITIVITY_SEED: u64 = 0x5_EED0_FA11;

pub type EvalFn = dyn Fn(&Plane) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&Plane) -> DMatrix<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferentialMode {
    ClosedForm,
    FiniteDifference,
}

/// A positive function on G(N,m) with its manifold differential.
#[derive(Clone)]
pub struct Integrand {
    dims: Dims,
    label: String,
    eval: Arc<EvalFn>,
    closed_form_a: Option<Arc<GradientFn>>,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand")
            .field("dims", &self.dims)
            .field("label", &self.label)
            .field("mode", &self.differential_mode())
            .finish()
    }
}

impl Integrand {
    /// Builds an integrand in finite-difference mode after checking
    /// positivity on 10³ Haar-random planes.
    pub fn new<F>(dims: Dims, label: impl Into<String>, eval: F) -> Result<Self>
    where
        F: Fn(&Plane) -> f64 + Send + Sync + 'static,
    {
        let psi = Integrand {
            dims,
            label: label.into(),
            eval: Arc::new(eval),
            closed_form_a: None,
        };
        let mut rng = rng_for(POSITIVITY_SEED, 0);
        for _ in 0..POSITIVITY_SAMPLES {
            let t = grassmann::sample_plane(&mut rng, dims);
            psi.evaluate(&t)?;
        }
        Ok(psi)
    }

    /// Attaches a closed form for `A_Ψ(T) = T^⊥dΨ(T)T`.
    pub fn with_closed_form<G>(mut self, a: G) -> Self
    where
        G: Fn(&Plane) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.closed_form_a = Some(Arc::new(a));
        self
    }

    /// Same integrand, forced into finite-difference mode.
    pub fn without_closed_form(&self) -> Self {
        Integrand {
            closed_form_a: None,
            label: format!("{}[fd]", self.label),
            ..self.clone()
        }
    }

    /// The area integrand Ψ ≡ 1.
    pub fn area(dims: Dims) -> Self {
        Integrand {
            dims,
            label: "area".into(),
            eval: Arc::new(|_| 1.0),
            closed_form_a: None,
        }
        .with_closed_form(move |t| DMatrix::zeros(t.ambient_dim(), t.ambient_dim()))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn differential_mode(&self) -> DifferentialMode {
        if self.closed_form_a.is_some() {
            DifferentialMode::ClosedForm
        } else {
            DifferentialMode::FiniteDifference
        }
    }

    /// Evaluates Ψ(T), rejecting non-finite and non-positive values.
    pub fn evaluate(&self, t: &Plane) -> Result<f64> {
        if t.dims() != self.dims {
            return Err(Error::mismatch(self.dims, t.dims()));
        }
        let value = (self.eval)(t);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                label: self.label.clone(),
            });
        }
        if value <= 0.0 {
            return Err(Error::PositivityViolation {
                label: self.label.clone(),
                value,
            });
        }
        Ok(value)
    }

    pub(crate) fn raw(&self) -> &Arc<EvalFn> {
        &self.eval
    }
}

/// Ψ(T) and `A_Ψ(T)` at one plane; everything else is algebra on these.
#[derive(Debug, Clone)]
pub struct LocalStress {
    pub value: f64,
    pub a: DMatrix<f64>,
}

impl LocalStress {
    pub fn at(psi: &Integrand, t: &Plane) -> Result<Self> {
        Ok(LocalStress {
            value: psi.evaluate(t)?,
            a: manifold_gradient(psi, t)?,
        })
    }

    pub fn primal(&self, t: &Plane) -> DMatrix<f64> {
        t.matrix() * self.value + &self.a
    }

    pub fn dual(&self, s: &Plane) -> DMatrix<f64> {
        s.perp() * self.value - self.a.transpose()
    }
}

/// `A_Ψ(T) = T^⊥dΨ(T)T`.
pub fn manifold_gradient(psi: &Integrand, t: &Plane) -> Result<DMatrix<f64>> {
    if t.dims() != psi.dims {
        return Err(Error::mismatch(psi.dims, t.dims()));
    }
    match &psi.closed_form_a {
        Some(a) => {
            let a = a(t);
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    label: psi.label.clone(),
                });
            }
            Ok(a)
        }
        None => manifold_gradient_fd(psi, t),
    }
}

/// Finite-difference reconstruction of `A_Ψ(T)` from central differences
/// along the orthonormal tangent basis. For a basis `{V_k}` with
/// `V_k = W_k + W_kᵗ`, `W_k = T^⊥V_kT`, the conditions `⟨A, V_k⟩ = D_{V_k}Ψ`
/// give `A = Σ_k 2·D_{V_k}Ψ · W_k`.
pub fn manifold_gradient_fd(psi: &Integrand, t: &Plane) -> Result<DMatrix<f64>> {
    if t.dims() != psi.dims {
        return Err(Error::mismatch(psi.dims, t.dims()));
    }
    function_gradient_fd(|p| psi.evaluate(p), t)
}

/// Same reconstruction for any function on the Grassmannian (no positivity).
pub fn function_gradient_fd<F>(f: F, t: &Plane) -> Result<DMatrix<f64>>
where
    F: Fn(&Plane) -> Result<f64>,
{
    let (q, qp) = t.frames();
    let basis = grassmann::tangent_basis_from_frames(&q, &qp);
    let n = t.ambient_dim();
    let mut combo = DMatrix::zeros(n, n);
    for v in &basis {
        let plus = f(&grassmann::retract_frame(&q, v, FD_STEP)?)?;
        let minus = f(&grassmann::retract_frame(&q, v, -FD_STEP)?)?;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite {
                label: "finite difference".into(),
            });
        }
        let d = (plus - minus) / (2.0 * FD_STEP);
        combo += v * (2.0 * d);
    }
    Ok(t.perp() * combo * t.matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressKind {
    Primal,
    Dual,
}

#[derive(Debug, Clone)]
pub struct StressTensor {
    pub matrix: DMatrix<f64>,
    pub base: Plane,
    pub kind: StressKind,
    /// Ψ at the base plane (the plane S for a dual stress on S^⊥).
    pub psi_value: f64,
}

/// `B_Ψ(T) = Ψ(T)T + T^⊥dΨ(T)T`.
pub fn stress(psi: &Integrand, t: &Plane) -> Result<StressTensor> {
    let local = LocalStress::at(psi, t)?;
    Ok(StressTensor {
        matrix: local.primal(t),
        base: t.clone(),
        kind: StressKind::Primal,
        psi_value: local.value,
    })
}

/// `B_{Ψ*}(S^⊥) = Ψ(S)S^⊥ − S dΨ(S) S^⊥`, using `dΨ*(S^⊥) = −dΨ(S)`.
pub fn dual_stress(psi: &Integrand, s: &Plane) -> Result<StressTensor> {
    let local = LocalStress::at(psi, s)?;
    Ok(StressTensor {
        matrix: local.dual(s),
        base: s.clone(),
        kind: StressKind::Dual,
        psi_value: local.value,
    })
}

/// `⟨B_Ψ(T), B_{Ψ*}(S^⊥)⟩`.
pub fn pairing(psi: &Integrand, t: &Plane, s: &Plane) -> Result<f64> {
    let lt = LocalStress::at(psi, t)?;
    let ls = LocalStress::at(psi, s)?;
    Ok(pairing_from(&lt, t, &ls, s))
}

pub fn pairing_from(lt: &LocalStress, t: &Plane, ls: &LocalStress, s: &Plane) -> f64 {
    linalg::frob(&lt.primal(t), &ls.dual(s))
}

/// Restriction `Φ(P) = Ψ(M P Mᵗ)` to G(m+1, m) along an orthonormal
/// N×(m+1) frame `M`. The result is differentiated by finite differences.
pub fn restrict_integrand(psi: &Integrand, frame: &DMatrix<f64>) -> Result<Integrand> {
    let dims = psi.dims;
    if frame.shape() != (dims.ambient, dims.plane + 1) {
        return Err(Error::mismatch(
            format!("{}x{}", dims.ambient, dims.plane + 1),
            format!("{}x{}", frame.nrows(), frame.ncols()),
        ));
    }
    let deviation = linalg::orthonormality_defect(frame);
    if deviation > 1e-10 {
        return Err(Error::NonOrthonormalFrame { deviation });
    }
    let m = dims.plane;
    let frame = frame.clone();
    let eval = psi.raw().clone();
    let restricted = Dims::new(m + 1, m)?;
    Integrand::new(
        restricted,
        format!("restrict({})", psi.label),
        move |p: &Plane| {
            let lifted = &frame * p.matrix() * frame.transpose();
            match Plane::new(lifted, m) {
                Ok(lifted) => eval(&lifted),
                Err(_) => f64::NAN,
            }
        },
    )
}

/// A bounded smooth perturbation `φ(T) = ⟨T,D⟩ + ½⟨T,E⟩²` with random
/// symmetric `D`, `E` of unit Frobenius norm.
#[derive(Debug, Clone)]
pub struct SmoothPerturbation {
    pub linear: DMatrix<f64>,
    pub quadratic: DMatrix<f64>,
}

impl SmoothPerturbation {
    pub fn random(dims: Dims, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let mut draw = || {
            let g = DMatrix::from_fn(dims.ambient, dims.ambient, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let s = linalg::sym(&g);
            let norm = s.norm();
            s / norm
        };
        let linear = draw();
        let quadratic = draw();
        SmoothPerturbation { linear, quadratic }
    }

    /// Purely linear perturbation `φ(T) = ⟨T, D⟩`.
    pub fn linear(d: DMatrix<f64>) -> Self {
        let n = d.nrows();
        SmoothPerturbation {
            linear: d,
            quadratic: DMatrix::zeros(n, n),
        }
    }

    pub fn value(&self, t: &Plane) -> f64 {
        let e = linalg::frob(t.matrix(), &self.quadratic);
        linalg::frob(t.matrix(), &self.linear) + 0.5 * e * e
    }
}

/// `Ψ′ = 1 + eps·φ` in finite-difference mode.
pub fn perturbed_area<F>(dims: Dims, phi: F, eps: f64, label: impl Into<String>) -> Result<Integrand>
where
    F: Fn(&Plane) -> f64 + Send + Sync + 'static,
{
    if !(eps >= 0.0) {
        return Err(Error::Usage(format!("perturbation size must be >= 0, got {eps}")));
    }
    Integrand::new(dims, label, move |t| 1.0 + eps * phi(t))
}

/// The registry integrand `perturbed-area:<eps>:<seed>`.
pub fn perturbed_area_seeded(dims: Dims, eps: f64, seed: u64) -> Result<Integrand> {
    let phi = SmoothPerturbation::random(dims, seed);
    perturbed_area(
        dims,
        move |t| phi.value(t),
        eps,
        format!("perturbed-area:{eps}:{seed}"),
    )
}

/// Empirical C² size of a function on the Grassmannian: sup of |f|, of
/// tangential first differences (step 1e-3) and of second differences
/// (step 1e-2) over sampled planes and tangent basis directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Proxy {
    pub sup: f64,
    pub first: f64,
    pub second: f64,
}

impl C2Proxy {
    pub fn c1(&self) -> f64 {
        self.sup.max(self.first)
    }

    pub fn c2(&self) -> f64 {
        self.sup.max(self.first).max(self.second)
    }
}

pub fn c2_proxy<F>(dims: Dims, f: F, samples: usize, seed: u64) -> Result<C2Proxy>
where
    F: Fn(&Plane) -> f64,
{
    const H1: f64 = 1e-3;
    const H2: f64 = 1e-2;
    let mut rng = rng_for(seed, 0);
    let mut out = C2Proxy {
        sup: 0.0,
        first: 0.0,
        second: 0.0,
    };
    for _ in 0..samples {
        let t = grassmann::sample_plane(&mut rng, dims);
        let (q, qp) = t.frames();
        let center = f(&t);
        out.sup = out.sup.max(center.abs());
        for v in grassmann::tangent_basis_from_frames(&q, &qp) {
            let p1 = f(&grassmann::retract_frame(&q, &v, H1)?);
            let m1 = f(&grassmann::retract_frame(&q, &v, -H1)?);
            out.first = out.first.max(((p1 - m1) / (2.0 * H1)).abs());
            let p2 = f(&grassmann::retract_frame(&q, &v, H2)?);
            let m2 = f(&grassmann::retract_frame(&q, &v, -H2)?);
            out.second = out.second.max(((p2 - 2.0 * center + m2) / (H2 * H2)).abs());
        }
    }
    Ok(out)
}

/// C² proxy of an integrand itself.
pub fn integrand_c2_proxy(psi: &Integrand, samples: usize, seed: u64) -> Result<C2Proxy> {
    let eval = psi.raw().clone();
    c2_proxy(psi.dims, move |t| eval(t), samples, seed)
}

/// Stress computed through an explicit extension `E` of Ψ to a neighborhood
/// of the Grassmannian in ℝ^{N×N}: `B = Ψ T + T^⊥(DE + DEᵗ)T` with `DE` the
/// Euclidean gradient by central differences.
pub fn stress_via_extension<E>(extension: E, t: &Plane) -> DMatrix<f64>
where
    E: Fn(&DMatrix<f64>) -> f64,
{
    const H: f64 = 1e-5;
    let n = t.ambient_dim();
    let base = t.matrix();
    let mut grad = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut plus = base.clone();
            plus[(i, j)] += H;
            let mut minus = base.clone();
            minus[(i, j)] -= H;
            grad[(i, j)] = (extension(&plus) - extension(&minus)) / (2.0 * H);
        }
    }
    let d = &grad + grad.transpose();
    base * extension(base) + t.perp() * d * base
}

/// Closest-point extension `X ↦ Ψ(π(X))`, with π the nearest projection.
/// It is 0-homogeneous and constant along normal directions.
pub fn closest_point_extension(psi: &Integrand) -> impl Fn(&DMatrix<f64>) -> f64 {
    let eval = psi.raw().clone();
    let m = psi.dims.plane;
    move |x| match Plane::project(x, m) {
        Ok(p) => eval(&p),
        Err(_) => f64::NAN,
    }
}

/// Extension tilted along the normal directions:
/// `X ↦ Ψ(π(X))·(1 + ⟨X − π(X), R⟩)` for a fixed matrix `R`.
pub fn tilted_extension(psi: &Integrand, tilt: DMatrix<f64>) -> impl Fn(&DMatrix<f64>) -> f64 {
    let eval = psi.raw().clone();
    let m = psi.dims.plane;
    move |x| match Plane::project(x, m) {
        Ok(p) => {
            let offset = linalg::frob(&(x - p.matrix()), &tilt);
            eval(&p) * (1.0 + offset)
        }
        Err(_) => f64::NAN,
    }
}

/// Resolves a registry label: `area`, `perturbed-area:<eps>:<seed>`,
/// `lp-pluecker:<p>`.
pub fn resolve(label: &str, dims: Dims) -> Result<Integrand> {
    let parts: Vec<&str> = label.split(':').collect();
    let bad = || Error::UnknownIntegrand(label.to_string());
    match parts.as_slice() {
        ["area"] => Ok(Integrand::area(dims)),
        ["perturbed-area", eps, seed] => {
            let eps: f64 = eps.parse().map_err(|_| bad())?;
            let seed: u64 = seed.parse().map_err(|_| bad())?;
            perturbed_area_seeded(dims, eps, seed)
        }
        ["lp-pluecker", p] => {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if dims != pluecker4::dims() {
                return Err(Error::Usage(format!(
                    "lp-pluecker integrands live on G(4,2), not {dims}"
                )));
            }
            pluecker4::lp_integrand(p)
        }
        _ => Err(bad()),
    }
}
