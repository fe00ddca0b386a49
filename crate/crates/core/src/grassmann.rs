//! The Grassmannian G(N,m) represented by orthogonal projection matrices.
//!
//! A plane is stored as the N×N matrix of the orthogonal projection onto it,
//! so it is symmetric, idempotent and has trace m. This module provides the
//! canonical graph chart `h(X) = M(X)(M(X)ᵗM(X))⁻¹M(X)ᵗ` with
//! `M(X) = [I_m; X]`, its inverse on the chart domain, the area element,
//! Haar sampling, an orthonormal tangent basis and a first-order retraction.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute Frobenius tolerance on the plane invariants.
pub const TOL_PLANE: f64 = 1e-9;
/// Round-trip tolerance for `graph_chart` / `chart_inverse`.
pub const TOL_CHART: f64 = 1e-7;
/// Relative singularity threshold for the leading block in `chart_inverse`.
pub const TOL_CHART_RANK: f64 = 1e-8;

/// Ambient dimension N and plane dimension m, with 0 < m < N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub ambient: usize,
    pub plane: usize,
}

impl Dims {
    pub fn new(ambient: usize, plane: usize) -> Result<Self> {
        if plane == 0 || plane >= ambient {
            return Err(Error::InvalidDims(format!(
                "need 0 < m < N, got N={ambient}, m={plane}"
            )));
        }
        Ok(Dims { ambient, plane })
    }

    /// Codimension n = N - m.
    pub fn codim(&self) -> usize {
        self.ambient - self.plane
    }

    /// Dimension m·(N−m) of the manifold.
    pub fn manifold_dim(&self) -> usize {
        self.plane * self.codim()
    }

    pub fn complement(&self) -> Dims {
        Dims {
            ambient: self.ambient,
            plane: self.codim(),
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "G({},{})", self.ambient, self.plane)
    }
}

/// An m-plane of ℝ^N as an orthogonal projection matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PlaneRepr", into = "PlaneRepr")]
pub struct Plane {
    matrix: DMatrix<f64>,
    dims: Dims,
    /// Matrix this plane is the complement of, kept so that taking the
    /// complement twice returns the original bits.
    complement_of: Option<Box<DMatrix<f64>>>,
}

impl PartialEq for Plane {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.matrix == other.matrix
    }
}

/// Residuals of the three plane invariants.
#[derive(Debug, Clone, Copy)]
pub struct PlaneDrift {
    pub symmetry: f64,
    pub idempotence: f64,
    pub trace: f64,
}

impl PlaneDrift {
    pub fn max(&self) -> f64 {
        self.symmetry.max(self.idempotence).max(self.trace)
    }
}

fn drift_of(matrix: &DMatrix<f64>, plane_dim: usize) -> PlaneDrift {
    PlaneDrift {
        symmetry: (matrix - matrix.transpose()).norm(),
        idempotence: (matrix * matrix - matrix).norm(),
        trace: (matrix.trace() - plane_dim as f64).abs(),
    }
}

impl Plane {
    /// Validates `matrix` as an m-plane. Matrices whose drift exceeds
    /// `TOL_PLANE / 10` (but not `TOL_PLANE`) are re-projected.
    pub fn new(matrix: DMatrix<f64>, plane_dim: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::mismatch(
                "square matrix",
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        let dims = Dims::new(matrix.nrows(), plane_dim)?;
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPlane {
                reason: "non-finite entries".into(),
            });
        }
        let drift = drift_of(&matrix, plane_dim);
        if drift.max() > TOL_PLANE {
            return Err(Error::InvalidPlane {
                reason: format!(
                    "symmetry {:.2e}, idempotence {:.2e}, trace {:.2e}",
                    drift.symmetry, drift.idempotence, drift.trace
                ),
            });
        }
        if drift.max() > TOL_PLANE / 10.0 {
            return Self::project(&matrix, plane_dim);
        }
        Ok(Plane {
            matrix,
            dims,
            complement_of: None,
        })
    }

    /// Nearest projection: symmetrize, then keep the top-m eigenvectors.
    pub fn project(matrix: &DMatrix<f64>, plane_dim: usize) -> Result<Self> {
        let dims = Dims::new(matrix.nrows(), plane_dim)?;
        let (_, vectors) = linalg::sorted_eigen(&linalg::sym(matrix));
        let q = vectors.columns(0, dims.plane).into_owned();
        Ok(Self::from_orthonormal(&q))
    }

    /// Plane spanned by the columns of `frame` (re-orthonormalized).
    pub fn from_frame(frame: &DMatrix<f64>) -> Result<Self> {
        Dims::new(frame.nrows(), frame.ncols())?;
        let q = linalg::orthonormalize(frame).ok_or(Error::RankCollapse)?;
        Ok(Self::from_orthonormal(&q))
    }

    /// `Q Qᵗ` for a frame already known to be orthonormal.
    pub(crate) fn from_orthonormal(q: &DMatrix<f64>) -> Self {
        let matrix = linalg::sym(&(q * q.transpose()));
        Plane {
            dims: Dims {
                ambient: q.nrows(),
                plane: q.ncols(),
            },
            matrix,
            complement_of: None,
        }
    }

    /// Projection onto the first m coordinate axes.
    pub fn coordinate(dims: Dims) -> Self {
        let mut matrix = DMatrix::zeros(dims.ambient, dims.ambient);
        for i in 0..dims.plane {
            matrix[(i, i)] = 1.0;
        }
        Plane {
            matrix,
            dims,
            complement_of: None,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn ambient_dim(&self) -> usize {
        self.dims.ambient
    }

    pub fn plane_dim(&self) -> usize {
        self.dims.plane
    }

    /// `T^⊥ = I − T` as a matrix.
    pub fn perp(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dims.ambient, self.dims.ambient) - &self.matrix
    }

    pub fn drift(&self) -> PlaneDrift {
        drift_of(&self.matrix, self.dims.plane)
    }

    /// Frobenius inner product ⟨T, S⟩.
    pub fn inner(&self, other: &Plane) -> f64 {
        linalg::frob(&self.matrix, &other.matrix)
    }

    /// Orthonormal bases `(Q, Q⊥)` of the plane and of its complement.
    pub fn frames(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (_, vectors) = linalg::sorted_eigen(&self.matrix);
        let m = self.dims.plane;
        (
            vectors.columns(0, m).into_owned(),
            vectors.columns(m, self.dims.codim()).into_owned(),
        )
    }

    /// Orthogonal matrix `[Q | Q⊥]` mapping coordinate axes onto this plane.
    pub fn adapted_rotation(&self) -> DMatrix<f64> {
        let (_, vectors) = linalg::sorted_eigen(&self.matrix);
        vectors
    }
}

#[derive(Serialize, Deserialize)]
struct PlaneRepr {
    ambient_dim: usize,
    plane_dim: usize,
    matrix: Vec<Vec<f64>>,
}

impl From<Plane> for PlaneRepr {
    fn from(p: Plane) -> Self {
        PlaneRepr {
            ambient_dim: p.dims.ambient,
            plane_dim: p.dims.plane,
            matrix: linalg::to_rows(&p.matrix),
        }
    }
}

impl TryFrom<PlaneRepr> for Plane {
    type Error = Error;

    fn try_from(r: PlaneRepr) -> Result<Self> {
        let matrix = linalg::from_rows(&r.matrix).ok_or_else(|| Error::InvalidPlane {
            reason: "ragged matrix rows".into(),
        })?;
        if matrix.nrows() != r.ambient_dim {
            return Err(Error::mismatch(r.ambient_dim, matrix.nrows()));
        }
        Plane::new(matrix, r.plane_dim)
    }
}

/// A tangent vector `V = T^⊥LT + (T^⊥LT)ᵗ` at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub base: Plane,
    pub matrix: DMatrix<f64>,
}

impl TangentVector {
    /// Checks the structural zero blocks `TVT = 0` and `T^⊥VT^⊥ = 0`.
    pub fn new(base: Plane, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.shape() != base.matrix.shape() {
            return Err(Error::mismatch(
                format!("{0}x{0}", base.ambient_dim()),
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        let t = base.matrix();
        let tp = base.perp();
        let scale = 1.0 + matrix.norm();
        let inner = (t * &matrix * t).norm();
        let outer = (&tp * &matrix * &tp).norm();
        let asym = (&matrix - matrix.transpose()).norm();
        if inner > TOL_PLANE * scale || outer > TOL_PLANE * scale || asym > TOL_PLANE * scale {
            return Err(Error::NotTangent(format!(
                "|TVT| = {inner:.2e}, |T^⊥VT^⊥| = {outer:.2e}, asymmetry {asym:.2e}"
            )));
        }
        Ok(TangentVector { base, matrix })
    }

    /// Tangent vector generated by an arbitrary `L`.
    pub fn from_generator(base: &Plane, generator: &DMatrix<f64>) -> Self {
        let w = base.perp() * generator * base.matrix();
        let matrix = &w + w.transpose();
        TangentVector {
            base: base.clone(),
            matrix,
        }
    }
}

fn chart_block(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = x.shape();
    let mut frame = DMatrix::zeros(n + m, m);
    for i in 0..m {
        frame[(i, i)] = 1.0;
    }
    frame.view_mut((m, 0), (n, m)).copy_from(x);
    frame
}

fn check_chart_dims(x: &DMatrix<f64>, dims: Dims) -> Result<()> {
    if x.shape() != (dims.codim(), dims.plane) {
        return Err(Error::mismatch(
            format!("{}x{}", dims.codim(), dims.plane),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    Ok(())
}

/// The graph chart `h(X)` of an n×m matrix `X`.
pub fn graph_chart(x: &DMatrix<f64>, dims: Dims) -> Result<Plane> {
    check_chart_dims(x, dims)?;
    let frame = chart_block(x);
    let gram = frame.transpose() * &frame;
    let chol = gram.cholesky().ok_or(Error::RankCollapse)?;
    let matrix = &frame * chol.solve(&frame.transpose());
    Ok(Plane {
        matrix: linalg::sym(&matrix),
        dims,
        complement_of: None,
    })
}

/// Graph chart re-centered at an arbitrary plane: `X ↦ R·h(X)·Rᵗ` with
/// `R = [Q | Q⊥]` adapted to the center, so `X = 0` is the center itself and
/// no plane near the center is vertical.
#[derive(Debug, Clone)]
pub struct LocalChart {
    rotation: DMatrix<f64>,
    dims: Dims,
}

impl LocalChart {
    pub fn at(center: &Plane) -> Self {
        LocalChart {
            rotation: center.adapted_rotation(),
            dims: center.dims,
        }
    }

    /// Number of real coordinates, `n·m`.
    pub fn coordinate_count(&self) -> usize {
        self.dims.manifold_dim()
    }

    /// Plane at row-major coordinates of an n×m slope matrix.
    pub fn plane(&self, coords: &[f64]) -> Result<Plane> {
        let n = self.dims.codim();
        let m = self.dims.plane;
        if coords.len() != n * m {
            return Err(Error::mismatch(n * m, coords.len()));
        }
        let x = DMatrix::from_row_slice(n, m, coords);
        let h = graph_chart(&x, self.dims)?;
        let matrix = &self.rotation * h.matrix * self.rotation.transpose();
        Ok(Plane {
            matrix: linalg::sym(&matrix),
            dims: self.dims,
            complement_of: None,
        })
    }
}

/// Inverse of the graph chart on planes whose leading m×m block is invertible.
pub fn chart_inverse(t: &Plane) -> Result<DMatrix<f64>> {
    let m = t.plane_dim();
    let n = t.dims.codim();
    let lead = t.matrix.view((0, 0), (m, m)).into_owned();
    let det = lead.determinant();
    if det.abs() <= TOL_CHART_RANK * t.matrix.norm() {
        return Err(Error::SingularChart { det });
    }
    let lower = t.matrix.view((m, 0), (n, m)).into_owned();
    let inv = lead.try_inverse().ok_or(Error::SingularChart { det })?;
    Ok(lower * inv)
}

/// `√det(I_m + XᵗX)`, the area element of the graph with slope `X`.
pub fn area_element(x: &DMatrix<f64>) -> f64 {
    let m = x.ncols();
    let gram = DMatrix::<f64>::identity(m, m) + x.transpose() * x;
    match gram.clone().cholesky() {
        Some(chol) => chol.l().diagonal().iter().product(),
        None => gram.determinant().max(1.0).sqrt(),
    }
}

/// `I − T`, an (N−m)-plane. Applying it twice returns `T` bit-for-bit.
pub fn complement(t: &Plane) -> Plane {
    let matrix = match &t.complement_of {
        Some(original) => (**original).clone(),
        None => t.perp(),
    };
    Plane {
        matrix,
        dims: t.dims.complement(),
        complement_of: Some(Box::new(t.matrix.clone())),
    }
}

/// Frobenius distance `‖T − S‖`.
pub fn plane_distance(t: &Plane, s: &Plane) -> Result<f64> {
    if t.dims != s.dims {
        return Err(Error::mismatch(t.dims, s.dims));
    }
    Ok((&t.matrix - &s.matrix).norm())
}

/// Haar-distributed orthonormal N×m frame.
pub fn sample_frame<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(dims.ambient, dims.plane, |_, _| rng.sample(StandardNormal));
        if let Some(q) = linalg::orthonormalize(&g) {
            return q;
        }
    }
}

/// Haar-uniform random plane.
pub fn sample_plane<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> Plane {
    Plane::from_orthonormal(&sample_frame(rng, dims))
}

/// Orthonormal (Frobenius) basis of `Tan_T G(N,m)`, `m·(N−m)` elements
/// `(q⊥_i q_jᵗ + q_j q⊥_iᵗ)/√2`.
pub fn tangent_basis(t: &Plane) -> Vec<TangentVector> {
    tangent_basis_matrices(t)
        .into_iter()
        .map(|matrix| TangentVector {
            base: t.clone(),
            matrix,
        })
        .collect()
}

pub(crate) fn tangent_basis_matrices(t: &Plane) -> Vec<DMatrix<f64>> {
    let (q, qp) = t.frames();
    tangent_basis_from_frames(&q, &qp)
}

pub(crate) fn tangent_basis_from_frames(q: &DMatrix<f64>, qp: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(q.ncols() * qp.ncols());
    for i in 0..qp.ncols() {
        for j in 0..q.ncols() {
            let outer = qp.column(i) * q.column(j).transpose();
            out.push((&outer + outer.transpose()) * scale);
        }
    }
    out
}

/// Retraction `t ↦ span(Q + t·V·Q)` with `Q` an orthonormal frame of `T`.
pub fn retract(t: &Plane, v: &TangentVector, step: f64) -> Result<Plane> {
    if v.base.dims != t.dims {
        return Err(Error::mismatch(t.dims, v.base.dims));
    }
    if step == 0.0 {
        return Ok(t.clone());
    }
    let (q, _) = t.frames();
    retract_frame(&q, &v.matrix, step)
}

pub(crate) fn retract_frame(q: &DMatrix<f64>, v: &DMatrix<f64>, step: f64) -> Result<Plane> {
    let moved = q + v * q * step;
    let frame = linalg::orthonormalize(&moved).ok_or(Error::RankCollapse)?;
    Ok(Plane::from_orthonormal(&frame))
}
