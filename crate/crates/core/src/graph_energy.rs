//! The nonparametric energy `F_Ψ(X) = Ψ(h(X))·𝒜(X)` of graphs and
//! diagnostics on grid-sampled maps `u: Ω ⊂ ℝ^m → ℝ^n`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{Condition, ConditionReport, Tolerances, Verdict, Witness};
use crate::error::{Error, Result};
use crate::grassmann::{area_element, graph_chart, Dims};
use crate::integrand::{stress, Integrand};
use crate::linalg;
use crate::sampling::{rng_for, sub_seed};

/// Entrywise step for `DF_Ψ`.
pub const FD_STEP_FIRST: f64 = 1e-5;
/// Step for second derivatives `D²F_Ψ[M,M]`.
pub const FD_STEP_SECOND: f64 = 1e-3;
pub const LH_STARTS: usize = 1000;
const LH_SWEEPS: usize = 6;
const BOUNDARY_TOL: f64 = 1e-12;

/// Uniform grid geometry: `points[k]` nodes along axis k, row-major with the
/// last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub n: usize,
    pub points: Vec<usize>,
    pub spacing: f64,
    pub origin: Vec<f64>,
}

impl GridSpec {
    pub fn new(m: usize, n: usize, points: Vec<usize>, spacing: f64, origin: Vec<f64>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Field("m and n must be positive".into()));
        }
        if points.len() != m || origin.len() != m {
            return Err(Error::Field(format!(
                "expected {m} axis sizes and origin coordinates, got {} and {}",
                points.len(),
                origin.len()
            )));
        }
        if points.iter().any(|&p| p < 3) {
            return Err(Error::Field("every axis needs at least 3 points".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) || origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::Field("spacing must be positive and origin finite".into()));
        }
        Ok(GridSpec {
            m,
            n,
            points,
            spacing,
            origin,
        })
    }

    /// Square grid `[lo, hi]^m` with `points` nodes per axis.
    pub fn cube(m: usize, n: usize, points: usize, lo: f64, hi: f64) -> Result<Self> {
        let spacing = (hi - lo) / (points as f64 - 1.0);
        Self::new(m, n, vec![points; m], spacing, vec![lo; m])
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Dims {
        Dims {
            ambient: self.n + self.m,
            plane: self.m,
        }
    }

    fn stride(&self, axis: usize) -> usize {
        self.points[axis + 1..].iter().product()
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.m];
        for k in (0..self.m).rev() {
            out[k] = idx % self.points[k];
            idx /= self.points[k];
        }
        out
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.points).fold(0, |acc, (&i, &p)| acc * p + i)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi(idx)
            .iter()
            .zip(&self.origin)
            .map(|(&i, &o)| o + i as f64 * self.spacing)
            .collect()
    }

    /// Distance in cells to the nearest boundary face.
    pub fn depth(&self, idx: usize) -> usize {
        self.multi(idx)
            .iter()
            .zip(&self.points)
            .map(|(&i, &p)| i.min(p - 1 - i))
            .min()
            .unwrap_or(0)
    }

    fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + (self.points[axis] - 1) as f64 * self.spacing
    }

    /// Grid points whose node lies in the closed ball `B_r(x)`.
    pub fn ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let h = self.spacing;
        let ranges: Vec<(usize, usize)> = (0..self.m)
            .map(|k| {
                let lo = ((x[k] - r - self.origin[k]) / h).floor().max(0.0) as usize;
                let hi = (((x[k] + r - self.origin[k]) / h).ceil().max(0.0) as usize).min(self.points[k] - 1);
                (lo, hi)
            })
            .collect();
        let mut out = Vec::new();
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        if ranges.iter().any(|r| r.0 > r.1) {
            return out;
        }
        loop {
            let idx = self.flat(&cur);
            let d2: f64 = self
                .coords(idx)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if d2 <= r * r * (1.0 + 1e-12) {
                out.push(idx);
            }
            let mut k = self.m;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if cur[k] < ranges[k].1 {
                    cur[k] += 1;
                    break;
                }
                cur[k] = ranges[k].0;
            }
        }
    }

    /// Requires the ball to stay `cells` grid cells inside the domain.
    fn check_ball(&self, x: &[f64], r: f64, cells: usize) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::mismatch(self.m, x.len()));
        }
        if r < 2.0 * self.spacing {
            return Err(Error::Domain(format!(
                "radius {r} is below the resolution 2·spacing = {}",
                2.0 * self.spacing
            )));
        }
        let pad = cells as f64 * self.spacing;
        for k in 0..self.m {
            if x[k] - r < self.origin[k] + pad - 1e-12 || x[k] + r > self.upper(k) - pad + 1e-12 {
                return Err(Error::Domain(format!(
                    "ball of radius {r} at {x:?} leaves the domain (padding {cells} cells)"
                )));
            }
        }
        Ok(())
    }
}

/// Grid samples of a map `u: Ω → ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphField {
    spec: GridSpec,
    values: Vec<f64>,
    lipschitz: f64,
}

impl GraphField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() * spec.n {
            return Err(Error::Field(format!(
                "expected {} values, got {}",
                spec.len() * spec.n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Field("non-finite value".into()));
        }
        let mut field = GraphField {
            spec,
            values,
            lipschitz: 0.0,
        };
        field.lipschitz = field.compute_lipschitz();
        Ok(field)
    }

    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(spec.len() * spec.n);
        for idx in 0..spec.len() {
            let v = f(&spec.coords(idx));
            if v.len() != spec.n {
                return Err(Error::mismatch(spec.n, v.len()));
            }
            values.extend(v);
        }
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.spec.n..(idx + 1) * self.spec.n]
    }

    /// Max of `‖Du‖_op` over the grid.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    fn compute_lipschitz(&self) -> f64 {
        (0..self.spec.len())
            .map(|i| linalg::op_norm(&self.gradient(i)))
            .fold(0.0, f64::max)
    }

    /// `Du` (n×m) by central differences, one-sided on boundary faces.
    pub fn gradient(&self, idx: usize) -> DMatrix<f64> {
        let s = &self.spec;
        let multi = s.multi(idx);
        let mut g = DMatrix::zeros(s.n, s.m);
        for k in 0..s.m {
            let stride = s.stride(k);
            let (lo, hi) = if multi[k] == 0 {
                (idx, idx + stride)
            } else if multi[k] == s.points[k] - 1 {
                (idx - stride, idx)
            } else {
                (idx - stride, idx + stride)
            };
            let width = ((hi - lo) / stride) as f64 * s.spacing;
            for j in 0..s.n {
                g[(j, k)] = (self.value(hi)[j] - self.value(lo)[j]) / width;
            }
        }
        g
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = format!("gridfield {} {}", s.m, s.n);
        for p in &s.points {
            let _ = write!(out, " {p}");
        }
        let origin: Vec<String> = s.origin.iter().map(|c| format!("{c:.16e}")).collect();
        let _ = writeln!(out, " spacing={:.16e} origin={}", s.spacing, origin.join(","));
        for idx in 0..s.len() {
            let row: Vec<String> = self.value(idx).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Field(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty gridfield"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.first() != Some(&"gridfield") || tokens.len() < 3 {
            return Err(bad("header must start with `gridfield m n`"));
        }
        let m: usize = tokens[1].parse().map_err(|_| bad("bad m"))?;
        let n: usize = tokens[2].parse().map_err(|_| bad("bad n"))?;
        if tokens.len() != 5 + m {
            return Err(bad("header needs m axis sizes, spacing= and origin="));
        }
        let points = tokens[3..3 + m]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad axis size")))
            .collect::<Result<Vec<_>>>()?;
        let spacing: f64 = tokens[3 + m]
            .strip_prefix("spacing=")
            .ok_or_else(|| bad("missing spacing="))?
            .parse()
            .map_err(|_| bad("bad spacing"))?;
        let origin = tokens[4 + m]
            .strip_prefix("origin=")
            .ok_or_else(|| bad("missing origin="))?
            .split(',')
            .map(|t| t.parse::<f64>().map_err(|_| bad("bad origin")))
            .collect::<Result<Vec<_>>>()?;
        let spec = GridSpec::new(m, n, points, spacing, origin)?;
        let mut values = Vec::with_capacity(spec.len() * n);
        for (rows, line) in lines.enumerate() {
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != n {
                return Err(bad(&format!("row {rows} has {} values, expected {n}", row.len())));
            }
            values.extend(row);
        }
        Self::new(spec, values)
    }
}

fn check_dims(psi: &Integrand, x: &DMatrix<f64>) -> Result<()> {
    let dims = Dims::new(x.nrows() + x.ncols(), x.ncols())?;
    if psi.dims() != dims {
        return Err(Error::mismatch(dims, psi.dims()));
    }
    Ok(())
}

/// `F_Ψ(X) = Ψ(h(X))·𝒜(X)`.
pub fn f_psi(psi: &Integrand, x: &DMatrix<f64>) -> Result<f64> {
    check_dims(psi, x)?;
    Ok(psi.evaluate(&graph_chart(x, psi.dims())?)? * area_element(x))
}

/// `DF_Ψ(X) = 𝒜(X)·B_Ψ(h(X))₂₁`, the lower-left n×m block of the stress:
/// moving the graph of X along Y is the linear map `(x, y) ↦ (x, y + Yx)`,
/// whose first variation at the plane is `⟨B_Ψ, [0 0; Y 0]⟩` per unit area.
pub fn df_psi(psi: &Integrand, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(graph_stress(psi, x)?.1)
}

/// `(F_Ψ(X), DF_Ψ(X))` from a single stress evaluation.
fn graph_stress(psi: &Integrand, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    check_dims(psi, x)?;
    let (n, m) = x.shape();
    let b = stress(psi, &graph_chart(x, psi.dims())?)?;
    let j = area_element(x);
    Ok((b.psi_value * j, b.matrix.view((m, 0), (n, m)) * j))
}

/// `DF_Ψ(X)` by central differences of `F_Ψ` per entry.
pub fn df_psi_fd(psi: &Integrand, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(psi, x)?;
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut plus = x.clone();
            plus[(i, j)] += FD_STEP_FIRST;
            let mut minus = x.clone();
            minus[(i, j)] -= FD_STEP_FIRST;
            g[(i, j)] = (f_psi(psi, &plus)? - f_psi(psi, &minus)?) / (2.0 * FD_STEP_FIRST);
        }
    }
    Ok(g)
}

/// The stacked matrix `(X; A; B)` with `A = DF_Ψ(X)`, `B = XᵗA − F_Ψ(X)I`.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionPoint {
    pub matrix: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl InclusionPoint {
    pub fn x(&self) -> DMatrix<f64> {
        self.matrix.rows(0, self.n).into_owned()
    }

    pub fn a_block(&self) -> DMatrix<f64> {
        self.matrix.rows(self.n, self.n).into_owned()
    }

    pub fn b_block(&self) -> DMatrix<f64> {
        self.matrix.rows(2 * self.n, self.m).into_owned()
    }
}

/// The stress pair `(B, A)` of the graph energy at slope `X`.
pub fn stress_pair(psi: &Integrand, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (f, a) = graph_stress(psi, x)?;
    let m = x.ncols();
    let b = x.transpose() * &a - DMatrix::identity(m, m) * f;
    Ok((b, a))
}

pub fn build_inclusion_point(psi: &Integrand, x: &DMatrix<f64>) -> Result<InclusionPoint> {
    let (b, a) = stress_pair(psi, x)?;
    let (n, m) = x.shape();
    let mut matrix = DMatrix::zeros(2 * n + m, m);
    matrix.rows_mut(0, n).copy_from(x);
    matrix.rows_mut(n, n).copy_from(&a);
    matrix.rows_mut(2 * n, m).copy_from(&b);
    Ok(InclusionPoint { matrix, n, m })
}

/// Strong-form Ψ-mean curvature `H′ = −div[B(Du); A(Du)] / 𝒜(Du)` on points
/// at least two cells from the boundary; `None` elsewhere.
pub fn mean_curvature_residual(psi: &Integrand, u: &GraphField) -> Result<Vec<Option<DVector<f64>>>> {
    let s = &u.spec;
    if psi.dims() != s.dims() {
        return Err(Error::mismatch(s.dims(), psi.dims()));
    }
    let stacked: Vec<Option<DMatrix<f64>>> = (0..s.len())
        .into_par_iter()
        .map(|idx| {
            if s.depth(idx) < 1 {
                return Ok(None);
            }
            let (b, a) = stress_pair(psi, &u.gradient(idx))?;
            let mut st = DMatrix::zeros(s.m + s.n, s.m);
            st.rows_mut(0, s.m).copy_from(&b);
            st.rows_mut(s.m, s.n).copy_from(&a);
            Ok(Some(st))
        })
        .collect::<Result<Vec<_>>>()?;
    let h = s.spacing;
    Ok((0..s.len())
        .into_par_iter()
        .map(|idx| {
            if s.depth(idx) < 2 {
                return None;
            }
            let mut div = DVector::zeros(s.m + s.n);
            for k in 0..s.m {
                let stride = s.stride(k);
                let (Some(hi), Some(lo)) = (&stacked[idx + stride], &stacked[idx - stride]) else {
                    return None;
                };
                for i in 0..s.m + s.n {
                    div[i] += (hi[(i, k)] - lo[(i, k)]) / (2.0 * h);
                }
            }
            Some(-div / area_element(&u.gradient(idx)))
        })
        .collect())
}

/// `⨍_{B_r(x)} ‖Du − (Du)_{x,r}‖²` over grid points in the ball.
pub fn excess(u: &GraphField, x: &[f64], r: f64) -> Result<f64> {
    u.spec.check_ball(x, r, 1)?;
    let ball = u.spec.ball(x, r);
    let grads: Vec<DMatrix<f64>> = ball.iter().map(|&i| u.gradient(i)).collect();
    let mean = grads.iter().fold(DMatrix::zeros(u.spec.n, u.spec.m), |acc, g| acc + g) / grads.len() as f64;
    Ok(grads.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / grads.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliProbe {
    pub lhs: f64,
    pub rhs_flat: f64,
    pub rhs_curv: f64,
    /// Enlargement factor `k = 2(1 + L)`.
    pub k: f64,
}

impl CaccioppoliProbe {
    pub fn ratio(&self) -> f64 {
        self.lhs / (self.rhs_flat + self.rhs_curv)
    }
}

/// The three terms of the graph Caccioppoli inequality at `(x, r)` with
/// reference slope `A`.
pub fn caccioppoli_probe(
    psi: &Integrand,
    u: &GraphField,
    x: &[f64],
    r: f64,
    a: &DMatrix<f64>,
) -> Result<CaccioppoliProbe> {
    let curvature = mean_curvature_residual(psi, u)?;
    caccioppoli_with(u, &curvature, x, r, a)
}

/// As `caccioppoli_probe`, reusing a precomputed curvature field.
pub fn caccioppoli_with(
    u: &GraphField,
    curvature: &[Option<DVector<f64>>],
    x: &[f64],
    r: f64,
    a: &DMatrix<f64>,
) -> Result<CaccioppoliProbe> {
    let s = &u.spec;
    if a.shape() != (s.n, s.m) {
        return Err(Error::mismatch(format!("{}x{}", s.n, s.m), format!("{}x{}", a.nrows(), a.ncols())));
    }
    let lip = u.lipschitz;
    if linalg::op_norm(a) > 2.0 * lip + 1e-12 {
        return Err(Error::Domain(format!(
            "‖A‖ = {} exceeds twice the Lipschitz estimate {lip}",
            linalg::op_norm(a)
        )));
    }
    let k = 2.0 * (1.0 + lip);
    s.check_ball(x, k * r, 2)?;
    s.check_ball(x, r, 1)?;

    let inner = s.ball(x, r);
    let lhs = inner.iter().map(|&i| (u.gradient(i) - a).norm_squared()).sum::<f64>() / inner.len() as f64;

    let outer = s.ball(x, k * r);
    let count = outer.len() as f64;
    let mut mean = DVector::zeros(s.n);
    for &i in &outer {
        mean += DVector::from_column_slice(u.value(i));
    }
    mean /= count;
    let mut flat = 0.0;
    let mut curv = 0.0;
    for &i in &outer {
        let y = DVector::from_vec(s.coords(i));
        let offset = &y - DVector::from_column_slice(x);
        let dev = DVector::from_column_slice(u.value(i)) - &mean - a * offset;
        flat += dev.norm_squared();
        let h = curvature[i]
            .as_ref()
            .ok_or_else(|| Error::Domain("curvature undefined inside the enlarged ball".into()))?;
        curv += h.norm_squared();
    }
    Ok(CaccioppoliProbe {
        lhs,
        rhs_flat: flat / count / (r * r),
        rhs_curv: r * r * curv / count,
        k,
    })
}

/// Slopes `Dφ` per grid cell: forward differences averaged over the
/// 2^{m−1} cell edges parallel to each axis.
fn cell_gradients(field: &GraphField) -> Vec<DMatrix<f64>> {
    let s = &field.spec;
    let cells: Vec<usize> = s.points.iter().map(|p| p - 1).collect();
    let total: usize = cells.iter().product();
    let corners = 1usize << s.m;
    (0..total)
        .map(|c| {
            let mut base = vec![0; s.m];
            let mut rest = c;
            for k in (0..s.m).rev() {
                base[k] = rest % cells[k];
                rest /= cells[k];
            }
            let mut g = DMatrix::zeros(s.n, s.m);
            for k in 0..s.m {
                for corner in 0..corners {
                    if corner & (1 << k) != 0 {
                        continue;
                    }
                    let mut lo = base.clone();
                    for (j, l) in lo.iter_mut().enumerate() {
                        *l += (corner >> j) & 1;
                    }
                    let mut hi = lo.clone();
                    hi[k] += 1;
                    let (lo, hi) = (s.flat(&lo), s.flat(&hi));
                    for j in 0..s.n {
                        g[(j, k)] += field.value(hi)[j] - field.value(lo)[j];
                    }
                }
            }
            g / (s.spacing * (corners / 2) as f64)
        })
        .collect()
}

fn check_zero_boundary(field: &GraphField) -> Result<()> {
    let s = &field.spec;
    for idx in 0..s.len() {
        if s.depth(idx) == 0 && field.value(idx).iter().any(|v| v.abs() > BOUNDARY_TOL) {
            return Err(Error::Field(format!("test field is nonzero at boundary node {idx}")));
        }
    }
    Ok(())
}

/// `(∫F_Ψ(A+Dφ) − F_Ψ(A), ∫𝒜(A+Dφ) − 𝒜(A))` by midpoint quadrature.
fn quasiconvexity_terms(psi: &Integrand, a: &DMatrix<f64>, phi: &GraphField) -> Result<(f64, f64)> {
    let s = &phi.spec;
    if psi.dims() != s.dims() {
        return Err(Error::mismatch(s.dims(), psi.dims()));
    }
    if a.shape() != (s.n, s.m) {
        return Err(Error::mismatch(format!("{}x{}", s.n, s.m), format!("{}x{}", a.nrows(), a.ncols())));
    }
    check_zero_boundary(phi)?;
    let f0 = f_psi(psi, a)?;
    let a0 = area_element(a);
    let vol = s.spacing.powi(s.m as i32);
    let (mut energy, mut area) = (0.0, 0.0);
    for g in cell_gradients(phi) {
        let y = a + g;
        energy += (f_psi(psi, &y)? - f0) * vol;
        area += (area_element(&y) - a0) * vol;
    }
    Ok((energy, area))
}

/// `∫[F_Ψ(A+Dφ) − F_Ψ(A)] − α∫[𝒜(A+Dφ) − 𝒜(A)]` for φ vanishing on ∂Ω.
pub fn quasiconvexity_gap(psi: &Integrand, a: &DMatrix<f64>, phi: &GraphField, alpha: f64) -> Result<f64> {
    let (energy, area) = quasiconvexity_terms(psi, a, phi)?;
    Ok(energy - alpha * area)
}

/// The largest α for which this test field has a nonnegative gap.
pub fn quasiconvexity_ratio(psi: &Integrand, a: &DMatrix<f64>, phi: &GraphField) -> Result<f64> {
    let (energy, area) = quasiconvexity_terms(psi, a, phi)?;
    Ok(energy / area)
}

/// A random sum of three sine products vanishing on the boundary of the box.
pub fn random_test_field(grid: &GridSpec, seed: u64) -> Result<GraphField> {
    let mut rng = rng_for(seed, 0);
    let lengths: Vec<f64> = (0..grid.m)
        .map(|k| (grid.points[k] - 1) as f64 * grid.spacing)
        .collect();
    let modes: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
        .map(|_| {
            let freq = (0..grid.m).map(|_| rng.random_range(1..=3) as f64).collect();
            let amp = (0..grid.n).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
            (freq, amp)
        })
        .collect();
    let spec = grid.clone();
    GraphField::from_fn(spec, |x| {
        let mut out = vec![0.0; grid.n];
        for (freq, amp) in &modes {
            let shape: f64 = (0..grid.m)
                .map(|k| {
                    let t = (x[k] - grid.origin[k]) / lengths[k];
                    if t <= 0.0 || t >= 1.0 {
                        0.0
                    } else {
                        (std::f64::consts::PI * freq[k] * t).sin()
                    }
                })
                .product();
            for (o, a) in out.iter_mut().zip(amp) {
                *o += a * shape;
            }
        }
        out
    })
}

/// QC report over `count` random test fields: the constant is the smallest
/// admissible α seen, the verdict asks that the gap at `alpha` stay ≥ −1e-8.
pub fn quasiconvexity_report(
    psi: &Integrand,
    a: &DMatrix<f64>,
    grid: &GridSpec,
    count: usize,
    seed: u64,
    alpha: f64,
) -> Result<ConditionReport> {
    if count == 0 {
        return Err(Error::Usage("need at least one test field".into()));
    }
    let results = (0..count)
        .into_par_iter()
        .map(|i| {
            let field_seed = sub_seed(seed, i as u64);
            let field = random_test_field(grid, field_seed)?;
            let (energy, area) = quasiconvexity_terms(psi, a, &field)?;
            Ok((field_seed, energy / area, energy - alpha * area))
        })
        .collect::<Result<Vec<_>>>()?;
    let (worst_seed, ratio, _) = results
        .iter()
        .copied()
        .fold((0, f64::INFINITY, 0.0), |acc, r| if r.1 < acc.1 { r } else { acc });
    let min_gap = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let mut report = ConditionReport {
        condition: Condition::QC,
        verdict: if min_gap >= -1e-8 { Verdict::Pass } else { Verdict::Fail },
        constant_estimate: ratio,
        witness: Witness::TestField {
            a: linalg::to_rows(a),
            grid: grid.clone(),
            seed: worst_seed,
        },
        samples_used: count as u64,
        seed,
        integrand: psi.label().to_string(),
        threshold: Some(alpha),
        extras: Default::default(),
        notes: Vec::new(),
    };
    report.extras.insert("min_gap".into(), min_gap);
    Ok(report)
}

/// `D²F_Ψ(X)[a⊗b, a⊗b]` by second central differences, `a`, `b` normalized.
pub fn rank_one_second_derivative(psi: &Integrand, x: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<f64> {
    let f0 = f_psi(psi, x)?;
    second_derivative(psi, x, f0, &unit(a)?, &unit(b)?)
}

fn unit(v: &[f64]) -> Result<DVector<f64>> {
    let v = DVector::from_column_slice(v);
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Usage("rank-one direction must be nonzero".into()));
    }
    Ok(v / norm)
}

fn second_derivative(psi: &Integrand, x: &DMatrix<f64>, f0: f64, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    let h = FD_STEP_SECOND;
    let m = a * b.transpose() * h;
    Ok((f_psi(psi, &(x + &m))? - 2.0 * f0 + f_psi(psi, &(x - &m))?) / (h * h))
}

/// Matrix of the quadratic form `v ↦ q(v)` on ℝ^d via polarization.
fn polarize<Q>(d: usize, q: Q) -> Result<DMatrix<f64>>
where
    Q: Fn(&DVector<f64>) -> Result<f64>,
{
    let e = |i: usize| DVector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 });
    let diag: Vec<f64> = (0..d).map(|i| q(&e(i))).collect::<Result<_>>()?;
    let mut h = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
    for i in 0..d {
        for j in i + 1..d {
            let v = (q(&(e(i) + e(j)))? - diag[i] - diag[j]) / 2.0;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

fn min_eigenvector(h: &DMatrix<f64>) -> DVector<f64> {
    let (_, vectors) = linalg::sorted_eigen(h);
    vectors.column(h.ncols() - 1).into_owned()
}

/// Legendre–Hadamard minimum over unit rank-one directions.
pub fn legendre_hadamard_min(psi: &Integrand, x: &DMatrix<f64>) -> Result<f64> {
    Ok(legendre_hadamard_report(psi, x, LH_STARTS, 0, &Tolerances::default())?.constant_estimate)
}

/// Alternating minimization over `a` and `b` of `D²F_Ψ(X)[a⊗b, a⊗b]`: with
/// one factor fixed the form is quadratic in the other, so each half-sweep
/// takes the smallest eigenvector of its polarized matrix.
pub fn legendre_hadamard_report(
    psi: &Integrand,
    x: &DMatrix<f64>,
    starts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<ConditionReport> {
    check_dims(psi, x)?;
    if starts == 0 {
        return Err(Error::Usage("need at least one start".into()));
    }
    let (n, m) = x.shape();
    let f0 = f_psi(psi, x)?;
    let runs = (0..starts)
        .into_par_iter()
        .map(|i| -> Result<(f64, DVector<f64>, DVector<f64>)> {
            let mut rng = rng_for(sub_seed(seed, i as u64), 0);
            let mut b = unit(&(0..m).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>())?;
            let mut a = DVector::zeros(n);
            for _ in 0..LH_SWEEPS {
                let ha = polarize(n, |v| second_derivative(psi, x, f0, v, &b))?;
                a = min_eigenvector(&ha);
                let hb = polarize(m, |v| second_derivative(psi, x, f0, &a, v))?;
                b = min_eigenvector(&hb);
            }
            let value = second_derivative(psi, x, f0, &a, &b)?;
            Ok((value, a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let (value, a, b) = runs
        .into_iter()
        .reduce(|acc, r| if r.0 < acc.0 { r } else { acc })
        .expect("starts ≥ 1");
    let mut report = ConditionReport {
        condition: Condition::LH,
        verdict: Verdict::above(value, 0.0, tol.margin),
        constant_estimate: value,
        witness: Witness::RankOne {
            x: linalg::to_rows(x),
            a: a.iter().copied().collect(),
            b: b.iter().copied().collect(),
        },
        samples_used: starts as u64,
        seed,
        integrand: psi.label().to_string(),
        threshold: Some(0.0),
        extras: Default::default(),
        notes: Vec::new(),
    };
    report.constant_estimate = report.reevaluate(psi)?;
    Ok(report)
}
