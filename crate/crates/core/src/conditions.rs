//! Sampling and search based checks of the ellipticity conditions
//! (SAC1), (SAC), (USAC), (AC1) and (AC2).
//!
//! Scans prove nothing; they estimate constants and report a verdict with a
//! margin. A value that clears its threshold by less than the margin is
//! reported as inconclusive.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{self, Dims, LocalChart, Plane};
use crate::integrand::{
    function_gradient_fd, pairing_from, stress, Integrand, LocalStress, SmoothPerturbation,
};
use crate::linalg;
use crate::nelder_mead::{self, Options};
use crate::sampling::{chunked, rng_for, sub_seed};

pub const TOL_RANK: f64 = 1e-7;
pub const DIRAC_RADIUS: f64 = 1e-6;
pub const MARGIN: f64 = 1e-4;
pub const MIN_SEPARATION: f64 = 0.1;
/// Pairs closer than this are never scored: FD noise in B is ~1e-5 while the
/// denominator would be ~1e-6.
pub const NEAR_DIAGONAL_FLOOR: f64 = 1e-3;

const WORST_KEPT: usize = 10;
const REFINE_EVALS: usize = 300;
const REFINE_STEP: f64 = 0.05;
const ORTHOGONAL_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_rank: f64,
    pub min_separation: f64,
    pub margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_rank: TOL_RANK,
            min_separation: MIN_SEPARATION,
            margin: MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    SAC1,
    SAC,
    USAC,
    AC1,
    AC2,
    LH,
    QC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Pass when `value ≥ threshold + margin`, fail when `value ≤ threshold`.
    pub fn above(value: f64, threshold: f64, margin: f64) -> Self {
        if value.is_nan() || value <= threshold {
            Verdict::Fail
        } else if value >= threshold + margin {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        }
    }

    /// Pass when `value < threshold − margin`, fail when `value ≥ threshold`.
    pub fn below(value: f64, threshold: f64, margin: f64) -> Self {
        if value.is_nan() || value >= threshold {
            Verdict::Fail
        } else if value < threshold - margin {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        }
    }

    /// Fail dominates inconclusive, which dominates pass.
    pub fn combine(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPlane {
    pub plane: Plane,
    pub weight: f64,
}

/// A probability measure with finitely many plane atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeightedPlane>", into = "Vec<WeightedPlane>")]
pub struct DiscreteMeasure {
    atoms: Vec<WeightedPlane>,
}

impl TryFrom<Vec<WeightedPlane>> for DiscreteMeasure {
    type Error = Error;
    fn try_from(atoms: Vec<WeightedPlane>) -> Result<Self> {
        DiscreteMeasure::new(atoms.into_iter().map(|a| (a.plane, a.weight)).collect())
    }
}

impl From<DiscreteMeasure> for Vec<WeightedPlane> {
    fn from(mu: DiscreteMeasure) -> Self {
        mu.atoms
    }
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(Plane, f64)>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidMeasure("no atoms".into()));
        };
        let dims = first.0.dims();
        let mut total = 0.0;
        for (plane, w) in &atoms {
            if plane.dims() != dims {
                return Err(Error::mismatch(dims, plane.dims()));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(DiscreteMeasure {
            atoms: atoms
                .into_iter()
                .map(|(plane, weight)| WeightedPlane { plane, weight })
                .collect(),
        })
    }

    pub fn dirac(t: Plane) -> Self {
        DiscreteMeasure {
            atoms: vec![WeightedPlane {
                plane: t,
                weight: 1.0,
            }],
        }
    }

    /// `α μ₁ + (1−α) μ₂`.
    pub fn mix(alpha: f64, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::InvalidMeasure(format!("mixing weight {alpha} not in (0,1)")));
        }
        let atoms = a
            .atoms
            .iter()
            .map(|x| (x.plane.clone(), alpha * x.weight))
            .chain(b.atoms.iter().map(|x| (x.plane.clone(), (1.0 - alpha) * x.weight)))
            .collect();
        Self::new(atoms)
    }

    /// 1 to `max_atoms` Haar atoms with weights normalized from U(0.05, 1).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: Dims, max_atoms: usize) -> Self {
        let k = rng.random_range(1..=max_atoms.max(1));
        let mut atoms: Vec<WeightedPlane> = (0..k)
            .map(|_| WeightedPlane {
                plane: grassmann::sample_plane(rng, dims),
                weight: rng.random_range(0.05..1.0),
            })
            .collect();
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for a in &mut atoms {
            a.weight /= total;
        }
        DiscreteMeasure { atoms }
    }

    pub fn atoms(&self) -> &[WeightedPlane] {
        &self.atoms
    }

    pub fn dims(&self) -> Dims {
        self.atoms[0].plane.dims()
    }

    /// Atoms merged when within `radius` of a cluster representative.
    pub fn clustered(&self, radius: f64) -> Vec<WeightedPlane> {
        let mut clusters: Vec<WeightedPlane> = Vec::new();
        for atom in &self.atoms {
            let hit = clusters
                .iter_mut()
                .find(|c| (c.plane.matrix() - atom.plane.matrix()).norm() <= radius);
            match hit {
                Some(c) => c.weight += atom.weight,
                None => clusters.push(atom.clone()),
            }
        }
        clusters
    }
}

/// What a measure witness re-evaluates to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureStatistic {
    /// (n+1)-th smallest singular value of A(μ).
    SigmaNPlusOne,
    /// n-th smallest singular value of A(μ).
    SigmaN,
    /// (n+1)-th smallest singular value over the largest.
    RelativeSigmaNPlusOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    None,
    Plane {
        plane: Plane,
    },
    Pair {
        t: Plane,
        s: Plane,
    },
    Measure {
        measure: DiscreteMeasure,
        statistic: MeasureStatistic,
    },
    RankOne {
        x: Vec<Vec<f64>>,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    TestField {
        a: Vec<Vec<f64>>,
        grid: crate::graph_energy::GridSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub verdict: Verdict,
    pub constant_estimate: f64,
    pub witness: Witness,
    pub samples_used: u64,
    pub seed: u64,
    pub integrand: String,
    /// Threshold the constant is compared against; absent when infinite.
    pub threshold: Option<f64>,
    pub extras: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(condition: Condition, psi: &Integrand, seed: u64) -> Self {
        ConditionReport {
            condition,
            verdict: Verdict::Inconclusive,
            constant_estimate: f64::NAN,
            witness: Witness::None,
            samples_used: 0,
            seed,
            integrand: psi.label().to_string(),
            threshold: None,
            extras: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn extra(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.extras.insert(key.to_string(), value);
        }
    }

    /// Recomputes the constant from the witness alone.
    pub fn reevaluate(&self, psi: &Integrand) -> Result<f64> {
        match &self.witness {
            Witness::None => Err(Error::Usage("report carries no witness".into())),
            Witness::Plane { plane } => sac1_value(psi, plane),
            Witness::Pair { t, s } => normalized_pairing(psi, t, s),
            Witness::Measure { measure, statistic } => {
                let sv = linalg::singular_values_asc(&a_matrix(psi, measure)?);
                let n = measure.dims().codim();
                Ok(match statistic {
                    MeasureStatistic::SigmaNPlusOne => sv[n],
                    MeasureStatistic::SigmaN => sv[n - 1],
                    MeasureStatistic::RelativeSigmaNPlusOne => relative(&sv, n),
                })
            }
            Witness::RankOne { x, a, b } => {
                let x = linalg::from_rows(x).ok_or_else(|| Error::Usage("empty witness".into()))?;
                crate::graph_energy::rank_one_second_derivative(psi, &x, a, b)
            }
            Witness::TestField { a, grid, seed } => {
                let a = linalg::from_rows(a).ok_or_else(|| Error::Usage("empty witness".into()))?;
                let field = crate::graph_energy::random_test_field(grid, *seed)?;
                crate::graph_energy::quasiconvexity_ratio(psi, &a, &field)
            }
        }
    }
}

fn relative(sv: &[f64], n: usize) -> f64 {
    let max = sv[sv.len() - 1];
    if max == 0.0 {
        0.0
    } else {
        sv[n] / max
    }
}

/// `A(μ) = Σᵢ wᵢ B_Ψ(Tᵢ)`.
pub fn a_matrix(psi: &Integrand, mu: &DiscreteMeasure) -> Result<DMatrix<f64>> {
    let n = psi.dims().ambient;
    let mut acc = DMatrix::zeros(n, n);
    for atom in &mu.atoms {
        acc += stress(psi, &atom.plane)?.matrix * atom.weight;
    }
    Ok(acc)
}

/// Number of singular values ≤ `tol_rank·σ_max`; all of them if `σ_max = 0`.
pub fn kernel_dim(m: &DMatrix<f64>, tol_rank: f64) -> usize {
    let sv = linalg::singular_values_asc(m);
    let max = sv.last().copied().unwrap_or(0.0);
    if max == 0.0 {
        return m.nrows();
    }
    sv.iter().filter(|&&s| s <= tol_rank * max).count()
}

pub fn check_ac1(psi: &Integrand, mu: &DiscreteMeasure, tol: &Tolerances) -> Result<ConditionReport> {
    let a = a_matrix(psi, mu)?;
    let n = psi.dims().codim();
    let kd = kernel_dim(&a, tol.tol_rank);
    let sv = linalg::singular_values_asc(&a);
    let mut report = ConditionReport::new(Condition::AC1, psi, 0);
    report.constant_estimate = sv[n];
    report.verdict = if kd <= n { Verdict::Pass } else { Verdict::Fail };
    report.witness = Witness::Measure {
        measure: mu.clone(),
        statistic: MeasureStatistic::SigmaNPlusOne,
    };
    report.samples_used = mu.atoms.len() as u64;
    report.threshold = Some(tol.tol_rank * sv[sv.len() - 1]);
    report.extra("kernel_dim", kd as f64);
    Ok(report)
}

pub fn check_ac2(psi: &Integrand, mu: &DiscreteMeasure, tol: &Tolerances) -> Result<ConditionReport> {
    let a = a_matrix(psi, mu)?;
    let n = psi.dims().codim();
    let kd = kernel_dim(&a, tol.tol_rank);
    let sv = linalg::singular_values_asc(&a);
    let mut report = ConditionReport::new(Condition::AC2, psi, 0);
    report.constant_estimate = sv[n - 1];
    report.witness = Witness::Measure {
        measure: mu.clone(),
        statistic: MeasureStatistic::SigmaN,
    };
    report.samples_used = mu.atoms.len() as u64;
    report.extra("kernel_dim", kd as f64);
    report.verdict = if kd != n {
        Verdict::Pass
    } else {
        ac2_kernel_n_verdict(mu, tol, &mut report)
    };
    Ok(report)
}

/// Kernel dimension is exactly n: decide whether the measure is Dirac.
///
/// The rank certificate cannot see atoms whose weight is below ~`tol_rank`,
/// nor spreads `d` with `d² ≲ tol_rank` (the n-th singular value scales like
/// `d²`), so such measures are inconclusive rather than violations.
fn ac2_kernel_n_verdict(mu: &DiscreteMeasure, tol: &Tolerances, report: &mut ConditionReport) -> Verdict {
    let clusters = mu.clustered(DIRAC_RADIUS);
    report.extra("clusters", clusters.len() as f64);
    if clusters.len() == 1 {
        return Verdict::Pass;
    }
    let significant: Vec<&WeightedPlane> = clusters
        .iter()
        .filter(|c| c.weight > 10.0 * tol.tol_rank)
        .collect();
    let mut spread: f64 = 0.0;
    for (i, a) in significant.iter().enumerate() {
        for b in &significant[i + 1..] {
            spread = spread.max((a.plane.matrix() - b.plane.matrix()).norm());
        }
    }
    report.extra("significant_spread", spread);
    if significant.len() >= 2 && spread * spread > 10.0 * tol.tol_rank {
        Verdict::Fail
    } else {
        report
            .notes
            .push("distinct atoms below the resolution of the rank tolerance".into());
        Verdict::Inconclusive
    }
}

/// `λ_max(sym B_Ψ(T))/Ψ(T) − 1`.
pub fn sac1_value(psi: &Integrand, t: &Plane) -> Result<f64> {
    let b = stress(psi, t)?;
    Ok(linalg::lambda_max_sym(&b.matrix) / b.psi_value - 1.0)
}

/// `⟨B_Ψ(T), B_{Ψ*}(S^⊥)⟩ / ‖T − S‖²`.
pub fn normalized_pairing(psi: &Integrand, t: &Plane, s: &Plane) -> Result<f64> {
    let d = grassmann::plane_distance(t, s)?;
    let lt = LocalStress::at(psi, t)?;
    let ls = LocalStress::at(psi, s)?;
    Ok(pairing_from(&lt, t, &ls, s) / (d * d))
}

/// `1/(m−1)`, infinite for m = 1.
pub fn sac1_threshold(dims: Dims) -> f64 {
    if dims.plane == 1 {
        f64::INFINITY
    } else {
        1.0 / (dims.plane as f64 - 1.0)
    }
}

#[derive(Debug, Clone)]
struct Scored<T> {
    score: f64,
    item: T,
}

/// Keeps the `WORST_KEPT` lowest scores, stable in insertion order.
fn keep_lowest<T>(list: &mut Vec<Scored<T>>, score: f64, item: impl FnOnce() -> T) {
    if list.len() == WORST_KEPT && score >= list[WORST_KEPT - 1].score {
        return;
    }
    let pos = list.partition_point(|x| x.score <= score);
    list.insert(pos, Scored { score, item: item() });
    list.truncate(WORST_KEPT);
}

fn merge_lowest<T>(parts: impl IntoIterator<Item = Vec<Scored<T>>>) -> Vec<Scored<T>> {
    let mut all: Vec<Scored<T>> = parts.into_iter().flatten().collect();
    all.sort_by(|a, b| a.score.total_cmp(&b.score));
    all.truncate(WORST_KEPT);
    all
}

pub fn sac1_scan(psi: &Integrand, samples: usize, seed: u64, tol: &Tolerances) -> Result<ConditionReport> {
    if samples == 0 {
        return Err(Error::Usage("samples must be at least 1".into()));
    }
    let dims = psi.dims();
    let chunks = chunked(samples, seed, |_, rng, count| -> Result<Vec<Scored<Plane>>> {
        let mut worst = Vec::new();
        for _ in 0..count {
            let t = grassmann::sample_plane(rng, dims);
            let v = sac1_value(psi, &t)?;
            keep_lowest(&mut worst, -v, || t);
        }
        Ok(worst)
    });
    let worst = merge_lowest(chunks.into_iter().collect::<Result<Vec<_>>>()?);

    let refined: Vec<(Scored<Plane>, usize)> = worst
        .par_iter()
        .map(|start| {
            let chart = LocalChart::at(&start.item);
            let k = chart.coordinate_count();
            let m = nelder_mead::minimize(
                |x| match chart.plane(x).and_then(|p| sac1_value(psi, &p)) {
                    Ok(v) => -v,
                    Err(_) => f64::INFINITY,
                },
                &vec![0.0; k],
                Options {
                    step: REFINE_STEP,
                    max_evals: REFINE_EVALS,
                    ..Options::default()
                },
            );
            let plane = chart.plane(&m.x)?;
            let score = -sac1_value(psi, &plane)?;
            Ok((Scored { score, item: plane }, m.evals))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = worst[0].clone();
    let mut evals = 0;
    for (cand, e) in refined {
        evals += e;
        if cand.score < best.score {
            best = cand;
        }
    }
    let delta = -best.score;
    let threshold = sac1_threshold(dims);
    let mut report = ConditionReport::new(Condition::SAC1, psi, seed);
    report.constant_estimate = delta;
    report.witness = Witness::Plane { plane: best.item };
    report.samples_used = (samples + evals) as u64;
    report.extra("scan_max", -worst[0].score);
    if threshold.is_finite() {
        report.threshold = Some(threshold);
        report.verdict = Verdict::below(delta, threshold, tol.margin);
    } else {
        report.verdict = Verdict::Pass;
        report.notes.push("m = 1: the threshold 1/(m-1) is infinite".into());
    }
    Ok(report)
}

#[derive(Debug, Clone)]
struct PairItem {
    t: Plane,
    s: Plane,
    pairing: f64,
    distance: f64,
}

struct PairChunk {
    worst: Vec<Scored<PairItem>>,
    min_pairing: f64,
    skipped: usize,
}

fn score_pair(psi: &Integrand, t: Plane, s: Plane) -> Result<(f64, PairItem)> {
    let d = grassmann::plane_distance(&t, &s)?;
    let lt = LocalStress::at(psi, &t)?;
    let ls = LocalStress::at(psi, &s)?;
    let pairing = pairing_from(&lt, &t, &ls, &s);
    Ok((
        pairing / (d * d),
        PairItem {
            t,
            s,
            pairing,
            distance: d,
        },
    ))
}

fn scan_pairs<G>(psi: &Integrand, samples: usize, seed: u64, band: (f64, f64), draw: G) -> Result<PairChunk>
where
    G: Fn(&mut crate::sampling::ScanRng) -> Result<(Plane, Plane)> + Sync,
{
    let chunks = chunked(samples, seed, |_, rng, count| -> Result<PairChunk> {
        let mut out = PairChunk {
            worst: Vec::new(),
            min_pairing: f64::INFINITY,
            skipped: 0,
        };
        for _ in 0..count {
            let (t, s) = draw(rng)?;
            let d = grassmann::plane_distance(&t, &s)?;
            if d < band.0 || d > band.1 {
                out.skipped += 1;
                continue;
            }
            let (ratio, item) = score_pair(psi, t, s)?;
            out.min_pairing = out.min_pairing.min(item.pairing);
            keep_lowest(&mut out.worst, ratio, || item);
        }
        Ok(out)
    });
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    let min_pairing = chunks.iter().fold(f64::INFINITY, |a, c| a.min(c.min_pairing));
    let skipped = chunks.iter().map(|c| c.skipped).sum();
    Ok(PairChunk {
        worst: merge_lowest(chunks.into_iter().map(|c| c.worst)),
        min_pairing,
        skipped,
    })
}

/// Simplex descent of the normalized pairing over local charts centered at
/// each start pair, constrained to `‖T − S‖ ≥ min_separation`.
fn refine_pairs(psi: &Integrand, starts: &[Scored<PairItem>], min_sep: f64) -> Result<(Vec<Scored<PairItem>>, usize)> {
    let results = starts
        .par_iter()
        .map(|start| -> Result<(Scored<PairItem>, usize)> {
            let ct = LocalChart::at(&start.item.t);
            let cs = LocalChart::at(&start.item.s);
            let k = ct.coordinate_count();
            let planes = |x: &[f64]| -> Result<(Plane, Plane)> { Ok((ct.plane(&x[..k])?, cs.plane(&x[k..])?)) };
            let objective = |x: &[f64]| -> f64 {
                let Ok((t, s)) = planes(x) else {
                    return f64::INFINITY;
                };
                match grassmann::plane_distance(&t, &s) {
                    Ok(d) if d >= min_sep => score_pair(psi, t, s).map(|r| r.0).unwrap_or(f64::INFINITY),
                    _ => f64::INFINITY,
                }
            };
            let m = nelder_mead::minimize(
                objective,
                &vec![0.0; 2 * k],
                Options {
                    step: REFINE_STEP,
                    max_evals: REFINE_EVALS,
                    ..Options::default()
                },
            );
            let (t, s) = planes(&m.x)?;
            let (score, item) = score_pair(psi, t, s)?;
            Ok((Scored { score, item }, m.evals))
        })
        .collect::<Result<Vec<_>>>()?;
    let evals = results.iter().map(|r| r.1).sum();
    Ok((results.into_iter().map(|r| r.0).collect(), evals))
}

/// Random unit tangent vector at the plane with frames `(q, qp)`.
fn random_tangent<R: Rng + ?Sized>(rng: &mut R, q: &DMatrix<f64>, qp: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = grassmann::tangent_basis_from_frames(q, qp);
    let n = q.nrows();
    let mut v = DMatrix::zeros(n, n);
    for b in &basis {
        v += b * rng.sample::<f64, _>(StandardNormal);
    }
    let norm = v.norm();
    v / norm
}

fn near_pair<R: Rng + ?Sized>(rng: &mut R, dims: Dims, band: (f64, f64)) -> Result<(Plane, Plane)> {
    let t = grassmann::sample_plane(rng, dims);
    let (q, qp) = t.frames();
    let v = random_tangent(rng, &q, &qp);
    let (lo, hi) = ((band.0 * 1.5).ln(), (band.1 * 0.9).ln());
    let step = rng.random_range(lo..hi).exp();
    let s = grassmann::retract_frame(&q, &v, step)?;
    Ok((t, s))
}

/// A pair with `⟨T, S⟩` minimal: `S ⊂ T^⊥` when n ≥ m, else `S ⊃ T^⊥`.
fn orthogonal_pair<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> Result<(Plane, Plane)> {
    let t = grassmann::sample_plane(rng, dims);
    let (q, qp) = t.frames();
    let (m, n) = (dims.plane, dims.codim());
    let frame = if n >= m {
        let r = grassmann::sample_frame(rng, Dims { ambient: n, plane: m });
        &qp * r
    } else {
        let r = grassmann::sample_frame(rng, Dims { ambient: m, plane: m - n });
        let mut f = DMatrix::zeros(dims.ambient, m);
        f.columns_mut(0, n).copy_from(&qp);
        f.columns_mut(n, m - n).copy_from(&(&q * r));
        f
    };
    Ok((t, Plane::from_frame(&frame)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairCondition {
    Sac,
    Usac,
}

fn pair_scan(
    psi: &Integrand,
    samples: usize,
    seed: u64,
    tol: &Tolerances,
    kind: PairCondition,
) -> Result<ConditionReport> {
    let dims = psi.dims();
    let max_dist = (2.0 * dims.plane.min(dims.codim()) as f64).sqrt();
    if samples == 0 {
        return Err(Error::Usage("samples must be at least 1".into()));
    }
    if !(tol.min_separation > 0.0 && tol.min_separation < max_dist) {
        return Err(Error::Usage(format!(
            "min_separation must lie in (0, {max_dist}), got {}",
            tol.min_separation
        )));
    }
    let far = scan_pairs(psi, samples, seed, (tol.min_separation, f64::INFINITY), |rng| {
        let t = grassmann::sample_plane(rng, dims);
        let s = grassmann::sample_plane(rng, dims);
        Ok((t, s))
    })?;
    let mut candidates = far.worst.clone();
    let mut used = samples;
    let mut orthogonal_min = f64::NAN;
    if kind == PairCondition::Sac {
        let probes = scan_pairs(
            psi,
            ORTHOGONAL_PROBES,
            sub_seed(seed, 2),
            (tol.min_separation, f64::INFINITY),
            |rng| orthogonal_pair(rng, dims),
        )?;
        used += ORTHOGONAL_PROBES;
        if let Some(first) = probes.worst.first() {
            orthogonal_min = first.score;
        }
        candidates = merge_lowest([candidates, probes.worst]);
    }
    if candidates.is_empty() {
        return Err(Error::Usage("no sampled pair met the minimum separation".into()));
    }
    let (refined, evals) = refine_pairs(psi, &candidates, tol.min_separation)?;
    used += evals;
    let best = merge_lowest([candidates, refined]).swap_remove(0);

    let band = (NEAR_DIAGONAL_FLOOR, tol.min_separation);
    let near = if band.1 > band.0 * 1.5 / 0.9 {
        let count = (samples / 10).max(1);
        used += count;
        Some(scan_pairs(psi, count, sub_seed(seed, 1), band, |rng| near_pair(rng, dims, band))?)
    } else {
        None
    };

    let condition = match kind {
        PairCondition::Sac => Condition::SAC,
        PairCondition::Usac => Condition::USAC,
    };
    let mut report = ConditionReport::new(condition, psi, seed);
    report.constant_estimate = best.score;
    report.threshold = Some(0.0);
    report.samples_used = used as u64;
    report.extra("argmin_distance", best.item.distance);
    report.extra("scan_min", far.worst.first().map_or(f64::NAN, |w| w.score));
    report.extra("min_pairing", far.min_pairing);
    report.extra("skipped_pairs", far.skipped as f64);
    report.extra("orthogonal_probe_min", orthogonal_min);
    let mut verdict = Verdict::above(best.score, 0.0, tol.margin);
    match near.as_ref().and_then(|n| n.worst.first()) {
        Some(first) => {
            report.extra("near_diagonal_min", first.score);
            report.extra("near_diagonal_distance", first.item.distance);
            verdict = verdict.combine(Verdict::above(first.score, 0.0, tol.margin));
        }
        None => report.notes.push("near-diagonal band is empty".into()),
    }
    report.verdict = verdict;
    report.witness = Witness::Pair {
        t: best.item.t,
        s: best.item.s,
    };
    Ok(report)
}

/// Uniform lower bound `Ĉ` of `pairing/‖T−S‖²` over pairs at least
/// `min_separation` apart, with the near-diagonal band reported separately.
pub fn usac_scan(psi: &Integrand, samples: usize, seed: u64, tol: &Tolerances) -> Result<ConditionReport> {
    pair_scan(psi, samples, seed, tol, PairCondition::Usac)
}

/// Positivity of the pairing on distinct pairs, scored by the normalized
/// pairing; adds probes at mutually orthogonal planes.
pub fn sac_scan(psi: &Integrand, samples: usize, seed: u64, tol: &Tolerances) -> Result<ConditionReport> {
    pair_scan(psi, samples, seed, tol, PairCondition::Sac)
}

/// Adversarial search for measures violating (AC): minimizes
/// `σ_{n+1}(A(μ))/σ_max` over atom planes (local charts) and softmax weights
/// from random restarts, then certifies the best measure of each restart.
pub fn search_ac_violation(
    psi: &Integrand,
    n_atoms: usize,
    budget: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<ConditionReport> {
    if n_atoms == 0 || budget == 0 {
        return Err(Error::Usage("n_atoms and budget must be at least 1".into()));
    }
    let dims = psi.dims();
    let n = dims.codim();
    let k = dims.manifold_dim();
    let dim = n_atoms * (k + 1);
    let per_restart = (50 * dim).max(400).min(budget);

    let mut report = ConditionReport::new(Condition::AC1, psi, seed);
    let mut best: Option<(f64, DiscreteMeasure)> = None;
    let mut verdict = Verdict::Pass;
    let mut used = 0usize;
    let mut restart = 0u64;
    while used < budget {
        let mut rng = rng_for(seed, restart);
        restart += 1;
        let charts: Vec<LocalChart> = (0..n_atoms)
            .map(|_| LocalChart::at(&grassmann::sample_plane(&mut rng, dims)))
            .collect();
        let measure_at = |x: &[f64]| -> Result<DiscreteMeasure> {
            let logits: Vec<f64> = (0..n_atoms).map(|i| x[i * (k + 1) + k]).collect();
            let top = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            let atoms = (0..n_atoms)
                .map(|i| {
                    let start = i * (k + 1);
                    Ok((charts[i].plane(&x[start..start + k])?, exps[i] / total))
                })
                .collect::<Result<Vec<_>>>()?;
            DiscreteMeasure::new(atoms)
        };
        let objective = |x: &[f64]| -> f64 {
            measure_at(x)
                .and_then(|mu| a_matrix(psi, &mu))
                .map(|a| relative(&linalg::singular_values_asc(&a), n))
                .unwrap_or(f64::INFINITY)
        };
        let m = nelder_mead::minimize(
            objective,
            &vec![0.0; dim],
            Options {
                step: 0.3,
                max_evals: per_restart.min(budget - used),
                ..Options::default()
            },
        );
        used += m.evals;
        let mu = measure_at(&m.x)?;
        let a = a_matrix(psi, &mu)?;
        let kd = kernel_dim(&a, tol.tol_rank);
        if kd > n {
            verdict = Verdict::Fail;
            report.notes.push(format!("restart {}: kernel dimension {kd} exceeds n", restart - 1));
        } else if kd == n {
            let ac2 = check_ac2(psi, &mu, tol)?;
            verdict = verdict.combine(ac2.verdict);
            if ac2.verdict != Verdict::Pass {
                report
                    .notes
                    .push(format!("restart {}: kernel dimension n with verdict {:?}", restart - 1, ac2.verdict));
            }
        }
        let value = relative(&linalg::singular_values_asc(&a), n);
        let replace = match &best {
            None => true,
            Some((b, _)) => value < *b || (kd > n && *b > tol.tol_rank),
        };
        if replace {
            best = Some((value, mu));
        }
        if verdict == Verdict::Fail {
            break;
        }
    }
    let (value, mu) = best.expect("at least one restart runs");
    let a = a_matrix(psi, &mu)?;
    report.extra("kernel_dim", kernel_dim(&a, tol.tol_rank) as f64);
    report.extra("restarts", restart as f64);
    report.constant_estimate = value;
    report.threshold = Some(tol.tol_rank);
    report.samples_used = used as u64;
    if verdict != Verdict::Fail {
        verdict = verdict.combine(Verdict::above(value, tol.tol_rank, tol.margin));
    }
    report.verdict = verdict;
    report.witness = Witness::Measure {
        measure: mu,
        statistic: MeasureStatistic::RelativeSigmaNPlusOne,
    };
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sac1Radius {
    pub epsilon: f64,
    pub delta_hat: f64,
    pub gamma_hat: f64,
    pub c_hat: f64,
}

const CONTINUITY_PROBES: usize = 8;
const CONTINUITY_PLANES: usize = 50;

/// Largest `ε` with `((ĉ+1+δ̂)/γ̂)·ε + δ̂ < 1/(m−1)`: every `Ψ′` with
/// `‖Ψ − Ψ′‖_{C¹} ≤ ε` keeps (SAC1), up to the sampled constants.
pub fn sac1_radius(psi: &Integrand, samples: usize, seed: u64, tol: &Tolerances) -> Result<Sac1Radius> {
    let dims = psi.dims();
    let threshold = sac1_threshold(dims);
    let scan = sac1_scan(psi, samples, seed, tol)?;
    let delta = scan.constant_estimate;
    if delta >= threshold {
        return Err(Error::EmptyMargin { delta, threshold });
    }
    let mut rng = rng_for(seed, 1);
    let mut min_psi = f64::INFINITY;
    for _ in 0..samples {
        min_psi = min_psi.min(psi.evaluate(&grassmann::sample_plane(&mut rng, dims))?);
    }
    let gamma = 0.5 * min_psi;
    let c_hat = continuity_constant(dims, seed)?;
    Ok(Sac1Radius {
        epsilon: (threshold - delta) * gamma / (c_hat + 1.0 + delta),
        delta_hat: delta,
        gamma_hat: gamma,
        c_hat,
    })
}

/// Empirical `c` in `‖B_Ψ − B_{Ψ′}‖_{C⁰} ≤ c‖Ψ − Ψ′‖_{C¹}`. The stress is
/// linear in Ψ, so this is `sup_φ ‖φT + A_φ(T)‖_op / ‖φ‖_{C¹}`.
pub fn continuity_constant(dims: Dims, seed: u64) -> Result<f64> {
    (0..CONTINUITY_PROBES)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let probe_seed = sub_seed(seed, 100 + k as u64);
            let phi = SmoothPerturbation::random(dims, probe_seed);
            let c1 = crate::integrand::c2_proxy(dims, |t| phi.value(t), 20, probe_seed)?.c1();
            let mut rng = rng_for(probe_seed, 1);
            let mut sup: f64 = 0.0;
            for _ in 0..CONTINUITY_PLANES {
                let t = grassmann::sample_plane(&mut rng, dims);
                let a = function_gradient_fd(|p| Ok(phi.value(p)), &t)?;
                let b = t.matrix() * phi.value(&t) + a;
                sup = sup.max(linalg::op_norm(&b));
            }
            Ok(sup / c1)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::perturbed_area_seeded;

    fn g42() -> Dims {
        Dims::new(4, 2).unwrap()
    }

    #[test]
    fn verdict_helpers() {
        assert_eq!(Verdict::above(0.5, 0.0, 1e-4), Verdict::Pass);
        assert_eq!(Verdict::above(5e-5, 0.0, 1e-4), Verdict::Inconclusive);
        assert_eq!(Verdict::above(0.0, 0.0, 1e-4), Verdict::Fail);
        assert_eq!(Verdict::below(0.2, 1.0, 1e-4), Verdict::Pass);
        assert_eq!(Verdict::below(1.0, 1.0, 1e-4), Verdict::Fail);
        assert_eq!(Verdict::Pass.combine(Verdict::Inconclusive), Verdict::Inconclusive);
        assert_eq!(Verdict::Inconclusive.combine(Verdict::Fail), Verdict::Fail);
    }

    #[test]
    fn measure_validation() {
        let t = Plane::coordinate(g42());
        assert!(DiscreteMeasure::new(vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![(t.clone(), 0.5)]).is_err());
        assert!(DiscreteMeasure::new(vec![(t.clone(), 1.5), (t.clone(), -0.5)]).is_err());
        let other = Plane::coordinate(Dims::new(5, 2).unwrap());
        assert!(DiscreteMeasure::new(vec![(t, 0.5), (other, 0.5)]).is_err());
    }

    #[test]
    fn a_matrix_examples_and_trace() {
        let dims = g42();
        let area = Integrand::area(dims);
        let mut rng = rng_for(1, 0);
        let t = grassmann::sample_plane(&mut rng, dims);
        let s = grassmann::sample_plane(&mut rng, dims);
        let a = a_matrix(&area, &DiscreteMeasure::dirac(t.clone())).unwrap();
        assert_eq!(&a, t.matrix());
        let mu = DiscreteMeasure::new(vec![(t.clone(), 0.5), (s.clone(), 0.5)]).unwrap();
        let a = a_matrix(&area, &mu).unwrap();
        assert!((a - (t.matrix() + s.matrix()) * 0.5).norm() < 1e-15);

        let psi = perturbed_area_seeded(dims, 0.05, 2).unwrap();
        for _ in 0..20 {
            let mu = DiscreteMeasure::random(&mut rng, dims, 5);
            let a = a_matrix(&psi, &mu).unwrap();
            let mean: f64 = mu.atoms().iter().map(|x| x.weight * psi.evaluate(&x.plane).unwrap()).sum();
            assert!((a.trace() - 2.0 * mean).abs() < 1e-8);
        }
    }

    #[test]
    fn a_matrix_is_linear() {
        let dims = g42();
        let psi = perturbed_area_seeded(dims, 0.05, 3).unwrap();
        let mut rng = rng_for(4, 0);
        let m1 = DiscreteMeasure::random(&mut rng, dims, 4);
        let m2 = DiscreteMeasure::random(&mut rng, dims, 4);
        let mix = DiscreteMeasure::mix(0.3, &m1, &m2).unwrap();
        let lhs = a_matrix(&psi, &mix).unwrap();
        let rhs = a_matrix(&psi, &m1).unwrap() * 0.3 + a_matrix(&psi, &m2).unwrap() * 0.7;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn kernel_dim_examples() {
        let dims = g42();
        assert_eq!(kernel_dim(Plane::coordinate(dims).matrix(), TOL_RANK), 2);
        assert_eq!(kernel_dim(&DMatrix::identity(4, 4), TOL_RANK), 0);
        assert_eq!(kernel_dim(&DMatrix::zeros(4, 4), TOL_RANK), 4);
        let mut rng = rng_for(5, 0);
        let planes: Vec<(Plane, f64)> = (0..100)
            .map(|_| (grassmann::sample_plane(&mut rng, dims), 0.01))
            .collect();
        let a = a_matrix(&Integrand::area(dims), &DiscreteMeasure::new(planes).unwrap()).unwrap();
        assert_eq!(kernel_dim(&a, TOL_RANK), 0);
    }

    #[test]
    fn ac_checks_on_area() {
        let dims = g42();
        let area = Integrand::area(dims);
        let tol = Tolerances::default();
        let t = Plane::coordinate(dims);
        let dirac = DiscreteMeasure::dirac(t.clone());
        let r1 = check_ac1(&area, &dirac, &tol).unwrap();
        assert_eq!(r1.verdict, Verdict::Pass);
        assert_eq!(r1.extras["kernel_dim"], 2.0);
        assert_eq!(r1.constant_estimate, 1.0);
        let r2 = check_ac2(&area, &dirac, &tol).unwrap();
        assert_eq!(r2.verdict, Verdict::Pass);

        // rotate e2 toward e3 by π/4: ‖T − S‖ = 1, kernel = span{e4}
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let frame = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, c, 0.0, c, 0.0, 0.0]);
        let s = Plane::from_frame(&frame).unwrap();
        assert!((grassmann::plane_distance(&t, &s).unwrap() - 1.0).abs() < 1e-12);
        let mu = DiscreteMeasure::new(vec![(t, 0.5), (s, 0.5)]).unwrap();
        let r = check_ac2(&area, &mu, &tol).unwrap();
        assert_eq!(r.extras["kernel_dim"], 1.0);
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.reevaluate(&area).unwrap(), r.constant_estimate);
    }

    #[test]
    fn ac2_flags_separated_kernel_n_measures() {
        // A stress with a fixed kernel direction regardless of the plane is
        // impossible for positive integrands, so exercise the verdict logic
        // directly on a hand-built case: two distant atoms, kernel n forced.
        let dims = g42();
        let tol = Tolerances::default();
        let t = Plane::coordinate(dims);
        let s = Plane::from_frame(&DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]))
            .unwrap();
        let mu = DiscreteMeasure::new(vec![(t.clone(), 0.5), (s, 0.5)]).unwrap();
        let mut report = ConditionReport::new(Condition::AC2, &Integrand::area(dims), 0);
        assert_eq!(ac2_kernel_n_verdict(&mu, &tol, &mut report), Verdict::Fail);
        let close = Plane::new(t.matrix().clone(), 2).unwrap();
        let mu = DiscreteMeasure::new(vec![(t, 0.5), (close, 0.5)]).unwrap();
        assert_eq!(ac2_kernel_n_verdict(&mu, &tol, &mut report), Verdict::Pass);
    }

    #[test]
    fn sac1_scan_area() {
        let dims = Dims::new(5, 3).unwrap();
        let r = sac1_scan(&Integrand::area(dims), 300, 1, &Tolerances::default()).unwrap();
        assert!(r.constant_estimate.abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.threshold, Some(0.5));
        let line = sac1_scan(&Integrand::area(Dims::new(3, 1).unwrap()), 10, 1, &Tolerances::default()).unwrap();
        assert_eq!(line.verdict, Verdict::Pass);
        assert_eq!(line.threshold, None);
    }

    #[test]
    fn usac_area_is_one_half_for_any_seed_and_separation() {
        let area = Integrand::area(g42());
        for (seed, sep, samples) in [(1u64, 0.1, 1usize), (2, 0.5, 50), (3, 1.5, 300)] {
            let tol = Tolerances {
                min_separation: sep,
                ..Tolerances::default()
            };
            let r = usac_scan(&area, samples, seed, &tol).unwrap();
            assert!((r.constant_estimate - 0.5).abs() < 1e-9, "{r:?}");
            assert!((r.extras["near_diagonal_min"] - 0.5).abs() < 1e-9);
            assert_eq!(r.verdict, Verdict::Pass);
            assert!((r.reevaluate(&area).unwrap() - r.constant_estimate).abs() < 1e-9);
        }
    }

    #[test]
    fn usac_rejects_bad_arguments() {
        let area = Integrand::area(g42());
        assert!(usac_scan(&area, 0, 1, &Tolerances::default()).is_err());
        let tol = Tolerances {
            min_separation: 3.0,
            ..Tolerances::default()
        };
        assert!(usac_scan(&area, 10, 1, &tol).is_err());
    }

    #[test]
    fn sac_area_with_orthogonal_probe() {
        let area = Integrand::area(g42());
        let r = sac_scan(&area, 200, 9, &Tolerances::default()).unwrap();
        assert!((r.constant_estimate - 0.5).abs() < 1e-9);
        assert!((r.extras["orthogonal_probe_min"] - 0.5).abs() < 1e-12);
        let (t, s) = orthogonal_pair(&mut rng_for(1, 0), g42()).unwrap();
        assert!(t.inner(&s).abs() < 1e-12);
        let (t, s) = orthogonal_pair(&mut rng_for(1, 0), Dims::new(4, 3).unwrap()).unwrap();
        assert!((t.inner(&s) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_usac_stays_above_point_four() {
        let psi = perturbed_area_seeded(g42(), 0.01, 17).unwrap();
        let r = usac_scan(&psi, 2000, 5, &Tolerances::default()).unwrap();
        assert!(r.constant_estimate >= 0.4);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.reevaluate(&psi).unwrap() - r.constant_estimate).abs() < 1e-9);
    }

    #[test]
    fn search_single_atom_is_dirac() {
        let area = Integrand::area(g42());
        let r = search_ac_violation(&area, 1, 300, 3, &Tolerances::default()).unwrap();
        assert_eq!(r.extras["kernel_dim"], 2.0);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.constant_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn search_area_three_atoms_finds_no_violation() {
        let area = Integrand::area(g42());
        let r = search_ac_violation(&area, 3, 2000, 4, &Tolerances::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.constant_estimate > 0.1);
        assert!((r.reevaluate(&area).unwrap() - r.constant_estimate).abs() < 1e-9);
    }

    #[test]
    fn sac1_radius_for_area() {
        let dims = g42();
        let r = sac1_radius(&Integrand::area(dims), 100, 1, &Tolerances::default()).unwrap();
        assert!(r.delta_hat.abs() < 1e-12);
        assert_eq!(r.gamma_hat, 0.5);
        let expected = 1.0 * 0.5 / (r.c_hat + 1.0 + r.delta_hat);
        assert!((r.epsilon - expected).abs() < 1e-15);
        assert!(r.c_hat > 0.0);
    }

    #[test]
    fn sac1_radius_empty_margin() {
        // Ψ = 1 + ⟨T, e1e1ᵗ⟩·0.9 on G(3,2) tilts the stress enough to break
        // δ̂ < 1; detect via a direct construction.
        let dims = Dims::new(3, 2).unwrap();
        let mut d = DMatrix::zeros(3, 3);
        d[(0, 0)] = 1.0;
        d[(1, 0)] = 0.0;
        let phi = SmoothPerturbation::linear(d * 3.0);
        let psi = crate::integrand::perturbed_area(dims, move |t| phi.value(t), 1.0, "steep").unwrap();
        let scan = sac1_scan(&psi, 300, 2, &Tolerances::default()).unwrap();
        if scan.constant_estimate >= 1.0 {
            assert!(matches!(
                sac1_radius(&psi, 300, 2, &Tolerances::default()),
                Err(Error::EmptyMargin { .. })
            ));
        }
    }

    #[test]
    fn report_json_round_trip() {
        let area = Integrand::area(g42());
        let r = usac_scan(&area, 20, 1, &Tolerances::default()).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: ConditionReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.reevaluate(&area).unwrap(), r.reevaluate(&area).unwrap());
    }
}
