//! Run configuration, dispatch and byte-stable report emission.
//!
//! A `RunConfig` is a flat set of `key=value` settings mirroring the CLI
//! flags. Running it yields a document whose bytes depend only on the
//! configuration, the build and the declared worker count.

use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::conditions::{self, ConditionReport, DiscreteMeasure, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::graph_energy::{self, GraphField, GridSpec};
use crate::grassmann::Dims;
use crate::integrand;
use crate::pluecker4;
use crate::sampling::{rng_for, sub_seed, CHUNK_SIZE};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

pub const THREADS_ENV: &str = "ANISOCHECK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Sac1,
    Sac,
    Usac,
    Ac1,
    Ac2,
    SearchAc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphProbe {
    Curvature,
    Excess,
    Caccioppoli,
    Quasiconvexity,
    Lh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlueckerVerb {
    ScanSac,
    Subminors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Check(CheckKind),
    Graph(GraphProbe),
    Pluecker(PlueckerVerb),
}

impl Verb {
    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let verb = match words.as_slice() {
            ["check", "sac1"] => Verb::Check(CheckKind::Sac1),
            ["check", "sac"] => Verb::Check(CheckKind::Sac),
            ["check", "usac"] => Verb::Check(CheckKind::Usac),
            ["check", "ac1"] => Verb::Check(CheckKind::Ac1),
            ["check", "ac2"] => Verb::Check(CheckKind::Ac2),
            ["check", "search-ac"] => Verb::Check(CheckKind::SearchAc),
            ["graph", "curvature"] => Verb::Graph(GraphProbe::Curvature),
            ["graph", "excess"] => Verb::Graph(GraphProbe::Excess),
            ["graph", "caccioppoli"] => Verb::Graph(GraphProbe::Caccioppoli),
            ["graph", "quasiconvexity"] => Verb::Graph(GraphProbe::Quasiconvexity),
            ["graph", "lh"] => Verb::Graph(GraphProbe::Lh),
            ["pluecker", "scan-sac"] => Verb::Pluecker(PlueckerVerb::ScanSac),
            ["pluecker", "subminors"] => Verb::Pluecker(PlueckerVerb::Subminors),
            _ => return Err(Error::Usage(format!("unknown command `{text}`"))),
        };
        Ok(verb)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verb::Check(CheckKind::Sac1) => "check sac1",
            Verb::Check(CheckKind::Sac) => "check sac",
            Verb::Check(CheckKind::Usac) => "check usac",
            Verb::Check(CheckKind::Ac1) => "check ac1",
            Verb::Check(CheckKind::Ac2) => "check ac2",
            Verb::Check(CheckKind::SearchAc) => "check search-ac",
            Verb::Graph(GraphProbe::Curvature) => "graph curvature",
            Verb::Graph(GraphProbe::Excess) => "graph excess",
            Verb::Graph(GraphProbe::Caccioppoli) => "graph caccioppoli",
            Verb::Graph(GraphProbe::Quasiconvexity) => "graph quasiconvexity",
            Verb::Graph(GraphProbe::Lh) => "graph lh",
            Verb::Pluecker(PlueckerVerb::ScanSac) => "pluecker scan-sac",
            Verb::Pluecker(PlueckerVerb::Subminors) => "pluecker subminors",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Every setting of a run. Field order is the echo order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Option<Verb>,
    pub integrand: String,
    pub ambient: usize,
    pub dim: usize,
    pub seed: u64,
    pub samples: usize,
    pub measures: usize,
    pub atoms: usize,
    pub budget: usize,
    pub p: Option<f64>,
    pub field: Option<PathBuf>,
    pub point: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub a: Option<DMatrix<f64>>,
    pub x: Option<DMatrix<f64>>,
    pub alpha: f64,
    pub starts: usize,
    pub grid_points: usize,
    pub tolerances: Tolerances,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            integrand: "area".into(),
            ambient: 4,
            dim: 2,
            seed: 0,
            samples: 1000,
            measures: 100,
            atoms: 4,
            budget: 10_000,
            p: None,
            field: None,
            point: None,
            radius: None,
            a: None,
            x: None,
            alpha: 1.0,
            starts: graph_energy::LH_STARTS,
            grid_points: 33,
            tolerances: Tolerances::default(),
            format: Format::Json,
            output: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value `{value}` for {key}")))
}

/// `"a,b;c,d"` → 2×2 matrix (rows separated by `;`).
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows = text
        .split(';')
        .map(|r| r.split(',').map(|v| parse_num::<f64>("matrix entry", v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let cols = rows.first().map_or(0, |r| r.len());
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Usage(format!("malformed matrix `{text}`")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "command" => self.command = Some(Verb::parse(v)?),
            "integrand" => self.integrand = v.to_string(),
            "ambient" => self.ambient = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "samples" => self.samples = parse_num(key, v)?,
            "measures" => self.measures = parse_num(key, v)?,
            "atoms" => self.atoms = parse_num(key, v)?,
            "budget" => self.budget = parse_num(key, v)?,
            "p" => self.p = Some(parse_num(key, v)?),
            "field" => self.field = Some(PathBuf::from(v)),
            "point" => {
                self.point = Some(v.split(',').map(|c| parse_num("point", c)).collect::<Result<_>>()?)
            }
            "radius" => self.radius = Some(parse_num(key, v)?),
            "a" => self.a = Some(parse_matrix(v)?),
            "x" => self.x = Some(parse_matrix(v)?),
            "alpha" => self.alpha = parse_num(key, v)?,
            "starts" => self.starts = parse_num(key, v)?,
            "grid_points" => self.grid_points = parse_num(key, v)?,
            "tol_rank" => self.tolerances.tol_rank = parse_num(key, v)?,
            "min_separation" => self.tolerances.min_separation = parse_num(key, v)?,
            "margin" => self.tolerances.margin = parse_num(key, v)?,
            "format" => {
                self.format = match v {
                    "json" => Format::Json,
                    "csv" => Format::Csv,
                    _ => return Err(Error::Usage(format!("unknown format `{v}`"))),
                }
            }
            "output" => self.output = Some(PathBuf::from(v)),
            other => return Err(Error::Usage(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file; blank lines and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.apply_kv(text)?;
        Ok(config)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// The resolved settings in echo order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(c) = self.command {
            push("command", c.as_str().into());
        }
        push("integrand", self.integrand.clone());
        push("ambient", self.ambient.to_string());
        push("dim", self.dim.to_string());
        push("seed", self.seed.to_string());
        push("samples", self.samples.to_string());
        push("measures", self.measures.to_string());
        push("atoms", self.atoms.to_string());
        push("budget", self.budget.to_string());
        if let Some(p) = self.p {
            push("p", p.to_string());
        }
        if let Some(f) = &self.field {
            push("field", f.display().to_string());
        }
        if let Some(pt) = &self.point {
            push("point", pt.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        }
        if let Some(r) = self.radius {
            push("radius", r.to_string());
        }
        if let Some(a) = &self.a {
            push("a", format_matrix(a));
        }
        if let Some(x) = &self.x {
            push("x", format_matrix(x));
        }
        push("alpha", self.alpha.to_string());
        push("starts", self.starts.to_string());
        push("grid_points", self.grid_points.to_string());
        push("tol_rank", self.tolerances.tol_rank.to_string());
        push("min_separation", self.tolerances.min_separation.to_string());
        push("margin", self.tolerances.margin.to_string());
        push(
            "format",
            match self.format {
                Format::Json => "json",
                Format::Csv => "csv",
            }
            .into(),
        );
        if let Some(o) = &self.output {
            push("output", o.display().to_string());
        }
        out
    }

    pub fn to_kv(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command.ok_or_else(|| Error::Usage("no command given".into()))?;
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Usage(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive("samples", self.samples)?;
        positive("measures", self.measures)?;
        positive("atoms", self.atoms)?;
        positive("budget", self.budget)?;
        positive("starts", self.starts)?;
        Dims::new(self.ambient, self.dim).map_err(|e| Error::Usage(e.to_string()))?;
        let t = &self.tolerances;
        if !(t.tol_rank > 0.0 && t.tol_rank < 1.0) {
            return Err(Error::Usage("tol_rank must lie in (0, 1)".into()));
        }
        if !(t.margin >= 0.0 && t.margin.is_finite()) {
            return Err(Error::Usage("margin must be finite and nonnegative".into()));
        }
        if !(t.min_separation > 0.0) {
            return Err(Error::Usage("min_separation must be positive".into()));
        }
        if let Verb::Pluecker(_) = command {
            if self.p.is_none() {
                return Err(Error::Usage("pluecker commands need --p".into()));
            }
        }
        if self.grid_points < 3 {
            return Err(Error::Usage("grid_points must be at least 3".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Result<Dims> {
        Dims::new(self.ambient, self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    UInt(u64),
    Text(String),
    Empty,
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) => s.serialize_f64(*v),
            Cell::Int(v) => s.serialize_i64(*v),
            Cell::UInt(v) => s.serialize_u64(*v),
            Cell::Text(t) => s.serialize_str(t),
            Cell::Empty => s.serialize_none(),
        }
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Text(t) => t.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Result of a run before rendering.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub reports: Vec<ConditionReport>,
    pub table: Table,
    pub verdict: Verdict,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass => EXIT_PASS,
            Verdict::Fail => EXIT_FAIL,
            Verdict::Inconclusive => EXIT_INCONCLUSIVE,
        }
    }
}

fn report_table(reports: &[ConditionReport]) -> Table {
    let mut t = Table::new(&[
        "condition",
        "verdict",
        "constant_estimate",
        "samples_used",
        "seed",
        "integrand",
    ]);
    for r in reports {
        t.rows.push(vec![
            Cell::Text(format!("{:?}", r.condition)),
            Cell::Text(verdict_name(r.verdict).into()),
            Cell::Num(r.constant_estimate),
            Cell::UInt(r.samples_used),
            Cell::UInt(r.seed),
            Cell::Text(r.integrand.clone()),
        ]);
    }
    t
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn from_reports(reports: Vec<ConditionReport>) -> Outcome {
    let verdict = reports.iter().fold(Verdict::Pass, |v, r| v.combine(r.verdict));
    Outcome {
        table: report_table(&reports),
        reports,
        verdict,
    }
}

/// Runs the configured command.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    match config.command.expect("validated") {
        Verb::Check(kind) => run_check(config, kind),
        Verb::Graph(probe) => run_graph(config, probe),
        Verb::Pluecker(verb) => run_pluecker(config, verb),
    }
}

fn run_check(config: &RunConfig, kind: CheckKind) -> Result<Outcome> {
    let psi = integrand::resolve(&config.integrand, config.dims()?)?;
    let tol = &config.tolerances;
    let (seed, samples) = (config.seed, config.samples);
    let report = match kind {
        CheckKind::Sac1 => conditions::sac1_scan(&psi, samples, seed, tol)?,
        CheckKind::Sac => conditions::sac_scan(&psi, samples, seed, tol)?,
        CheckKind::Usac => conditions::usac_scan(&psi, samples, seed, tol)?,
        CheckKind::SearchAc => conditions::search_ac_violation(&psi, config.atoms, config.budget, seed, tol)?,
        CheckKind::Ac1 | CheckKind::Ac2 => {
            let dims = psi.dims();
            let reports = (0..config.measures)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_for(sub_seed(seed, i as u64), 0);
                    let mu = DiscreteMeasure::random(&mut rng, dims, config.atoms);
                    if kind == CheckKind::Ac1 {
                        conditions::check_ac1(&psi, &mu, tol)
                    } else {
                        conditions::check_ac2(&psi, &mu, tol)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            worst_of(reports, seed)
        }
    };
    Ok(from_reports(vec![report]))
}

/// Summary of a batch of measure checks: the report with the smallest
/// constant, with the combined verdict and counts.
fn worst_of(reports: Vec<ConditionReport>, seed: u64) -> ConditionReport {
    let verdict = reports.iter().fold(Verdict::Pass, |v, r| v.combine(r.verdict));
    let failures = reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let inconclusive = reports.iter().filter(|r| r.verdict == Verdict::Inconclusive).count();
    let total = reports.len();
    let mut worst = reports
        .into_iter()
        .reduce(|a, b| if b.constant_estimate < a.constant_estimate { b } else { a })
        .expect("at least one measure");
    worst.verdict = verdict;
    worst.seed = seed;
    worst.samples_used = total as u64;
    worst.extras.insert("measures".into(), total as f64);
    worst.extras.insert("failures".into(), failures as f64);
    worst.extras.insert("inconclusive".into(), inconclusive as f64);
    worst
}

fn load_field(config: &RunConfig) -> Result<GraphField> {
    let path = config
        .field
        .as_ref()
        .ok_or_else(|| Error::Usage("this probe needs --field".into()))?;
    GraphField::from_text(&std::fs::read_to_string(path)?)
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Usage(format!("this probe needs --{flag}")))
}

fn run_graph(config: &RunConfig, probe: GraphProbe) -> Result<Outcome> {
    let seed = config.seed;
    match probe {
        GraphProbe::Curvature => {
            let u = load_field(config)?;
            let psi = integrand::resolve(&config.integrand, u.spec().dims())?;
            let h = graph_energy::mean_curvature_residual(&psi, &u)?;
            let defined: Vec<f64> = h.iter().flatten().map(|v| v.norm()).collect();
            let max = defined.iter().copied().fold(0.0, f64::max);
            let rms = (defined.iter().map(|v| v * v).sum::<f64>() / defined.len().max(1) as f64).sqrt();
            let mut t = Table::new(&["points_defined", "points_absent", "max_norm", "rms_norm"]);
            t.rows.push(vec![
                Cell::Int(defined.len() as i64),
                Cell::Int((h.len() - defined.len()) as i64),
                Cell::Num(max),
                Cell::Num(rms),
            ]);
            Ok(table_only(t))
        }
        GraphProbe::Excess => {
            let u = load_field(config)?;
            let x = require(&config.point, "point")?;
            let r = require(&config.radius, "radius")?;
            let e = graph_energy::excess(&u, &x, r)?;
            let mut t = Table::new(&["radius", "excess"]);
            t.rows.push(vec![Cell::Num(r), Cell::Num(e)]);
            Ok(table_only(t))
        }
        GraphProbe::Caccioppoli => {
            let u = load_field(config)?;
            let psi = integrand::resolve(&config.integrand, u.spec().dims())?;
            let x = require(&config.point, "point")?;
            let r0 = require(&config.radius, "radius")?;
            let h = graph_energy::mean_curvature_residual(&psi, &u)?;
            let mut t = Table::new(&["radius", "k", "lhs", "rhs_flat", "rhs_curv", "ratio"]);
            for scale in [1.0, 0.5, 0.25] {
                let r = r0 * scale;
                let a = match &config.a {
                    Some(a) => a.clone(),
                    None => mean_gradient(&u, &x, r),
                };
                let p = graph_energy::caccioppoli_with(&u, &h, &x, r, &a)?;
                t.rows.push(vec![
                    Cell::Num(r),
                    Cell::Num(p.k),
                    Cell::Num(p.lhs),
                    Cell::Num(p.rhs_flat),
                    Cell::Num(p.rhs_curv),
                    Cell::Num(p.ratio()),
                ]);
            }
            Ok(table_only(t))
        }
        GraphProbe::Quasiconvexity => {
            let grid = match &config.field {
                Some(_) => load_field(config)?.spec().clone(),
                None => GridSpec::cube(config.dim, config.ambient - config.dim, config.grid_points, 0.0, 1.0)?,
            };
            let psi = integrand::resolve(&config.integrand, grid.dims())?;
            let a = config.a.clone().unwrap_or_else(|| DMatrix::zeros(grid.n, grid.m));
            let report = graph_energy::quasiconvexity_report(&psi, &a, &grid, config.samples, seed, config.alpha)?;
            Ok(from_reports(vec![report]))
        }
        GraphProbe::Lh => {
            let dims = config.dims()?;
            let psi = integrand::resolve(&config.integrand, dims)?;
            let x = config
                .x
                .clone()
                .unwrap_or_else(|| DMatrix::zeros(dims.codim(), dims.plane));
            let report = graph_energy::legendre_hadamard_report(&psi, &x, config.starts, seed, &config.tolerances)?;
            Ok(from_reports(vec![report]))
        }
    }
}

fn mean_gradient(u: &GraphField, x: &[f64], r: f64) -> DMatrix<f64> {
    let ball = u.spec().ball(x, r);
    let sum = ball
        .iter()
        .fold(DMatrix::zeros(u.spec().n, u.spec().m), |acc, &i| acc + u.gradient(i));
    sum / ball.len().max(1) as f64
}

fn table_only(table: Table) -> Outcome {
    Outcome {
        reports: Vec::new(),
        table,
        verdict: Verdict::Pass,
    }
}

const PLUECKER_COLUMNS: [&str; 11] = [
    "p",
    "seed",
    "min_pairing",
    "argmin_distance",
    "det_S12",
    "det_S13",
    "det_S14",
    "det_S23",
    "det_S24",
    "det_S34",
    "kernel_dim",
];

fn run_pluecker(config: &RunConfig, verb: PlueckerVerb) -> Result<Outcome> {
    let p = config.p.expect("validated");
    let seed = config.seed;
    let mut table = Table::new(&PLUECKER_COLUMNS);
    match verb {
        PlueckerVerb::ScanSac => {
            let psi = pluecker4::lp_integrand(p)?;
            let mut report = conditions::sac_scan(&psi, config.samples, seed, &config.tolerances)?;
            report
                .notes
                .push("numerical evidence for (SAC), not a proof".into());
            let mut row = vec![
                Cell::Num(p),
                Cell::UInt(seed),
                Cell::Num(report.constant_estimate),
                Cell::Num(report.extras.get("argmin_distance").copied().unwrap_or(f64::NAN)),
            ];
            row.extend(std::iter::repeat_n(Cell::Empty, 7));
            table.rows.push(row);
            let verdict = report.verdict;
            Ok(Outcome {
                reports: vec![report],
                table,
                verdict,
            })
        }
        PlueckerVerb::Subminors => {
            let batch = pluecker4::subminor_batch(p, config.measures, config.atoms.max(1), seed, config.tolerances.tol_rank)?;
            let mut verdict = Verdict::Pass;
            for (i, (_, r)) in batch.iter().enumerate() {
                let ok = r.rank_at_least_two && r.kernel_dim <= 2;
                if !ok {
                    verdict = Verdict::Fail;
                }
                let mut row = vec![
                    Cell::Num(p),
                    Cell::UInt(sub_seed(seed, i as u64)),
                    Cell::Empty,
                    Cell::Empty,
                ];
                row.extend(r.dets.iter().map(|&d| Cell::Num(d)));
                row.push(Cell::Int(r.kernel_dim as i64));
                table.rows.push(row);
            }
            Ok(Outcome {
                reports: Vec::new(),
                table,
                verdict,
            })
        }
    }
}

/// 17 significant digits in scientific notation; `nan`/`inf` spelled out.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Compact JSON with every float written as `{:.16e}` (non-finite as null).
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

struct Ordered<'a>(&'a [(String, String)]);

impl Serialize for Ordered<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct Document<'a> {
    tool: &'static str,
    version: &'static str,
    threads: usize,
    chunk_size: usize,
    config: Ordered<'a>,
    verdict: &'static str,
    exit_code: i32,
    reports: &'a [ConditionReport],
    table: &'a Table,
}

/// Renders the outcome in the configured format.
pub fn render(config: &RunConfig, outcome: &Outcome, threads: usize) -> Result<String> {
    let entries = config.entries();
    match config.format {
        Format::Json => {
            let doc = Document {
                tool: "anisocheck",
                version: env!("CARGO_PKG_VERSION"),
                threads,
                chunk_size: CHUNK_SIZE,
                config: Ordered(&entries),
                verdict: verdict_name(outcome.verdict),
                exit_code: outcome.exit_code(),
                reports: &outcome.reports,
                table: &outcome.table,
            };
            Ok(to_json(&doc)? + "\n")
        }
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# anisocheck {}", env!("CARGO_PKG_VERSION"));
            let _ = writeln!(out, "# threads={threads}");
            let _ = writeln!(out, "# chunk_size={CHUNK_SIZE}");
            for (k, v) in &entries {
                let _ = writeln!(out, "# {k}={v}");
            }
            let _ = writeln!(out, "# verdict={}", verdict_name(outcome.verdict));
            let _ = writeln!(out, "{}", outcome.table.columns.join(","));
            for row in &outcome.table.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
            Ok(out)
        }
    }
}

/// Worker count from `ANISOCHECK_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Runs on a dedicated pool of `threads` workers (rayon's default if `None`)
/// and returns the exit code with the rendered document. The document is
/// written to `config.output` when set.
pub fn execute(config: &RunConfig, threads: Option<usize>) -> Result<(i32, String)> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let declared = pool.current_num_threads();
    let outcome = pool.install(|| run(config))?;
    let text = render(config, &outcome, declared)?;
    if let Some(path) = &config.output {
        std::fs::write(path, &text)?;
    }
    Ok((outcome.exit_code(), text))
}
