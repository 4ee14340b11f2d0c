//! Tightness experiments and batch drivers behind the `ldcone` binary.
//!
//! Each experiment evaluates an explicit sequence of points along a
//! log-spaced grid of `k` and returns a [`Table`] with one row per `k`.
//! Rows are computed in parallel and kept in grid order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{member_primal, project_cone, project_hyperplane, ConePoint, DEFAULT_TOL};
use crate::error::{domain, Error, Result};
use crate::faces::{classify_face, dist_face, estimate_gamma_with, project_face, FaceKind};
use crate::frf::{eval_gd, eval_glog, ResidualFn};
use crate::linalg::{eigen_sym, inverse_pd, log_det, random_orthogonal, random_psd_with_rank, Mat, SymMat};
use crate::reduction::{
    build_certificate, build_chain, check_certificate_empirically, crafted_fixture, verify_chain, CaseTag,
};
use crate::stream_rng;

/// Cone projections in the experiments run to this tolerance.
const PROJ_TOL: f64 = 1e-12;
const PROJ_ITER: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExperimentName {
    TightFd,
    TightFsHolder,
    TightFsLog,
    TightFinfLog,
    TightFr,
    GammaScan,
    CertificateCheck,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::TightFd,
        ExperimentName::TightFsHolder,
        ExperimentName::TightFsLog,
        ExperimentName::TightFinfLog,
        ExperimentName::TightFr,
        ExperimentName::GammaScan,
        ExperimentName::CertificateCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::TightFd => "tight_fd",
            ExperimentName::TightFsHolder => "tight_fs_holder",
            ExperimentName::TightFsLog => "tight_fs_log",
            ExperimentName::TightFinfLog => "tight_finf_log",
            ExperimentName::TightFr => "tight_fr",
            ExperimentName::GammaScan => "gamma_scan",
            ExperimentName::CertificateCheck => "certificate_check",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment '{s}'")))
    }
}

/// Settings of one run. Keys not covered by a field go to `options`.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub d: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub points: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub options: BTreeMap<String, String>,
}

impl ExperimentSpec {
    pub fn new(name: ExperimentName) -> Self {
        ExperimentSpec {
            name,
            d: 2,
            k_min: 10.0,
            k_max: 1e6,
            points: 40,
            seed: 0,
            out: None,
            options: BTreeMap::new(),
        }
    }

    /// Sets one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Parse(format!("bad value '{value}' for {what}"));
        match key {
            "d" => self.d = value.parse().map_err(|_| bad("d"))?,
            "kmin" | "k_min" => self.k_min = value.parse().map_err(|_| bad("kmin"))?,
            "kmax" | "k_max" => self.k_max = value.parse().map_err(|_| bad("kmax"))?,
            "points" => self.points = value.parse().map_err(|_| bad("points"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                self.options.insert(key.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidInput(format!("d must be at least 2, got {}", self.d)));
        }
        if !(self.k_min >= 2.0) || !(self.k_max >= self.k_min) || !self.k_max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need 2 <= kmin <= kmax, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if self.points == 0 {
            return Err(Error::InvalidInput("points must be positive".into()));
        }
        Ok(())
    }

    /// Log-spaced integers in `[k_min, k_max]`, duplicates removed.
    pub fn k_grid(&self) -> Vec<f64> {
        let (a, b) = (self.k_min.ln(), self.k_max.ln());
        let mut ks: Vec<f64> = (0..self.points)
            .map(|i| {
                let t = if self.points == 1 { 0.0 } else { i as f64 / (self.points - 1) as f64 };
                (a + t * (b - a)).exp().round()
            })
            .collect();
        ks.dedup();
        ks
    }

    pub fn opt_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.options.get(key).map_or(Ok(default), |v| {
            v.parse().map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))
        })
    }

    pub fn opt_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.options.get(key).map_or(Ok(default), |v| {
            v.parse().map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))
        })
    }

    pub fn opt_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.options.get(key).map_or(default, String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Num(x) => Some(*x),
            Cell::Bool(b) => Some(*b as u8 as f64),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Num(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

/// Result of an experiment: named columns, one row per grid point.
#[derive(Clone, Debug)]
pub struct Table {
    pub experiment: ExperimentName,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::InvalidInput(format!("no column '{name}' in {}", self.experiment)))
    }

    /// Numeric column; text cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].render()).collect())
    }

    /// CSV with a leading `# ldcone <experiment> schema v1` comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# ldcone {} schema v1", self.experiment)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for row in &self.rows {
            wr.write_record(row.iter().map(Cell::render))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Largest ratio seen, and its relative growth over the last decade of `k`:
/// `(max_all - max_{k <= k_max/10}) / max_all`.
pub fn fitted_constant(ks: &[f64], ratios: &[f64]) -> (f64, f64) {
    let k_max = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let all = ratios.iter().cloned().filter(|r| r.is_finite()).fold(0.0, f64::max);
    let early = ks
        .iter()
        .zip(ratios)
        .filter(|(k, r)| **k <= k_max / 10.0 && r.is_finite())
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    let change = if all > 0.0 { (all - early) / all } else { f64::NAN };
    (all, change)
}

pub fn run(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    match spec.name {
        ExperimentName::TightFd => run_tight_fd(spec),
        ExperimentName::TightFsHolder => run_tight_fs_holder(spec),
        ExperimentName::TightFsLog => run_tight_log(spec, false),
        ExperimentName::TightFinfLog => run_tight_log(spec, true),
        ExperimentName::TightFr => run_tight_fr(spec),
        ExperimentName::GammaScan => run_gamma_scan(spec),
        ExperimentName::CertificateCheck => run_certificate_check(spec),
    }
}

fn pt(x: f64, y: f64, z: SymMat) -> ConePoint {
    ConePoint { x, y, z }
}

/// Numeric `dist(p, K)`, or NaN with the error text when the solver fails.
fn numeric_dist(p: &ConePoint) -> (f64, String) {
    match project_cone(p, PROJ_TOL, PROJ_ITER) {
        Ok(pr) => (pr.dist, "ok".into()),
        Err(e) => (f64::NAN, format!("failed: {e}")),
    }
}

fn ratio_or_nan(num: f64, den: Result<f64>) -> f64 {
    match den {
        Ok(g) if g > 0.0 => num / g,
        _ => f64::NAN,
    }
}

/// `w^k = (d log k / k, 0, I)` against `F_d`, with the feasible
/// `v^k = (d log k / k, 1/k, I)`.
pub fn run_tight_fd(spec: &ExperimentSpec) -> Result<Table> {
    let d = spec.d;
    let df = d as f64;
    let face = classify_face(&pt(0.0, 1.0, SymMat::zeros(d)), DEFAULT_TOL)?;
    let rows = spec
        .k_grid()
        .par_iter()
        .map(|&k| -> Result<Vec<Cell>> {
            let x = df * k.ln() / k;
            let w = pt(x, 0.0, SymMat::identity(d));
            let v = pt(x, 1.0 / k, SymMat::identity(d));
            let dist_f = dist_face(&face, &w)?;
            let (dist_k, status) = numeric_dist(&w);
            Ok(vec![
                Cell::Num(k),
                Cell::Num(dist_f),
                Cell::Num(x),
                Cell::Num(dist_k),
                Cell::Num(1.0 / k),
                Cell::Bool(member_primal(&v, DEFAULT_TOL)),
                Cell::Num(ratio_or_nan(dist_f, eval_gd(dist_k))),
                Cell::Num(ratio_or_nan(dist_f, eval_gd(1.0 / k))),
                Cell::Text(status),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        experiment: spec.name,
        columns: vec![
            "k",
            "dist_face",
            "dist_face_closed",
            "dist_cone",
            "dist_cone_bound",
            "v_member",
            "ratio",
            "ratio_at_bound",
            "status",
        ],
        rows,
    })
}

/// `Q` of size `r x (d - r)`: a partial identity by default, or a random
/// matrix scaled to `lambda_max(Q^T Q) = 1` with `q = random`.
fn holder_q<R: Rng + ?Sized>(r: usize, c: usize, random: bool, rng: &mut R) -> Result<Mat> {
    let mut q = Mat::zeros(r, c);
    if random {
        for i in 0..r {
            for j in 0..c {
                q.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let qtq = SymMat::from_lower_fn(c, |a, b| (0..r).map(|i| q.get(i, a) * q.get(i, b)).sum());
        let lmax = eigen_sym(&qtq)?.max();
        if !(lmax > 0.0) {
            return domain("random Q is zero");
        }
        let s = 1.0 / lmax.sqrt();
        for i in 0..r {
            for j in 0..c {
                q.set(i, j, q.get(i, j) * s);
            }
        }
    } else {
        for i in 0..r.min(c) {
            q.set(i, i, 1.0);
        }
    }
    Ok(q)
}

/// `R [[I, Q^T/k], [Q/k, corner]] R^T` with the identity block of size
/// `d - r`.
fn holder_block(rot: &Mat, q: &Mat, k: f64, corner: f64) -> SymMat {
    let d = rot.rows;
    let c = q.cols;
    let inner = SymMat::from_lower_fn(d, |i, j| {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        match (i < c, j < c) {
            (true, true) => (i == j) as u8 as f64,
            (false, true) => q.get(i - c, j) / k,
            (false, false) => (i == j) as u8 as f64 * corner,
            (true, false) => unreachable!(),
        }
    });
    inner.congruence(rot)
}

/// Block sequences against `F_s` with `n_y > 0`. Options: `rank` (default
/// 1), `q = first | random`.
pub fn run_tight_fs_holder(spec: &ExperimentSpec) -> Result<Table> {
    let d = spec.d;
    let r = spec.opt_usize("rank", 1)?;
    if r == 0 || r >= d {
        return Err(Error::InvalidInput(format!("rank must satisfy 0 < r < d, got {r}")));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let rot = random_orthogonal(d, &mut rng);
    let q = holder_q(r, d - r, spec.opt_str("q", "first") == "random", &mut rng)?;
    let q_norm = q.frob_norm();
    // n_Z = R diag(0, Sigma) R^T
    let mut sig = vec![0.0; d];
    for s in sig.iter_mut().skip(d - r) {
        *s = rng.random_range(0.5..2.0);
    }
    let n = pt(0.0, 1.0, SymMat::from_diag(&sig).congruence(&rot));
    let face = classify_face(&n, DEFAULT_TOL)?;
    if face.kind != FaceKind::MidFs {
        return Err(Error::Internal(format!("expected F_s, got {:?}", face.kind)));
    }
    let lower = 2f64.sqrt() * q_norm / (r as f64).powf(0.25);
    let rows = spec
        .k_grid()
        .par_iter()
        .map(|&k| -> Result<Vec<Cell>> {
            let w = pt(-1.0, 0.0, holder_block(&rot, &q, k, 0.0));
            let v = pt(-1.0, 0.0, holder_block(&rot, &q, k, 1.0 / (k * k)));
            let dist_f = dist_face(&face, &w)?;
            let (dist_k, status) = numeric_dist(&w);
            let v_psd = eigen_sym(&v.z)?.min() >= -1e-14;
            Ok(vec![
                Cell::Num(k),
                Cell::Num(dist_f),
                Cell::Num(2f64.sqrt() * q_norm / k),
                Cell::Num(dist_k),
                Cell::Num((r as f64).sqrt() / (k * k)),
                Cell::Num(w.inner(&n)),
                Cell::Bool(v_psd),
                Cell::Num(dist_f / dist_k.sqrt()),
                Cell::Num(lower),
                Cell::Text(status),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        experiment: spec.name,
        columns: vec![
            "k",
            "dist_face",
            "dist_face_closed",
            "dist_cone",
            "dist_cone_bound",
            "w_dot_n",
            "v_psd",
            "ratio",
            "lower_bound",
            "status",
        ],
        rows,
    })
}

/// `w^k = (-1, 1/k, 0)` against `F_s` (rank-deficient `n_Z`, option `rank`,
/// default 1) or `F_inf` (definite `n_Z`), both with `n_y = 0`.
///
/// The feasible `v^k = (-1, 1/k, I / (k e^{k/d}))` gives
/// `log dist(w^k, K) <= log(sqrt d) - log k - k/d`, which is evaluated in
/// the log domain. The numeric distance is computed while `k/d <= 300`.
pub fn run_tight_log(spec: &ExperimentSpec, definite: bool) -> Result<Table> {
    let d = spec.d;
    let df = d as f64;
    let r = if definite { d } else { spec.opt_usize("rank", 1)? };
    if r == 0 || r > d || (!definite && r == d) {
        return Err(Error::InvalidInput(format!("rank {r} does not fit this experiment")));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let n = pt(0.0, 0.0, random_psd_with_rank(d, r, 0.5, 2.0, &mut rng));
    let face = classify_face(&n, DEFAULT_TOL)?;
    let want = if definite { FaceKind::ExceptionalFinf } else { FaceKind::MidFs };
    if face.kind != want {
        return Err(Error::Internal(format!("expected {want:?}, got {:?}", face.kind)));
    }
    let u = pt(-1.0, 0.0, SymMat::zeros(d));
    let rows = spec
        .k_grid()
        .par_iter()
        .map(|&k| -> Result<Vec<Cell>> {
            let w = pt(-1.0, 1.0 / k, SymMat::zeros(d));
            let dist_f = dist_face(&face, &w)?;
            let proj_err = project_face(&face, &w)?.dist(&u);
            let log_bound = 0.5 * df.ln() - k.ln() - k / df;
            let ratio_bound = dist_f * -log_bound;
            let (dist_k, status) = if k / df <= 300.0 {
                numeric_dist(&w)
            } else {
                (f64::NAN, "bound".to_string())
            };
            let ratio = if dist_k.is_finite() {
                ratio_or_nan(dist_f, eval_glog(dist_k))
            } else {
                ratio_bound
            };
            Ok(vec![
                Cell::Num(k),
                Cell::Num(dist_f),
                Cell::Num(proj_err),
                Cell::Num(dist_k),
                Cell::Num(log_bound),
                Cell::Num(ratio),
                Cell::Num(ratio_bound),
                Cell::Num(1.0 / (2.0 * df)),
                Cell::Text(status),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        experiment: spec.name,
        columns: vec![
            "k",
            "dist_face",
            "face_proj_error",
            "dist_cone",
            "log_dist_cone_bound",
            "ratio",
            "ratio_at_bound",
            "lower_bound",
            "status",
        ],
        rows,
    })
}

/// Constants of the ray-face sequence for an exposing vector `n` with
/// `n_x < 0` and `n_Z` definite.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RayConstants {
    /// `log det(-n_x n_Z^{-1})`
    pub mu: f64,
    /// `n_x^2 ||n_Z^{-1}||_F^2`
    pub nu: f64,
    pub c_r: f64,
    /// `sqrt(2 ||n|| C_r d / (-n_x))`
    pub l_r: f64,
}

/// The vector `(n_x, n_x (d - log det(-n_x n_Z^{-1})), n_Z)` exposing the ray.
pub fn ray_exposing_vector(nx: f64, nz: SymMat) -> Result<ConePoint> {
    if !(nx < 0.0) {
        return domain(format!("ray face needs n_x < 0, got {nx}"));
    }
    let d = nz.dim() as f64;
    let mu = log_det(&inverse_pd(&nz)?.scale(-nx))?;
    Ok(pt(nx, nx * (d - mu), nz))
}

pub fn ray_constants(n: &ConePoint) -> Result<RayConstants> {
    if !(n.x < 0.0) {
        return domain("ray constants need n_x < 0");
    }
    let d = n.dim() as f64;
    let inv = inverse_pd(&n.z)?;
    let mu = log_det(&inv.scale(-n.x))?;
    let nu = n.x * n.x * inv.frob_norm().powi(2);
    let den = mu * mu + nu + 1.0;
    let a = (nu * (1.0 - mu / d) + 1.0) / den;
    let b = (mu + nu / d) / den;
    let c = (mu * mu / d - mu + 1.0 / d) / den;
    let c_r = a * a + b * b + nu * c * c;
    let l_r = (2.0 * n.norm() * c_r * d / -n.x).sqrt();
    Ok(RayConstants { mu, nu, c_r, l_r })
}

/// The exposing vector of the ray experiment: `(-1, -d, I)` for `draw = 0`,
/// otherwise `n_x` and a definite `n_Z` drawn from stream `draw` of `seed`.
pub fn ray_fixture(d: usize, seed: u64, draw: u64) -> Result<ConePoint> {
    if draw == 0 {
        return Ok(pt(-1.0, -(d as f64), SymMat::identity(d)));
    }
    let mut rng = stream_rng(seed, draw);
    let nx = -rng.random_range(0.5..2.0);
    let nz = random_psd_with_rank(d, d, 0.5, 2.0, &mut rng);
    ray_exposing_vector(nx, nz)
}

/// `v^k = (mu + 1/k, 1, e^{1/(dk)} M)` with `M = -n_x n_Z^{-1}`, its
/// projection `w^k` onto `{n}^perp` and `u^k = P_{F_r}(w^k)`. Option `draw`
/// selects the exposing vector (see [`ray_fixture`]).
pub fn run_tight_fr(spec: &ExperimentSpec) -> Result<Table> {
    let d = spec.d;
    let df = d as f64;
    let n = ray_fixture(d, spec.seed, spec.opt_usize("draw", 0)? as u64)?;
    let face = classify_face(&n, DEFAULT_TOL)?;
    if face.kind != FaceKind::RayFr {
        return Err(Error::Internal(format!("expected F_r, got {:?}", face.kind)));
    }
    let consts = ray_constants(&n)?;
    let m = inverse_pd(&n.z)?.scale(-n.x);
    let rows = spec
        .k_grid()
        .par_iter()
        .map(|&k| -> Result<Vec<Cell>> {
            let v = pt(consts.mu + 1.0 / k, 1.0, m.scale((1.0 / (df * k)).exp()));
            let w = project_hyperplane(&v, &n)?;
            let u = project_face(&face, &w)?;
            let wu = w.dist(&u);
            let wv = w.dist(&v);
            let ratio = wu / wv.sqrt();
            Ok(vec![
                Cell::Num(k),
                Cell::Num(wu),
                Cell::Num(wv),
                Cell::Bool(member_primal(&v, DEFAULT_TOL)),
                Cell::Num(ratio),
                Cell::Num(consts.l_r),
                Cell::Num((ratio - consts.l_r).abs() / consts.l_r),
                Cell::Num(consts.c_r),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        experiment: spec.name,
        columns: vec!["k", "dist_w_u", "dist_w_v", "v_member", "ratio", "l_r", "rel_error", "c_r"],
        rows,
    })
}

/// Exposing vector named by `face` (`fd | fs | fr | finf`), with options
/// `rank` and `ny` for `F_s` and `F_inf`.
pub fn named_face_vector(spec: &ExperimentSpec) -> Result<ConePoint> {
    let d = spec.d;
    let ny = spec.opt_f64("ny", 1.0)?;
    let mut rng = stream_rng(spec.seed, u64::MAX);
    Ok(match spec.opt_str("face", "fd") {
        "fd" => pt(0.0, 1.0, SymMat::zeros(d)),
        "fs" => {
            let r = spec.opt_usize("rank", 1)?;
            pt(0.0, ny, random_psd_with_rank(d, r, 0.5, 2.0, &mut rng))
        }
        "finf" => pt(0.0, ny, random_psd_with_rank(d, d, 0.5, 2.0, &mut rng)),
        "fr" => pt(-1.0, -(d as f64), SymMat::identity(d)),
        other => return Err(Error::Parse(format!("unknown face '{other}'"))),
    })
}

/// Residual function named `gd | glog | sqrt | abs`.
pub fn named_residual(name: &str) -> Result<ResidualFn> {
    Ok(match name {
        "gd" => ResidualFn::Gd,
        "glog" => ResidualFn::Glog,
        "sqrt" => ResidualFn::Power(0.5),
        "abs" => ResidualFn::Power(1.0),
        other => return Err(Error::Parse(format!("unknown residual '{other}'"))),
    })
}

/// Boundary points `(d log k / k, 1/k, I)` that drive the Lipschitz ratio
/// for `F_d` to zero.
pub fn fd_adversarial_points(d: usize, ks: &[f64]) -> Vec<ConePoint> {
    ks.iter()
        .map(|&k| pt(d as f64 * k.ln() / k, 1.0 / k, SymMat::identity(d)))
        .collect()
}

/// `gamma` estimates over a growing sample count (the `k` grid). Options:
/// `face`, `g` (default `gd`), `eta` (default 1), `inject = none | fd`.
/// Samples are nested, so the running minimum is the estimate itself.
pub fn run_gamma_scan(spec: &ExperimentSpec) -> Result<Table> {
    let n = named_face_vector(spec)?;
    let face = classify_face(&n, DEFAULT_TOL)?;
    let g = named_residual(spec.opt_str("g", "gd"))?;
    let eta = spec.opt_f64("eta", 1.0)?;
    let injected = match spec.opt_str("inject", "none") {
        "none" => Vec::new(),
        "fd" => {
            let ks: Vec<f64> = (1..=60).map(|i| 10f64.powf(1.0 + i as f64 / 10.0)).collect();
            fd_adversarial_points(spec.d, &ks)
        }
        other => return Err(Error::Parse(format!("unknown injection '{other}'"))),
    };
    let mut rows = Vec::new();
    for k in spec.k_grid() {
        let est = estimate_gamma_with(&face, &g, eta, k as usize, spec.seed, &injected)?;
        rows.push(vec![
            Cell::Int(k as i64),
            Cell::Int(est.valid_samples as i64),
            Cell::Num(est.value),
            Cell::Num(est.argmin.norm()),
        ]);
    }
    Ok(Table {
        experiment: spec.name,
        columns: vec!["samples", "valid_samples", "gamma_estimate", "argmin_norm"],
        rows,
    })
}

/// Builds, verifies and empirically checks the crafted certificate of every
/// case at dimension `d`. Options: `samples` (default 2000), `eta`.
pub fn run_certificate_check(spec: &ExperimentSpec) -> Result<Table> {
    let samples = spec.opt_usize("samples", 2000)?;
    let eta = spec.opt_f64("eta", 1.0)?;
    let mut rows = Vec::new();
    for case in CaseTag::ALL {
        let fx = crafted_fixture(case, spec.d, spec.seed);
        let mut steps = build_chain(spec.d, &fx.chain, DEFAULT_TOL)?;
        let rep = verify_chain(&fx.problem, &mut steps, DEFAULT_TOL);
        let cert = build_certificate(&fx.problem, &steps, &[], DEFAULT_TOL)?;
        let emp = check_certificate_empirically(&fx.problem, &steps, &cert, samples, eta, spec.seed)?;
        rows.push(vec![
            Cell::Text(format!("{case:?}")),
            Cell::Text(cert.case_label.clone()),
            Cell::Text(cert.formula.clone()),
            Cell::Int(cert.d_pps as i64),
            Cell::Int(cert.d_pps_upper_bound as i64),
            Cell::Bool(rep.passed),
            Cell::Int(emp.informative as i64),
            Cell::Num(emp.fitted_c),
            Cell::Num(emp.small_arg_slope),
            Cell::Bool(emp.passed),
        ]);
    }
    Ok(Table {
        experiment: spec.name,
        columns: vec![
            "case",
            "label",
            "formula",
            "chain_length",
            "dpps_upper_bound",
            "chain_verified",
            "informative_samples",
            "fitted_c",
            "small_arg_slope",
            "passed",
        ],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: ExperimentName, d: usize, kmin: f64, kmax: f64, points: usize) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(name);
        s.d = d;
        s.k_min = kmin;
        s.k_max = kmax;
        s.points = points;
        s
    }

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
        }
        assert!("tight".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn config_overrides() {
        let mut s = ExperimentSpec::new(ExperimentName::TightFd);
        s.apply_config("# comment\nd = 5\nkmax=1e4\n\nrank = 2 # trailing\n").unwrap();
        assert_eq!(s.d, 5);
        assert_eq!(s.k_max, 1e4);
        assert_eq!(s.opt_usize("rank", 1).unwrap(), 2);
        assert!(s.apply_config("d 5").is_err());
        assert!(s.apply_config("d = two").is_err());
        s.k_min = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn grid_is_log_spaced() {
        let s = spec(ExperimentName::TightFd, 2, 10.0, 1e6, 40);
        let g = s.k_grid();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 10.0);
        assert_eq!(*g.last().unwrap(), 1e6);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fd_closed_form_example() {
        let s = spec(ExperimentName::TightFd, 3, 1000.0, 1000.0, 1);
        let t = run(&s).unwrap();
        let df = t.column("dist_face").unwrap()[0];
        assert!((df - 2.0723265836946413e-2).abs() < 1e-15);
        assert!((df - t.column("dist_face_closed").unwrap()[0]).abs() < 1e-15);
        assert!(t.column("ratio").unwrap()[0] >= 3.0);
        assert_eq!(t.column("v_member").unwrap()[0], 1.0);
    }

    #[test]
    fn fs_holder_closed_form_example() {
        let s = spec(ExperimentName::TightFsHolder, 3, 10.0, 1e4, 5);
        let t = run(&s).unwrap();
        let ks = t.column("k").unwrap();
        let df = t.column("dist_face").unwrap();
        for (k, v) in ks.iter().zip(&df) {
            assert!((v - 2f64.sqrt() / k).abs() < 1e-12 / k);
        }
        assert!(t.column("w_dot_n").unwrap().iter().all(|x| x.abs() < 1e-12));
        assert!(t.column("v_psd").unwrap().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn log_bound_example() {
        let s = spec(ExperimentName::TightFsLog, 2, 20.0, 20.0, 1);
        let t = run(&s).unwrap();
        let lb = t.column("log_dist_cone_bound").unwrap()[0];
        let direct = 2f64.sqrt() / (20.0 * 10f64.exp());
        assert!((lb - direct.ln()).abs() < 1e-12);
        assert!(t.column("face_proj_error").unwrap()[0] < 1e-15);
        let d = t.column("dist_cone").unwrap()[0];
        assert!(d <= direct * (1.0 + 1e-9));
    }

    #[test]
    fn ray_constants_default() {
        for d in [2usize, 3] {
            let n = ray_fixture(d, 0, 0).unwrap();
            let c = ray_constants(&n).unwrap();
            let df = d as f64;
            assert!(c.mu.abs() < 1e-14);
            assert!((c.nu - df).abs() < 1e-12);
            let expect = 1.0 + 1.0 / (df + 1.0).powi(2) + 1.0 / (df * (df + 1.0).powi(2));
            assert!((c.c_r - expect).abs() < 1e-12);
            assert!(c.c_r > 0.0);
        }
    }

    #[test]
    fn ray_fixture_exposes_ray() {
        for draw in 1..4 {
            let n = ray_fixture(3, 11, draw).unwrap();
            assert_eq!(classify_face(&n, 1e-9).unwrap().kind, FaceKind::RayFr);
        }
    }

    #[test]
    fn csv_layout() {
        let s = spec(ExperimentName::TightFd, 2, 100.0, 1000.0, 3);
        let t = run(&s).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# ldcone tight_fd schema v1");
        assert!(lines.next().unwrap().starts_with("k,dist_face,"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("1.0000000000000000e2,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn fitted_constant_growth() {
        let ks = [10.0, 100.0, 1000.0];
        assert_eq!(fitted_constant(&ks, &[1.0, 2.0, 2.0]), (2.0, 0.0));
        let (c, ch) = fitted_constant(&ks, &[1.0, 1.0, 2.0]);
        assert_eq!(c, 2.0);
        assert!((ch - 0.5).abs() < 1e-15);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut s = spec(ExperimentName::TightFsHolder, 3, 10.0, 1e3, 6);
        s.set("q", "random").unwrap();
        s.seed = 4;
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn gamma_scan_nested_samples() {
        let mut s = spec(ExperimentName::GammaScan, 2, 50.0, 400.0, 4);
        s.set("g", "gd").unwrap();
        let t = run(&s).unwrap();
        let g = t.column("gamma_estimate").unwrap();
        assert!(g.windows(2).all(|w| w[1] <= w[0]));
        assert!(g.iter().all(|&x| x > 0.0));
    }
}
