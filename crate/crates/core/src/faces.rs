//! Faces of the log-determinant cone.
//!
//! Besides the whole cone and `{0}`, every face is one of
//!
//! * `F_r = { t f_r : t >= 0 }`, a ray exposed by `n` with `n_x < 0`;
//! * `F_d = R_- x {0} x S_+`, exposed by `(0, n_y > 0, 0)`;
//! * `F_s = R_- x {0} x (S_+ cap {n_Z}^perp)`, `0 < rank n_Z < d`;
//! * `F_inf = R_- x {0} x {0}`, `n_Z` definite;
//! * `F_ne = {0} x {0} x (S_+ cap {n_Z}^perp)`, which is not exposed.
//!
//! All faces other than the ray and the whole cone have the form
//! `X x {0} x B S_+ B^T` with `X` either `R_-` or `{0}` and `B` an
//! orthonormal basis of a subspace of `R^d`; they are stored that way.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{
    classify_dual, member_primal, perspective_logdet, project_cone, project_hyperplane, sd,
    BoundaryPart, ConePoint, DEFAULT_TOL,
};
use crate::error::{domain, Error, Result};
use crate::frf::ResidualFn;
use crate::linalg::{
    eigen_sym, inverse_pd, log_det, numerical_rank, psd_project, random_psd_with_rank, random_symmetric, Mat,
    SymMat,
};
use crate::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceKind {
    RayFr,
    BigFd,
    MidFs,
    ExceptionalFinf,
    NonExposedFne,
    TrivialZero,
    WholeCone,
}

impl FaceKind {
    pub fn name(self) -> &'static str {
        match self {
            FaceKind::RayFr => "F_r",
            FaceKind::BigFd => "F_d",
            FaceKind::MidFs => "F_s",
            FaceKind::ExceptionalFinf => "F_inf",
            FaceKind::NonExposedFne => "F_ne",
            FaceKind::TrivialZero => "zero",
            FaceKind::WholeCone => "K",
        }
    }

    pub fn parse(s: &str) -> Result<FaceKind> {
        Ok(match s {
            "F_r" | "RayFr" | "Fr" => FaceKind::RayFr,
            "F_d" | "BigFd" | "Fd" => FaceKind::BigFd,
            "F_s" | "MidFs" | "Fs" => FaceKind::MidFs,
            "F_inf" | "ExceptionalFinf" | "Finf" => FaceKind::ExceptionalFinf,
            "F_ne" | "NonExposedFne" | "Fne" => FaceKind::NonExposedFne,
            "zero" | "TrivialZero" => FaceKind::TrivialZero,
            "K" | "WholeCone" => FaceKind::WholeCone,
            other => return Err(Error::Parse(format!("unknown face kind '{other}'"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct FaceDescriptor {
    pub kind: FaceKind,
    /// Matrix dimension `d`.
    pub d: usize,
    /// Exposing vector, when one is known.
    pub n: Option<ConePoint>,
    /// `f_r` for ray faces.
    pub ray_generator: Option<ConePoint>,
    /// Orthonormal `d x m` basis `B` of the matrix part `B S_+ B^T`; present
    /// for every kind except the ray and the whole cone.
    pub kernel_basis: Option<Mat>,
    /// Dimension of the face.
    pub dim: usize,
}

impl FaceDescriptor {
    pub fn whole(d: usize) -> Self {
        FaceDescriptor {
            kind: FaceKind::WholeCone,
            d,
            n: None,
            ray_generator: None,
            kernel_basis: None,
            dim: sd(d) + 2,
        }
    }

    /// The face `X x {0} x B S_+ B^T` with `X = R_-` if `x_free` and
    /// `X = {0}` otherwise. The columns of `basis` must be orthonormal.
    pub fn psd_product(d: usize, x_free: bool, basis: Mat, n: Option<ConePoint>) -> Result<Self> {
        if basis.rows != d {
            return Err(Error::InvalidInput(format!(
                "basis has {} rows, expected {d}",
                basis.rows
            )));
        }
        if basis.cols > 0 && basis.orthonormality_defect() > 1e-9 {
            return Err(Error::InvalidInput("face basis is not orthonormal".into()));
        }
        let m = basis.cols;
        let kind = match (x_free, m) {
            (true, m) if m == d => FaceKind::BigFd,
            (true, 0) => FaceKind::ExceptionalFinf,
            (true, _) => FaceKind::MidFs,
            (false, 0) => FaceKind::TrivialZero,
            (false, _) => FaceKind::NonExposedFne,
        };
        Ok(FaceDescriptor {
            kind,
            d,
            n,
            ray_generator: None,
            kernel_basis: Some(basis),
            dim: x_free as usize + sd(m),
        })
    }

    pub fn zero(d: usize) -> Self {
        FaceDescriptor::psd_product(d, false, Mat::zeros(d, 0), None).expect("empty basis is valid")
    }

    /// `F_ne = {0} x {0} x (S_+ cap {n_Z}^perp)` for a PSD `n_Z` that is not
    /// definite.
    pub fn non_exposed(n_z: &SymMat, tol: f64) -> Result<Self> {
        let e = eigen_sym(n_z)?;
        crate::linalg::rank_of(&e, tol)?;
        let b = e.kernel_basis(tol);
        if b.cols == 0 {
            return domain("F_ne needs a singular n_Z");
        }
        FaceDescriptor::psd_product(n_z.dim(), false, b, None)
    }

    /// `R_-` or `{0}` in the first coordinate, and the matrix basis, for
    /// faces that are not rays or the whole cone.
    pub fn psd_structure(&self) -> Option<(bool, &Mat)> {
        let b = self.kernel_basis.as_ref()?;
        let x_free = matches!(
            self.kind,
            FaceKind::BigFd | FaceKind::MidFs | FaceKind::ExceptionalFinf
        );
        Some((x_free, b))
    }

    /// Whether `p` lies in the face, up to `tol` relative to `max(1, ||p||)`.
    pub fn contains(&self, p: &ConePoint, tol: f64) -> Result<bool> {
        if self.kind == FaceKind::WholeCone {
            return Ok(member_primal(p, tol));
        }
        Ok(dist_face(self, p)? <= tol * p.norm().max(1.0))
    }
}

fn ray_generator(n: &ConePoint) -> Result<ConePoint> {
    let inv = inverse_pd(&n.z)?;
    let m = inv.scale(-n.x);
    let ld = log_det(&m)?;
    Ok(ConePoint {
        x: ld,
        y: 1.0,
        z: m,
    })
}

/// Classifies the face `K cap {n}^perp` for `n` on the boundary of the dual
/// cone.
pub fn classify_face(n: &ConePoint, tol: f64) -> Result<FaceDescriptor> {
    let d = n.dim();
    if n.norm() <= tol {
        return domain("exposing vector is zero");
    }
    match classify_dual(n, tol) {
        BoundaryPart::DualK1e => {
            let f = ray_generator(n)?;
            Ok(FaceDescriptor {
                kind: FaceKind::RayFr,
                d,
                n: Some(n.clone()),
                ray_generator: Some(f),
                kernel_basis: None,
                dim: 1,
            })
        }
        BoundaryPart::DualK2 => {
            let e = eigen_sym(&n.z)?;
            let r = crate::linalg::rank_of(&e, tol)?;
            if r == 0 && !(n.y > tol * n.norm().max(1.0)) {
                return domain("exposing vector is zero");
            }
            let b = if r == 0 { Mat::identity(d) } else { e.kernel_basis(tol) };
            FaceDescriptor::psd_product(d, true, b, Some(n.clone()))
        }
        BoundaryPart::DualInterior => domain("vector is interior to the dual cone and exposes {0}"),
        _ => domain("vector is not in the dual cone"),
    }
}

/// Euclidean projection onto the face. For the whole cone this is
/// [`project_cone`].
pub fn project_face(f: &FaceDescriptor, p: &ConePoint) -> Result<ConePoint> {
    if p.dim() != f.d {
        return Err(Error::InvalidInput(format!(
            "point has dimension {}, face has {}",
            p.dim(),
            f.d
        )));
    }
    match f.kind {
        FaceKind::WholeCone => Ok(project_cone(p, DEFAULT_TOL, 300)?.point),
        FaceKind::RayFr => {
            let g = f
                .ray_generator
                .as_ref()
                .ok_or_else(|| Error::Internal("ray face without generator".into()))?;
            let c = (p.inner(g) / g.inner(g)).max(0.0);
            Ok(g.scale(c))
        }
        _ => {
            let (x_free, b) = f
                .psd_structure()
                .ok_or_else(|| Error::Internal(format!("{:?} face without basis", f.kind)))?;
            let x = if x_free { p.x.min(0.0) } else { 0.0 };
            let z = if b.cols == 0 {
                SymMat::zeros(f.d)
            } else if b.cols == f.d && f.kind == FaceKind::BigFd {
                psd_project(&p.z)?
            } else {
                psd_project(&p.z.congruence_t(b))?.congruence(b)
            };
            Ok(ConePoint { x, y: 0.0, z })
        }
    }
}

pub fn dist_face(f: &FaceDescriptor, p: &ConePoint) -> Result<f64> {
    Ok(p.dist(&project_face(f, p)?))
}

fn loguniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_pd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SymMat {
    let q = crate::linalg::random_orthogonal(d, rng);
    let vals: Vec<f64> = (0..d).map(|_| loguniform(1e-3, 1.0, rng)).collect();
    SymMat::from_diag(&vals).congruence(&q)
}

fn random_psd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SymMat {
    let r = rng.random_range(0..=d);
    random_psd_with_rank(d, r, 1e-3, 1.0, rng)
}

/// Rescales a nonzero point to a norm drawn uniformly from `(0, eta]`.
fn into_ball<R: Rng + ?Sized>(p: ConePoint, eta: f64, rng: &mut R) -> ConePoint {
    let nrm = p.norm();
    if nrm == 0.0 {
        return p;
    }
    let r = eta * (1.0 - rng.random::<f64>());
    p.scale(r / nrm)
}

/// A random point of the face, with norm at most `eta`.
pub fn sample_face<R: Rng + ?Sized>(f: &FaceDescriptor, eta: f64, rng: &mut R) -> ConePoint {
    let d = f.d;
    let p = match f.kind {
        FaceKind::WholeCone => {
            let y = loguniform(1e-4, 1.0, rng);
            let z = random_pd(d, rng);
            let x = perspective_logdet(y, &z).expect("positive arguments") - rng.random::<f64>();
            ConePoint { x, y, z }
        }
        FaceKind::RayFr => f.ray_generator.clone().expect("ray face has a generator"),
        _ => {
            let (x_free, b) = f.psd_structure().expect("face has a basis");
            let x = if x_free { -rng.random::<f64>() } else { 0.0 };
            let z = if b.cols == 0 {
                SymMat::zeros(d)
            } else {
                random_psd(b.cols, rng).congruence(b)
            };
            ConePoint { x, y: 0.0, z }
        }
    };
    into_ball(p, eta, rng)
}

/// Point of the smooth boundary piece with the given `(y, Z)`.
fn smooth_boundary_point(y: f64, z: SymMat) -> Option<ConePoint> {
    let x = perspective_logdet(y, &z).ok()?;
    Some(ConePoint { x, y, z })
}

/// Random point of `bd K cap B(eta)`.
///
/// Half of the draws lie on the smooth piece `x = y log det(Z/y)` and half
/// on the closure piece `R_- x {0} x S_+`. When `near` is given, half of
/// the draws in each piece are small perturbations of a point of that face,
/// which is where the ratios in [`estimate_gamma`] are smallest.
pub fn sample_boundary<R: Rng + ?Sized>(
    d: usize,
    eta: f64,
    near: Option<&FaceDescriptor>,
    rng: &mut R,
) -> ConePoint {
    let smooth = rng.random_bool(0.5);
    let perturb = near.is_some() && rng.random_bool(0.5);
    let p = loop {
        let cand = if perturb {
            let f = near.expect("checked above");
            let u = sample_face(f, 1.0, rng);
            let delta = loguniform(1e-8, 1.0, rng);
            if smooth {
                let (y, z) = if f.kind == FaceKind::RayFr {
                    let g = f.ray_generator.as_ref().expect("ray face has a generator");
                    let dz = random_symmetric(d, rng).scale(delta / (d as f64));
                    (g.y * (1.0 + delta * rng.random_range(-0.5..0.5)), g.z.add(&dz))
                } else {
                    (delta * rng.random::<f64>(), u.z.add(&random_pd(d, rng).scale(delta)))
                };
                smooth_boundary_point(y, z)
            } else {
                let x = u.x - delta * rng.random::<f64>();
                let z = u.z.add(&random_psd(d, rng).scale(delta));
                Some(ConePoint { x, y: 0.0, z })
            }
        } else if smooth {
            let y = loguniform(1e-8, 1.0, rng);
            smooth_boundary_point(y, random_pd(d, rng))
        } else {
            let x = if rng.random_bool(0.2) { 0.0 } else { -rng.random::<f64>() };
            Some(ConePoint {
                x,
                y: 0.0,
                z: random_psd(d, rng),
            })
        };
        match cand {
            Some(c) if c.is_finite() && c.norm() > 0.0 => break c,
            _ => continue,
        }
    };
    into_ball(p, eta, rng)
}

/// Outcome of [`verify_face_exposure`].
#[derive(Clone, Debug, Serialize)]
pub struct ExposureReport {
    pub passed: bool,
    pub face_samples: usize,
    pub boundary_samples: usize,
    /// Boundary samples found away from the face.
    pub off_face_samples: usize,
    /// Largest `|<n, q>| / (1 + ||n|| ||q||)` over sampled face points.
    pub max_orthogonality_residual: f64,
    pub failure: Option<String>,
}

/// Checks `F = K cap {n}^perp` by sampling: points of `F` are in `K` and
/// orthogonal to `n`, and boundary points away from `F` have `<n, q> > 0`.
pub fn verify_face_exposure(f: &FaceDescriptor, samples: usize, seed: u64) -> Result<ExposureReport> {
    let n = match (&f.n, f.kind) {
        (_, FaceKind::NonExposedFne) => return domain("F_ne is not exposed"),
        (Some(n), _) => n.clone(),
        (None, _) => return domain("face has no exposing vector"),
    };
    let nn = n.norm();
    let mut report = ExposureReport {
        passed: true,
        face_samples: samples,
        boundary_samples: samples,
        off_face_samples: 0,
        max_orthogonality_residual: 0.0,
        failure: None,
    };
    for i in 0..samples {
        let mut rng = stream_rng(seed, i as u64);
        let q = sample_face(f, 1.0 + 4.0 * rng.random::<f64>(), &mut rng);
        let orth = q.inner(&n).abs() / (1.0 + nn * q.norm());
        report.max_orthogonality_residual = report.max_orthogonality_residual.max(orth);
        if !member_primal(&q, 1e-9) {
            report.passed = false;
            report.failure = Some(format!("face point {q:?} is not in the cone"));
            return Ok(report);
        }
        if orth > 1e-9 {
            report.passed = false;
            report.failure = Some(format!("face point {q:?} has <n, q> = {:e}", q.inner(&n)));
            return Ok(report);
        }
    }
    for i in 0..samples {
        let mut rng = stream_rng(seed ^ 0x5bd1_e995, i as u64);
        let q = sample_boundary(f.d, 1.0, Some(f), &mut rng);
        let ip = q.inner(&n);
        if ip < -1e-9 * (1.0 + nn * q.norm()) {
            report.passed = false;
            report.failure = Some(format!("boundary point {q:?} has <n, q> = {ip:e} < 0"));
            return Ok(report);
        }
        if dist_face(f, &q)? > 1e-6 * (1.0 + q.norm()) {
            report.off_face_samples += 1;
            if !(ip > 0.0) {
                report.passed = false;
                report.failure = Some(format!("boundary point {q:?} off the face has <n, q> = {ip:e}"));
                return Ok(report);
            }
        }
    }
    Ok(report)
}

/// Rounding-error level of `<v, n>`.
fn inner_noise(v: &ConePoint, n: &ConePoint) -> f64 {
    let d = v.dim();
    let mut abs = (v.x * n.x).abs() + (v.y * n.y).abs();
    for i in 0..d {
        for j in 0..d {
            abs += (v.z.get(i, j) * n.z.get(i, j)).abs();
        }
    }
    64.0 * f64::EPSILON * abs
}

/// Ratio `g(||v - w||) / ||u - w||` with `w` the projection of `v` onto
/// `{n}^perp` and `u` the projection of `w` onto the face; `None` when
/// `||u - w|| <= 1e-12`, or when `<v, n>` is at rounding level so that
/// `||v - w||` carries no information.
pub fn gamma_ratio(f: &FaceDescriptor, g: &ResidualFn, v: &ConePoint) -> Result<Option<f64>> {
    let n = f
        .n
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("face has no exposing vector".into()))?;
    if v.inner(n).abs() <= inner_noise(v, n) {
        return Ok(None);
    }
    let w = project_hyperplane(v, n)?;
    let u = project_face(f, &w)?;
    let den = u.dist(&w);
    if den <= 1e-12 {
        return Ok(None);
    }
    Ok(Some(g.eval(v.dist(&w))? / den))
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramBin {
    /// Lower edge of the bin in `log10(ratio)`.
    pub log10_lo: f64,
    pub count: usize,
}

/// Empirical upper bound on `gamma_{n,eta}`.
#[derive(Clone, Debug, Serialize)]
pub struct GammaEstimate {
    pub value: f64,
    pub valid_samples: usize,
    /// The boundary point attaining the minimum.
    pub argmin: ConePoint,
    /// One-decade bins of `log10(ratio)`.
    pub histogram: Vec<HistogramBin>,
}

/// Minimum of [`gamma_ratio`] over `samples` random boundary points of
/// `B(eta)`. The result is an upper bound on the infimum, never a lower
/// bound.
pub fn estimate_gamma(
    f: &FaceDescriptor,
    g: &ResidualFn,
    eta: f64,
    samples: usize,
    seed: u64,
) -> Result<GammaEstimate> {
    estimate_gamma_with(f, g, eta, samples, seed, &[])
}

/// [`estimate_gamma`] with extra boundary points added to the random ones.
/// Injected points outside `B(eta)` are scaled onto its boundary sphere.
pub fn estimate_gamma_with(
    f: &FaceDescriptor,
    g: &ResidualFn,
    eta: f64,
    samples: usize,
    seed: u64,
    injected: &[ConePoint],
) -> Result<GammaEstimate> {
    if !(eta > 0.0) {
        return domain(format!("eta must be positive, got {eta}"));
    }
    if matches!(f.kind, FaceKind::WholeCone | FaceKind::NonExposedFne | FaceKind::TrivialZero) {
        return domain(format!("gamma is defined for nontrivial exposed faces, not {:?}", f.kind));
    }
    if g.is_two_arg() {
        return domain("gamma needs a single-argument residual function");
    }
    let random: Vec<Result<Option<(f64, ConePoint)>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng: ChaCha8Rng = stream_rng(seed, i as u64);
            let v = sample_boundary(f.d, eta, Some(f), &mut rng);
            Ok(gamma_ratio(f, g, &v)?.map(|r| (r, v)))
        })
        .collect();
    let extra = injected.iter().map(|v| {
        let nrm = v.norm();
        let v = if nrm > eta { v.scale(eta / nrm) } else { v.clone() };
        Ok(gamma_ratio(f, g, &v)?.map(|r| (r, v)))
    });

    let mut ratios = Vec::new();
    let mut best: Option<(f64, ConePoint)> = None;
    for item in random.into_iter().chain(extra) {
        if let Some((r, v)) = item? {
            ratios.push(r);
            if best.as_ref().is_none_or(|(b, _)| r < *b) {
                best = Some((r, v));
            }
        }
    }
    let (value, argmin) = best.ok_or_else(|| Error::Domain("no valid samples for gamma".into()))?;
    Ok(GammaEstimate {
        value,
        valid_samples: ratios.len(),
        argmin,
        histogram: log_histogram(&ratios),
    })
}

pub(crate) fn log_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0).map(|v| v.log10().floor()).collect();
    let Some(lo) = logs.iter().cloned().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = logs.iter().cloned().fold(lo, f64::max);
    let bins = (hi - lo) as usize + 1;
    let mut counts = vec![0usize; bins];
    for l in logs {
        counts[(l - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            log10_lo: lo + i as f64,
            count,
        })
        .collect()
}

/// Dimension of the affine hull of a point cloud: rank of the centred
/// second-moment matrix in orthonormal coordinates.
pub fn affine_dimension(points: &[ConePoint], tol: f64) -> Result<usize> {
    if points.is_empty() {
        return Ok(0);
    }
    let vs: Vec<Vec<f64>> = points.iter().map(ConePoint::to_vec).collect();
    let m = vs[0].len();
    let cnt = vs.len() as f64;
    let mean: Vec<f64> = (0..m).map(|k| vs.iter().map(|v| v[k]).sum::<f64>() / cnt).collect();
    let cov = SymMat::from_lower_fn(m, |i, j| {
        vs.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / cnt
    });
    numerical_rank(&cov, tol)
}

/// Face given by file: an exposing vector, optionally with the expected
/// kind. `F_ne` takes the `n_Z` it is built from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaceSpec {
    #[serde(default)]
    pub kind: Option<String>,
    pub n: ConePoint,
    #[serde(default)]
    pub tol: Option<f64>,
}

impl FaceSpec {
    pub fn resolve(&self) -> Result<FaceDescriptor> {
        let tol = self.tol.unwrap_or(DEFAULT_TOL);
        let expected = self.kind.as_deref().map(FaceKind::parse).transpose()?;
        if expected == Some(FaceKind::NonExposedFne) {
            return FaceDescriptor::non_exposed(&self.n.z, tol);
        }
        let f = classify_face(&self.n, tol)?;
        if let Some(k) = expected {
            if k != f.kind {
                return domain(format!("face file says {k:?} but the vector exposes {:?}", f.kind));
            }
        }
        Ok(f)
    }
}
