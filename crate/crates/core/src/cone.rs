//! The log-determinant cone and its dual.
//!
//! Primal: `x <= y log det(Z/y)` with `y > 0, Z > 0`, plus the closure piece
//! `R_- x {0} x S_+`. Dual: `y >= x (log det(-Z/x) + d)` with `x < 0, Z > 0`,
//! plus `{0} x R_+ x S_+`. Every exponential-form test is evaluated through
//! eigenvalue logarithms so nothing overflows for tiny `y` or `x`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{eigen_sym, random_symmetric, EigenDecomposition, SymMat};

/// Default membership tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// A point `(x, y, Z)` of `R x R x S^d`, `d >= 2`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConePoint", into = "RawConePoint")]
pub struct ConePoint {
    pub x: f64,
    pub y: f64,
    pub z: SymMat,
}

#[derive(Serialize, Deserialize)]
struct RawConePoint {
    x: f64,
    y: f64,
    #[serde(rename = "Z")]
    z: SymMat,
}

impl TryFrom<RawConePoint> for ConePoint {
    type Error = Error;
    fn try_from(r: RawConePoint) -> Result<Self> {
        ConePoint::new(r.x, r.y, r.z)
    }
}

impl From<ConePoint> for RawConePoint {
    fn from(p: ConePoint) -> Self {
        RawConePoint { x: p.x, y: p.y, z: p.z }
    }
}

impl fmt::Debug for ConePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:e}, {:e}, {:?})", self.x, self.y, self.z)
    }
}

impl ConePoint {
    /// Validating constructor: `d >= 2` and finite entries.
    pub fn new(x: f64, y: f64, z: SymMat) -> Result<Self> {
        if z.dim() < 2 {
            return Err(Error::InvalidInput(format!(
                "matrix block must have dimension >= 2, got {}",
                z.dim()
            )));
        }
        if !x.is_finite() || !y.is_finite() || !z.is_finite() {
            return Err(Error::InvalidInput("cone point has non-finite entries".into()));
        }
        Ok(ConePoint { x, y, z })
    }

    pub fn zero(dim: usize) -> Self {
        ConePoint {
            x: 0.0,
            y: 0.0,
            z: SymMat::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    /// `x_x z_x + x_y z_y + tr(x_Z z_Z)`
    pub fn inner(&self, other: &ConePoint) -> f64 {
        self.x * other.x + self.y * other.y + self.z.inner(&other.z)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> ConePoint {
        ConePoint {
            x: self.x * s,
            y: self.y * s,
            z: self.z.scale(s),
        }
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &ConePoint) -> ConePoint {
        ConePoint {
            x: self.x + a * other.x,
            y: self.y + a * other.y,
            z: self.z.axpy(a, &other.z),
        }
    }

    pub fn add(&self, other: &ConePoint) -> ConePoint {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ConePoint) -> ConePoint {
        self.axpy(-1.0, other)
    }

    pub fn dist(&self, other: &ConePoint) -> f64 {
        self.sub(other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Coordinates in an orthonormal basis of `R x R x S^d`
    /// (off-diagonal matrix entries scaled by `sqrt 2`), length `sd(d) + 2`.
    pub fn to_vec(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v = Vec::with_capacity(sd(d) + 2);
        v.push(self.x);
        v.push(self.y);
        for i in 0..d {
            for j in 0..=i {
                let f = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                v.push(f * self.z.get(i, j));
            }
        }
        v
    }

    /// Inverse of [`ConePoint::to_vec`].
    pub fn from_vec(dim: usize, v: &[f64]) -> ConePoint {
        assert_eq!(v.len(), sd(dim) + 2, "coordinate vector has wrong length");
        let mut k = 2;
        let mut z = SymMat::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                let f = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
                z.set(i, j, f * v[k]);
                k += 1;
            }
        }
        ConePoint { x: v[0], y: v[1], z }
    }
}

/// Dimension `d(d+1)/2` of `S^d`.
pub fn sd(d: usize) -> usize {
    d * (d + 1) / 2
}

fn scalar_slack(p: &ConePoint, tol: f64) -> f64 {
    tol * p.norm().max(1.0)
}

fn psd_slack(e: &EigenDecomposition, tol: f64) -> f64 {
    tol * e.max().abs().max(1.0)
}

/// `y log det(Z / y) = y (sum log lambda_i(Z) - d log y)` for `y > 0`, `Z > 0`.
pub fn perspective_logdet(y: f64, z: &SymMat) -> Result<f64> {
    if !(y > 0.0) {
        return domain(format!("perspective needs y > 0, got {y}"));
    }
    let e = eigen_sym(z)?;
    perspective_from_eigs(y, &e.values)
}

pub(crate) fn perspective_from_eigs(y: f64, values: &[f64]) -> Result<f64> {
    if values.iter().any(|&l| !(l > 0.0)) {
        return domain("perspective needs a positive definite matrix");
    }
    let d = values.len() as f64;
    let logdet: f64 = values.iter().map(|l| l.ln()).sum();
    Ok(y * (logdet - d * y.ln()))
}

/// Nonpositive eigenvalues raised to the PSD slack, so a matrix within
/// tolerance of the boundary of `S_+` is treated as definite.
fn floored_values(e: &EigenDecomposition, tol: f64) -> Vec<f64> {
    let floor = psd_slack(e, tol).max(f64::MIN_POSITIVE);
    e.values.iter().map(|&l| if l > 0.0 { l } else { floor }).collect()
}

/// Every eigenvalue raised to at least the PSD slack: the most favourable
/// matrix within tolerance, used by the membership tests.
fn lifted_values(e: &EigenDecomposition, tol: f64) -> Vec<f64> {
    let floor = psd_slack(e, tol).max(f64::MIN_POSITIVE);
    e.values.iter().map(|&l| l.max(floor)).collect()
}

fn perspective_floored(y: f64, e: &EigenDecomposition, tol: f64) -> f64 {
    perspective_from_eigs(y, &floored_values(e, tol)).expect("floored eigenvalues are positive")
}

fn dual_boundary_floored(x: f64, e: &EigenDecomposition, tol: f64) -> f64 {
    dual_boundary_y(x, &floored_values(e, tol)).expect("x < 0 and floored eigenvalues are positive")
}

/// Membership in the primal cone, with `tol` scaled by `max(1, ||p||)` on
/// scalar inequalities and by `max(1, lambda_max)` on eigenvalues.
pub fn member_primal(p: &ConePoint, tol: f64) -> bool {
    let Ok(e) = eigen_sym(&p.z) else {
        return false;
    };
    let s = scalar_slack(p, tol);
    let psd_ok = e.min() >= -psd_slack(&e, tol);
    if p.y > 0.0 && psd_ok {
        let lifted = perspective_from_eigs(p.y, &lifted_values(&e, tol)).expect("lifted eigenvalues are positive");
        if p.x - lifted <= s {
            return true;
        }
    }
    p.y.abs() <= s && p.x <= s && psd_ok
}

/// `x (log det(-Z/x) + d)` for `x < 0`, `Z > 0`: the lower boundary of the
/// dual cone in the `y` coordinate.
fn dual_boundary_y(x: f64, values: &[f64]) -> Option<f64> {
    if values.iter().any(|&l| !(l > 0.0)) || !(x < 0.0) {
        return None;
    }
    let d = values.len() as f64;
    let logdet: f64 = values.iter().map(|l| l.ln()).sum();
    Some(x * (logdet - d * (-x).ln() + d))
}

/// Membership in the dual cone (same tolerance semantics as
/// [`member_primal`]).
pub fn member_dual(p: &ConePoint, tol: f64) -> bool {
    let Ok(e) = eigen_sym(&p.z) else {
        return false;
    };
    let s = scalar_slack(p, tol);
    let psd_ok = e.min() >= -psd_slack(&e, tol);
    if p.x < 0.0 && psd_ok {
        let lifted = dual_boundary_y(p.x, &lifted_values(&e, tol)).expect("x < 0 and lifted eigenvalues are positive");
        if lifted - p.y <= s {
            return true;
        }
    }
    p.x.abs() <= s && p.y >= -s && psd_ok
}

/// Which piece of the primal or dual cone a point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryPart {
    /// Interior of the primal cone.
    Interior,
    /// Smooth primal boundary `x = y log det(Z/y)`.
    K1e,
    /// Closure piece `R_- x {0} x S_+`.
    K2,
    DualInterior,
    /// Smooth dual boundary `y = x (log det(-Z/x) + d)`.
    DualK1e,
    /// Dual closure piece `{0} x R_+ x S_+`.
    DualK2,
    Outside,
}

/// Assigns a unique tag. Primal tags take precedence over dual ones for
/// points lying in both cones.
pub fn classify_boundary(p: &ConePoint, tol: f64) -> BoundaryPart {
    let Ok(e) = eigen_sym(&p.z) else {
        return BoundaryPart::Outside;
    };
    let s = scalar_slack(p, tol);
    let ps = psd_slack(&e, tol);
    let psd_ok = e.min() >= -ps;

    if p.y > s && psd_ok {
        let gap = perspective_floored(p.y, &e, tol) - p.x;
        if gap.abs() <= s {
            return BoundaryPart::K1e;
        }
        if gap > s {
            return BoundaryPart::Interior;
        }
    }
    if p.y.abs() <= s && p.x <= s && psd_ok {
        return BoundaryPart::K2;
    }

    dual_part(p, &e, s, psd_ok, tol)
}

/// Position relative to the dual cone alone: `DualInterior`, `DualK1e`,
/// `DualK2` or `Outside`.
pub fn classify_dual(p: &ConePoint, tol: f64) -> BoundaryPart {
    let Ok(e) = eigen_sym(&p.z) else {
        return BoundaryPart::Outside;
    };
    let s = scalar_slack(p, tol);
    let psd_ok = e.min() >= -psd_slack(&e, tol);
    dual_part(p, &e, s, psd_ok, tol)
}

fn dual_part(p: &ConePoint, e: &EigenDecomposition, s: f64, psd_ok: bool, tol: f64) -> BoundaryPart {
    if p.x < -s && psd_ok {
        let gap = p.y - dual_boundary_floored(p.x, e, tol);
        if gap.abs() <= s {
            return BoundaryPart::DualK1e;
        }
        if gap > s {
            return BoundaryPart::DualInterior;
        }
    }
    if p.x.abs() <= s && p.y >= -s && psd_ok {
        return BoundaryPart::DualK2;
    }
    BoundaryPart::Outside
}

/// Nearest point of the hyperplane `{n}^perp` to `v`.
pub fn project_hyperplane(v: &ConePoint, n: &ConePoint) -> Result<ConePoint> {
    let nn = n.inner(n);
    if !(nn > 0.0) {
        return domain("hyperplane normal must be nonzero");
    }
    Ok(v.axpy(-v.inner(n) / nn, n))
}

/// Which candidate produced a cone projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionBranch {
    /// The input already lies in the cone.
    Inside,
    /// KKT point on the smooth boundary `x = y log det(Z/y)`.
    Smooth,
    /// Projection onto the closure piece `R_- x {0} x S_+`.
    ClosureFace,
}

/// Result of [`project_cone`]. `dist` is accumulated from the KKT
/// increments rather than by subtracting points, so it keeps relative
/// accuracy even when it is far below `eps * ||p||`.
#[derive(Clone, Debug)]
pub struct ConeProjection {
    pub point: ConePoint,
    pub dist: f64,
    pub branch: ProjectionBranch,
    pub iterations: usize,
}

/// Euclidean projection onto the log-determinant cone.
///
/// The constraint only depends on the spectrum of `Z`, so the projection
/// shares eigenvectors with `p.Z` and reduces to a projection of
/// `(x, y, lambda)` in `R^(d+2)`. On the smooth boundary the KKT system
/// `x = x0 - mu`, `lambda_i^2 - s_i lambda_i = mu y`,
/// `y = y0 + mu (sum log(lambda_i / y) - d)` is solved for the multiplier
/// `mu` by a bracketed search in `log mu`, with an inner monotone solve for
/// `y`. The closure piece has a closed-form projection; the nearer of the
/// two candidates is returned.
pub fn project_cone(p: &ConePoint, tol: f64, max_iter: usize) -> Result<ConeProjection> {
    if !p.is_finite() {
        return Err(Error::InvalidInput("cannot project a non-finite point".into()));
    }
    let e = eigen_sym(&p.z)?;
    let s = &e.values;

    if contains_exact(p.x, p.y, s) {
        return Ok(ConeProjection {
            point: p.clone(),
            dist: 0.0,
            branch: ProjectionBranch::Inside,
            iterations: 0,
        });
    }

    let closure_dist = (p.x.max(0.0).powi(2)
        + p.y * p.y
        + s.iter().map(|l| l.min(0.0).powi(2)).sum::<f64>())
    .sqrt();

    // (x, 0, Z_+) projects onto {y >= 0, Z >= 0}, a superset of K, and
    // lies in K when x <= 0
    let smooth = if p.x <= 0.0 && p.y <= 0.0 {
        None
    } else {
        smooth_branch(p.x, p.y, s, tol, max_iter)?
    };

    match smooth {
        Some(sm) if sm.dist < closure_dist => {
            let z = e.with_values(&sm.lambda);
            Ok(ConeProjection {
                point: ConePoint { x: sm.x, y: sm.y, z },
                dist: sm.dist,
                branch: ProjectionBranch::Smooth,
                iterations: sm.iterations,
            })
        }
        other => {
            let z = e.map(|l| l.max(0.0));
            Ok(ConeProjection {
                point: ConePoint {
                    x: p.x.min(0.0),
                    y: 0.0,
                    z,
                },
                dist: closure_dist,
                branch: ProjectionBranch::ClosureFace,
                iterations: other.map_or(0, |sm| sm.iterations),
            })
        }
    }
}

/// `dist(p, K)` via [`project_cone`] with default settings.
pub fn dist_cone(p: &ConePoint) -> Result<f64> {
    Ok(project_cone(p, DEFAULT_TOL, 200)?.dist)
}

fn contains_exact(x: f64, y: f64, s: &[f64]) -> bool {
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if y > 0.0 && min > 0.0 {
        perspective_from_eigs(y, s).is_ok_and(|v| x <= v)
    } else {
        y == 0.0 && x <= 0.0 && min >= 0.0
    }
}

struct SmoothCandidate {
    x: f64,
    y: f64,
    lambda: Vec<f64>,
    dist: f64,
    iterations: usize,
}

/// Positive root of `l^2 - s l - c = 0`, `c >= 0`, without cancellation.
fn shifted_root(s: f64, c: f64) -> f64 {
    let disc = (s * s + 4.0 * c).sqrt();
    if s >= 0.0 {
        0.5 * (s + disc)
    } else {
        2.0 * c / (disc - s)
    }
}

struct InnerSolution {
    y: f64,
    lambda: Vec<f64>,
    /// `sum log(lambda_i / y)`
    log_ratio_sum: f64,
}

/// For fixed `mu > 0`, solves `y - y0 - mu (sum log(lambda_i(y)/y) - d) = 0`
/// for `y > 0`. The left side is increasing in `y` with slope at least 1;
/// returns `None` when it stays positive as `y -> 0+`.
fn solve_y(mu: f64, y0: f64, s: &[f64]) -> Option<InnerSolution> {
    let d = s.len() as f64;
    let eval = |y: f64| -> (f64, f64, f64) {
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for &si in s {
            let l = shifted_root(si, mu * y);
            sum += l.ln() - y.ln();
            let dl = mu / (si * si + 4.0 * mu * y).sqrt();
            dsum += dl / l - 1.0 / y;
        }
        let h = y - y0 - mu * (sum - d);
        let dh = 1.0 - mu * dsum;
        (h, dh, sum)
    };

    const Y_MIN: f64 = 1e-300;
    const Y_MAX: f64 = 1e300;
    let start = if y0 > 0.0 { y0 } else { mu.clamp(1e-12, 1.0) };
    let (mut lo, mut hi);
    // the bracketing factor squares on each step
    let mut factor = 4.0f64;
    if eval(start).0 < 0.0 {
        lo = start;
        hi = start * factor;
        while eval(hi).0 < 0.0 {
            if hi >= Y_MAX {
                return None;
            }
            lo = hi;
            factor = (factor * factor).min(1e16);
            hi = (hi * factor).min(Y_MAX);
        }
    } else {
        hi = start;
        lo = start / factor;
        while eval(lo).0 >= 0.0 {
            if lo <= Y_MIN {
                return None;
            }
            hi = lo;
            factor = (factor * factor).min(1e16);
            lo = (lo / factor).max(Y_MIN);
        }
    }

    let mut y = (lo * hi).sqrt();
    for _ in 0..300 {
        let (h, dh, _) = eval(y);
        if h == 0.0 {
            break;
        }
        if h < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
        let newton = y - h / dh;
        if newton > lo && newton < hi && dh.is_finite() {
            let step = (newton - y).abs();
            y = newton;
            if step <= 4.0 * f64::EPSILON * y {
                break;
            }
        } else {
            y = (lo * hi).sqrt();
        }
    }
    let (_, _, sum) = eval(y);
    let lambda = s.iter().map(|&si| shifted_root(si, mu * y)).collect();
    Some(InnerSolution {
        y,
        lambda,
        log_ratio_sum: sum,
    })
}

/// `r(mu) = y (sum log(lambda_i/y)) - x(mu)`, increasing in `mu`; `None`
/// when the inner solve has no positive root.
fn outer_residual(mu: f64, x0: f64, y0: f64, s: &[f64]) -> Option<(f64, InnerSolution)> {
    let inner = solve_y(mu, y0, s)?;
    // y underflowing to 0 leaves 0 * inf in the perspective
    if !(inner.y > 0.0) {
        return None;
    }
    let r = inner.y * inner.log_ratio_sum - (x0 - mu);
    r.is_finite().then_some((r, inner))
}

fn smooth_branch(
    x0: f64,
    y0: f64,
    s: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Option<SmoothCandidate>> {
    const LOG_MU_MIN: f64 = -690.0;
    const LOG_MU_MAX: f64 = 690.0;

    // Where the inner equation has no positive root the minimiser in `y`
    // sits at `y = 0+`, and the residual tends to `mu - x0`.
    let res = |t: f64| {
        let mu = t.exp();
        outer_residual(mu, x0, y0, s).map_or(mu - x0, |(r, _)| r)
    };

    let scale = 1.0 + x0.abs() + y0.abs() + s.iter().map(|v| v.abs()).sum::<f64>();
    let mut t_hi = scale.ln();
    let mut r_hi = res(t_hi);
    let mut t_lo = t_hi;
    let mut r_lo = r_hi;
    let mut iterations = 0;

    let r_scale = |t: f64| f64::EPSILON * 8.0 * (1.0 + x0.abs() + t.exp());
    let mut converged = false;
    let mut step = 2.0;
    if r_hi > 0.0 {
        loop {
            if t_lo <= LOG_MU_MIN {
                // r(0) = perspective - x0 > 0: the point is inside up to
                // rounding, and the root sits at mu -> 0
                t_hi = t_lo;
                converged = true;
                break;
            }
            t_lo = (t_lo - step).max(LOG_MU_MIN);
            step *= 2.0;
            iterations += 1;
            r_lo = res(t_lo);
            if r_lo <= 0.0 {
                break;
            }
            t_hi = t_lo;
            r_hi = r_lo;
        }
    } else {
        loop {
            if t_hi >= LOG_MU_MAX {
                return Ok(None);
            }
            t_hi = (t_hi + step).min(LOG_MU_MAX);
            step *= 2.0;
            iterations += 1;
            r_hi = res(t_hi);
            if r_hi > 0.0 {
                break;
            }
            t_lo = t_hi;
            r_lo = r_hi;
        }
    }

    // Illinois-modified regula falsi on t = log mu.
    let mut side = 0i8;
    let mut last_r = f64::INFINITY;
    let mut remaining = if converged { 0 } else { max_iter };
    while remaining > 0 {
        remaining -= 1;
        iterations += 1;
        let t = (t_lo * r_hi - t_hi * r_lo) / (r_hi - r_lo);
        let t = if t > t_lo && t < t_hi { t } else { 0.5 * (t_lo + t_hi) };
        let r = res(t);
        last_r = r;
        if r.abs() <= r_scale(t) {
            t_hi = t;
            converged = true;
            break;
        }
        if r < 0.0 {
            t_lo = t;
            r_lo = r;
            if side == -1 {
                r_hi *= 0.5;
            }
            side = -1;
        } else {
            t_hi = t;
            r_hi = r;
            if side == 1 {
                r_lo *= 0.5;
            }
            side = 1;
        }
        if t_hi - t_lo <= 4.0 * f64::EPSILON * t_hi.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: max_iter,
            residual: last_r.abs(),
        });
    }

    // Take the feasible end of the final bracket.
    let t = t_hi;
    let mu = t.exp();
    let Some((_, inner)) = outer_residual(mu, x0, y0, s) else {
        return Ok(None);
    };
    let y = inner.y;
    let perspective = y * inner.log_ratio_sum;
    let x_kkt = x0 - mu;
    let x = x_kkt.min(perspective);
    let d = s.len() as f64;

    let dx = -mu;
    let dy = mu * (inner.log_ratio_sum - d);
    let dl2: f64 = inner.lambda.iter().map(|&l| (mu * y / l).powi(2)).sum();
    let dist = (dx * dx + dy * dy + dl2).sqrt();
    if !dist.is_finite() || !(y > 0.0) {
        return Ok(None);
    }
    debug_assert!(perspective - x >= -tol * (1.0 + x.abs()));
    Ok(Some(SmoothCandidate {
        x,
        y,
        lambda: inner.lambda,
        dist,
        iterations,
    }))
}

/// Random point of `R x R x S^d` with standard normal coordinates.
pub fn random_point<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ConePoint {
    ConePoint {
        x: rng.sample(StandardNormal),
        y: rng.sample(StandardNormal),
        z: random_symmetric(dim, rng),
    }
}
