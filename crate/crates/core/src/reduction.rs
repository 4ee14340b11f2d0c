//! Conic feasibility over the log-determinant cone.
//!
//! A problem asks for a point of `(L + a) cap K`. A facial-reduction chain
//! `K = F_1 > F_2 > ... > F_{m+1}` is given by vectors `n^i` in
//! `F_i^* cap L^perp cap {a}^perp`, with `F_{i+1} = F_i cap {n^i}^perp`.
//! Chains are supplied by the caller and verified here; the certificate
//! built from a verified chain records the residual function of the
//! resulting error bound.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{classify_dual, dist_cone, member_dual, sd, BoundaryPart, ConePoint};
use crate::error::{domain, Error, Result};
use crate::faces::{
    classify_face, project_face, sample_boundary, sample_face, FaceDescriptor, FaceKind, HistogramBin,
};
use crate::frf::{compose_chain, make_onestep_frf, make_symcone_frf, select_gbar, GammaFn, ResidualFn};
use crate::linalg::{eigen_sym, orthonormal_basis, rank_of, SymMat};
use crate::stream_rng;

/// Find `x in (L + a) cap K`. The basis of `L` is kept orthonormal.
#[derive(Clone, Debug)]
pub struct FeasProblem {
    pub d: usize,
    pub basis: Vec<ConePoint>,
    pub offset: ConePoint,
}

impl FeasProblem {
    /// Builds a problem from any spanning set of `L`; the set is
    /// orthonormalised and dependent vectors are dropped.
    pub fn new(d: usize, spanning: &[ConePoint], offset: ConePoint) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput(format!("d must be at least 2, got {d}")));
        }
        if offset.dim() != d || spanning.iter().any(|b| b.dim() != d) {
            return Err(Error::InvalidInput("problem vectors must all have dimension d".into()));
        }
        if !offset.is_finite() || spanning.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("problem has non-finite entries".into()));
        }
        let vecs: Vec<Vec<f64>> = spanning.iter().map(ConePoint::to_vec).collect();
        let basis = orthonormal_basis(&vecs, 1e-10)
            .iter()
            .map(|v| ConePoint::from_vec(d, v))
            .collect();
        Ok(FeasProblem { d, basis, offset })
    }

    /// `a + sum <p - a, b_i> b_i`
    pub fn project_affine(&self, p: &ConePoint) -> ConePoint {
        let r = p.sub(&self.offset);
        self.basis
            .iter()
            .fold(self.offset.clone(), |acc, b| acc.axpy(r.inner(b), b))
    }

    pub fn dist_affine(&self, p: &ConePoint) -> f64 {
        p.dist(&self.project_affine(p))
    }

    /// Largest `|<b_i, b_j> - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.inner(b) - target).abs());
            }
        }
        worst
    }

    /// `dim(L^perp cap {a}^perp)`
    pub fn constraint_dim(&self) -> usize {
        let mut vecs: Vec<Vec<f64>> = self.basis.iter().map(ConePoint::to_vec).collect();
        vecs.push(self.offset.to_vec());
        sd(self.d) + 2 - orthonormal_basis(&vecs, 1e-10).len()
    }
}

/// `min(d - 1, dim(L^perp cap {a}^perp)) + 1`, the upper bound on the
/// length of a shortest reduction chain.
pub fn dpps_upper_bound(prob: &FeasProblem) -> usize {
    (prob.d - 1).min(prob.constraint_dim()) + 1
}

#[derive(Clone, Debug)]
pub struct ChainStep {
    pub n: ConePoint,
    pub face_before: FaceDescriptor,
    pub face_after: FaceDescriptor,
    /// Set by [`verify_chain`].
    pub verified: bool,
}

/// The condition a chain step violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChainCondition {
    /// The chain does not start at the whole cone, or a step does not start
    /// where the previous one ended.
    BadStart,
    /// `<n^i, b> != 0` for some basis vector `b` of `L`.
    SubspaceOrthogonality,
    /// `<n^i, a> != 0`.
    OffsetOrthogonality,
    /// `n^i` is not in `F_i^*`.
    DualMembership,
    /// The recorded face does not equal `F_i cap {n^i}^perp`.
    FaceMismatch,
    /// `F_i cap {n^i}^perp = F_i`.
    NotProperSubface,
}

impl fmt::Display for ChainCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChainCondition::BadStart => "bad start",
            ChainCondition::SubspaceOrthogonality => "subspace orthogonality",
            ChainCondition::OffsetOrthogonality => "offset orthogonality",
            ChainCondition::DualMembership => "dual membership",
            ChainCondition::FaceMismatch => "face mismatch",
            ChainCondition::NotProperSubface => "not a proper subface",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainFailure {
    /// 1-based step index.
    pub step: usize,
    pub condition: ChainCondition,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainReport {
    pub passed: bool,
    pub steps_checked: usize,
    pub failure: Option<ChainFailure>,
}

/// Dual membership of `n` in `F^*`, for `F` a face of the kinds produced by
/// a chain.
fn in_face_dual(f: &FaceDescriptor, n: &ConePoint, tol: f64) -> Result<bool> {
    let scale = tol * n.norm().max(1.0);
    match f.kind {
        FaceKind::WholeCone => Ok(member_dual(n, tol)),
        FaceKind::RayFr => {
            let g = f.ray_generator.as_ref().expect("ray face has a generator");
            Ok(n.inner(g) >= -scale * g.norm())
        }
        _ => {
            let (x_free, b) = f.psd_structure().expect("face has a basis");
            if x_free && n.x > scale {
                return Ok(false);
            }
            if b.cols == 0 {
                return Ok(true);
            }
            let m = n.z.congruence_t(b);
            let e = eigen_sym(&m)?;
            Ok(e.min() >= -tol * e.max().abs().max(1.0))
        }
    }
}

/// `F cap {n}^perp` for `n in F^*`.
pub fn subface(f: &FaceDescriptor, n: &ConePoint, tol: f64) -> Result<FaceDescriptor> {
    let scale = tol * n.norm().max(1.0);
    match f.kind {
        FaceKind::WholeCone => {
            if n.norm() <= tol {
                return Ok(f.clone());
            }
            match classify_dual(n, tol) {
                BoundaryPart::DualInterior => Ok(FaceDescriptor::zero(f.d)),
                BoundaryPart::DualK1e | BoundaryPart::DualK2 => classify_face(n, tol),
                _ => domain("vector is not in the dual cone"),
            }
        }
        FaceKind::RayFr => {
            let g = f.ray_generator.as_ref().expect("ray face has a generator");
            if n.inner(g) > scale * g.norm() {
                Ok(FaceDescriptor::zero(f.d))
            } else {
                Ok(f.clone())
            }
        }
        _ => {
            let (x_free, b) = f.psd_structure().expect("face has a basis");
            let x_free = x_free && n.x >= -scale;
            let basis = if b.cols == 0 {
                b.clone()
            } else {
                let m = n.z.congruence_t(b);
                let e = eigen_sym(&m)?;
                rank_of(&e, tol)?;
                let k = e.kernel_basis(tol);
                b.mul(&k)
            };
            FaceDescriptor::psd_product(f.d, x_free, basis, Some(n.clone()))
        }
    }
}

/// Whether two descriptors describe the same set.
pub fn same_face(a: &FaceDescriptor, b: &FaceDescriptor, tol: f64) -> bool {
    if a.kind != b.kind || a.d != b.d {
        return false;
    }
    match a.kind {
        FaceKind::WholeCone => true,
        FaceKind::RayFr => {
            let (Some(ga), Some(gb)) = (&a.ray_generator, &b.ray_generator) else {
                return false;
            };
            let ua = ga.scale(1.0 / ga.norm());
            let ub = gb.scale(1.0 / gb.norm());
            ua.dist(&ub) <= tol.max(1e-8)
        }
        _ => {
            let (Some((xa, ba)), Some((xb, bb))) = (a.psd_structure(), b.psd_structure()) else {
                return false;
            };
            if xa != xb || ba.cols != bb.cols {
                return false;
            }
            ba.range_projector().sub(&bb.range_projector()).frob_norm() <= tol.max(1e-8)
        }
    }
}

/// Builds chain steps from the exposing vectors, computing each face from
/// the previous one. The steps are not verified.
pub fn build_chain(d: usize, ns: &[ConePoint], tol: f64) -> Result<Vec<ChainStep>> {
    let mut face = FaceDescriptor::whole(d);
    let mut steps = Vec::with_capacity(ns.len());
    for n in ns {
        if n.dim() != d {
            return Err(Error::InvalidInput("chain vector has the wrong dimension".into()));
        }
        let after = subface(&face, n, tol)?;
        steps.push(ChainStep {
            n: n.clone(),
            face_before: face,
            face_after: after.clone(),
            verified: false,
        });
        face = after;
    }
    Ok(steps)
}

/// Like [`build_chain`], but a vector whose subface cannot be formed ends the
/// chain with a step that keeps the face unchanged, so that [`verify_chain`]
/// reports it instead of the build failing. Used for chains read from files.
pub fn build_chain_for_review(d: usize, ns: &[ConePoint], tol: f64) -> Result<Vec<ChainStep>> {
    let mut face = FaceDescriptor::whole(d);
    let mut steps = Vec::with_capacity(ns.len());
    for n in ns {
        if n.dim() != d {
            return Err(Error::InvalidInput("chain vector has the wrong dimension".into()));
        }
        let (after, ok) = match subface(&face, n, tol) {
            Ok(f) => (f, true),
            Err(_) => (face.clone(), false),
        };
        steps.push(ChainStep {
            n: n.clone(),
            face_before: face,
            face_after: after.clone(),
            verified: false,
        });
        if !ok {
            break;
        }
        face = after;
    }
    Ok(steps)
}

/// Checks every step of a chain; on success marks the steps verified.
pub fn verify_chain(prob: &FeasProblem, steps: &mut [ChainStep], tol: f64) -> ChainReport {
    for s in steps.iter_mut() {
        s.verified = false;
    }
    let fail = |step: usize, condition: ChainCondition, detail: String| ChainReport {
        passed: false,
        steps_checked: step,
        failure: Some(ChainFailure {
            step,
            condition,
            detail,
        }),
    };
    let a_norm = prob.offset.norm().max(1.0);
    for (i, s) in steps.iter().enumerate() {
        let k = i + 1;
        let nn = s.n.norm().max(1.0);
        let start_ok = if i == 0 {
            s.face_before.kind == FaceKind::WholeCone
        } else {
            same_face(&s.face_before, &steps[i - 1].face_after, tol)
        };
        if !start_ok || s.n.dim() != prob.d {
            return fail(k, ChainCondition::BadStart, format!("step {k} does not start at the previous face"));
        }
        for (j, b) in prob.basis.iter().enumerate() {
            let ip = s.n.inner(b);
            if ip.abs() > tol * nn {
                return fail(
                    k,
                    ChainCondition::SubspaceOrthogonality,
                    format!("<n^{k}, b_{}> = {ip:e}", j + 1),
                );
            }
        }
        let ip = s.n.inner(&prob.offset);
        if ip.abs() > tol * nn * a_norm {
            return fail(k, ChainCondition::OffsetOrthogonality, format!("<n^{k}, a> = {ip:e}"));
        }
        match in_face_dual(&s.face_before, &s.n, tol) {
            Ok(true) => {}
            Ok(false) => {
                return fail(
                    k,
                    ChainCondition::DualMembership,
                    format!("n^{k} is not in the dual of {}", s.face_before.kind.name()),
                )
            }
            Err(e) => return fail(k, ChainCondition::DualMembership, e.to_string()),
        }
        let expected = match subface(&s.face_before, &s.n, tol) {
            Ok(f) => f,
            Err(e) => return fail(k, ChainCondition::DualMembership, e.to_string()),
        };
        if !same_face(&expected, &s.face_after, tol) {
            return fail(
                k,
                ChainCondition::FaceMismatch,
                format!(
                    "recorded {} but {} cap {{n^{k}}}^perp is {}",
                    s.face_after.kind.name(),
                    s.face_before.kind.name(),
                    expected.kind.name()
                ),
            );
        }
        if expected.dim >= s.face_before.dim {
            return fail(
                k,
                ChainCondition::NotProperSubface,
                format!("n^{k} does not cut {} down", s.face_before.kind.name()),
            );
        }
    }
    for s in steps.iter_mut() {
        s.verified = true;
    }
    ChainReport {
        passed: true,
        steps_checked: steps.len(),
        failure: None,
    }
}

/// Which error-bound case a certificate uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// Empty chain.
    Lipschitz,
    /// One step, `F_2 = {0}`.
    ZeroFace,
    /// One step, `F_2 = F_d`.
    Entropic,
    /// One step, `F_2 = F_s`, `n^1_y > 0`.
    FsHolder,
    /// One step, `F_2 = F_s`, `n^1_y = 0`.
    FsLog,
    /// One step, `F_2 = F_r`.
    RayHolder,
    /// One step, `F_2 = F_inf`, `n^1_y > 0`.
    FinfLipschitz,
    /// One step, `F_2 = F_inf`, `n^1_y = 0`.
    FinfLog,
    /// Two or more steps with innermost `g_d`.
    ComposedEntropic,
    /// Two or more steps with innermost `g_log`.
    ComposedLog,
    /// Two or more steps with innermost square root.
    ComposedHolder,
}

impl CaseTag {
    pub fn label(self) -> &'static str {
        match self {
            CaseTag::Lipschitz => "(i) Lipschitzian",
            CaseTag::ZeroFace => "(ii)(a) Lipschitzian, F_2 = {0}",
            CaseTag::Entropic => "(ii)(b) entropic, F_2 = F_d",
            CaseTag::FsHolder => "(ii)(c) Hoelderian 1/2, F_2 = F_s, n_y > 0",
            CaseTag::FsLog => "(ii)(c) log-type, F_2 = F_s, n_y = 0",
            CaseTag::RayHolder => "(ii)(d) Hoelderian 1/2, F_2 = F_r",
            CaseTag::FinfLipschitz => "(ii)(e) Lipschitzian, F_2 = F_inf, n_y > 0",
            CaseTag::FinfLog => "(ii)(e) log-type, F_2 = F_inf, n_y = 0",
            CaseTag::ComposedEntropic => "(iii) composed, innermost g_d",
            CaseTag::ComposedLog => "(iii) composed, innermost g_log",
            CaseTag::ComposedHolder => "(iii) composed, innermost sqrt",
        }
    }

    pub const ALL: [CaseTag; 11] = [
        CaseTag::Lipschitz,
        CaseTag::ZeroFace,
        CaseTag::Entropic,
        CaseTag::FsHolder,
        CaseTag::FsLog,
        CaseTag::RayHolder,
        CaseTag::FinfLipschitz,
        CaseTag::FinfLog,
        CaseTag::ComposedEntropic,
        CaseTag::ComposedLog,
        CaseTag::ComposedHolder,
    ];
}

#[derive(Clone, Debug, Serialize)]
pub struct StepSummary {
    pub n: ConePoint,
    pub face_before: FaceKind,
    pub face_after: FaceKind,
    pub face_after_dim: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBoundCertificate {
    pub d: usize,
    pub chain: Vec<StepSummary>,
    /// Length of the supplied chain. Minimality is not checked.
    pub d_pps: usize,
    pub d_pps_upper_bound: usize,
    pub case_tag: CaseTag,
    pub case_label: String,
    pub residual: ResidualFn,
    pub formula: String,
    /// One-step facial residual functions of the individual steps.
    pub step_frfs: Vec<ResidualFn>,
    pub gammas: Vec<f64>,
}

/// Assembles the certificate for a verified chain. `gammas` holds one
/// positive constant per step (empty means all ones): the first enters the
/// one-step residual function of `F_2`, later ones are the `kappa` of the
/// symmetric-cone residual functions inside `F_2`.
pub fn build_certificate(
    prob: &FeasProblem,
    steps: &[ChainStep],
    gammas: &[f64],
    tol: f64,
) -> Result<ErrorBoundCertificate> {
    if steps.iter().any(|s| !s.verified) {
        return domain("chain has not been verified");
    }
    let m = steps.len();
    let gammas: Vec<f64> = if gammas.is_empty() { vec![1.0; m] } else { gammas.to_vec() };
    if gammas.len() != m {
        return domain(format!("expected {m} gamma values, got {}", gammas.len()));
    }
    if gammas.iter().any(|g| !(*g > 0.0)) {
        return domain("gamma values must be positive");
    }

    let (case_tag, residual) = if m == 0 {
        (CaseTag::Lipschitz, ResidualFn::Power(1.0))
    } else {
        let n1 = &steps[0].n;
        let ny_pos = n1.y > tol * n1.norm().max(1.0);
        let f2 = steps[0].face_after.kind;
        if m == 1 {
            match f2 {
                FaceKind::TrivialZero => (CaseTag::ZeroFace, ResidualFn::Power(1.0)),
                FaceKind::BigFd => (CaseTag::Entropic, ResidualFn::Gd),
                FaceKind::MidFs if ny_pos => (CaseTag::FsHolder, ResidualFn::Power(0.5)),
                FaceKind::MidFs => (CaseTag::FsLog, ResidualFn::Glog),
                FaceKind::RayFr => (CaseTag::RayHolder, ResidualFn::Power(0.5)),
                FaceKind::ExceptionalFinf if ny_pos => (CaseTag::FinfLipschitz, ResidualFn::Power(1.0)),
                FaceKind::ExceptionalFinf => (CaseTag::FinfLog, ResidualFn::Glog),
                other => return domain(format!("unexpected second face {other:?}")),
            }
        } else {
            let gbar = select_gbar(f2, n1, tol)?;
            let tag = match gbar {
                ResidualFn::Gd => CaseTag::ComposedEntropic,
                ResidualFn::Glog => CaseTag::ComposedLog,
                _ => CaseTag::ComposedHolder,
            };
            let mut fns = vec![ResidualFn::Power(0.5); m - 1];
            fns.push(gbar);
            (tag, compose_chain(fns)?)
        }
    };

    let mut step_frfs = Vec::with_capacity(m);
    for (i, s) in steps.iter().enumerate() {
        let f = if i == 0 {
            match s.face_after.kind {
                FaceKind::TrivialZero => ResidualFn::Power(1.0),
                kind => make_onestep_frf(kind, &s.n, GammaFn::Const(gammas[0]), tol)?,
            }
        } else {
            make_symcone_frf(gammas[i])?
        };
        step_frfs.push(f);
    }

    Ok(ErrorBoundCertificate {
        d: prob.d,
        chain: steps
            .iter()
            .map(|s| StepSummary {
                n: s.n.clone(),
                face_before: s.face_before.kind,
                face_after: s.face_after.kind,
                face_after_dim: s.face_after.dim,
            })
            .collect(),
        d_pps: m,
        d_pps_upper_bound: dpps_upper_bound(prob),
        case_tag,
        case_label: case_tag.label().to_string(),
        formula: residual.formula(),
        residual,
        step_frfs,
        gammas,
    })
}

/// Projection onto `F cap (L + a)` by Dykstra's method, `F` a face (or the
/// whole cone). Stops once consecutive iterates and the feasibility gap are
/// both below `tol * (1 + ||p||)`.
pub fn project_feasible(
    prob: &FeasProblem,
    face: &FaceDescriptor,
    p: &ConePoint,
    tol: f64,
    max_iter: usize,
) -> Result<ConePoint> {
    let scale = 1.0 + p.norm();
    let mut x = prob.project_affine(p);
    let mut corr = ConePoint::zero(prob.d);
    let mut gap = f64::INFINITY;
    for _ in 0..max_iter {
        let y = project_face(face, &x.add(&corr))?;
        corr = x.add(&corr).sub(&y);
        let x_new = prob.project_affine(&y);
        let step = x_new.dist(&x);
        gap = x_new.dist(&y);
        x = x_new;
        if step <= tol * scale && gap <= tol * scale {
            // return the face iterate's affine projection, which is in
            // L + a and within `gap` of the face
            return Ok(x);
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: gap,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalReport {
    pub samples: usize,
    /// Samples whose residual argument and distance are above rounding
    /// level.
    pub informative: usize,
    /// `max lhs / r(arg)` over informative samples.
    pub fitted_c: f64,
    /// Least-squares slope of the upper envelope of `log(lhs / r(arg))`
    /// (maximum per decade of `arg`) against `log(arg)`, over the smaller
    /// half of the decades. Clearly negative means the ratios grow as
    /// `arg -> 0`.
    pub small_arg_slope: f64,
    pub passed: bool,
    pub histogram: Vec<HistogramBin>,
}

/// Samples points of `B(eta)` near the feasible set and compares
/// `dist(x, K cap (L + a))` with `r(max(dist(x, K), dist(x, L + a)))`.
/// Fails when the ratio grows as the argument shrinks (fitted slope below
/// `-0.05`).
pub fn check_certificate_empirically(
    prob: &FeasProblem,
    steps: &[ChainStep],
    cert: &ErrorBoundCertificate,
    samples: usize,
    eta: f64,
    seed: u64,
) -> Result<EmpiricalReport> {
    let face = steps
        .last()
        .map(|s| s.face_after.clone())
        .unwrap_or_else(|| FaceDescriptor::whole(prob.d));
    let results: Vec<Result<Option<(f64, f64)>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let x = if i % 2 == 0 || face.kind == FaceKind::WholeCone {
                // perturbation of a feasible point
                let s = project_feasible(prob, &face, &sample_face(&face, eta, &mut rng), 1e-12, 20_000)?;
                let dir = crate::cone::random_point(prob.d, &mut rng);
                let delta = (rng.random_range((1e-7f64).ln()..0.0)).exp() * eta;
                s.axpy(delta / dir.norm(), &dir)
            } else {
                // affine projection of a boundary point near the final face
                let v = sample_boundary(prob.d, eta, Some(&face), &mut rng);
                prob.project_affine(&v)
            };
            let arg = dist_cone(&x)?.max(prob.dist_affine(&x));
            let proj = project_feasible(prob, &face, &x, 1e-12, 20_000)?;
            let lhs = x.dist(&proj);
            // below these levels both sides are rounding and solver noise
            let scale = 1.0 + x.norm();
            if arg <= 1e-14 * scale || lhs <= 1e-10 * scale {
                return Ok(None);
            }
            let r = cert.residual.eval(arg)?;
            Ok(Some((arg, lhs / r)))
        })
        .collect();
    let mut pts = Vec::new();
    for r in results {
        if let Some(p) = r? {
            pts.push(p);
        }
    }
    let fitted_c = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut envelope: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for &(arg, ratio) in pts.iter().filter(|p| p.1 > 0.0) {
        let e = envelope.entry(arg.log10().floor() as i64).or_insert((arg, ratio));
        if ratio > e.1 {
            *e = (arg, ratio);
        }
    }
    let decades: Vec<(f64, f64)> = envelope.values().map(|&(a, r)| (a.ln(), r.ln())).collect();
    // at least three decades when available
    let take = decades.len().div_ceil(2).max(decades.len().min(3));
    let slope = ls_slope(&decades[..take]);
    let ratios: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Ok(EmpiricalReport {
        samples,
        informative: pts.len(),
        fitted_c,
        small_arg_slope: slope,
        passed: fitted_c.is_finite() && !(slope < -0.05),
        histogram: crate::faces::log_histogram(&ratios),
    })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// A first reduction step found without solving an auxiliary conic
/// program: tries `(0, 1, 0)` and the PSD parts of `L^perp cap {a}^perp`
/// basis directions, returning the first candidate that is orthogonal to
/// `L` and `a`, lies in the dual cone, and cuts `K` down.
pub fn heuristic_first_step(prob: &FeasProblem, tol: f64) -> Option<ConePoint> {
    let d = prob.d;
    let mut span: Vec<Vec<f64>> = prob.basis.iter().map(ConePoint::to_vec).collect();
    span.push(prob.offset.to_vec());
    let taken = orthonormal_basis(&span, 1e-10);
    let ambient = sd(d) + 2;
    let mut unit = Vec::new();
    for k in 0..ambient {
        let mut e = vec![0.0; ambient];
        e[k] = 1.0;
        unit.push(e);
    }
    let mut all = taken.clone();
    all.extend(unit);
    let complement: Vec<Vec<f64>> = orthonormal_basis(&all, 1e-10).split_off(taken.len());

    let mut candidates = vec![ConePoint {
        x: 0.0,
        y: 1.0,
        z: SymMat::zeros(d),
    }];
    for c in &complement {
        let p = ConePoint::from_vec(d, c);
        for s in [1.0, -1.0] {
            let q = p.scale(s);
            let z = eigen_sym(&q.z).map(|e| e.map(|l| l.max(0.0))).unwrap_or_else(|_| SymMat::zeros(d));
            candidates.push(ConePoint { x: q.x.min(0.0), y: q.y.max(0.0), z });
        }
    }
    let orth = |n: &ConePoint| {
        let nn = n.norm().max(1.0);
        prob.basis.iter().all(|b| n.inner(b).abs() <= tol * nn)
            && n.inner(&prob.offset).abs() <= tol * nn * prob.offset.norm().max(1.0)
    };
    candidates.into_iter().find(|n| {
        n.norm() > tol
            && orth(n)
            && member_dual(n, tol)
            && subface(&FaceDescriptor::whole(d), n, tol).is_ok_and(|f| f.kind != FaceKind::WholeCone)
    })
}

/// JSON problem file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub d: usize,
    #[serde(default)]
    pub basis: Vec<ConePoint>,
    pub offset: ConePoint,
    #[serde(default)]
    pub chain: Vec<ConePoint>,
    #[serde(default)]
    pub gammas: Vec<f64>,
}

impl ProblemFile {
    pub fn problem(&self) -> Result<FeasProblem> {
        FeasProblem::new(self.d, &self.basis, self.offset.clone())
    }
}

/// A crafted problem together with a valid reduction chain.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub case: CaseTag,
    pub problem: FeasProblem,
    pub chain: Vec<ConePoint>,
}

impl Fixture {
    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            d: self.problem.d,
            basis: self.problem.basis.clone(),
            offset: self.problem.offset.clone(),
            chain: self.chain.clone(),
            gammas: vec![1.0; self.chain.len()],
        }
    }
}

fn pt(x: f64, y: f64, z: SymMat) -> ConePoint {
    ConePoint { x, y, z }
}

/// Orthonormal basis of the orthogonal complement of `span(normals)` in
/// `R x R x S^d`.
pub fn complement_basis(d: usize, normals: &[ConePoint]) -> Vec<ConePoint> {
    let ambient = sd(d) + 2;
    let mut vecs: Vec<Vec<f64>> = normals.iter().map(ConePoint::to_vec).collect();
    let k = orthonormal_basis(&vecs, 1e-12).len();
    for i in 0..ambient {
        let mut e = vec![0.0; ambient];
        e[i] = 1.0;
        vecs.push(e);
    }
    orthonormal_basis(&vecs, 1e-10)
        .split_off(k)
        .iter()
        .map(|v| ConePoint::from_vec(d, v))
        .collect()
}

/// Problem with `L = span(normals)^perp`, `a = offset`.
fn problem_orthogonal_to(d: usize, normals: &[ConePoint], offset: ConePoint) -> FeasProblem {
    let basis = complement_basis(d, normals);
    FeasProblem::new(d, &basis, offset).expect("valid crafted problem")
}

/// Crafted problem for each error-bound case. Random
/// rotations and scalings are drawn from `seed`.
pub fn crafted_fixture(case: CaseTag, d: usize, seed: u64) -> Fixture {
    assert!(d >= 2);
    let mut rng = stream_rng(seed, case as u64);
    let q = crate::linalg::random_orthogonal(d, &mut rng);
    let rank1 = |i: usize| -> SymMat {
        let v = q.col(i);
        SymMat::from_lower_fn(d, |a, b| v[a] * v[b])
    };
    let s: f64 = rng.random_range(0.5..2.0);
    let zero = SymMat::zeros(d);
    let (problem, chain) = match case {
        CaseTag::Lipschitz => {
            // random 3-dimensional L through an interior point
            let dirs: Vec<ConePoint> = (0..3).map(|_| crate::cone::random_point(d, &mut rng)).collect();
            let a = pt(-1.0, 1.0, SymMat::identity(d).scale(s));
            (FeasProblem::new(d, &dirs, a).expect("valid crafted problem"), vec![])
        }
        CaseTag::ZeroFace => {
            let n = pt(-s, 1.0, SymMat::identity(d));
            (problem_orthogonal_to(d, std::slice::from_ref(&n), ConePoint::zero(d)), vec![n])
        }
        CaseTag::Entropic => {
            let n = pt(0.0, s, zero.clone());
            let a = pt(-1.0, 0.0, SymMat::identity(d));
            (problem_orthogonal_to(d, std::slice::from_ref(&n), a), vec![n])
        }
        CaseTag::FsHolder | CaseTag::FsLog => {
            let ny = if case == CaseTag::FsHolder { s } else { 0.0 };
            let n = pt(0.0, ny, rank1(0).scale(s));
            (problem_orthogonal_to(d, std::slice::from_ref(&n), ConePoint::zero(d)), vec![n])
        }
        CaseTag::RayHolder => {
            let nz = crate::linalg::random_psd_with_rank(d, d, 0.5, 2.0, &mut rng);
            let nx = -s;
            let e = eigen_sym(&nz).expect("finite");
            let df = d as f64;
            let ny = nx * (e.values.iter().map(|l| l.ln()).sum::<f64>() - df * (-nx).ln() + df);
            let n = pt(nx, ny, nz);
            (problem_orthogonal_to(d, std::slice::from_ref(&n), ConePoint::zero(d)), vec![n])
        }
        CaseTag::FinfLipschitz | CaseTag::FinfLog => {
            let ny = if case == CaseTag::FinfLipschitz { s } else { 0.0 };
            let nz = crate::linalg::random_psd_with_rank(d, d, 0.5, 2.0, &mut rng);
            let n = pt(0.0, ny, nz);
            (problem_orthogonal_to(d, std::slice::from_ref(&n), ConePoint::zero(d)), vec![n])
        }
        CaseTag::ComposedEntropic => {
            let n1 = pt(0.0, s, zero.clone());
            let n2 = pt(0.0, 0.0, rank1(0));
            (problem_orthogonal_to(d, &[n1.clone(), n2.clone()], ConePoint::zero(d)), vec![n1, n2])
        }
        CaseTag::ComposedLog | CaseTag::ComposedHolder => {
            // n2 is PSD only on ker(n1_Z): the classic two-step example
            let ny = if case == CaseTag::ComposedHolder { s } else { 0.0 };
            let n1 = pt(0.0, ny, rank1(0).scale(s));
            let v0 = q.col(0);
            let v1 = q.col(1);
            let vl = q.col(d - 1);
            let off = SymMat::from_lower_fn(d, |a, b| v0[a] * vl[b] + vl[a] * v0[b]);
            let mut n2z = SymMat::from_lower_fn(d, |a, b| v1[a] * v1[b]);
            if d > 2 {
                n2z = n2z.add(&off);
            }
            let n2 = pt(0.0, 0.0, n2z);
            (problem_orthogonal_to(d, &[n1.clone(), n2.clone()], ConePoint::zero(d)), vec![n1, n2])
        }
    };
    Fixture { case, problem, chain }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_projection_examples() {
        let d = 2;
        let a = pt(1.0, 2.0, SymMat::identity(d));
        let empty = FeasProblem::new(d, &[], a.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = crate::cone::random_point(d, &mut rng);
        assert_eq!(empty.project_affine(&p), a);

        let dirs: Vec<ConePoint> = (0..3).map(|_| crate::cone::random_point(d, &mut rng)).collect();
        let prob = FeasProblem::new(d, &dirs, a.clone()).unwrap();
        assert!(prob.orthonormality_defect() < 1e-12);
        let inside = a.axpy(0.3, &dirs[0]).axpy(-1.2, &dirs[2]);
        assert!(prob.project_affine(&inside).dist(&inside) < 1e-12);

        // normal equations oracle: minimise ||p - a - D c|| over c
        let q = prob.project_affine(&p);
        let g: Vec<Vec<f64>> = dirs.iter().map(|u| dirs.iter().map(|v| u.inner(v)).collect()).collect();
        let rhs: Vec<f64> = dirs.iter().map(|u| u.inner(&p.sub(&a))).collect();
        let c = solve3(&g, &rhs);
        let oracle = (0..3).fold(a.clone(), |acc, i| acc.axpy(c[i], &dirs[i]));
        assert!(q.dist(&oracle) < 1e-10);
        for b in &prob.basis {
            assert!(p.sub(&q).inner(b).abs() < 1e-11);
        }
    }

    fn solve3(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        // Cramer's rule
        let det = |m: &[Vec<f64>]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d0 = det(a);
        (0..3)
            .map(|k| {
                let m: Vec<Vec<f64>> = a
                    .iter()
                    .zip(b)
                    .map(|(row, &bi)| {
                        let mut r = row.clone();
                        r[k] = bi;
                        r
                    })
                    .collect();
                det(&m) / d0
            })
            .collect()
    }

    #[test]
    fn affine_projection_idempotent_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 3;
        let dirs: Vec<ConePoint> = (0..4).map(|_| crate::cone::random_point(d, &mut rng)).collect();
        let prob = FeasProblem::new(d, &dirs, crate::cone::random_point(d, &mut rng)).unwrap();
        for _ in 0..100 {
            let p = crate::cone::random_point(d, &mut rng);
            let r = crate::cone::random_point(d, &mut rng);
            let pp = prob.project_affine(&p);
            assert!(prob.project_affine(&pp).dist(&pp) < 1e-10);
            assert!(pp.dist(&prob.project_affine(&r)) <= p.dist(&r) + 1e-10);
        }
    }

    #[test]
    fn dpps_examples() {
        let p = FeasProblem::new(2, &[], ConePoint::zero(2)).unwrap();
        // L = {0}, a = 0: L^perp is everything
        assert_eq!(dpps_upper_bound(&p), 2);
        // L = everything: L^perp = {0}
        let all = complement_basis(2, &[]);
        let p = FeasProblem::new(2, &all, ConePoint::zero(2)).unwrap();
        assert_eq!(p.constraint_dim(), 0);
        assert_eq!(dpps_upper_bound(&p), 1);
        // codimension one subspace containing a nonzero offset
        let n = pt(0.3, -1.0, SymMat::from_diag(&[1.0, 2.0, 0.5]));
        let basis = complement_basis(3, std::slice::from_ref(&n));
        let a = basis[0].scale(2.0);
        let p = FeasProblem::new(3, &basis, a).unwrap();
        assert_eq!(p.constraint_dim(), 1);
        assert_eq!(dpps_upper_bound(&p), 2);
    }

    #[test]
    fn trivial_chain_example() {
        let prob = FeasProblem::new(2, &[], ConePoint::zero(2)).unwrap();
        let mut steps = build_chain(2, &[pt(0.0, 1.0, SymMat::zeros(2))], 1e-9).unwrap();
        assert!(verify_chain(&prob, &mut steps, 1e-9).passed);
        assert_eq!(steps[0].face_after.kind, FaceKind::BigFd);
        assert!(steps[0].verified);
    }

    #[test]
    fn offset_violation_detected() {
        let prob = FeasProblem::new(2, &[], pt(0.0, 1.0, SymMat::zeros(2))).unwrap();
        let mut steps = build_chain(2, &[pt(0.0, 1.0, SymMat::zeros(2))], 1e-9).unwrap();
        let rep = verify_chain(&prob, &mut steps, 1e-9);
        let f = rep.failure.unwrap();
        assert_eq!((f.step, f.condition), (1, ChainCondition::OffsetOrthogonality));
        assert!(!steps[0].verified);
    }

    #[test]
    fn fixtures_verify_and_certify() {
        for d in [2, 3] {
            for case in CaseTag::ALL {
                let fx = crafted_fixture(case, d, 7);
                let mut steps = build_chain(d, &fx.chain, 1e-9).unwrap();
                let rep = verify_chain(&fx.problem, &mut steps, 1e-9);
                assert!(rep.passed, "{case:?} d={d}: {:?}", rep.failure);
                let cert = build_certificate(&fx.problem, &steps, &[], 1e-9).unwrap();
                assert_eq!(cert.case_tag, case, "d={d}");
                assert!(cert.d_pps_upper_bound >= cert.d_pps, "{case:?}");
            }
        }
    }

    #[test]
    fn certificate_residuals() {
        let d = 3;
        let get = |case| {
            let fx = crafted_fixture(case, d, 1);
            let mut steps = build_chain(d, &fx.chain, 1e-9).unwrap();
            assert!(verify_chain(&fx.problem, &mut steps, 1e-9).passed);
            build_certificate(&fx.problem, &steps, &[], 1e-9).unwrap().residual
        };
        assert_eq!(get(CaseTag::Entropic), ResidualFn::Gd);
        assert_eq!(get(CaseTag::RayHolder), ResidualFn::Power(0.5));
        assert_eq!(
            get(CaseTag::ComposedLog),
            ResidualFn::Compose(vec![ResidualFn::Power(0.5), ResidualFn::Glog])
        );
        assert_eq!(get(CaseTag::Lipschitz), ResidualFn::Power(1.0));
    }

    #[test]
    fn unverified_chain_rejected() {
        let fx = crafted_fixture(CaseTag::Entropic, 2, 1);
        let steps = build_chain(2, &fx.chain, 1e-9).unwrap();
        assert!(build_certificate(&fx.problem, &steps, &[], 1e-9).is_err());
    }

    #[test]
    fn review_build_keeps_bad_step() {
        let fx = crafted_fixture(CaseTag::FsHolder, 3, 4);
        let mut chain = fx.chain.clone();
        chain[0] = chain[0].scale(-1.0);
        assert!(build_chain(3, &chain, 1e-9).is_err());
        let mut steps = build_chain_for_review(3, &chain, 1e-9).unwrap();
        assert_eq!(steps.len(), 1);
        let rep = verify_chain(&fx.problem, &mut steps, 1e-9);
        let f = rep.failure.unwrap();
        assert_eq!((f.step, f.condition), (1, ChainCondition::DualMembership));
    }

    #[test]
    fn composed_requires_psd_face() {
        // a verified two-step chain through the ray face is outside the
        // error-bound hypotheses
        let d = 2;
        let n1 = pt(-1.0, -2.0, SymMat::identity(2));
        let f = classify_face(&n1, 1e-9).unwrap();
        let g = f.ray_generator.unwrap();
        let n2 = g.scale(1.0 / g.norm());
        let prob = problem_orthogonal_to(d, &[n1.clone(), n2.clone()], ConePoint::zero(d));
        let mut steps = build_chain(d, &[n1, n2], 1e-9).unwrap();
        assert!(verify_chain(&prob, &mut steps, 1e-9).passed);
        assert!(build_certificate(&prob, &steps, &[], 1e-9).is_err());
    }

    #[test]
    fn heuristic_finds_first_step() {
        let fx = crafted_fixture(CaseTag::Entropic, 2, 3);
        let n = heuristic_first_step(&fx.problem, 1e-9).unwrap();
        let mut steps = build_chain(2, &[n], 1e-9).unwrap();
        assert!(verify_chain(&fx.problem, &mut steps, 1e-9).passed);
        let fx = crafted_fixture(CaseTag::Lipschitz, 2, 3);
        assert!(heuristic_first_step(&fx.problem, 1e-9).is_none());
    }

    #[test]
    fn feasible_points_have_zero_residual() {
        let fx = crafted_fixture(CaseTag::Entropic, 2, 4);
        let mut steps = build_chain(2, &fx.chain, 1e-9).unwrap();
        assert!(verify_chain(&fx.problem, &mut steps, 1e-9).passed);
        let face = steps[0].face_after.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = project_feasible(&fx.problem, &face, &sample_face(&face, 1.0, &mut rng), 1e-12, 1000).unwrap();
            let again = project_feasible(&fx.problem, &face, &x, 1e-12, 1000).unwrap();
            assert!(x.dist(&again) < 1e-10);
            assert!(fx.problem.dist_affine(&x) < 1e-12);
        }
    }

    #[test]
    fn empirical_check_entropic_and_lipschitz() {
        for case in [CaseTag::Entropic, CaseTag::Lipschitz] {
            let fx = crafted_fixture(case, 2, 5);
            let mut steps = build_chain(2, &fx.chain, 1e-9).unwrap();
            assert!(verify_chain(&fx.problem, &mut steps, 1e-9).passed);
            let cert = build_certificate(&fx.problem, &steps, &[], 1e-9).unwrap();
            let rep = check_certificate_empirically(&fx.problem, &steps, &cert, 1000, 1.0, 9).unwrap();
            assert!(rep.passed, "{case:?}: {rep:?}");
            assert!(rep.fitted_c.is_finite() && rep.informative > 50);
        }
    }

    #[test]
    fn problem_file_round_trip() {
        let fx = crafted_fixture(CaseTag::FsLog, 2, 5);
        let s = serde_json::to_string(&fx.to_file()).unwrap();
        let back: ProblemFile = serde_json::from_str(&s).unwrap();
        let prob = back.problem().unwrap();
        assert_eq!(prob.basis.len(), fx.problem.basis.len());
        let mut steps = build_chain(2, &back.chain, 1e-9).unwrap();
        assert!(verify_chain(&prob, &mut steps, 1e-9).passed);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(FeasProblem::new(2, &[ConePoint::zero(3)], ConePoint::zero(2)).is_err());
        assert!(FeasProblem::new(1, &[], ConePoint::zero(2)).is_err());
    }
}
