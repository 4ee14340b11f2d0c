//! Reference computations for the integration tests. Nothing here uses the
//! spectral machinery of the library: matrices are handled through
//! Cholesky factors only.

#![allow(dead_code)]

use ldcone::cone::ConePoint;
use ldcone::linalg::SymMat;

/// Cholesky factor of a symmetric matrix, `None` unless positive definite.
pub fn cholesky(a: &SymMat) -> Option<Vec<Vec<f64>>> {
    let d = a.dim();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = a.get(i, j) - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn unpack(d: usize, theta: &[f64]) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; d]; d];
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[i][j] = theta[k];
            k += 1;
        }
    }
    l
}

fn pack(l: &[Vec<f64>]) -> Vec<f64> {
    let d = l.len();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..=i {
            out.push(l[i][j]);
        }
    }
    out
}

fn llt(l: &[Vec<f64>]) -> SymMat {
    let d = l.len();
    SymMat::from_lower_fn(d, |i, j| (0..d).map(|k| l[i][k] * l[j][k]).sum())
}

/// `4 (Z - Z0) L`, lower triangle packed.
fn frob_grad(l: &[Vec<f64>], diff: &SymMat) -> Vec<f64> {
    let d = l.len();
    let mut g = Vec::new();
    for i in 0..d {
        for j in 0..=i {
            g.push(4.0 * (0..d).map(|k| diff.get(i, k) * l[k][j]).sum::<f64>());
        }
    }
    g
}

/// BFGS with Armijo backtracking. Non-finite objective values are treated
/// as `+inf`.
pub fn bfgs<F>(f: F, x0: Vec<f64>, gtol: f64, max_iter: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = vec![vec![0.0; n]; n];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..max_iter {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn <= gtol {
            break;
        }
        let mut p: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            for (i, row) in h.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
            p = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let (fn_, gn_) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_, gn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn_.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let stalled = s.iter().all(|v| v.abs() <= 1e-300) || fn_ == fx && t < 1e-10;
        x = xn;
        fx = fn_;
        g = gn_;
        if stalled {
            break;
        }
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
    }
    (x, fx)
}

fn start_factor(z0: &SymMat) -> Vec<Vec<f64>> {
    let d = z0.dim();
    let mut shift: f64 = 0.0;
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| z0.get(i, j).abs()).sum();
        shift = shift.max(off - z0.get(i, i));
    }
    let a = z0.add(&SymMat::identity(d).scale(shift + 0.5));
    cholesky(&a).expect("shifted matrix is positive definite")
}

fn dense(a: &SymMat) -> Vec<Vec<f64>> {
    a.rows()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
fn mat_inv(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        let v = m[c][c];
        m[c].iter_mut().for_each(|x| *x /= v);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot_row = m[c].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(x, p)| *x -= f * p);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Nearest PSD matrix as `(A + |A|)/2`, with `|A| = (A^2)^{1/2}` from the
/// Denman-Beavers iteration.
pub fn oracle_psd(z0: &SymMat) -> SymMat {
    let d = z0.dim();
    if cholesky(z0).is_some() {
        return z0.clone();
    }
    let a = dense(z0);
    let a2 = mat_mul(&a, &a);
    let c = a2.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>().max(f64::MIN_POSITIVE);
    // scale to unit trace so the iteration starts well conditioned
    let mut y: Vec<Vec<f64>> = a2.iter().map(|r| r.iter().map(|v| v / c).collect()).collect();
    let mut z: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let yi = mat_inv(&y);
        let zi = mat_inv(&z);
        let yn: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let zn: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let change: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (yn[i][j] - y[i][j]).abs()).sum();
        y = yn;
        z = zn;
        if change <= 1e-15 {
            break;
        }
    }
    let sc = c.sqrt();
    SymMat::from_lower_fn(d, |i, j| 0.5 * (a[i][j] + 0.5 * sc * (y[i][j] + y[j][i])))
}

/// Exact membership from the defining inequality, without eigenvalues.
pub fn oracle_contains(p: &ConePoint) -> bool {
    let d = p.dim() as f64;
    if p.y > 0.0 {
        match cholesky(&p.z) {
            Some(l) => {
                let ld: f64 = 2.0 * l.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>();
                p.x <= p.y * (ld - d * p.y.ln())
            }
            None => false,
        }
    } else {
        false
    }
}

/// `L` from packed parameters whose diagonal entries are logarithms.
fn unpack_log_diag(d: usize, theta: &[f64]) -> Vec<Vec<f64>> {
    let mut l = unpack(d, theta);
    for (i, row) in l.iter_mut().enumerate() {
        row[i] = row[i].exp();
    }
    l
}

fn pack_log_diag(l: &[Vec<f64>]) -> Vec<f64> {
    let mut l = l.to_vec();
    for (i, row) in l.iter_mut().enumerate() {
        row[i] = row[i].ln();
    }
    pack(&l)
}

/// Nearest point of the smooth boundary piece
/// `{(y log det(Z/y), y, Z) : y > 0, Z > 0}`, parameterised by `y = e^s`
/// and `Z = L L^T` with `L_ii = e^{t_i}`, so that nearly singular `Z` stays
/// reachable.
pub fn oracle_smooth(p: &ConePoint) -> Option<ConePoint> {
    let d = p.dim();
    let df = d as f64;
    let diag_idx: Vec<usize> = (0..d).map(|i| i * (i + 1) / 2 + i).collect();
    let f = |theta: &[f64]| {
        let s = theta[0];
        let y = s.exp();
        let l = unpack_log_diag(d, &theta[1..]);
        let ld: f64 = 2.0 * diag_idx.iter().map(|&k| theta[1 + k]).sum::<f64>();
        let z = llt(&l);
        let phi = y * (ld - df * s) - p.x;
        let diff = z.sub(&p.z);
        let val = phi * phi + (y - p.y).powi(2) + diff.inner(&diff);
        if !val.is_finite() {
            return (f64::INFINITY, vec![0.0; theta.len()]);
        }
        let mut grad = vec![2.0 * phi * y * (ld - df * s - df) + 2.0 * (y - p.y) * y];
        let mut gz = frob_grad(&l, &diff);
        for (i, &k) in diag_idx.iter().enumerate() {
            gz[k] = gz[k] * l[i][i] + 4.0 * phi * y;
        }
        grad.extend(gz);
        (val, grad)
    };
    let psd = oracle_psd(&p.z);
    let mut factors = vec![start_factor(&p.z)];
    for c in [1e-8, 1e-4, 1e-2, 1.0] {
        factors.push(cholesky(&psd.add(&SymMat::identity(d).scale(c))).expect("shifted PSD matrix"));
    }
    factors.push(cholesky(&SymMat::identity(d)).unwrap());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (y, l) in [p.y.abs().max(1e-300), p.y.abs() + 0.1, 1.0, 1e-3]
        .into_iter()
        .flat_map(|y| factors.iter().map(move |l| (y, l.clone())))
    {
        let mut theta = vec![y.ln()];
        theta.extend(pack_log_diag(&l));
        let (t, v) = bfgs(f, theta, 1e-14, 5_000);
        if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, t));
        }
    }
    let (_, theta) = best?;
    let y = theta[0].exp();
    let l = unpack_log_diag(d, &theta[1..]);
    let ld: f64 = 2.0 * diag_idx.iter().map(|&k| theta[1 + k]).sum::<f64>();
    Some(ConePoint {
        x: y * (ld - df * theta[0]),
        y,
        z: llt(&l),
    })
}

/// Reference projection onto the cone: the point itself if inside,
/// otherwise the nearer of the smooth-boundary minimiser and the closure
/// candidate `(min(x, 0), 0, nearest PSD)`.
pub fn oracle_project(p: &ConePoint) -> ConePoint {
    if oracle_contains(p) {
        return p.clone();
    }
    let closure = ConePoint {
        x: p.x.min(0.0),
        y: 0.0,
        z: oracle_psd(&p.z),
    };
    match oracle_smooth(p) {
        Some(s) if s.dist(p) < closure.dist(p) => s,
        _ => closure,
    }
}

/// `n` log-spaced values in `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}
