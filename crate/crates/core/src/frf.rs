//! Residual functions.
//!
//! A [`ResidualFn`] is a small expression tree rather than a closure so that
//! certificates can be printed, stored and parsed back. Single-argument
//! nodes map `t -> r(t)`; two-argument nodes (facial residual functions)
//! map `(eps, t) -> psi(eps, t)` where `t` bounds the norm of the point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cone::ConePoint;
use crate::error::{domain, Error, Result};
use crate::faces::{classify_face, FaceKind};

/// `e^{-2}`, the breakpoint of [`eval_gd`] and [`eval_glog`].
pub const BREAKPOINT: f64 = 0.1353352832366127;

/// Modified entropy: `0` at `0`, `-t log t` up to `e^{-2}`, `t + e^{-2}` after.
pub fn eval_gd(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return domain(format!("g_d needs t >= 0, got {t}"));
    }
    Ok(if t == 0.0 {
        0.0
    } else if t <= BREAKPOINT {
        -t * t.ln()
    } else {
        t + BREAKPOINT
    })
}

/// Log-type residual: `0` at `0`, `-1/log t` up to `e^{-2}`,
/// `1/4 + e^2 t / 4` after.
pub fn eval_glog(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return domain(format!("g_log needs t >= 0, got {t}"));
    }
    Ok(if t == 0.0 {
        0.0
    } else if t <= BREAKPOINT {
        -1.0 / t.ln()
    } else {
        0.25 + t / (4.0 * BREAKPOINT)
    })
}

/// The `gamma_{n,t}` entering a one-step residual function, as a function of
/// the ball radius `t`. Must be positive and nonincreasing.
#[derive(Clone, Debug, PartialEq)]
pub enum GammaFn {
    Const(f64),
    /// `(radius, gamma)` pairs sorted by radius. Between grid points the
    /// value at the next larger radius is used; beyond the last radius the
    /// last value is extended.
    Table(Vec<(f64, f64)>),
}

impl GammaFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            GammaFn::Const(g) => {
                if !(*g > 0.0) {
                    return domain(format!("gamma must be positive, got {g}"));
                }
            }
            GammaFn::Table(rows) => {
                if rows.is_empty() {
                    return domain("gamma table is empty");
                }
                for w in rows.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 > w[0].1 {
                        return domain("gamma table must have increasing radii and nonincreasing values");
                    }
                }
                if rows.iter().any(|&(t, g)| !(g > 0.0) || !(t >= 0.0)) {
                    return domain("gamma table values must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            GammaFn::Const(g) => *g,
            GammaFn::Table(rows) => rows
                .iter()
                .find(|&&(r, _)| r >= t)
                .unwrap_or_else(|| rows.last().expect("validated table"))
                .1,
        }
    }
}

/// Symbolic residual function.
#[derive(Clone, Debug, PartialEq)]
pub enum ResidualFn {
    /// `t^alpha`, `alpha in (0, 1]`.
    Power(f64),
    Gd,
    Glog,
    /// `(eps, t) -> kappa eps + kappa sqrt(eps t)`.
    SymCone(f64),
    /// `(eps, t) -> m + max{lead, 2/gamma(t)} g(eps + m)` with
    /// `m = max{eps, eps/||n||}`; `lead = 2 sqrt(t)` when `g` is the square
    /// root and `2` otherwise.
    OneStep {
        norm_n: f64,
        gamma: GammaFn,
        g: Box<ResidualFn>,
    },
    /// Outermost first; evaluated innermost first.
    Compose(Vec<ResidualFn>),
}

pub fn power(alpha: f64) -> Result<ResidualFn> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("power exponent must lie in (0, 1], got {alpha}"));
    }
    Ok(ResidualFn::Power(alpha))
}

/// `kappa eps + kappa sqrt(eps t)`.
pub fn make_symcone_frf(kappa: f64) -> Result<ResidualFn> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return domain(format!("kappa must be positive, got {kappa}"));
    }
    Ok(ResidualFn::SymCone(kappa))
}

/// Composition `fns[0] o fns[1] o ... o fns[last]`.
pub fn compose_chain(fns: Vec<ResidualFn>) -> Result<ResidualFn> {
    if fns.is_empty() {
        return domain("cannot compose an empty list");
    }
    if fns.iter().any(ResidualFn::is_two_arg) {
        return domain("only single-argument residual functions can be composed");
    }
    let mut flat = Vec::with_capacity(fns.len());
    for f in fns {
        match f {
            ResidualFn::Compose(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    if flat.len() == 1 {
        return Ok(flat.pop().unwrap());
    }
    Ok(ResidualFn::Compose(flat))
}

/// The residual `g` attached to a face for the exposing vector `n`.
pub fn face_residual(kind: FaceKind, n: &ConePoint, tol: f64) -> Result<ResidualFn> {
    let ny_pos = n.y > tol * n.norm().max(1.0);
    Ok(match kind {
        FaceKind::BigFd => ResidualFn::Gd,
        FaceKind::MidFs if ny_pos => ResidualFn::Power(0.5),
        FaceKind::MidFs => ResidualFn::Glog,
        FaceKind::ExceptionalFinf if ny_pos => ResidualFn::Power(1.0),
        FaceKind::ExceptionalFinf => ResidualFn::Glog,
        FaceKind::RayFr => ResidualFn::Power(0.5),
        other => return domain(format!("no one-step residual function for face {other:?}")),
    })
}

/// One-step facial residual function for the face exposed by `n`.
pub fn make_onestep_frf(kind: FaceKind, n: &ConePoint, gamma: GammaFn, tol: f64) -> Result<ResidualFn> {
    let actual = classify_face(n, tol)?.kind;
    if actual != kind {
        return domain(format!("exposing vector gives {actual:?}, not {kind:?}"));
    }
    gamma.validate()?;
    Ok(ResidualFn::OneStep {
        norm_n: n.norm(),
        gamma,
        g: Box::new(face_residual(kind, n, tol)?),
    })
}

/// The innermost function `g-bar` in the composed residual for chains of
/// length at least two.
pub fn select_gbar(kind: FaceKind, n1: &ConePoint, tol: f64) -> Result<ResidualFn> {
    match kind {
        FaceKind::BigFd | FaceKind::MidFs => face_residual(kind, n1, tol),
        other => domain(format!("second face must be F_d or of type F_s, got {other:?}")),
    }
}

impl ResidualFn {
    pub fn is_two_arg(&self) -> bool {
        matches!(self, ResidualFn::SymCone(_) | ResidualFn::OneStep { .. })
    }

    /// Evaluates a single-argument function.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("residual functions need t >= 0, got {t}"));
        }
        match self {
            ResidualFn::Power(a) => Ok(if *a == 1.0 { t } else { t.powf(*a) }),
            ResidualFn::Gd => eval_gd(t),
            ResidualFn::Glog => eval_glog(t),
            ResidualFn::Compose(fns) => fns.iter().rev().try_fold(t, |acc, f| f.eval(acc)),
            ResidualFn::SymCone(_) | ResidualFn::OneStep { .. } => Err(Error::InvalidInput(
                "two-argument residual function needs (eps, t)".into(),
            )),
        }
    }

    /// Evaluates at `(eps, t)`; single-argument functions ignore `t`.
    pub fn eval2(&self, eps: f64, t: f64) -> Result<f64> {
        if !(eps >= 0.0) || !(t >= 0.0) {
            return domain(format!("residual functions need nonnegative arguments, got ({eps}, {t})"));
        }
        match self {
            ResidualFn::SymCone(k) => Ok(k * eps + k * (eps * t).sqrt()),
            ResidualFn::OneStep { norm_n, gamma, g } => {
                let m = eps.max(eps / norm_n);
                let lead = if **g == ResidualFn::Power(0.5) {
                    2.0 * t.sqrt()
                } else {
                    2.0
                };
                let coef = lead.max(2.0 / gamma.eval(t));
                Ok(m + coef * g.eval(eps + m)?)
            }
            _ => self.eval(eps),
        }
    }

    /// Human-readable formula in the variable `t` (or `eps, t`).
    pub fn formula(&self) -> String {
        self.formula_at("t")
    }

    fn formula_at(&self, arg: &str) -> String {
        match self {
            ResidualFn::Power(a) if *a == 1.0 => arg.to_string(),
            ResidualFn::Power(a) if *a == 0.5 => format!("sqrt({arg})"),
            ResidualFn::Power(a) => format!("({arg})^{a}"),
            ResidualFn::Gd => format!("g_d({arg})"),
            ResidualFn::Glog => format!("g_log({arg})"),
            ResidualFn::SymCone(k) => format!("{k}*eps + {k}*sqrt(eps*t)"),
            ResidualFn::OneStep { norm_n, gamma, g } => {
                let m = format!("max(eps, eps/{norm_n})");
                let lead = if **g == ResidualFn::Power(0.5) { "2*sqrt(t)" } else { "2" };
                let gam = match gamma {
                    GammaFn::Const(c) => format!("{}", 2.0 / c),
                    GammaFn::Table(_) => "2/gamma(t)".to_string(),
                };
                format!("{m} + max({lead}, {gam})*{}", g.formula_at(&format!("eps + {m}")))
            }
            ResidualFn::Compose(fns) => fns
                .iter()
                .rev()
                .fold(arg.to_string(), |acc, f| f.formula_at(&acc)),
        }
    }

    /// S-expression form, e.g. `(compose (pow 0.5) (gd))`.
    pub fn to_sexpr(&self) -> String {
        match self {
            ResidualFn::Power(a) => format!("(pow {a:?})"),
            ResidualFn::Gd => "(gd)".into(),
            ResidualFn::Glog => "(glog)".into(),
            ResidualFn::SymCone(k) => format!("(symcone {k:?})"),
            ResidualFn::OneStep { norm_n, gamma, g } => {
                let gam = match gamma {
                    GammaFn::Const(c) => format!("(const {c:?})"),
                    GammaFn::Table(rows) => {
                        let body: Vec<String> =
                            rows.iter().map(|(t, v)| format!("({t:?} {v:?})")).collect();
                        format!("(table {})", body.join(" "))
                    }
                };
                format!("(frf {norm_n:?} {gam} {})", g.to_sexpr())
            }
            ResidualFn::Compose(fns) => {
                let body: Vec<String> = fns.iter().map(|f| f.to_sexpr()).collect();
                format!("(compose {})", body.join(" "))
            }
        }
    }
}

impl fmt::Display for ResidualFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexpr())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(s: &str) -> Vec<String> {
    s.replace('(', " ( ").replace(')', " ) ").split_whitespace().map(str::to_string).collect()
}

fn read_sexp(tokens: &[String], pos: &mut usize) -> Result<Sexp> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(read_sexp(tokens, pos)?),
                    None => return Err(Error::Parse("unbalanced parentheses".into())),
                }
            }
        }
        ")" => Err(Error::Parse("unexpected ')'".into())),
        atom => Ok(Sexp::Atom(atom.to_string())),
    }
}

fn number(s: &Sexp) -> Result<f64> {
    match s {
        Sexp::Atom(a) => a
            .parse()
            .map_err(|_| Error::Parse(format!("expected a number, got '{a}'"))),
        Sexp::List(_) => Err(Error::Parse("expected a number, got a list".into())),
    }
}

fn to_gamma(s: &Sexp) -> Result<GammaFn> {
    let Sexp::List(items) = s else {
        return Err(Error::Parse("expected a gamma expression".into()));
    };
    let g = match items.first() {
        Some(Sexp::Atom(h)) if h == "const" && items.len() == 2 => GammaFn::Const(number(&items[1])?),
        Some(Sexp::Atom(h)) if h == "table" => {
            let rows = items[1..]
                .iter()
                .map(|row| match row {
                    Sexp::List(p) if p.len() == 2 => Ok((number(&p[0])?, number(&p[1])?)),
                    _ => Err(Error::Parse("table rows must be (radius gamma)".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            GammaFn::Table(rows)
        }
        _ => return Err(Error::Parse("gamma must be (const g) or (table ...)".into())),
    };
    g.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(g)
}

fn to_residual(s: &Sexp) -> Result<ResidualFn> {
    let Sexp::List(items) = s else {
        return Err(Error::Parse("expected a parenthesised expression".into()));
    };
    let Some(Sexp::Atom(head)) = items.first() else {
        return Err(Error::Parse("expression must start with a name".into()));
    };
    let args = &items[1..];
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Error::Parse(format!("'{head}' takes {n} arguments, got {}", args.len())))
        }
    };
    let parsed = match head.as_str() {
        "pow" => {
            arity(1)?;
            power(number(&args[0])?)
        }
        "gd" => arity(0).map(|_| ResidualFn::Gd),
        "glog" => arity(0).map(|_| ResidualFn::Glog),
        "symcone" => {
            arity(1)?;
            make_symcone_frf(number(&args[0])?)
        }
        "frf" => {
            arity(3)?;
            let norm_n = number(&args[0])?;
            if !(norm_n > 0.0) {
                return Err(Error::Parse("frf needs a positive norm".into()));
            }
            Ok(ResidualFn::OneStep {
                norm_n,
                gamma: to_gamma(&args[1])?,
                g: Box::new(to_residual(&args[2])?),
            })
        }
        "compose" => compose_chain(args.iter().map(to_residual).collect::<Result<_>>()?),
        other => return Err(Error::Parse(format!("unknown residual function '{other}'"))),
    };
    parsed.map_err(|e| Error::Parse(e.to_string()))
}

impl FromStr for ResidualFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let tokens = tokenize(s);
        let mut pos = 0;
        let sexp = read_sexp(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse("trailing input after expression".into()));
        }
        to_residual(&sexp)
    }
}

impl Serialize for ResidualFn {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_sexpr())
    }
}

impl<'de> Deserialize<'de> for ResidualFn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
