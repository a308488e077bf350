//! Symbolic scalar functions of the state vector.
//!
//! The grammar is closed under `d/dx_i`: constants, variables, `+ - * /`,
//! integer powers, `exp` and `tanh`. Trees are immutable and share
//! subtrees through `Arc`, so derivative construction is cheap.

mod interval;
mod parse;
mod program;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::ops;

pub use interval::{Hyperbox, Interval};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use program::Program;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("variable x{} is outside the point/box dimension", .0 + 1)]
    Variable(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state index: `Var(0)` is `x1`.
    Var(usize),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Exp(Arc<Expr>),
    Tanh(Arc<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    // Folding constructors. Only constant folding and the identities
    // 0 + e, e * 1, e * 0 and e^1 are applied.

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) if x == 0.0 => Expr::zero(),
            (_, Some(y)) if y == 0.0 => Expr::zero(),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(x), _) if x == 0.0 => Expr::zero(),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => (*inner).clone(),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    pub fn pow(a: Expr, k: i32) -> Expr {
        match (k, a.as_const()) {
            (0, _) => Expr::one(),
            (1, _) => a,
            (_, Some(c)) => Expr::Const(libm::pow(c, k as f64)),
            _ => Expr::Pow(Arc::new(a), k),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::Const(libm::exp(c)),
            None => Expr::Exp(Arc::new(a)),
        }
    }

    pub fn tanh(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::Const(libm::tanh(c)),
            None => Expr::Tanh(Arc::new(a)),
        }
    }

    /// Sum of a sequence, folding as it goes.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// `Σ_ij m_ij x_i x_j` for a row-major `n × n` matrix.
    pub fn quadratic_form(m: &[f64], n: usize) -> Expr {
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let c = m[i * n + j];
                if c != 0.0 {
                    terms.push(Expr::mul(Expr::Const(c), Expr::mul(Expr::var(i), Expr::var(j))));
                }
            }
        }
        Expr::sum(terms)
    }

    /// `Σ_i x_i^2`.
    pub fn squared_norm(n: usize) -> Expr {
        Expr::sum((0..n).map(|i| Expr::pow(Expr::var(i), 2)))
    }

    /// Exact partial derivative with respect to `x_i` (zero-based).
    pub fn differentiate(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(j) => {
                if *j == i {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.differentiate(i)),
            Expr::Add(a, b) => Expr::add(a.differentiate(i), b.differentiate(i)),
            Expr::Sub(a, b) => Expr::sub(a.differentiate(i), b.differentiate(i)),
            Expr::Mul(a, b) => {
                let da = a.differentiate(i);
                let db = b.differentiate(i);
                Expr::add(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db))
            }
            Expr::Div(a, b) => {
                let da = a.differentiate(i);
                let db = b.differentiate(i);
                if db.is_zero() {
                    return Expr::div(da, (**b).clone());
                }
                let num = Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db));
                Expr::div(num, Expr::pow((**b).clone(), 2))
            }
            Expr::Pow(a, k) => {
                let da = a.differentiate(i);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = Expr::mul(Expr::Const(*k as f64), Expr::pow((**a).clone(), k - 1));
                Expr::mul(outer, da)
            }
            Expr::Exp(a) => {
                let da = a.differentiate(i);
                Expr::mul(self.clone(), da)
            }
            Expr::Tanh(a) => {
                let da = a.differentiate(i);
                if da.is_zero() {
                    return Expr::zero();
                }
                let sech2 = Expr::sub(Expr::one(), Expr::pow(self.clone(), 2));
                Expr::mul(sech2, da)
            }
        }
    }

    /// Gradient as `n` expressions.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|i| self.differentiate(i)).collect()
    }

    /// Row-major `n × n` Hessian; the lower triangle reuses the upper one.
    pub fn hessian(&self, n: usize) -> Vec<Expr> {
        let grad = self.gradient(n);
        let mut h = alloc::vec![Expr::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let e = grad[i].differentiate(j);
                h[j * n + i] = e.clone();
                h[i * n + j] = e;
            }
        }
        h
    }

    /// Substitute each variable `x_i` by `subs[i]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => subs[*i].clone(),
            Expr::Neg(a) => Expr::neg(a.substitute(subs)),
            Expr::Add(a, b) => Expr::add(a.substitute(subs), b.substitute(subs)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(subs), b.substitute(subs)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(subs), b.substitute(subs)),
            Expr::Div(a, b) => Expr::div(a.substitute(subs), b.substitute(subs)),
            Expr::Pow(a, k) => Expr::pow(a.substitute(subs), *k),
            Expr::Exp(a) => Expr::exp(a.substitute(subs)),
            Expr::Tanh(a) => Expr::tanh(a.substitute(subs)),
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Tanh(a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, None) => x,
                    (None, y) => y,
                }
            }
        }
    }

    /// Number of nodes, counting shared subtrees once per use.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Tanh(a) => 1 + a.node_count(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Upper bound on the total degree if the tree is a polynomial.
    /// `None` for quotients by non-constants, negative powers, `exp`, `tanh`.
    pub fn polynomial_degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Neg(a) => a.polynomial_degree(),
            Expr::Add(a, b) | Expr::Sub(a, b) => Some(a.polynomial_degree()?.max(b.polynomial_degree()?)),
            Expr::Mul(a, b) => Some(a.polynomial_degree()? + b.polynomial_degree()?),
            Expr::Div(a, b) => match b.as_const() {
                Some(_) => a.polynomial_degree(),
                None => None,
            },
            Expr::Pow(a, k) if *k >= 0 => Some(a.polynomial_degree()? * (*k as u32)),
            Expr::Pow(..) | Expr::Exp(_) | Expr::Tanh(_) => None,
        }
    }

    /// IEEE double evaluation.
    pub fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_raw(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_raw(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::Variable(*i))?,
            Expr::Neg(a) => -a.eval_raw(x)?,
            Expr::Add(a, b) => a.eval_raw(x)? + b.eval_raw(x)?,
            Expr::Sub(a, b) => a.eval_raw(x)? - b.eval_raw(x)?,
            Expr::Mul(a, b) => a.eval_raw(x)? * b.eval_raw(x)?,
            Expr::Div(a, b) => {
                let d = b.eval_raw(x)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_raw(x)? / d
            }
            Expr::Pow(a, k) => powi(a.eval_raw(x)?, *k)?,
            Expr::Exp(a) => libm::exp(a.eval_raw(x)?),
            Expr::Tanh(a) => libm::tanh(a.eval_raw(x)?),
        })
    }

    /// Sound enclosure of the image of `b`.
    pub fn eval_interval(&self, b: &Hyperbox) -> Result<Interval, EvalError> {
        Ok(match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(i) => {
                if *i >= b.dim() {
                    return Err(EvalError::Variable(*i));
                }
                b.side(*i)
            }
            Expr::Neg(a) => a.eval_interval(b)?.neg(),
            Expr::Add(l, r) => l.eval_interval(b)?.add(&r.eval_interval(b)?),
            Expr::Sub(l, r) => l.eval_interval(b)?.sub(&r.eval_interval(b)?),
            Expr::Mul(l, r) => {
                if l == r {
                    l.eval_interval(b)?.sqr()
                } else {
                    l.eval_interval(b)?.mul(&r.eval_interval(b)?)
                }
            }
            Expr::Div(l, r) => l.eval_interval(b)?.div(&r.eval_interval(b)?)?,
            Expr::Pow(a, k) => a.eval_interval(b)?.powi(*k)?,
            Expr::Exp(a) => a.eval_interval(b)?.exp(),
            Expr::Tanh(a) => a.eval_interval(b)?.tanh(),
        })
    }

    /// Flatten into a postfix program for repeated evaluation.
    pub fn compile(&self) -> Program {
        Program::compile(self)
    }

    /// SMT-LIB2 real-arithmetic term; variables are named `x1..xn`.
    pub fn to_smt(&self) -> String {
        let mut s = String::new();
        write_smt(self, &mut s);
        s
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
            _ => 5,
        }
    }
}

pub(crate) fn powi(v: f64, k: i32) -> Result<f64, EvalError> {
    if k < 0 && v == 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    // exact repeated multiplication matches the interval kernel
    let mut acc = 1.0;
    let mut b = v;
    let mut e = k.unsigned_abs();
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        e >>= 1;
        if e > 0 {
            b *= b;
        }
    }
    Ok(if k < 0 { 1.0 / acc } else { acc })
}

/// Real literal in SMT-LIB2 decimal syntax.
pub fn smt_real(c: f64) -> String {
    let mut s = String::new();
    let mag = c.abs();
    let mut lit = alloc::format!("{mag}");
    if !lit.contains('.') {
        lit.push_str(".0");
    }
    if c < 0.0 {
        let _ = write!(s, "(- {lit})");
    } else {
        s.push_str(&lit);
    }
    s
}

fn write_smt(e: &Expr, out: &mut String) {
    match e {
        Expr::Const(c) => out.push_str(&smt_real(*c)),
        Expr::Var(i) => {
            let _ = write!(out, "x{}", i + 1);
        }
        Expr::Neg(a) => {
            out.push_str("(- ");
            write_smt(a, out);
            out.push(')');
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let op = match e {
                Expr::Add(..) => "+",
                Expr::Sub(..) => "-",
                Expr::Mul(..) => "*",
                _ => "/",
            };
            let _ = write!(out, "({op} ");
            write_smt(a, out);
            out.push(' ');
            write_smt(b, out);
            out.push(')');
        }
        Expr::Pow(a, k) => {
            let k = *k;
            if k == 0 {
                out.push_str("1.0");
                return;
            }
            if k < 0 {
                out.push_str("(/ 1.0 ");
            }
            let m = k.unsigned_abs();
            if m == 1 {
                write_smt(a, out);
            } else {
                out.push_str("(*");
                for _ in 0..m {
                    out.push(' ');
                    write_smt(a, out);
                }
                out.push(')');
            }
            if k < 0 {
                out.push(')');
            }
        }
        Expr::Exp(a) => {
            out.push_str("(exp ");
            write_smt(a, out);
            out.push(')');
        }
        Expr::Tanh(a) => {
            out.push_str("(tanh ");
            write_smt(a, out);
            out.push(')');
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints in the same text grammar `parse` accepts, with only the
/// parentheses needed to preserve the tree shape.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                write_child(f, b, 3)
            }
            Expr::Pow(a, k) => {
                write_child(f, a, 4)?;
                write!(f, "^{k}")
            }
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Tanh(a) => write!(f, "tanh({a})"),
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}
