use alloc::vec::Vec;

use super::{powi, EvalError, Expr, Hyperbox, Interval};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Sqr,
    Div,
    Pow(i32),
    Exp,
    Tanh,
}

/// Postfix form of an [`Expr`] for hot evaluation loops (simulation,
/// branch-and-bound). Evaluates to the same values as the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut cur = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => cur += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => cur -= 1,
                _ => {}
            }
            depth = depth.max(cur);
        }
        Program { ops, depth }
    }

    pub fn is_const_zero(&self) -> bool {
        self.ops.len() == 1 && self.ops[0] == Op::Const(0.0)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Evaluate using a caller-owned scratch stack; no finiteness check.
    #[inline]
    pub fn eval_with(&self, x: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(i) => stack.push(*x.get(i).ok_or(EvalError::Variable(i))?),
                Op::Neg => {
                    let a = stack.last_mut().unwrap();
                    *a = -*a;
                }
                Op::Sqr => {
                    let a = stack.last_mut().unwrap();
                    *a *= *a;
                }
                Op::Pow(k) => {
                    let a = stack.last_mut().unwrap();
                    *a = powi(*a, k)?;
                }
                Op::Exp => {
                    let a = stack.last_mut().unwrap();
                    *a = libm::exp(*a);
                }
                Op::Tanh => {
                    let a = stack.last_mut().unwrap();
                    *a = libm::tanh(*a);
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    match *op {
                        Op::Add => *a += b,
                        Op::Sub => *a -= b,
                        Op::Mul => *a *= b,
                        _ => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            *a /= b
                        }
                    }
                }
            }
        }
        Ok(stack[0])
    }

    /// Point evaluation; non-finite results are errors.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(self.depth);
        let v = self.eval_with(x, &mut stack)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn eval_interval_with(&self, b: &Hyperbox, stack: &mut Vec<Interval>) -> Result<Interval, EvalError> {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(Interval::point(c)),
                Op::Var(i) => {
                    if i >= b.dim() {
                        return Err(EvalError::Variable(i));
                    }
                    stack.push(b.side(i))
                }
                Op::Neg => {
                    let a = stack.last_mut().unwrap();
                    *a = a.neg();
                }
                Op::Sqr => {
                    let a = stack.last_mut().unwrap();
                    *a = a.sqr();
                }
                Op::Pow(k) => {
                    let a = stack.last_mut().unwrap();
                    *a = a.powi(k)?;
                }
                Op::Exp => {
                    let a = stack.last_mut().unwrap();
                    *a = a.exp();
                }
                Op::Tanh => {
                    let a = stack.last_mut().unwrap();
                    *a = a.tanh();
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let r = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = match *op {
                        Op::Add => a.add(&r),
                        Op::Sub => a.sub(&r),
                        Op::Mul => a.mul(&r),
                        _ => a.div(&r)?,
                    };
                }
            }
        }
        Ok(stack[0])
    }

    pub fn eval_interval(&self, b: &Hyperbox) -> Result<Interval, EvalError> {
        let mut stack = Vec::with_capacity(self.depth);
        self.eval_interval_with(b, &mut stack)
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Mul(a, b) if a == b => {
            emit(a, ops);
            ops.push(Op::Sqr);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Expr::Pow(a, k) => {
            emit(a, ops);
            ops.push(if *k == 2 { Op::Sqr } else { Op::Pow(*k) });
        }
        Expr::Exp(a) => {
            emit(a, ops);
            ops.push(Op::Exp);
        }
        Expr::Tanh(a) => {
            emit(a, ops);
            ops.push(Op::Tanh);
        }
    }
}
