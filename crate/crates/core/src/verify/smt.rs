//! SMT-LIB2 export of a [`Condition`]: the script asserts the domain, the
//! region and the negated threshold, so `unsat` certifies the condition.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::Condition;
use crate::expr::smt_real;
use crate::net::NeuralFunction;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SmtError {
    #[error("the {0} has no SMT-LIB2 encoding")]
    Unsupported(&'static str),
}

/// SMT names of a network's value, input gradient and Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSymbols {
    pub value: String,
    pub grad: Vec<String>,
    /// Row-major, symmetric.
    pub hess: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
enum Sym {
    Zero,
    Const(f64),
    Name(String),
}

impl Sym {
    fn term(&self) -> String {
        match self {
            Sym::Zero => "0.0".into(),
            Sym::Const(c) => smt_real(*c),
            Sym::Name(s) => s.clone(),
        }
    }
}

/// Collects auxiliary `define-fun`s while terms are built.
#[derive(Debug, Default)]
pub struct SmtEncoder {
    defs: Vec<String>,
    nets: Vec<(*const NeuralFunction, NetSymbols)>,
    uses_transcendental: bool,
}

impl SmtEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn definitions(&self) -> &[String] {
        &self.defs
    }

    fn define(&mut self, name: String, body: String) -> Sym {
        self.defs.push(format!("(define-fun {name} () Real {body})"));
        Sym::Name(name)
    }

    // Σ wᵢ·symᵢ + bias, folding constants; defines a name unless trivial.
    fn combine(&mut self, name: String, terms: &[(f64, &Sym)], bias: f64) -> Sym {
        let mut konst = bias;
        let mut parts = Vec::new();
        for &(w, s) in terms {
            match s {
                Sym::Zero => {}
                Sym::Const(c) => konst += w * c,
                Sym::Name(n) => parts.push(format!("(* {} {n})", smt_real(w))),
            }
        }
        if parts.is_empty() {
            return if konst == 0.0 { Sym::Zero } else { Sym::Const(konst) };
        }
        if konst != 0.0 {
            parts.push(smt_real(konst));
        }
        let body = if parts.len() == 1 { parts.pop().unwrap() } else { format!("(+ {})", parts.join(" ")) };
        self.define(name, body)
    }

    /// Unfold `net` into affine and tanh definitions (once per network).
    pub fn network(&mut self, net: &NeuralFunction) -> NetSymbols {
        let key = net as *const NeuralFunction;
        if let Some((_, s)) = self.nets.iter().find(|(k, _)| *k == key) {
            return s.clone();
        }
        self.uses_transcendental = true;
        let id = self.nets.len();
        let n = net.input_dim();
        let mut a: Vec<Sym> = (0..n).map(|i| Sym::Name(format!("x{}", i + 1))).collect();
        let mut j: Vec<Sym> = (0..n * n).map(|k| if k / n == k % n { Sym::Const(1.0) } else { Sym::Zero }).collect();
        let mut h: Vec<Sym> = (0..n * n * n).map(|_| Sym::Zero).collect();

        for (l, layer) in net.layers().iter().enumerate() {
            let hidden = net.is_hidden(l);
            let mut na = Vec::new();
            let mut nj = Vec::new();
            let mut nh = Vec::new();
            for k in 0..layer.outputs() {
                let pre = format!("n{id}_l{l}_{k}");
                let row: Vec<f64> = (0..layer.inputs()).map(|i| layer.weight(k, i)).collect();
                let terms: Vec<(f64, &Sym)> = row.iter().zip(&a).map(|(w, s)| (*w, s)).collect();
                let u = self.combine(format!("{pre}_u"), &terms, layer.biases()[k]);
                let mut ju = Vec::with_capacity(n);
                for p in 0..n {
                    let terms: Vec<(f64, &Sym)> = row.iter().enumerate().map(|(i, w)| (*w, &j[i * n + p])).collect();
                    ju.push(self.combine(format!("{pre}_ju{p}"), &terms, 0.0));
                }
                let mut hu: Vec<Sym> = Vec::with_capacity(n * n);
                for p in 0..n {
                    for q in 0..n {
                        if q < p {
                            hu.push(hu[q * n + p].clone());
                            continue;
                        }
                        let terms: Vec<(f64, &Sym)> = row.iter().enumerate().map(|(i, w)| (*w, &h[i * n * n + p * n + q])).collect();
                        hu.push(self.combine(format!("{pre}_hu{p}{q}"), &terms, 0.0));
                    }
                }
                if !hidden {
                    na.push(u);
                    nj.extend(ju);
                    nh.extend(hu);
                    continue;
                }
                let act = self.define(format!("{pre}_a"), format!("(tanh {})", u.term()));
                let d1 = self.define(format!("{pre}_d1"), format!("(- 1.0 (* {0} {0}))", act.term()));
                let d2 = self.define(format!("{pre}_d2"), format!("(* (- 2.0) {} {})", act.term(), d1.term()));
                for (p, jp) in ju.iter().enumerate() {
                    nj.push(match jp {
                        Sym::Zero => Sym::Zero,
                        _ => self.define(format!("{pre}_j{p}"), format!("(* {} {})", d1.term(), jp.term())),
                    });
                }
                let mut hk: Vec<Sym> = Vec::with_capacity(n * n);
                for p in 0..n {
                    for q in 0..n {
                        if q < p {
                            hk.push(hk[q * n + p].clone());
                            continue;
                        }
                        let mut parts = Vec::new();
                        if hu[p * n + q] != Sym::Zero {
                            parts.push(format!("(* {} {})", d1.term(), hu[p * n + q].term()));
                        }
                        if ju[p] != Sym::Zero && ju[q] != Sym::Zero {
                            parts.push(format!("(* {} {} {})", d2.term(), ju[p].term(), ju[q].term()));
                        }
                        hk.push(match parts.len() {
                            0 => Sym::Zero,
                            1 => self.define(format!("{pre}_h{p}{q}"), parts.pop().unwrap()),
                            _ => self.define(format!("{pre}_h{p}{q}"), format!("(+ {})", parts.join(" "))),
                        });
                    }
                }
                nh.extend(hk);
                na.push(act);
            }
            a = na;
            j = nj;
            h = nh;
        }
        let syms = NetSymbols {
            value: a[0].term(),
            grad: j[..n].iter().map(Sym::term).collect(),
            hess: h[..n * n].iter().map(Sym::term).collect(),
        };
        self.nets.push((key, syms.clone()));
        syms
    }
}

fn bound_assert(term: &str, lower: Option<f64>, upper: Option<f64>, out: &mut String) {
    if let Some(l) = lower {
        let _ = writeln!(out, "(assert (<= {} {term}))", smt_real(l));
    }
    if let Some(u) = upper {
        let _ = writeln!(out, "(assert (<= {term} {}))", smt_real(u));
    }
}

/// Render `cond` as an SMT-LIB2 script. `description` lines go into the
/// comment header.
pub fn export_smt(cond: &Condition<'_>, description: &[&str]) -> Result<String, SmtError> {
    let n = cond.domain.dim();
    let mut enc = SmtEncoder::new();
    let region: Vec<String> = cond
        .region
        .iter()
        .map(|c| c.func.smt_term(&mut enc).ok_or(SmtError::Unsupported("region function")))
        .collect::<Result<_, _>>()?;
    let target = cond.target.smt_term(&mut enc).ok_or(SmtError::Unsupported("target function"))?;

    let mut out = String::new();
    for line in description {
        let _ = writeln!(out, "; {line}");
    }
    let _ = writeln!(out, "; Query: some x in the box satisfies every region constraint and target(x) > {}.", cond.bound);
    let _ = writeln!(out, "; Expected answer: unsat, which certifies target <= {} on the region.", cond.bound);
    let all = alloc::format!("{target} {}", region.join(" "));
    if enc.uses_transcendental || all.contains("(exp ") || all.contains("(tanh ") {
        let _ = writeln!(out, "; Uses exp/tanh: needs a solver with transcendental support such as dReal.");
    }
    let _ = writeln!(out, "(set-logic QF_NRA)");
    for i in 0..n {
        let _ = writeln!(out, "(declare-const x{} Real)", i + 1);
    }
    for d in enc.definitions() {
        let _ = writeln!(out, "{d}");
    }
    for (i, side) in cond.domain.sides().iter().enumerate() {
        bound_assert(&format!("x{}", i + 1), Some(side.lo()), Some(side.hi()), &mut out);
    }
    for (c, term) in cond.region.iter().zip(&region) {
        bound_assert(term, c.lower, c.upper, &mut out);
    }
    let _ = writeln!(out, "(assert (> {target} {}))", smt_real(cond.bound));
    let _ = writeln!(out, "(check-sat)");
    let _ = writeln!(out, "(exit)");
    Ok(out)
}
