use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BoxFunction, SmtEncoder};
use crate::expr::{Hyperbox, Interval};
use crate::net::NeuralFunction;
use crate::system::{CompiledSystem, StochasticSystem};

/// Sound enclosures of a network's value, input gradient and input Hessian
/// (row-major) over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkEnclosure {
    pub value: Interval,
    pub grad: Vec<Interval>,
    pub hess: Vec<Interval>,
}

const REL: f64 = 1e-14;
const ABS: f64 = 1e-300;

// Padding for libm results: a few ulps relative plus a subnormal floor.
fn widen(lo: f64, hi: f64) -> Interval {
    Interval::new(lo - REL * lo.abs() - ABS, hi + REL * hi.abs() + ABS)
}

fn sech2(u: f64) -> f64 {
    let c = libm::cosh(u);
    1.0 / (c * c)
}

fn tanh_dd(u: f64) -> f64 {
    -2.0 * libm::tanh(u) * sech2(u)
}

/// `atanh(1/√3)`: where `tanh''` attains its extrema.
const U_STAR: f64 = 0.658_478_948_462_408_4;
/// `4/(3√3)`: `max |tanh''|`.
const C_STAR: f64 = 0.769_800_358_919_501;

/// Range of `tanh' = sech²` over `u`.
pub(crate) fn sech2_range(u: Interval) -> Interval {
    let (a, b) = (sech2(u.lo()), sech2(u.hi()));
    let hi = if u.contains_zero() { 1.0 } else { a.max(b) };
    let w = widen(a.min(b), hi);
    Interval::new(w.lo().max(0.0), w.hi().min(1.0))
}

/// Range of `tanh'' = −2 tanh sech²` over `u`.
pub(crate) fn tanh_dd_range(u: Interval) -> Interval {
    let (a, b) = (tanh_dd(u.lo()), tanh_dd(u.hi()));
    let mut lo = a.min(b);
    let mut hi = a.max(b);
    if u.contains(U_STAR) {
        lo = -C_STAR;
    }
    if u.contains(-U_STAR) {
        hi = C_STAR;
    }
    let w = widen(lo, hi);
    Interval::new(w.lo().max(-C_STAR - 1e-12), w.hi().min(C_STAR + 1e-12))
}

/// Enclosure of `b + Σ wᵢ xᵢ` summed in round-to-nearest and widened once
/// by the dot-product error bound `γ_k · Σ|wᵢ xᵢ|` plus an underflow term.
#[derive(Clone, Copy, Default)]
struct Acc {
    lo: f64,
    hi: f64,
    mag: f64,
    k: usize,
}

impl Acc {
    fn new(b: f64) -> Self {
        Acc { lo: b, hi: b, mag: 0.0, k: 1 }
    }

    #[inline]
    fn push(&mut self, w: f64, x: Interval) {
        if w >= 0.0 {
            self.lo += w * x.lo();
            self.hi += w * x.hi();
        } else {
            self.lo += w * x.hi();
            self.hi += w * x.lo();
        }
        self.mag += w.abs() * x.mag();
        self.k += 1;
    }

    fn finish(self) -> Interval {
        if !self.mag.is_finite() {
            return Interval::ENTIRE;
        }
        // every term vanished: the bias alone, exactly
        if self.mag == 0.0 {
            return Interval::new(self.lo, self.hi);
        }
        let mag = self.mag + self.lo.abs().max(self.hi.abs());
        let err = 1.02 * (2 * self.k + 2) as f64 * (f64::EPSILON / 2.0) * mag + self.k as f64 * 1e-300;
        Interval::new((self.lo - err).next_down(), (self.hi + err).next_up())
    }
}

fn affine(net: &NeuralFunction, l: usize, a: &[Interval]) -> Vec<Interval> {
    let layer = &net.layers()[l];
    (0..layer.outputs())
        .map(|k| {
            let mut u = Acc::new(layer.biases()[k]);
            for (j, aj) in a.iter().enumerate() {
                u.push(layer.weight(k, j), *aj);
            }
            u.finish()
        })
        .collect()
}

/// Value enclosure only.
pub fn interval_eval_value(net: &NeuralFunction, b: &Hyperbox) -> Interval {
    let mut a: Vec<Interval> = b.sides().to_vec();
    for l in 0..net.layers().len() {
        let u = affine(net, l, &a);
        a = if net.is_hidden(l) { u.iter().map(Interval::tanh).collect() } else { u };
    }
    a[0]
}

/// Interval version of the second-order forward pass.
pub fn interval_eval_network(net: &NeuralFunction, b: &Hyperbox) -> NetworkEnclosure {
    let n = net.input_dim();
    let nn = n * n;
    let zero = Interval::ZERO;
    let mut a: Vec<Interval> = b.sides().to_vec();
    let mut j = vec![zero; n * n];
    for p in 0..n {
        j[p * n + p] = Interval::point(1.0);
    }
    let mut h = vec![zero; n * nn];

    for (l, layer) in net.layers().iter().enumerate() {
        let k_out = layer.outputs();
        let u = affine(net, l, &a);
        let mut ju = vec![zero; k_out * n];
        let mut hu = vec![zero; k_out * nn];
        let mut acc = vec![Acc::default(); n + nn];
        for k in 0..k_out {
            acc.fill(Acc::new(0.0));
            for i in 0..layer.inputs() {
                let w = layer.weight(k, i);
                if w == 0.0 {
                    continue;
                }
                for p in 0..n {
                    acc[p].push(w, j[i * n + p]);
                }
                if l > 0 {
                    for p in 0..n {
                        for q in p..n {
                            acc[n + p * n + q].push(w, h[i * nn + p * n + q]);
                        }
                    }
                }
            }
            for p in 0..n {
                ju[k * n + p] = acc[p].finish();
                for q in p..n {
                    if l > 0 {
                        hu[k * nn + p * n + q] = acc[n + p * n + q].finish();
                    }
                }
            }
        }
        if net.is_hidden(l) {
            let mut na = Vec::with_capacity(k_out);
            let mut nj = vec![zero; k_out * n];
            let mut nh = vec![zero; k_out * nn];
            for k in 0..k_out {
                let s1 = sech2_range(u[k]);
                let s2 = tanh_dd_range(u[k]);
                na.push(u[k].tanh());
                for p in 0..n {
                    let jp = ju[k * n + p];
                    nj[k * n + p] = s1.mul(&jp);
                    for q in p..n {
                        let jj = if p == q { jp.sqr() } else { jp.mul(&ju[k * n + q]) };
                        let v = s1.mul(&hu[k * nn + p * n + q]).add(&s2.mul(&jj));
                        nh[k * nn + p * n + q] = v;
                    }
                }
            }
            a = na;
            j = nj;
            h = nh;
        } else {
            a = u;
            j = ju;
            h = hu;
        }
    }
    for p in 0..n {
        for q in 0..p {
            h[p * n + q] = h[q * n + p];
        }
    }
    NetworkEnclosure { value: a[0], grad: j, hess: h[..nn].to_vec() }
}

/// `W` as a [`BoxFunction`].
pub struct NetValue<'a> {
    net: &'a NeuralFunction,
}

impl<'a> NetValue<'a> {
    pub fn new(net: &'a NeuralFunction) -> Self {
        NetValue { net }
    }
}

impl BoxFunction for NetValue<'_> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval_point(&self, x: &[f64]) -> Option<f64> {
        let v = self.net.eval(x);
        v.is_finite().then_some(v)
    }

    fn eval_box(&self, b: &Hyperbox) -> Interval {
        interval_eval_value(self.net, b)
    }

    fn smt_term(&self, enc: &mut SmtEncoder) -> Option<String> {
        Some(enc.network(self.net).value)
    }
}

/// `LW` for a network `W` as a [`BoxFunction`].
pub struct NetGenerator<'a> {
    net: &'a NeuralFunction,
    sys: &'a StochasticSystem,
    compiled: CompiledSystem,
}

impl<'a> NetGenerator<'a> {
    pub fn new(net: &'a NeuralFunction, sys: &'a StochasticSystem) -> Self {
        NetGenerator { net, sys, compiled: sys.compile() }
    }
}

impl BoxFunction for NetGenerator<'_> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval_point(&self, x: &[f64]) -> Option<f64> {
        let t = self.compiled.terms(x).ok()?;
        let v = t.generator(&self.net.eval_with_derivatives(x));
        v.is_finite().then_some(v)
    }

    fn eval_box(&self, b: &Hyperbox) -> Interval {
        let n = self.compiled.n;
        let enc = interval_eval_network(self.net, b);
        let mut stack = Vec::new();
        let mut total = Interval::ZERO;
        for i in 0..n {
            let Ok(f) = self.compiled.drift[i].eval_interval_with(b, &mut stack) else {
                return Interval::ENTIRE;
            };
            total = total.add(&enc.grad[i].mul(&f));
        }
        for i in 0..n {
            for j in i..n {
                let prog = &self.compiled.outer[i * n + j];
                if prog.is_const_zero() {
                    continue;
                }
                let Ok(d) = prog.eval_interval_with(b, &mut stack) else {
                    return Interval::ENTIRE;
                };
                let c = if i == j { 0.5 } else { 1.0 };
                total = total.add(&d.mul(&enc.hess[i * n + j]).scale(c));
            }
        }
        total
    }

    fn smt_term(&self, enc: &mut SmtEncoder) -> Option<String> {
        let n = self.sys.n();
        let names = enc.network(self.net);
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(format!("(* {} {})", names.grad[i], self.sys.drift()[i].to_smt()));
        }
        for i in 0..n {
            for j in i..n {
                let d = self.sys.diffusion_outer(i, j);
                if d.is_zero() {
                    continue;
                }
                let c = if i == j { "0.5" } else { "1.0" };
                terms.push(format!("(* {c} {} {})", d.to_smt(), names.hess[i * n + j]));
            }
        }
        Some(match terms.len() {
            0 => "0.0".into(),
            1 => terms.pop().unwrap(),
            _ => format!("(+ {})", terms.join(" ")),
        })
    }
}
