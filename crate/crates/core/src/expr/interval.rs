//! Closed intervals with outward rounding and axis-aligned boxes.
//!
//! Every primitive rounds its endpoints outward to the next representable
//! double unless the result is provably exact, so an enclosure computed
//! with these operations contains the real-valued image.

use alloc::vec::Vec;
use core::fmt;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

// Error-free transformation: returns (s, e) with a + b = s + e exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

#[inline]
pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    let (s, e) = two_sum(a, b);
    if s.is_infinite() {
        if s > 0.0 && a.is_finite() && b.is_finite() {
            return f64::MAX;
        }
        return s;
    }
    if e < 0.0 {
        s.next_down()
    } else {
        s
    }
}

#[inline]
pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    let (s, e) = two_sum(a, b);
    if s.is_infinite() {
        if s < 0.0 && a.is_finite() && b.is_finite() {
            return f64::MIN;
        }
        return s;
    }
    if e > 0.0 {
        s.next_up()
    } else {
        s
    }
}

#[inline]
pub(crate) fn mul_down(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        if p > 0.0 && a.is_finite() && b.is_finite() {
            return f64::MAX;
        }
        return p;
    }
    p.next_down()
}

#[inline]
pub(crate) fn mul_up(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        if p < 0.0 && a.is_finite() && b.is_finite() {
            return f64::MIN;
        }
        return p;
    }
    p.next_up()
}

#[inline]
fn div_down(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let q = a / b;
    if q.is_infinite() {
        if q > 0.0 && a.is_finite() {
            return f64::MAX;
        }
        return q;
    }
    if b.is_infinite() {
        // finite / unbounded divisor: the quotient tends to 0 from the sign of a/b
        return if (a > 0.0) == (b > 0.0) { 0.0 } else { f64::NEG_INFINITY };
    }
    q.next_down()
}

#[inline]
fn div_up(a: f64, b: f64) -> f64 {
    -div_down(-a, b)
}

// Non-negative base, non-negative exponent; monotone so rounding each
// factor in the same direction stays a bound.
fn pow_nonneg(base: f64, mut k: u32, up: bool) -> f64 {
    let mul = if up { mul_up } else { mul_down };
    let mut acc = 1.0;
    let mut b = base;
    while k > 0 {
        if k & 1 == 1 {
            acc = mul(acc, b);
        }
        k >>= 1;
        if k > 0 {
            b = mul(b, b);
        }
    }
    acc.max(0.0)
}

impl Interval {
    /// The whole real line.
    pub const ENTIRE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    /// # Panics
    /// If `lo > hi` or either endpoint is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval::new(v, v)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        if self.lo.is_finite() && self.hi.is_finite() {
            0.5 * self.lo + 0.5 * self.hi
        } else if self.lo.is_finite() {
            self.lo
        } else if self.hi.is_finite() {
            self.hi
        } else {
            0.0
        }
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    #[inline]
    fn checked(lo: f64, hi: f64) -> Interval {
        if lo.is_nan() || hi.is_nan() {
            Interval::ENTIRE
        } else {
            Interval { lo, hi }
        }
    }

    /// Widen by a relative/absolute slack; used for functions evaluated
    /// with a few ulps of library error.
    pub fn inflate(&self, rel: f64, abs: f64) -> Interval {
        let m = self.mag();
        Interval::checked(self.lo - (rel * m + abs), self.hi + (rel * m + abs))
    }

    #[inline]
    pub fn neg(&self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }

    #[inline]
    pub fn add(&self, o: &Interval) -> Interval {
        Interval::checked(add_down(self.lo, o.lo), add_up(self.hi, o.hi))
    }

    #[inline]
    pub fn sub(&self, o: &Interval) -> Interval {
        self.add(&o.neg())
    }

    #[inline]
    pub fn add_scalar(&self, c: f64) -> Interval {
        Interval::checked(add_down(self.lo, c), add_up(self.hi, c))
    }

    #[inline]
    pub fn scale(&self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval::checked(mul_down(self.lo, c), mul_up(self.hi, c))
        } else {
            Interval::checked(mul_down(self.hi, c), mul_up(self.lo, c))
        }
    }

    #[inline]
    pub fn mul(&self, o: &Interval) -> Interval {
        let (a, b, c, d) = (self.lo, self.hi, o.lo, o.hi);
        if a >= 0.0 && c >= 0.0 {
            return Interval::checked(mul_down(a, c), mul_up(b, d));
        }
        if (a == 0.0 && b == 0.0) || (c == 0.0 && d == 0.0) {
            return Interval::ZERO;
        }
        let (ac, ad, bc, bd) = (a * c, a * d, b * c, b * d);
        let lo = ac.min(ad).min(bc).min(bd);
        let hi = ac.max(ad).max(bc).max(bd);
        if a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite() && lo.is_finite() && hi.is_finite() {
            // one step outward covers the round-to-nearest error of the extreme product
            return Interval::checked(lo.next_down(), hi.next_up());
        }
        let lo = mul_down(a, c).min(mul_down(a, d)).min(mul_down(b, c)).min(mul_down(b, d));
        let hi = mul_up(a, c).max(mul_up(a, d)).max(mul_up(b, c)).max(mul_up(b, d));
        Interval::checked(lo, hi)
    }

    /// Division; the divisor must not contain zero.
    pub fn div(&self, o: &Interval) -> Result<Interval, EvalError> {
        if o.contains_zero() {
            return Err(EvalError::DivisionByZero);
        }
        let (a, b, c, d) = (self.lo, self.hi, o.lo, o.hi);
        let lo = div_down(a, c).min(div_down(a, d)).min(div_down(b, c)).min(div_down(b, d));
        let hi = div_up(a, c).max(div_up(a, d)).max(div_up(b, c)).max(div_up(b, d));
        Ok(Interval::checked(lo, hi))
    }

    #[inline]
    pub fn sqr(&self) -> Interval {
        if self.lo >= 0.0 {
            Interval::checked(mul_down(self.lo, self.lo), mul_up(self.hi, self.hi))
        } else if self.hi <= 0.0 {
            Interval::checked(mul_down(self.hi, self.hi), mul_up(self.lo, self.lo))
        } else {
            let m = self.mag();
            Interval::checked(0.0, mul_up(m, m))
        }
    }

    /// Integer power. Even powers of sign-straddling intervals start at 0;
    /// negative exponents divide and therefore reject intervals containing 0.
    pub fn powi(&self, k: i32) -> Result<Interval, EvalError> {
        if k < 0 {
            let p = self.powi(-k)?;
            return Interval::point(1.0).div(&p);
        }
        let k = k as u32;
        if k == 0 {
            return Ok(Interval::point(1.0));
        }
        if k == 2 {
            return Ok(self.sqr());
        }
        let even = k % 2 == 0;
        let (lo, hi) = (self.lo, self.hi);
        let out = if lo >= 0.0 {
            (pow_nonneg(lo, k, false), pow_nonneg(hi, k, true))
        } else if hi <= 0.0 {
            if even {
                (pow_nonneg(-hi, k, false), pow_nonneg(-lo, k, true))
            } else {
                (-pow_nonneg(-lo, k, true), -pow_nonneg(-hi, k, false))
            }
        } else if even {
            (0.0, pow_nonneg(self.mag(), k, true))
        } else {
            (-pow_nonneg(-lo, k, true), pow_nonneg(hi, k, true))
        };
        Ok(Interval::checked(out.0, out.1))
    }

    pub fn exp(&self) -> Interval {
        let lo = if self.lo == 0.0 { 1.0 } else { libm::exp(self.lo).next_down().next_down().max(0.0) };
        let hi = if self.hi == 0.0 { 1.0 } else { libm::exp(self.hi).next_up().next_up() };
        Interval::checked(lo, hi)
    }

    pub fn tanh(&self) -> Interval {
        let lo = if self.lo == 0.0 { 0.0 } else { libm::tanh(self.lo).next_down().next_down().max(-1.0) };
        let hi = if self.hi == 0.0 { 0.0 } else { libm::tanh(self.hi).next_up().next_up().min(1.0) };
        Interval::checked(lo, hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Axis-aligned box: one interval per state dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperbox {
    sides: Vec<Interval>,
}

impl Hyperbox {
    /// # Panics
    /// If `sides` is empty.
    pub fn new(sides: Vec<Interval>) -> Self {
        assert!(!sides.is_empty(), "a box needs at least one dimension");
        Hyperbox { sides }
    }

    /// Build from `(lo, hi)` pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        Hyperbox::new(bounds.iter().map(|&(lo, hi)| Interval::new(lo, hi)).collect())
    }

    /// Degenerate box around a point.
    pub fn point(x: &[f64]) -> Self {
        Hyperbox::new(x.iter().map(|&v| Interval::point(v)).collect())
    }

    /// Symmetric box `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Self {
        Hyperbox::new((0..n).map(|_| Interval::new(-r, r)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    #[inline]
    pub fn sides(&self) -> &[Interval] {
        &self.sides
    }

    #[inline]
    pub fn side(&self, i: usize) -> Interval {
        self.sides[i]
    }

    pub fn set_side(&mut self, i: usize, iv: Interval) {
        self.sides[i] = iv;
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.sides.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.sides.iter().zip(x).all(|(s, &v)| s.contains(v))
    }

    pub fn is_subset_of(&self, other: &Hyperbox) -> bool {
        self.dim() == other.dim() && self.sides.iter().zip(&other.sides).all(|(a, b)| a.is_subset_of(b))
    }

    /// Largest absolute coordinate over the box.
    pub fn radius(&self) -> f64 {
        self.sides.iter().map(Interval::mag).fold(0.0, f64::max)
    }

    pub fn max_width(&self) -> f64 {
        self.sides.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().map(Interval::width).product()
    }

    /// Dimension with the largest width relative to `scale[i]`.
    pub fn widest_dim(&self, scale: &[f64]) -> usize {
        let mut best = 0;
        let mut best_w = f64::NEG_INFINITY;
        for (i, s) in self.sides.iter().enumerate() {
            let w = s.width() / scale[i];
            if w > best_w {
                best_w = w;
                best = i;
            }
        }
        best
    }

    /// Bisect along `dim` at the midpoint.
    pub fn split(&self, dim: usize) -> (Hyperbox, Hyperbox) {
        let s = self.sides[dim];
        let m = s.mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.sides[dim] = Interval::new(s.lo(), m);
        right.sides[dim] = Interval::new(m, s.hi());
        (left, right)
    }

    /// The `2n` boundary faces, as degenerate boxes.
    pub fn faces(&self) -> Vec<Hyperbox> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for i in 0..self.dim() {
            for v in [self.sides[i].lo(), self.sides[i].hi()] {
                let mut f = self.clone();
                f.sides[i] = Interval::point(v);
                out.push(f);
            }
        }
        out
    }

    /// Map a point of the unit cube `[0,1]^n` into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.sides.iter().zip(u).map(|(s, &t)| s.lo() + t * s.width()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directed_rounding_brackets_exact_results() {
        let a = Interval::point(0.1).add(&Interval::point(0.2));
        assert!(a.lo() <= 0.30000000000000004 && a.hi() >= 0.3);
        assert!(a.lo() < a.hi());
        // exact sums stay degenerate
        let b = Interval::point(1.0).add(&Interval::point(2.0));
        assert_eq!(b, Interval::point(3.0));
        let z = Interval::point(0.0).mul(&Interval::new(-5.0, 7.0));
        assert_eq!(z, Interval::ZERO);
    }

    #[test]
    fn even_power_of_straddling_interval() {
        let x = Interval::new(-1.0, 2.0);
        let p = x.powi(2).unwrap();
        assert_eq!(p.lo(), 0.0);
        assert!(p.hi() >= 4.0 && p.hi() < 4.0 + 1e-12);
        let q = x.powi(4).unwrap();
        assert_eq!(q.lo(), 0.0);
        assert!(q.hi() >= 16.0);
        let c = x.powi(3).unwrap();
        assert!(c.lo() <= -1.0 && c.hi() >= 8.0);
    }

    #[test]
    fn division_rejects_zero_in_divisor() {
        assert_eq!(Interval::point(1.0).div(&Interval::new(-1.0, 1.0)), Err(EvalError::DivisionByZero));
        assert_eq!(Interval::point(1.0).div(&Interval::new(0.0, 1.0)), Err(EvalError::DivisionByZero));
        let q = Interval::new(1.0, 2.0).div(&Interval::new(4.0, 8.0)).unwrap();
        assert!(q.lo() <= 0.125 && q.hi() >= 0.5);
    }

    #[test]
    fn monotone_transcendentals() {
        let t = Interval::new(0.0, 1.0).tanh();
        assert_eq!(t.lo(), 0.0);
        assert!(t.hi() >= libm::tanh(1.0) && t.hi() <= 1.0);
        let e = Interval::new(-1.0, 0.0).exp();
        assert!(e.lo() <= libm::exp(-1.0) && e.hi() == 1.0);
    }

    #[test]
    fn split_and_faces() {
        let b = Hyperbox::from_bounds(&[(-1.0, 1.0), (0.0, 4.0)]);
        assert_eq!(b.widest_dim(&[1.0, 1.0]), 1);
        let (l, r) = b.split(1);
        assert_eq!(l.side(1), Interval::new(0.0, 2.0));
        assert_eq!(r.side(1), Interval::new(2.0, 4.0));
        assert_eq!(b.faces().len(), 4);
        assert_eq!(b.radius(), 4.0);
    }
}
