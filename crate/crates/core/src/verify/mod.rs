//! Interval branch-and-bound certification.
//!
//! A [`Condition`] asks whether `target(x) ≤ bound` for every `x` in the
//! domain box satisfying a conjunction of interval constraints. [`check`]
//! answers CERTIFIED, FALSIFIED (with a pointwise witness) or UNKNOWN.

mod network;
mod smt;

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::expr::{Expr, Hyperbox, Interval, Program};

pub use network::{interval_eval_network, interval_eval_value, NetGenerator, NetValue, NetworkEnclosure};
pub use smt::{export_smt, NetSymbols, SmtEncoder, SmtError};

/// A scalar function with point and sound box evaluation.
pub trait BoxFunction {
    fn dim(&self) -> usize;
    /// `None` when the point value is undefined or non-finite.
    fn eval_point(&self, x: &[f64]) -> Option<f64>;
    /// Sound enclosure over `b`; [`Interval::ENTIRE`] when evaluation fails.
    fn eval_box(&self, b: &Hyperbox) -> Interval;
    /// SMT-LIB2 term, registering any auxiliary definitions with `enc`.
    fn smt_term(&self, _enc: &mut SmtEncoder) -> Option<String> {
        None
    }
}

/// An [`Expr`] compiled for repeated evaluation.
#[derive(Clone, Debug)]
pub struct ExprFn {
    expr: Expr,
    prog: Program,
    n: usize,
}

impl ExprFn {
    pub fn new(expr: Expr, n: usize) -> Self {
        ExprFn { prog: expr.compile(), expr, n }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl BoxFunction for ExprFn {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval_point(&self, x: &[f64]) -> Option<f64> {
        self.prog.eval(x).ok()
    }

    fn eval_box(&self, b: &Hyperbox) -> Interval {
        self.prog.eval_interval(b).unwrap_or(Interval::ENTIRE)
    }

    fn smt_term(&self, _enc: &mut SmtEncoder) -> Option<String> {
        Some(self.expr.to_smt())
    }
}

/// `‖x‖∞`.
#[derive(Clone, Copy, Debug)]
pub struct InfNorm {
    n: usize,
}

impl InfNorm {
    pub fn new(n: usize) -> Self {
        InfNorm { n }
    }
}

impl BoxFunction for InfNorm {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval_point(&self, x: &[f64]) -> Option<f64> {
        Some(x.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    fn eval_box(&self, b: &Hyperbox) -> Interval {
        let mut lo: f64 = 0.0;
        let mut hi: f64 = 0.0;
        for s in b.sides() {
            let least = if s.contains_zero() { 0.0 } else { s.lo().abs().min(s.hi().abs()) };
            lo = lo.max(least);
            hi = hi.max(s.mag());
        }
        Interval::new(lo, hi)
    }
}

/// `−f`.
pub struct Negated<'a>(pub &'a dyn BoxFunction);

impl BoxFunction for Negated<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval_point(&self, x: &[f64]) -> Option<f64> {
        self.0.eval_point(x).map(|v| -v)
    }

    fn eval_box(&self, b: &Hyperbox) -> Interval {
        self.0.eval_box(b).neg()
    }

    fn smt_term(&self, enc: &mut SmtEncoder) -> Option<String> {
        self.0.smt_term(enc).map(|t| alloc::format!("(- {t})"))
    }
}

/// `lower ≤ func(x) ≤ upper`, either side optional.
#[derive(Clone, Copy)]
pub struct Constraint<'a> {
    pub func: &'a dyn BoxFunction,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl<'a> Constraint<'a> {
    pub fn at_most(func: &'a dyn BoxFunction, upper: f64) -> Self {
        Constraint { func, lower: None, upper: Some(upper) }
    }

    pub fn at_least(func: &'a dyn BoxFunction, lower: f64) -> Self {
        Constraint { func, lower: Some(lower), upper: None }
    }

    pub fn between(func: &'a dyn BoxFunction, lower: f64, upper: f64) -> Self {
        Constraint { func, lower: Some(lower), upper: Some(upper) }
    }

    pub fn holds_at(&self, x: &[f64]) -> bool {
        match self.func.eval_point(x) {
            Some(v) => self.lower.is_none_or(|l| v >= l) && self.upper.is_none_or(|u| v <= u),
            None => false,
        }
    }

    fn classify(&self, b: &Hyperbox) -> Feasibility {
        let e = self.func.eval_box(b);
        if self.lower.is_some_and(|l| e.hi() < l) || self.upper.is_some_and(|u| e.lo() > u) {
            Feasibility::Infeasible
        } else if self.lower.is_none_or(|l| e.lo() >= l) && self.upper.is_none_or(|u| e.hi() <= u) {
            Feasibility::Satisfied
        } else {
            Feasibility::Partial
        }
    }
}

impl fmt::Debug for Constraint<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint").field("lower", &self.lower).field("upper", &self.upper).finish()
    }
}

enum Feasibility {
    Infeasible,
    Satisfied,
    Partial,
}

/// `target(x) ≤ bound` for all `x ∈ domain` satisfying every constraint.
pub struct Condition<'a> {
    pub target: &'a dyn BoxFunction,
    pub region: Vec<Constraint<'a>>,
    pub bound: f64,
    pub domain: Hyperbox,
}

impl Condition<'_> {
    /// Whether `x` lies in the domain and the constraint region.
    pub fn in_region(&self, x: &[f64]) -> bool {
        self.domain.contains(x) && self.region.iter().all(|c| c.holds_at(x))
    }

    /// Pointwise violation test at a region point.
    pub fn violated_at(&self, x: &[f64]) -> bool {
        self.target.eval_point(x).is_none_or(|v| v > self.bound)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub max_boxes: usize,
    /// Smallest box side, relative to the domain width in that dimension.
    pub min_width_rel: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { max_boxes: 5_000_000, min_width_rel: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnknownReason {
    MinWidth,
    Budget,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VerifyStatus {
    Certified,
    Falsified { witness: Vec<f64>, value: Option<f64> },
    Unknown { cell: Hyperbox, reason: UnknownReason },
}

impl VerifyStatus {
    pub fn name(&self) -> &'static str {
        match self {
            VerifyStatus::Certified => "CERTIFIED",
            VerifyStatus::Falsified { .. } => "FALSIFIED",
            VerifyStatus::Unknown { .. } => "UNKNOWN",
        }
    }
}

impl fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyStatus::Certified => write!(f, "CERTIFIED"),
            VerifyStatus::Falsified { witness, value } => match value {
                Some(v) => write!(f, "FALSIFIED at {witness:?} (value {v})"),
                None => write!(f, "FALSIFIED at {witness:?} (undefined)"),
            },
            VerifyStatus::Unknown { cell, reason } => write!(f, "UNKNOWN ({reason:?}) near {:?}", cell.midpoint()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub boxes: usize,
    pub max_depth: usize,
}

impl VerifyOutcome {
    pub fn is_certified(&self) -> bool {
        self.status == VerifyStatus::Certified
    }
}

fn dim_scales(domain: &Hyperbox) -> Vec<f64> {
    domain.sides().iter().map(|s| if s.width() > 0.0 { s.width() } else { 1.0 }).collect()
}

fn relative_width(b: &Hyperbox, scale: &[f64]) -> f64 {
    b.sides().iter().zip(scale).fold(0.0, |m, (s, w)| m.max(s.width() / w))
}

/// Narrow the active constraint mask on `b`; `None` if the box is infeasible.
fn refine_mask(region: &[Constraint<'_>], b: &Hyperbox, mask: u64) -> Option<u64> {
    let mut out = mask;
    for (k, c) in region.iter().enumerate() {
        if mask & (1 << k) == 0 {
            continue;
        }
        match c.classify(b) {
            Feasibility::Infeasible => return None,
            Feasibility::Satisfied => out &= !(1 << k),
            Feasibility::Partial => {}
        }
    }
    Some(out)
}

fn holds_active(region: &[Constraint<'_>], mask: u64, x: &[f64]) -> bool {
    region.iter().enumerate().all(|(k, c)| mask & (1 << k) == 0 || c.holds_at(x))
}

fn full_mask(len: usize) -> u64 {
    assert!(len <= 64, "at most 64 region constraints");
    if len == 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

/// Breadth-first branch-and-bound. Stops at the first witness or the first
/// box that cannot be resolved above `min_width_rel`.
pub fn check(cond: &Condition<'_>, opts: &VerifyOptions) -> VerifyOutcome {
    let scale = dim_scales(&cond.domain);
    let mut queue = VecDeque::new();
    queue.push_back((cond.domain.clone(), 0usize, full_mask(cond.region.len())));
    let mut boxes = 0usize;
    let mut max_depth = 0usize;
    let done = |status, boxes, max_depth| VerifyOutcome { status, boxes, max_depth };

    while let Some((cell, depth, mask)) = queue.pop_front() {
        if boxes >= opts.max_boxes {
            return done(VerifyStatus::Unknown { cell, reason: UnknownReason::Budget }, boxes, max_depth);
        }
        boxes += 1;
        max_depth = max_depth.max(depth);
        let Some(mask) = refine_mask(&cond.region, &cell, mask) else {
            continue;
        };
        if cond.target.eval_box(&cell).hi() <= cond.bound {
            continue;
        }
        let mid = cell.midpoint();
        if holds_active(&cond.region, mask, &mid) && cond.violated_at(&mid) {
            let value = cond.target.eval_point(&mid);
            return done(VerifyStatus::Falsified { witness: mid, value }, boxes, max_depth);
        }
        if relative_width(&cell, &scale) <= opts.min_width_rel {
            return done(VerifyStatus::Unknown { cell, reason: UnknownReason::MinWidth }, boxes, max_depth);
        }
        let (a, b) = cell.split(cell.widest_dim(&scale));
        queue.push_back((a, depth + 1, mask));
        queue.push_back((b, depth + 1, mask));
    }
    done(VerifyStatus::Certified, boxes, max_depth)
}

/// Result of [`bound_max`] / [`bound_min`].
#[derive(Clone, Debug, PartialEq)]
pub struct Extremum {
    /// Certified upper bound of the maximum (for [`bound_max`]).
    pub upper: f64,
    /// Certified lower bound of the minimum (for [`bound_min`]).
    pub lower: f64,
    /// Best feasible point found and its value.
    pub best: Option<(Vec<f64>, f64)>,
    pub boxes: usize,
    /// Whether the gap closed to the requested tolerance.
    pub converged: bool,
}

struct Node {
    hi: f64,
    seq: usize,
    cell: Hyperbox,
    mask: u64,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // max-heap on hi, FIFO among ties
    fn cmp(&self, o: &Self) -> Ordering {
        self.hi.total_cmp(&o.hi).then_with(|| o.seq.cmp(&self.seq))
    }
}

/// Best-first upper bound of `max target` over the region. Stops when
/// `upper − best ≤ rel_tol·|best|`, at the width floor, or at the budget;
/// the returned `upper` is sound in every case. An empty region gives
/// `upper = −∞`.
pub fn bound_max(
    target: &dyn BoxFunction,
    region: &[Constraint<'_>],
    domain: &Hyperbox,
    opts: &VerifyOptions,
    rel_tol: f64,
) -> Extremum {
    let scale = dim_scales(domain);
    let mut heap = BinaryHeap::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut boxes = 0usize;
    let mut seq = 0usize;

    let mut consider = |cell: Hyperbox, mask: u64, heap: &mut BinaryHeap<Node>, best: &mut Option<(Vec<f64>, f64)>| {
        let Some(mask) = refine_mask(region, &cell, mask) else {
            return;
        };
        let enc = target.eval_box(&cell);
        let mid = cell.midpoint();
        if holds_active(region, mask, &mid) {
            if let Some(v) = target.eval_point(&mid) {
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    *best = Some((mid, v));
                }
            }
        }
        seq += 1;
        heap.push(Node { hi: enc.hi(), seq, cell, mask });
    };

    consider(domain.clone(), full_mask(region.len()), &mut heap, &mut best);
    let finish = |upper: f64, best: Option<(Vec<f64>, f64)>, boxes, converged| Extremum {
        upper,
        lower: -upper,
        best,
        boxes,
        converged,
    };
    while let Some(top) = heap.pop() {
        boxes += 1;
        if let Some((_, b)) = &best {
            if top.hi - b <= rel_tol * b.abs() {
                return finish(top.hi, best, boxes, true);
            }
        }
        if boxes >= opts.max_boxes || relative_width(&top.cell, &scale) <= opts.min_width_rel {
            return finish(top.hi, best, boxes, false);
        }
        let (a, b) = top.cell.split(top.cell.widest_dim(&scale));
        consider(a, top.mask, &mut heap, &mut best);
        consider(b, top.mask, &mut heap, &mut best);
    }
    let upper = best.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
    finish(upper, best, boxes, true)
}

/// Lower bound of `min target` over the region; see [`bound_max`].
pub fn bound_min(
    target: &dyn BoxFunction,
    region: &[Constraint<'_>],
    domain: &Hyperbox,
    opts: &VerifyOptions,
    rel_tol: f64,
) -> Extremum {
    let neg = Negated(target);
    let e = bound_max(&neg, region, domain, opts, rel_tol);
    Extremum {
        upper: -e.upper,
        lower: -e.upper,
        best: e.best.map(|(x, v)| (x, -v)),
        boxes: e.boxes,
        converged: e.converged,
    }
}

/// Largest `c` for which `{level ≤ c}` stays inside the domain: a certified
/// lower bound of `min level` over the boundary faces.
pub fn sublevel_cap(level: &dyn BoxFunction, domain: &Hyperbox, opts: &VerifyOptions) -> f64 {
    domain
        .faces()
        .iter()
        .map(|face| bound_min(level, &[], face, opts, 1e-3).lower)
        .fold(f64::INFINITY, f64::min)
}

/// `ζ = max(floor, rel · max |enclosure|)` over a uniform grid of at most
/// 4096 boxes covering the domain.
pub fn default_zeta(lv: &dyn BoxFunction, domain: &Hyperbox, rel: f64, floor: f64) -> f64 {
    let n = domain.dim();
    let mut k = 1usize;
    while (k + 1).pow(n as u32) <= 4096 {
        k += 1;
    }
    let total = k.pow(n as u32);
    let mut max_mag: f64 = 0.0;
    for idx in 0..total {
        let mut r = idx;
        let sides = domain
            .sides()
            .iter()
            .map(|s| {
                let i = r % k;
                r /= k;
                let lo = s.lo() + s.width() * i as f64 / k as f64;
                let hi = if i + 1 == k { s.hi() } else { s.lo() + s.width() * (i + 1) as f64 / k as f64 };
                Interval::new(lo, hi.max(lo))
            })
            .collect();
        let m = lv.eval_box(&Hyperbox::new(sides)).mag();
        if m.is_finite() {
            max_mag = max_mag.max(m);
        }
    }
    (rel * max_mag).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelOptions {
    /// Relative bisection tolerance.
    pub rel_tol: f64,
    /// Probes allowed while looking for the first passing level.
    pub max_probes: usize,
}

impl Default for LevelOptions {
    fn default() -> Self {
        LevelOptions { rel_tol: 1e-2, max_probes: 30 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSearch {
    pub level: f64,
    /// Outcome of the direct check at `level`.
    pub outcome: VerifyOutcome,
    /// Outcome of the closest failing probe, if any.
    pub rejected: Option<(f64, VerifyOutcome)>,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LevelError {
    #[error("empty level range [{lo}, {hi}]")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("no probe passed; last probe {level}: {}", .outcome.status)]
    NoPassingProbe { level: f64, outcome: VerifyOutcome },
}

/// Largest `c ∈ (floor, cap]` with `pred(c)` certified, assuming `pred` gets
/// harder as `c` grows. Tries the cap, halves the gap towards the floor
/// until a probe passes, then bisects.
pub fn search_largest(
    floor: f64,
    cap: f64,
    opts: &LevelOptions,
    mut pred: impl FnMut(f64) -> VerifyOutcome,
) -> Result<LevelSearch, LevelError> {
    if !(cap > floor) {
        return Err(LevelError::EmptyRange { lo: floor, hi: cap });
    }
    let mut probes = 1;
    let first = pred(cap);
    if first.is_certified() {
        return Ok(LevelSearch { level: cap, outcome: first, rejected: None, probes });
    }
    let mut hi = (cap, first);
    let mut c = floor + 0.5 * (cap - floor);
    let mut lo = loop {
        probes += 1;
        let o = pred(c);
        if o.is_certified() {
            break (c, o);
        }
        if probes > opts.max_probes {
            return Err(LevelError::NoPassingProbe { level: c, outcome: o });
        }
        hi = (c, o);
        c = floor + 0.5 * (c - floor);
    };
    while hi.0 - lo.0 > opts.rel_tol * hi.0 {
        let mid = 0.5 * (lo.0 + hi.0);
        probes += 1;
        let o = pred(mid);
        if o.is_certified() {
            lo = (mid, o);
        } else {
            hi = (mid, o);
        }
    }
    Ok(LevelSearch { level: lo.0, outcome: lo.1, rejected: Some(hi), probes })
}

/// Smallest `β ∈ [floor, upper)` with `pred(β)` certified, assuming `pred`
/// gets easier as `β` grows. Tries the floor, doubles until a probe passes,
/// then bisects.
pub fn search_smallest(
    floor: f64,
    upper: f64,
    opts: &LevelOptions,
    mut pred: impl FnMut(f64) -> VerifyOutcome,
) -> Result<LevelSearch, LevelError> {
    if !(upper > floor && floor > 0.0) {
        return Err(LevelError::EmptyRange { lo: floor, hi: upper });
    }
    let mut probes = 1;
    let first = pred(floor);
    if first.is_certified() {
        return Ok(LevelSearch { level: floor, outcome: first, rejected: None, probes });
    }
    let mut lo = (floor, first);
    let mut c = floor;
    let mut hi = loop {
        c = (2.0 * c).min(upper);
        probes += 1;
        let o = pred(c);
        if o.is_certified() {
            break (c, o);
        }
        if c >= upper || probes > opts.max_probes {
            return Err(LevelError::NoPassingProbe { level: c, outcome: o });
        }
        lo = (c, o);
    };
    while hi.0 - lo.0 > opts.rel_tol * hi.0 {
        let mid = 0.5 * (lo.0 + hi.0);
        probes += 1;
        let o = pred(mid);
        if o.is_certified() {
            hi = (mid, o);
        } else {
            lo = (mid, o);
        }
    }
    Ok(LevelSearch { level: hi.0, outcome: hi.1, rejected: Some(lo), probes })
}

/// Largest `c ≤ cap` such that `lv ≤ bound` on `{lower ≤ level ≤ c}`
/// (or `{level ≤ c}` without a lower level).
#[allow(clippy::too_many_arguments)]
pub fn find_largest_level(
    lv: &dyn BoxFunction,
    level: &dyn BoxFunction,
    lower: Option<f64>,
    bound: f64,
    cap: f64,
    domain: &Hyperbox,
    opts: &VerifyOptions,
    lopts: &LevelOptions,
) -> Result<LevelSearch, LevelError> {
    search_largest(lower.unwrap_or(0.0), cap, lopts, |c| {
        let region = match lower {
            Some(l) => vec![Constraint::between(level, l, c)],
            None => vec![Constraint::at_most(level, c)],
        };
        check(&Condition { target: lv, region, bound, domain: domain.clone() }, opts)
    })
}

/// Smallest `β ≥ floor` such that `lv ≤ bound` on `{β ≤ level ≤ upper}`.
#[allow(clippy::too_many_arguments)]
pub fn find_smallest_lower_level(
    lv: &dyn BoxFunction,
    level: &dyn BoxFunction,
    upper: f64,
    floor: f64,
    bound: f64,
    domain: &Hyperbox,
    opts: &VerifyOptions,
    lopts: &LevelOptions,
) -> Result<LevelSearch, LevelError> {
    search_smallest(floor, upper, lopts, |b| {
        let region = vec![Constraint::between(level, b, upper)];
        check(&Condition { target: lv, region, bound, domain: domain.clone() }, opts)
    })
}

/// Certify `{inner ≤ a} ⊆ {outer ≤ b}` within the domain.
pub fn check_inclusion(
    inner: &dyn BoxFunction,
    a: f64,
    outer: &dyn BoxFunction,
    b: f64,
    domain: &Hyperbox,
    opts: &VerifyOptions,
) -> VerifyOutcome {
    check(&Condition { target: outer, region: vec![Constraint::at_most(inner, a)], bound: b, domain: domain.clone() }, opts)
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InclusionError {
    #[error("the sublevel set is empty")]
    EmptyRegion,
    #[error("inclusion not certified for c1 = {c1}: {}", .outcome.status)]
    NotCertified { c1: f64, outcome: VerifyOutcome },
}

/// Smallest certified `c₁` with `{w ≤ β₁} ⊆ {v ≤ c₁}`: an enclosure bound
/// of `max v` over `{w ≤ β₁}` plus a small slack, then an inclusion check.
pub fn find_smallest_c1(
    v: &dyn BoxFunction,
    w: &dyn BoxFunction,
    beta1: f64,
    domain: &Hyperbox,
    opts: &VerifyOptions,
) -> Result<(f64, VerifyOutcome), InclusionError> {
    let region = [Constraint::at_most(w, beta1)];
    let ext = bound_max(v, &region, domain, opts, 1e-3);
    if ext.upper == f64::NEG_INFINITY {
        return Err(InclusionError::EmptyRegion);
    }
    let mut last = None;
    for slack in [1e-3, 1e-2, 5e-2] {
        let c1 = ext.upper + slack * ext.upper.abs().max(1e-12);
        let o = check_inclusion(w, beta1, v, c1, domain, opts);
        if o.is_certified() {
            return Ok((c1, o));
        }
        last = Some((c1, o));
    }
    let (c1, outcome) = last.unwrap();
    Err(InclusionError::NotCertified { c1, outcome })
}

#[cfg(test)]
mod tests;
