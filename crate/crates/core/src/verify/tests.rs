use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use super::*;
use crate::expr::parse;
use crate::net::{uniform01, NeuralFunction};

fn f(s: &str, n: usize) -> ExprFn {
    ExprFn::new(parse(s, n).unwrap(), n)
}

fn cube(n: usize, r: f64) -> Hyperbox {
    Hyperbox::cube(n, r)
}

/// Rejection-sample the region and return any point violating the bound.
fn sampled_violation(cond: &Condition<'_>, samples: usize, seed: u64) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    let mut tries = 0;
    while hits < samples && tries < 200 * samples {
        tries += 1;
        let u: Vec<f64> = (0..cond.domain.dim()).map(|_| uniform01(&mut rng)).collect();
        let x = cond.domain.from_unit(&u);
        if !cond.in_region(&x) {
            continue;
        }
        hits += 1;
        if cond.violated_at(&x) {
            return Some(x);
        }
    }
    None
}

#[test]
fn stable_annulus_is_certified() {
    let lv = f("-2*x1^2 - 2*x2^2", 2);
    let r2 = f("x1^2 + x2^2", 2);
    let cond = Condition { target: &lv, region: vec![Constraint::between(&r2, 0.1, 1.0)], bound: -0.1, domain: cube(2, 1.0) };
    let out = check(&cond, &VerifyOptions::default());
    assert_eq!(out.status, VerifyStatus::Certified);
    assert!(out.boxes > 1);
    assert_eq!(sampled_violation(&cond, 10_000, 1), None);
}

#[test]
fn unstable_annulus_is_falsified() {
    let lv = f("2*x1^2 + 2*x2^2", 2);
    let r2 = f("x1^2 + x2^2", 2);
    let cond = Condition { target: &lv, region: vec![Constraint::between(&r2, 0.1, 1.0)], bound: 0.0, domain: cube(2, 1.0) };
    match check(&cond, &VerifyOptions::default()).status {
        VerifyStatus::Falsified { witness, value } => {
            assert!(cond.in_region(&witness));
            assert!(value.unwrap() > 0.0);
            assert!(cond.violated_at(&witness));
        }
        s => panic!("expected FALSIFIED, got {s}"),
    }
}

#[test]
fn empty_region_is_vacuously_certified() {
    let w = f("x1^2 + x2^2", 2);
    let t = f("x1 + 100", 2);
    let cond = Condition { target: &t, region: vec![Constraint::between(&w, 0.5, 0.2)], bound: 0.0, domain: cube(2, 1.0) };
    assert!(check(&cond, &VerifyOptions::default()).is_certified());
}

#[test]
fn budget_exhaustion_is_unknown() {
    // x1² ≤ 1 holds with equality at the corners: never provable by enclosures
    // of a box touching them, and never falsifiable.
    let t = f("x1^2", 1);
    let cond = Condition { target: &t, region: vec![], bound: 1.0 - 1e-9, domain: cube(1, 1.0) };
    let out = check(&cond, &VerifyOptions { max_boxes: 10, min_width_rel: 1e-12 });
    assert!(matches!(out.status, VerifyStatus::Unknown { reason: UnknownReason::Budget, .. }));
    let out = check(&cond, &VerifyOptions::default());
    assert!(matches!(out.status, VerifyStatus::Unknown { reason: UnknownReason::MinWidth, .. }));
}

#[test]
fn check_is_deterministic() {
    let lv = f("x1*x2 - 0.3*tanh(x1) - x2^2", 2);
    let r = f("x1^2 + 2*x2^2", 2);
    let cond = Condition { target: &lv, region: vec![Constraint::at_most(&r, 1.0)], bound: 0.7, domain: cube(2, 1.5) };
    let opts = VerifyOptions { max_boxes: 20_000, ..VerifyOptions::default() };
    assert_eq!(check(&cond, &opts), check(&cond, &opts));
}

#[test]
fn inclusion_examples() {
    let x2 = f("x1^2", 1);
    let d = cube(1, 3.0);
    let o = VerifyOptions::default();
    assert!(check_inclusion(&x2, 1.0, &x2, 2.0, &d, &o).is_certified());
    match check_inclusion(&x2, 2.0, &x2, 1.0, &d, &o).status {
        VerifyStatus::Falsified { witness, .. } => {
            let v = witness[0] * witness[0];
            assert!(v <= 2.0 && v > 1.0);
        }
        s => panic!("expected FALSIFIED, got {s}"),
    }
}

#[test]
fn quadratic_sublevel_inside_rayleigh_ball() {
    // λ_min of [[2.2439, −0.7805], [−0.7805, 1.4634]]
    let (a, b, c) = (2.2439, -0.7805, 1.4634);
    let lmin = 0.5 * (a + c) - libm::sqrt(0.25 * (a - c) * (a - c) + b * b);
    let v = ExprFn::new(crate::expr::Expr::quadratic_form(&[a, b, b, c], 2), 2);
    let r2 = f("x1^2 + x2^2", 2);
    let lvl = 2.0;
    // relative slack: the enclosure cannot close a tangency exactly
    let out = check_inclusion(&v, lvl, &r2, lvl / lmin * (1.0 + 5e-2), &cube(2, 3.5), &VerifyOptions::default());
    assert!(out.is_certified(), "{}", out.status);
}

#[test]
fn smallest_c1_examples() {
    let w = f("x1^2 + 0.5*x2^2", 2);
    let w2 = f("2*(x1^2 + 0.5*x2^2)", 2);
    let d = cube(2, 1.0);
    let o = VerifyOptions::default();
    let (c1, out) = find_smallest_c1(&w, &w, 0.1, &d, &o).unwrap();
    assert!(out.is_certified());
    assert!((c1 - 0.1).abs() <= 2e-3, "{c1}");
    let (c1, _) = find_smallest_c1(&w2, &w, 0.1, &d, &o).unwrap();
    assert!((c1 - 0.2).abs() <= 4e-3, "{c1}");
}

#[test]
fn stable_linear_level_is_cap() {
    // f = −x, σ = 0, V = |x|²: LV = −2|x|²
    let lv = f("-2*x1^2 - 2*x2^2", 2);
    let v = f("x1^2 + x2^2", 2);
    let d = cube(2, 1.0);
    let o = VerifyOptions::default();
    let cap = sublevel_cap(&v, &d, &o);
    assert!((cap - 1.0).abs() < 1e-2 && cap <= 1.0, "{cap}");
    let zeta = default_zeta(&lv, &d, 1e-4, 1e-6);
    let res = find_largest_level(&lv, &v, Some(0.01), -zeta, cap, &d, &o, &LevelOptions::default()).unwrap();
    assert_eq!(res.level, cap);
}

#[test]
fn level_search_postcondition() {
    // the target crosses the bound at two known radii
    let lv = f("(x1^2 + x2^2 - 0.5)*(x1^2 + x2^2)", 2);
    let v = f("x1^2 + x2^2", 2);
    let d = cube(2, 1.0);
    let o = VerifyOptions::default();
    let lo = LevelOptions::default();
    let bound = -0.01;
    let res = find_largest_level(&lv, &v, Some(0.05), bound, 1.0, &d, &o, &lo).unwrap();
    // analytic: (s − 0.5)s ≤ −0.01 for s ∈ [0.05, s*] with s* = (0.5 + √(0.25 − 0.04))/2
    let s_star = 0.5 * (0.5 + libm::sqrt(0.25 - 0.04));
    assert!(res.level <= s_star && res.level >= s_star * 0.97, "{} vs {s_star}", res.level);
    let again = check(
        &Condition { target: &lv, region: vec![Constraint::between(&v, 0.05, res.level)], bound, domain: d.clone() },
        &o,
    );
    assert!(again.is_certified());
    let grown = res.level * (1.0 + 2.0 * lo.rel_tol);
    let above = check(&Condition { target: &lv, region: vec![Constraint::between(&v, 0.05, grown)], bound, domain: d.clone() }, &o);
    assert!(!above.is_certified());

    // the same function from the other side: smallest β with the condition on [β, 0.4]
    let res = find_smallest_lower_level(&lv, &v, 0.4, 1e-3, bound, &d, &o, &lo).unwrap();
    let s_low = 0.5 * (0.5 - libm::sqrt(0.25 - 0.04));
    assert!(res.level >= s_low && res.level <= s_low * 1.06, "{} vs {s_low}", res.level);
    let (below, out) = res.rejected.clone().unwrap();
    assert!(below < res.level && !out.is_certified());
    // an upper level below every passing probe
    let err = find_smallest_lower_level(&lv, &v, 0.015, 1e-3, bound, &d, &o, &lo).unwrap_err();
    assert!(matches!(err, LevelError::NoPassingProbe { .. }));
}

#[test]
fn bound_extrema() {
    let t = f("x1^2 - x2", 2);
    let d = cube(2, 1.0);
    let e = bound_max(&t, &[], &d, &VerifyOptions::default(), 1e-4);
    assert!(e.upper >= 2.0 && e.upper <= 2.0 * (1.0 + 1e-3));
    let e = bound_min(&t, &[], &d, &VerifyOptions::default(), 1e-4);
    assert!(e.lower <= -1.0 && e.lower >= -1.0 - 1e-3);
    let inf = InfNorm::new(2);
    let g = f("x1^2 + x2^2", 2);
    let e = bound_min(&g, &[Constraint::at_least(&inf, 0.1)], &d, &VerifyOptions::default(), 1e-3);
    assert!(e.lower <= 0.01 && e.lower > 0.0099);
    let empty = bound_max(&t, &[Constraint::at_least(&g, 5.0)], &d, &VerifyOptions::default(), 1e-3);
    assert_eq!(empty.upper, f64::NEG_INFINITY);
}

#[test]
fn network_generator_condition_is_sound() {
    let sys = crate::system::StochasticSystem::new(
        vec![parse("-x2", 2).unwrap(), parse("x1 - (1 - x1^2)*x2", 2).unwrap()],
        vec![vec![parse("0.5*x1", 2).unwrap(), parse("0", 2).unwrap()], vec![parse("0", 2).unwrap(), parse("0.5*x2", 2).unwrap()]],
        parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
        Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]),
    )
    .unwrap();
    let net = NeuralFunction::glorot(&[2, 10, 10, 10, 1], 3).unwrap();
    let lw = NetGenerator::new(&net, &sys);
    let d = Hyperbox::from_bounds(&[(-0.5, 0.5), (-0.5, 0.5)]);
    // a bound that must hold: an upper bound from a coarse enclosure
    let top = lw.eval_box(&d).hi();
    let cond = Condition { target: &lw, region: vec![], bound: top, domain: d.clone() };
    assert!(check(&cond, &VerifyOptions::default()).is_certified());
    // a bound slightly below the sampled max is falsified with a genuine witness
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let x = d.from_unit(&[uniform01(&mut rng), uniform01(&mut rng)]);
        best = best.max(lw.eval_point(&x).unwrap());
    }
    let cond = Condition { target: &lw, region: vec![], bound: best - 0.05 * best.abs(), domain: d };
    match check(&cond, &VerifyOptions::default()).status {
        VerifyStatus::Falsified { witness, .. } => assert!(cond.violated_at(&witness)),
        s => panic!("expected FALSIFIED, got {s}"),
    }
}

#[test]
fn smt_export_polynomial() {
    let t = f("2*x1^2", 1);
    let r = f("x1^2", 1);
    let cond = Condition { target: &t, region: vec![Constraint::at_most(&r, 1.0)], bound: 2.0, domain: cube(1, 2.0) };
    let s = export_smt(&cond, &["test condition"]).unwrap();
    assert!(s.starts_with("; test condition\n"));
    assert!(s.contains("(declare-const x1 Real)"));
    assert!(s.contains("(assert (<= (- 2.0) x1))"));
    assert!(s.contains("(assert (<= (* x1 x1) 1.0))"));
    assert!(s.contains("(assert (> (* 2.0 (* x1 x1)) 2.0))"));
    assert!(s.trim_end().ends_with("(check-sat)\n(exit)"));
    assert!(!s.contains("dReal"));
}

#[test]
fn smt_export_network_has_one_tanh_per_hidden_unit() {
    let sys = crate::system::StochasticSystem::new(
        vec![parse("-x2", 2).unwrap(), parse("x1 - (1 - x1^2)*x2", 2).unwrap()],
        vec![vec![parse("0.5*x1", 2).unwrap(), parse("0", 2).unwrap()], vec![parse("0", 2).unwrap(), parse("0.5*x2", 2).unwrap()]],
        parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
        Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]),
    )
    .unwrap();
    let net = NeuralFunction::glorot(&[2, 10, 10, 10, 1], 1).unwrap();
    let w = NetValue::new(&net);
    let lw = NetGenerator::new(&net, &sys);
    let cond = Condition {
        target: &lw,
        region: vec![Constraint::between(&w, 0.1, 0.5)],
        bound: -1e-4,
        domain: sys.domain().clone(),
    };
    let s = export_smt(&cond, &["neural condition"]).unwrap();
    assert_eq!(s.matches("(tanh ").count(), 30);
    assert!(s.contains("dReal"));
    // every defined name is defined once
    let defs: Vec<&str> = s.lines().filter(|l| l.starts_with("(define-fun")).collect();
    let mut names: Vec<&str> = defs.iter().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    let count = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), count);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn child_enclosures_lie_within_parent(lo1 in -2.0f64..1.0, lo2 in -2.0f64..1.0, w1 in 0.01f64..1.0, w2 in 0.01f64..1.0, dim in 0usize..2) {
        let t = f("x1*x2 - tanh(x1 - 2*x2)^3 + exp(-x1^2)", 2);
        let b = Hyperbox::from_bounds(&[(lo1, lo1 + w1), (lo2, lo2 + w2)]);
        let parent = t.eval_box(&b);
        let (a, c) = b.split(dim);
        prop_assert!(t.eval_box(&a).hull(&t.eval_box(&c)).is_subset_of(&parent));
    }

    #[test]
    fn certified_conditions_hold_on_samples(c in 0.2f64..1.5, bound in -0.5f64..0.5) {
        let t = f("x1*x2 + 0.2*x1 - x2^2", 2);
        let v = f("x1^2 + x2^2", 2);
        let cond = Condition { target: &t, region: vec![Constraint::at_most(&v, c)], bound, domain: cube(2, 1.3) };
        let out = check(&cond, &VerifyOptions { max_boxes: 50_000, ..VerifyOptions::default() });
        match out.status {
            VerifyStatus::Certified => prop_assert_eq!(sampled_violation(&cond, 2_000, 7), None),
            VerifyStatus::Falsified { witness, .. } => prop_assert!(cond.in_region(&witness) && cond.violated_at(&witness)),
            VerifyStatus::Unknown { .. } => {}
        }
    }
}
