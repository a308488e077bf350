use zubov_core::expr::parse;
use zubov_core::linlyap::{certify_quadratic, QuadSettings};
use zubov_core::net::{train, LossWeights};
use zubov_core::proa::{certify_composite, CompositeCertificate, CompositeSettings};
use zubov_core::sim::{grid_points, stabilization_search, value_dataset};
use zubov_core::{Hyperbox, SimConfig, StochasticSystem, TrainConfig};

fn system(f: &[&str], sigma: &[&[&str]], g: &str, domain: Hyperbox) -> StochasticSystem {
    let n = f.len();
    let e = |s: &str| parse(s, n).unwrap();
    StochasticSystem::new(
        f.iter().map(|s| e(s)).collect(),
        sigma.iter().map(|r| r.iter().map(|s| e(s)).collect()).collect(),
        e(g),
        domain,
    )
    .unwrap()
}

fn certify(sys: &StochasticSystem, per_dim: usize, value_samples: usize, cfg: TrainConfig) -> CompositeCertificate {
    let quadratic = certify_quadratic(sys, &QuadSettings::default()).unwrap();
    let sim = SimConfig { value_samples, ..SimConfig::for_domain(sys.domain()) };
    let data = value_dataset(sys, &grid_points(sys.domain(), per_dim, 10_000), &sim);
    let trained = train(sys, &data, &cfg, &mut |_| {}).unwrap();
    let cert = certify_composite(sys, quadratic, trained.net, &CompositeSettings::default()).unwrap();
    assert!(cert.is_complete(), "{:?}", cert.incompleteness());
    cert
}

fn train_config(hidden: Vec<usize>, collocation: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden,
        collocation,
        epochs,
        learning_rate: 1e-2,
        final_learning_rate: 1e-4,
        weights: LossWeights::default(),
        seed: 0,
        checkpoint_every: 0,
    }
}

#[test]
fn one_dimensional_composite() {
    let sys = system(&["-x1"], &[&["0"]], "0.1*x1^2", Hyperbox::cube(1, 2.0));
    let cert = certify(&sys, 21, 1, train_config(vec![10, 10, 10], 200, 3000));
    let exact = |x: f64| 1.0 - (-0.05 * x * x).exp();
    for i in 0..=40 {
        let x = -2.0 + 0.1 * i as f64;
        assert!((cert.w(&[x]) - exact(x)).abs() < 1e-2, "W({x}) = {}", cert.w(&[x]));
    }
    // deterministic convergence everywhere, so any bound in [0, 1] is sound;
    // p must still reach 1 at the origin and vanish outside W^β₂
    assert_eq!(cert.p_lower_bound(&[0.0]).unwrap(), 1.0);
    for i in 0..=400 {
        let x = -2.0 + 0.01 * i as f64;
        let p = cert.p_lower_bound(&[x]).unwrap();
        assert!((0.0..=1.0).contains(&p));
        if cert.w(&[x]) > cert.beta2 {
            assert_eq!(p, 0.0);
        }
    }
}

/// Root of `W(r u) = β₁` on `(0, r_max]` by bisection, if `W` crosses β₁.
fn crossing(cert: &CompositeCertificate, u: [f64; 2], r_max: f64) -> Option<f64> {
    let at = |r: f64| cert.w(&[r * u[0], r * u[1]]) - cert.beta1;
    let mut lo = 0.0;
    let mut hi = r_max;
    if at(hi) < 0.0 || at(lo) >= 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[test]
fn bound_is_continuous_across_inner_level() {
    let sys = system(&["-x1 + 0.5*x2", "-x2"], &[&["0.2*x1"], &["0.2*x2"]], "0.1*(x1^2 + x2^2)", Hyperbox::cube(2, 1.0));
    let cert = certify(&sys, 11, 20, train_config(vec![8, 8], 500, 2000));
    let mut checked = 0;
    for k in 0..100 {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 100.0;
        let u = [a.cos(), a.sin()];
        let r_max = 1.0 / u[0].abs().max(u[1].abs());
        let Some(r) = crossing(&cert, u, r_max) else { continue };
        let p = |s: f64| cert.p_lower_bound(&[s * u[0], s * u[1]]).unwrap();
        let jump = (p(r * (1.0 + 1e-9)) - p(r * (1.0 - 1e-9))).abs();
        assert!(jump <= 1e-6, "jump {jump} at angle {a}");
        checked += 1;
    }
    assert_eq!(checked, 100, "every ray should cross W = β₁");
}

#[test]
fn noise_stabilizes_an_unstable_scalar_system() {
    // dX = X dt + 2X dB: the noise-free path diverges, the noisy one
    // converges with positive probability
    let sys = system(&["x1"], &[&["2*x1"]], "0.1*x1^2", Hyperbox::cube(1, 1.0));
    let cfg = SimConfig { attraction_samples: 200, ..SimConfig::for_domain(sys.domain()) };
    let found = stabilization_search(&sys, &cfg, 5);
    let xs: Vec<f64> = found.iter().map(|s| s.point[0]).collect();
    assert_eq!(found.len(), 4, "{xs:?}");
    assert!(xs.iter().all(|x| *x != 0.0));
    assert!(found.windows(2).all(|w| w[0].count.converged >= w[1].count.converged));
    assert!(found.iter().all(|s| s.count.total() == 200 && s.count.frequency() > 0.3));

    let stable = system(&["-x1"], &[&["0.1*x1"]], "0.1*x1^2", Hyperbox::cube(1, 1.0));
    assert!(stabilization_search(&stable, &cfg, 5).is_empty());
}
