//! Euler–Maruyama simulation, Zubov value estimates and Monte Carlo
//! attraction frequencies.
//!
//! Randomness is keyed by `(seed, point index, path index)`: a ChaCha8
//! generator is seeded from the first two and the path index selects the
//! stream, so each path is reproducible on its own and any parallel
//! schedule gives the same numbers.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::expr::{Expr, Hyperbox};
use crate::system::{CompiledSystem, StochasticSystem};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Paths entering this ball count as converged.
    pub conv_radius: f64,
    /// Paths leaving this ball count as diverged.
    pub div_radius: f64,
    pub value_samples: usize,
    pub attraction_samples: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Defaults with `R_div = 10 × radius(domain)`.
    pub fn for_domain(domain: &Hyperbox) -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 20.0,
            conv_radius: 1e-2,
            div_radius: 10.0 * domain.radius(),
            value_samples: 100,
            attraction_samples: 10_000,
            seed: 0,
        }
    }

    pub fn validate(&self, domain: &Hyperbox) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(SimError::Config("dt and horizon must be positive"));
        }
        let r = domain.radius();
        if !(self.conv_radius > 0.0 && self.conv_radius < r && r < self.div_radius) {
            return Err(SimError::Config("need 0 < conv_radius < domain radius < div_radius"));
        }
        if self.value_samples == 0 || self.attraction_samples == 0 {
            return Err(SimError::Config("sample counts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Converged,
    Diverged,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    pub outcome: Outcome,
    /// Stopping time.
    pub time: f64,
    /// Trapezoidal `∫ g(X_s) ds` up to the stopping time.
    pub integral: f64,
    pub state: Vec<f64>,
    /// Set when the state became non-finite.
    pub non_finite: bool,
}

/// A Zubov value estimate `ŵ(y) = 1 − mean exp(−∫g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSample {
    pub point: Vec<f64>,
    pub w_hat: f64,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one path.
pub fn path_rng(seed: u64, point: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, point));
    rng.set_stream(path);
    rng
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum())
}

/// Simulate one path; `record` receives `(t, x)` at every step if given.
pub fn simulate_path(
    sys: &CompiledSystem,
    x0: &[f64],
    cfg: &SimConfig,
    point: u64,
    path: u64,
    mut record: Option<&mut Vec<(f64, Vec<f64>)>>,
) -> PathResult {
    let (n, m) = (sys.n, sys.m);
    let mut rng = path_rng(cfg.seed, point, path);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut stack = Vec::new();
    let mut f = vec![0.0; n];
    let mut xi = vec![0.0; m];
    let sqrt_dt = libm::sqrt(cfg.dt);
    let steps = libm::ceil(cfg.horizon / cfg.dt) as usize;
    let eval = |p: &crate::expr::Program, x: &[f64], stack: &mut Vec<f64>| p.eval_with(x, stack).unwrap_or(f64::NAN);
    let mut g_prev = eval(&sys.weight, &x, &mut stack);
    let mut integral = 0.0;

    if let Some(r) = record.as_deref_mut() {
        r.push((t, x.clone()));
    }
    let finish = |outcome, t, integral, state, non_finite| PathResult { outcome, time: t, integral, state, non_finite };
    if !x.iter().all(|v| v.is_finite()) {
        return finish(Outcome::Diverged, t, integral, x, true);
    }
    if norm(&x) < cfg.conv_radius {
        return finish(Outcome::Converged, t, integral, x, false);
    }
    for step in 0..steps {
        for (fi, p) in f.iter_mut().zip(&sys.drift) {
            *fi = eval(p, &x, &mut stack);
        }
        for z in xi.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        let mut next = x.clone();
        for i in 0..n {
            let mut noise = 0.0;
            for k in 0..m {
                let p = &sys.diffusion[i * m + k];
                if !p.is_const_zero() {
                    noise += eval(p, &x, &mut stack) * xi[k];
                }
            }
            next[i] += f[i] * cfg.dt + noise * sqrt_dt;
        }
        x = next;
        t = (step + 1) as f64 * cfg.dt;
        if let Some(r) = record.as_deref_mut() {
            r.push((t, x.clone()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return finish(Outcome::Diverged, t, integral, x, true);
        }
        let g = eval(&sys.weight, &x, &mut stack);
        integral += 0.5 * (g_prev + g) * cfg.dt;
        g_prev = g;
        let r = norm(&x);
        if r > cfg.div_radius {
            return finish(Outcome::Diverged, t, integral, x, false);
        }
        if r < cfg.conv_radius {
            return finish(Outcome::Converged, t, integral, x, false);
        }
    }
    finish(Outcome::Timeout, t, integral, x, false)
}

/// Monte Carlo estimate of the Zubov value function at `y`; diverged paths
/// contribute `exp(−∞) = 0`.
pub fn estimate_value(sys: &CompiledSystem, y: &[f64], cfg: &SimConfig, point: u64) -> ValueSample {
    let mut acc = 0.0;
    for path in 0..cfg.value_samples as u64 {
        let r = simulate_path(sys, y, cfg, point, path, None);
        if r.outcome != Outcome::Diverged {
            acc += libm::exp(-r.integral);
        }
    }
    let w_hat = (1.0 - acc / cfg.value_samples as f64).clamp(0.0, 1.0);
    ValueSample { point: y.to_vec(), w_hat }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttractionCount {
    pub converged: usize,
    pub diverged: usize,
    pub timeout: usize,
}

impl AttractionCount {
    pub fn total(&self) -> usize {
        self.converged + self.diverged + self.timeout
    }

    /// Converged fraction; timeouts count as failures.
    pub fn frequency(&self) -> f64 {
        self.converged as f64 / self.total().max(1) as f64
    }
}

/// Count outcomes of `cfg.attraction_samples` paths from `x0`.
pub fn estimate_attraction(sys: &CompiledSystem, x0: &[f64], cfg: &SimConfig, point: u64) -> AttractionCount {
    let mut c = AttractionCount { converged: 0, diverged: 0, timeout: 0 };
    for path in 0..cfg.attraction_samples as u64 {
        match simulate_path(sys, x0, cfg, point, path, None).outcome {
            Outcome::Converged => c.converged += 1,
            Outcome::Diverged => c.diverged += 1,
            Outcome::Timeout => c.timeout += 1,
        }
    }
    c
}

/// Uniform grid with `per_dim` nodes per side (corners included), thinned
/// to `per_dim'` nodes so that the total stays within `cap`.
pub fn grid_points(domain: &Hyperbox, per_dim: usize, cap: usize) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let mut k = per_dim.max(2);
    while k > 2 && k.saturating_pow(n as u32) > cap {
        k -= 1;
    }
    let total = k.pow(n as u32);
    (0..total)
        .map(|idx| {
            let mut r = idx;
            let u: Vec<f64> = (0..n)
                .map(|_| {
                    let t = (r % k) as f64 / (k - 1) as f64;
                    r /= k;
                    t
                })
                .collect();
            domain.from_unit(&u)
        })
        .collect()
}

/// Value estimates on `points`, point index = position in the slice.
pub fn value_dataset(sys: &StochasticSystem, points: &[Vec<f64>], cfg: &SimConfig) -> Vec<ValueSample> {
    let c = sys.compile();
    points.iter().enumerate().map(|(i, y)| estimate_value(&c, y, cfg, i as u64)).collect()
}

/// `sys` with the diffusion removed.
pub fn noise_free(sys: &CompiledSystem) -> CompiledSystem {
    let zero = Expr::zero().compile();
    CompiledSystem {
        diffusion: vec![zero.clone(); sys.diffusion.len()],
        outer: vec![zero; sys.outer.len()],
        ..sys.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizedPoint {
    pub point: Vec<f64>,
    pub count: AttractionCount,
}

/// Grid points (`per_dim` per axis) whose noise-free path diverges, with
/// their attraction counts under noise, highest frequency first. Point `i`
/// of the grid uses stream `i`.
pub fn stabilization_search(sys: &StochasticSystem, cfg: &SimConfig, per_dim: usize) -> Vec<StabilizedPoint> {
    let noisy = sys.compile();
    let quiet = noise_free(&noisy);
    let mut found: Vec<StabilizedPoint> = grid_points(sys.domain(), per_dim, usize::MAX)
        .into_iter()
        .enumerate()
        .filter(|(_, x)| simulate_path(&quiet, x, cfg, 0, 0, None).outcome == Outcome::Diverged)
        .map(|(i, x)| {
            let count = estimate_attraction(&noisy, &x, cfg, i as u64);
            StabilizedPoint { point: x, count }
        })
        .collect();
    found.sort_by(|a, b| b.count.converged.cmp(&a.count.converged));
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};

    fn sys(f: &[&str], sigma: &[&[&str]], n: usize, domain: Hyperbox) -> StochasticSystem {
        StochasticSystem::new(
            f.iter().map(|s| parse(s, n).unwrap()).collect(),
            sigma.iter().map(|r| r.iter().map(|s| parse(s, n).unwrap()).collect()).collect(),
            Expr::mul(Expr::Const(0.1), Expr::squared_norm(n)),
            domain,
        )
        .unwrap()
    }

    fn one_d() -> StochasticSystem {
        sys(&["-x1"], &[&["0"]], 1, Hyperbox::cube(1, 2.0))
    }

    #[test]
    fn deterministic_decay_tracks_exponential() {
        let s = sys(&["-x1", "-x2"], &[&["0"], &["0"]], 2, Hyperbox::cube(2, 2.0));
        let cfg = SimConfig { horizon: 5.0, conv_radius: 1e-9, ..SimConfig::for_domain(s.domain()) };
        let mut rec = Vec::new();
        simulate_path(&s.compile(), &[1.0, 0.0], &cfg, 0, 0, Some(&mut rec));
        assert!(rec.len() > 4000);
        for (t, x) in &rec {
            assert!((x[0] - libm::exp(-t)).abs() <= 5.0 * cfg.dt);
            assert_eq!(x[1], 0.0);
        }
    }

    #[test]
    fn origin_converges_immediately() {
        let s = one_d();
        let c = s.compile();
        let cfg = SimConfig::for_domain(s.domain());
        let r = simulate_path(&c, &[0.0], &cfg, 0, 0, None);
        assert_eq!((r.outcome, r.time), (Outcome::Converged, 0.0));
        assert_eq!(estimate_value(&c, &[0.0], &cfg, 0).w_hat, 0.0);
        assert_eq!(estimate_attraction(&c, &[0.0], &SimConfig { attraction_samples: 50, ..cfg }, 0).frequency(), 1.0);
    }

    #[test]
    fn one_dimensional_value_matches_closed_form() {
        let s = one_d();
        let c = s.compile();
        let cfg = SimConfig { value_samples: 1, ..SimConfig::for_domain(s.domain()) };
        let expect = 1.0 - libm::exp(-0.05);
        let w = estimate_value(&c, &[1.0], &cfg, 0).w_hat;
        assert!((w - expect).abs() < 2e-3, "{w} vs {expect}");
        let half = SimConfig { dt: cfg.dt / 2.0, ..cfg.clone() };
        let w2 = estimate_value(&c, &[1.0], &half, 0).w_hat;
        assert!((w - w2).abs() <= 1e-3);
    }

    #[test]
    fn diverging_paths_give_value_one() {
        let s = sys(&["x1"], &[&["0"]], 1, Hyperbox::cube(1, 1.0));
        let c = s.compile();
        let cfg = SimConfig { value_samples: 5, ..SimConfig::for_domain(s.domain()) };
        assert_eq!(estimate_value(&c, &[0.5], &cfg, 0).w_hat, 1.0);
    }

    #[test]
    fn van_der_pol_outside_limit_cycle_diverges_without_noise() {
        let s = sys(&["-x2", "x1 - (1 - x1^2)*x2"], &[&["0"], &["0"]], 2, Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]));
        let cfg = SimConfig::for_domain(s.domain());
        let r = simulate_path(&s.compile(), &[2.2, 0.0], &cfg, 0, 0, None);
        assert_eq!(r.outcome, Outcome::Diverged);
        let r = simulate_path(&s.compile(), &[0.5, 0.0], &cfg, 0, 0, None);
        assert_eq!(r.outcome, Outcome::Converged);
    }

    #[test]
    fn estimates_are_reproducible() {
        let s = sys(&["-x2", "x1 - (1 - x1^2)*x2"], &[&["0.5*x1", "0"], &["0", "0.5*x2"]], 2, Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]));
        let c = s.compile();
        let cfg = SimConfig { value_samples: 20, attraction_samples: 20, seed: 11, ..SimConfig::for_domain(s.domain()) };
        let a = estimate_value(&c, &[1.0, -1.0], &cfg, 3);
        let b = estimate_value(&c, &[1.0, -1.0], &cfg, 3);
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.w_hat));
        assert_eq!(estimate_attraction(&c, &[1.5, 1.0], &cfg, 4), estimate_attraction(&c, &[1.5, 1.0], &cfg, 4));
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        simulate_path(&c, &[1.0, 1.0], &cfg, 2, 5, Some(&mut r1));
        simulate_path(&c, &[1.0, 1.0], &cfg, 2, 5, Some(&mut r2));
        assert_eq!(r1, r2);
        let mut r3 = Vec::new();
        simulate_path(&c, &[1.0, 1.0], &cfg, 2, 6, Some(&mut r3));
        assert_ne!(r1, r3);
    }

    #[test]
    fn config_validation() {
        let d = Hyperbox::cube(2, 1.0);
        assert!(SimConfig::for_domain(&d).validate(&d).is_ok());
        assert!(SimConfig { dt: 0.0, ..SimConfig::for_domain(&d) }.validate(&d).is_err());
        assert!(SimConfig { div_radius: 0.5, ..SimConfig::for_domain(&d) }.validate(&d).is_err());
    }

    #[test]
    fn grid_is_capped() {
        let d = Hyperbox::cube(2, 1.0);
        assert_eq!(grid_points(&d, 21, 2000).len(), 441);
        let d3 = Hyperbox::cube(3, 1.0);
        assert!(grid_points(&d3, 21, 2000).len() <= 2000);
        let g = grid_points(&Hyperbox::cube(1, 1.0), 3, 10);
        assert_eq!(g, vec![vec![-1.0], vec![0.0], vec![1.0]]);
    }
}
