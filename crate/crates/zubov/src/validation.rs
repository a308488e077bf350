//! Monte Carlo validation of the attraction-probability bound.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use zubov_core::expr::Hyperbox;
use zubov_core::sim::{estimate_attraction, grid_points, AttractionCount, SimConfig};
use zubov_core::system::CompiledSystem;
use zubov_core::CompositeCertificate;

/// Two-sided Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    assert!(k <= n && n > 0, "need 0 ≤ k ≤ n and n ≥ 1");
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 { 0.0 } else { Beta::new(kf, nf - kf + 1.0).expect("valid shape").inverse_cdf(alpha / 2.0) };
    let upper = if k == n { 1.0 } else { Beta::new(kf + 1.0, nf - kf).expect("valid shape").inverse_cdf(1.0 - alpha / 2.0) };
    (lower, upper)
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct PointCheck {
    pub x: Vec<f64>,
    pub p: f64,
    pub converged: usize,
    pub diverged: usize,
    pub timeout: usize,
    pub frequency: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// `frequency − p`.
    pub margin: f64,
    /// The upper confidence limit lies below `p`.
    pub red_flag: bool,
    /// `frequency ≥ p − slack`.
    pub within_slack: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct ValidationReport {
    pub confidence: f64,
    pub slack: f64,
    pub paths_per_point: usize,
    pub points: Vec<PointCheck>,
    pub red_flags: usize,
    pub slack_failures: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.red_flags == 0 && self.slack_failures == 0
    }
}

pub fn check_point(x: &[f64], p: f64, count: &AttractionCount, confidence: f64, slack: f64) -> PointCheck {
    let freq = count.frequency();
    let (lo, hi) = clopper_pearson(count.converged, count.total(), confidence);
    PointCheck {
        x: x.to_vec(),
        p,
        converged: count.converged,
        diverged: count.diverged,
        timeout: count.timeout,
        frequency: freq,
        ci_lower: lo,
        ci_upper: hi,
        margin: freq - p,
        red_flag: hi < p,
        within_slack: freq >= p - slack,
    }
}

/// Compare empirical attraction frequencies with `p(x)` at each point.
/// Point `i` uses simulation stream `i`.
pub fn validate_bound(
    cert: &CompositeCertificate,
    sys: &CompiledSystem,
    cfg: &SimConfig,
    points: &[Vec<f64>],
    confidence: f64,
    slack: f64,
    mut progress: impl FnMut(&PointCheck),
) -> Result<ValidationReport, zubov_core::proa::ProaError> {
    let mut checks = Vec::with_capacity(points.len());
    for (i, x) in points.iter().enumerate() {
        let p = cert.p_lower_bound(x)?;
        let count = estimate_attraction(sys, x, cfg, i as u64);
        let c = check_point(x, p, &count, confidence, slack);
        progress(&c);
        checks.push(c);
    }
    Ok(ValidationReport {
        confidence,
        slack,
        paths_per_point: cfg.attraction_samples,
        red_flags: checks.iter().filter(|c| c.red_flag).count(),
        slack_failures: checks.iter().filter(|c| !c.within_slack).count(),
        points: checks,
    })
}

/// `count` points of a regular grid lying in `{W ≤ β₂}` minus the origin,
/// spread evenly over the qualifying grid points.
pub fn points_in_region(cert: &CompositeCertificate, domain: &Hyperbox, count: usize) -> Vec<Vec<f64>> {
    let candidates: Vec<Vec<f64>> = grid_points(domain, 41, 100_000)
        .into_iter()
        .filter(|x| x.iter().any(|v| v.abs() > 1e-12) && cert.w(x) <= cert.beta2)
        .collect();
    if candidates.len() <= count {
        return candidates;
    }
    (0..count).map(|k| candidates[(2 * k + 1) * candidates.len() / (2 * count)].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_reference_values() {
        // 7 of 20 at 95%: Beta(7, 14) and Beta(8, 13) quantiles
        let (lo, hi) = clopper_pearson(7, 20, 0.95);
        assert!((lo - 0.1539092).abs() < 1e-6, "{lo}");
        assert!((hi - 0.5921885).abs() < 1e-6, "{hi}");
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(10, 10, 0.95);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn interval_width_shrinks_like_inverse_sqrt() {
        let w = |n: usize| {
            let (lo, hi) = clopper_pearson(n / 2, n, 0.99);
            hi - lo
        };
        let ratio = w(400) / w(1600);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn red_flag_requires_upper_limit_below_bound() {
        let count = AttractionCount { converged: 900, diverged: 100, timeout: 0 };
        let ok = check_point(&[0.0], 0.9, &count, 0.99, 0.03);
        assert!(!ok.red_flag && ok.within_slack);
        let bad = check_point(&[0.0], 0.97, &count, 0.99, 0.03);
        assert!(bad.red_flag && !bad.within_slack);
    }
}
