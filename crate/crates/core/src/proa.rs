//! Composition of the quadratic and neural certificates and the resulting
//! lower bound on the probability of attraction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linlyap::QuadraticCertificate;
use crate::net::NeuralFunction;
use crate::system::StochasticSystem;
use crate::verify::{
    self, Constraint, ExprFn, LevelOptions, NetGenerator, NetValue, VerifyOptions, VerifyOutcome,
};

/// Constants `β₁ < β₂`, `c₁ < c₂`, margin `ζ`, and the four verifier
/// outcomes the bound rests on.
#[derive(Clone, Debug)]
pub struct CompositeCertificate {
    pub quadratic: QuadraticCertificate,
    pub net: NeuralFunction,
    pub beta1: f64,
    pub beta2: f64,
    pub c1: f64,
    pub zeta: f64,
    /// `LW ≤ −ζ` on `{β₁ ≤ W ≤ β₂}`.
    pub neural_outcome: VerifyOutcome,
    /// `{W ≤ β₁} ⊆ {V ≤ c₁}`.
    pub inner_inclusion: VerifyOutcome,
    /// `{V ≤ c₂} ⊆ {W ≤ β₂}`.
    pub outer_inclusion: VerifyOutcome,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ProaError {
    #[error("the certificate is incomplete: {0}")]
    Incomplete(String),
}

impl CompositeCertificate {
    pub fn c2(&self) -> f64 {
        self.quadratic.c2
    }

    pub fn w(&self, x: &[f64]) -> f64 {
        self.net.eval(x)
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        self.quadratic.value(x)
    }

    /// Why the certificate is not complete, if it is not.
    pub fn incompleteness(&self) -> Option<String> {
        let c2 = self.c2();
        if !(0.0 < self.beta1 && self.beta1 < self.beta2) {
            return Some(format!("need 0 < beta1 < beta2, got {} and {}", self.beta1, self.beta2));
        }
        if !(0.0 < self.c1 && self.c1 < c2) {
            return Some(format!("need 0 < c1 < c2, got {} and {}", self.c1, c2));
        }
        let checks = [
            ("local quadratic condition", &self.quadratic.local_outcome),
            ("extended quadratic condition", &self.quadratic.extended_outcome),
            ("neural condition", &self.neural_outcome),
            ("inclusion W^beta1 in V^c1", &self.inner_inclusion),
            ("inclusion V^c2 in W^beta2", &self.outer_inclusion),
        ];
        checks.iter().find(|(_, o)| !o.is_certified()).map(|(name, o)| format!("{name}: {}", o.status))
    }

    pub fn is_complete(&self) -> bool {
        self.incompleteness().is_none()
    }

    /// Lower bound on the probability that the path from `x0` converges
    /// to the origin.
    pub fn p_lower_bound(&self, x0: &[f64]) -> Result<f64, ProaError> {
        if let Some(why) = self.incompleteness() {
            return Err(ProaError::Incomplete(why));
        }
        Ok(attraction_bound(self.w(x0), self.v(x0), self.beta1, self.beta2, self.c1, self.c2()))
    }

    /// `p` at cell centres of an `nx × ny` grid over the first two
    /// coordinates of `domain` (other coordinates at 0). Rows run from the
    /// top (largest `x2`) down, columns left to right. For `n = 1`, `ny`
    /// must be 1.
    pub fn heatmap(&self, domain: &crate::expr::Hyperbox, nx: usize, ny: usize) -> Result<Heatmap, ProaError> {
        if let Some(why) = self.incompleteness() {
            return Err(ProaError::Incomplete(why));
        }
        let n = domain.dim();
        let ny = if n == 1 { 1 } else { ny };
        let s0 = domain.side(0);
        let mut cells = Vec::with_capacity(nx * ny);
        for row in 0..ny {
            for col in 0..nx {
                let mut x = alloc::vec![0.0; n];
                x[0] = s0.lo() + s0.width() * (col as f64 + 0.5) / nx as f64;
                if n > 1 {
                    let s1 = domain.side(1);
                    x[1] = s1.hi() - s1.width() * (row as f64 + 0.5) / ny as f64;
                }
                let p = attraction_bound(self.w(&x), self.v(&x), self.beta1, self.beta2, self.c1, self.c2());
                cells.push((x, p));
            }
        }
        Ok(Heatmap { nx, ny, cells })
    }
}

/// Row-major grid of `(x, p(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<(Vec<f64>, f64)>,
}

/// The bound as a function of `W(x₀)` and `V(x₀)`:
///
/// - `W < β₁`: `1 − V/c₂`
/// - `β₁ ≤ W ≤ β₂`: `max((1 − W/β₂)(1 − c₁/c₂), 1 − V/c₂)`
/// - `W > β₂`: `0`
///
/// clamped to `[0, 1]`.
pub fn attraction_bound(w: f64, v: f64, beta1: f64, beta2: f64, c1: f64, c2: f64) -> f64 {
    let quad = 1.0 - v / c2;
    let p = if w < beta1 {
        quad
    } else if w <= beta2 {
        ((1.0 - w / beta2) * (1.0 - c1 / c2)).max(quad)
    } else {
        0.0
    };
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompositeSettings {
    pub verify: VerifyOptions,
    pub level: LevelOptions,
    pub zeta_rel: f64,
    pub zeta_floor: f64,
    /// Smallest `β₁` probed, relative to `β₂`.
    pub beta1_floor_rel: f64,
    /// Lower level of the `β₂` search, as a fraction of the certified
    /// minimum of `W` outside `V^{c₂}`.
    pub seed_fraction: f64,
}

impl Default for CompositeSettings {
    fn default() -> Self {
        CompositeSettings {
            verify: VerifyOptions::default(),
            level: LevelOptions::default(),
            zeta_rel: 1e-4,
            zeta_floor: 1e-6,
            beta1_floor_rel: 1e-3,
            seed_fraction: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Seed,
    Beta2,
    Beta1,
    C1,
    OuterInclusion,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Seed => "lower level seed",
            Stage::Beta2 => "beta2 search",
            Stage::Beta1 => "beta1 search",
            Stage::C1 => "c1 search",
            Stage::OuterInclusion => "inclusion V^c2 in W^beta2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{}: {detail}", .stage.name())]
pub struct CompositeError {
    pub stage: Stage,
    pub detail: String,
    pub outcome: Option<VerifyOutcome>,
    /// Constants found before the failing stage: `(name, value)`.
    pub partial: Vec<(&'static str, f64)>,
}

/// Search the neural constants and check both inclusions.
pub fn certify_composite(
    sys: &StochasticSystem,
    quadratic: QuadraticCertificate,
    net: NeuralFunction,
    settings: &CompositeSettings,
) -> Result<CompositeCertificate, CompositeError> {
    let domain = sys.domain();
    let opts = &settings.verify;
    let v = ExprFn::new(quadratic.v_expr(), sys.n());
    let w = NetValue::new(&net);
    let lw = NetGenerator::new(&net, sys);
    let c2 = quadratic.c2;
    let mut partial = Vec::new();
    let fail = |stage, detail: String, outcome, partial: &Vec<(&'static str, f64)>| CompositeError {
        stage,
        detail,
        outcome,
        partial: partial.clone(),
    };

    let zeta = verify::default_zeta(&lw, domain, settings.zeta_rel, settings.zeta_floor);
    partial.push(("zeta", zeta));
    let cap = verify::sublevel_cap(&w, domain, opts);
    partial.push(("cap", cap));

    // W^{seed} lies strictly inside V^{c2}: outside it W ≥ seed / seed_fraction
    let outside = [Constraint::at_least(&v, c2)];
    let seed = settings.seed_fraction * verify::bound_min(&w, &outside, domain, opts, 1e-2).lower;
    if !(seed > 0.0 && seed < cap) {
        return Err(fail(Stage::Seed, format!("no usable lower level (seed {seed}, cap {cap})"), None, &partial));
    }
    partial.push(("beta1_seed", seed));

    let b2 = verify::find_largest_level(&lw, &w, Some(seed), -zeta, cap, domain, opts, &settings.level)
        .map_err(|e| fail(Stage::Beta2, format!("{e}"), None, &partial))?;
    let beta2 = b2.level;
    partial.push(("beta2", beta2));

    let floor = (settings.beta1_floor_rel * beta2).min(seed);
    let b1 = verify::find_smallest_lower_level(&lw, &w, beta2, floor, -zeta, domain, opts, &settings.level)
        .map_err(|e| fail(Stage::Beta1, format!("{e}"), None, &partial))?;
    let beta1 = b1.level;
    partial.push(("beta1", beta1));

    let (c1, inner) = verify::find_smallest_c1(&v, &w, beta1, domain, opts).map_err(|e| {
        let outcome = match &e {
            verify::InclusionError::NotCertified { outcome, .. } => Some(outcome.clone()),
            _ => None,
        };
        fail(Stage::C1, format!("{e}"), outcome, &partial)
    })?;
    partial.push(("c1", c1));
    if c1 >= c2 {
        return Err(fail(Stage::C1, format!("c1 = {c1} is not below c2 = {c2}"), Some(inner), &partial));
    }

    // any level below a certified c2 is certified too, so shrink c2 when
    // V^{c2} touches the part of the domain where W ≈ β2
    let mut quadratic = quadratic;
    let outer = verify::check_inclusion(&v, c2, &w, beta2, domain, opts);
    let outer = if outer.is_certified() {
        outer
    } else {
        let shrunk = verify::search_largest(c1, c2, &settings.level, |c| verify::check_inclusion(&v, c, &w, beta2, domain, opts))
            .map_err(|_| fail(Stage::OuterInclusion, format!("{}", outer.status), Some(outer.clone()), &partial))?;
        quadratic.c2 = shrunk.level;
        partial.push(("c2", shrunk.level));
        shrunk.outcome
    };

    Ok(CompositeCertificate {
        quadratic,
        net: net.clone(),
        beta1,
        beta2,
        c1,
        zeta,
        neural_outcome: b1.outcome,
        inner_inclusion: inner,
        outer_inclusion: outer,
    })
}
