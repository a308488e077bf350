//! Run configuration: one TOML document drives every subcommand.
//!
//! ```toml
//! seed = 0
//!
//! [system]
//! f = ["-x2", "x1 - (1 - x1^2)*x2"]
//! sigma = [["0.5*x1", "0"], ["0", "0.5*x2"]]
//! g = "0.1*(x1^2 + x2^2)"            # optional, defaults to 0.1·|x|²
//! domain = [[-2.5, 2.5], [-3.5, 3.5]]
//! weight_radius = 0.035              # optional, inner radius of the g check
//!
//! [sim]      # dt, horizon, conv_radius, div_radius, value_samples,
//!            # attraction_samples, grid_per_dim, grid_cap
//! [train]    # hidden, collocation, epochs, learning_rate,
//!            # final_learning_rate, residual_weight, boundary_weight,
//!            # data_weight, checkpoint_every
//! [verify]   # max_boxes, min_width_rel, level_rel_tol, max_probes,
//!            # epsilon_rel, zeta_rel, zeta_floor, beta1_floor_rel,
//!            # seed_fraction, q
//! [validate] # points, slack, confidence
//! [heatmap]  # nx, ny
//! [output]   # dir
//! ```
//!
//! Every section and key other than `system.f`, `system.sigma` and
//! `system.domain` is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zubov_core::expr::parse;
use zubov_core::linlyap::{Matrix, QuadSettings};
use zubov_core::net::{LossWeights, TrainConfig};
use zubov_core::proa::CompositeSettings;
use zubov_core::sim::SimConfig;
use zubov_core::verify::{LevelOptions, VerifyOptions};
use zubov_core::{Expr, Hyperbox, StochasticSystem};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid expression in {what}: {source}")]
    Expr { what: String, source: zubov_core::ParseError },
    #[error("invalid system: {0}")]
    System(#[from] zubov_core::system::SystemError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSpec,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub heatmap: HeatmapSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub f: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub g: Option<String>,
    pub domain: Vec<[f64; 2]>,
    pub weight_radius: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub conv_radius: Option<f64>,
    pub div_radius: Option<f64>,
    pub value_samples: Option<usize>,
    pub attraction_samples: Option<usize>,
    pub grid_per_dim: Option<usize>,
    pub grid_cap: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Option<Vec<usize>>,
    pub collocation: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub final_learning_rate: Option<f64>,
    pub residual_weight: Option<f64>,
    pub boundary_weight: Option<f64>,
    pub data_weight: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub max_boxes: Option<usize>,
    pub min_width_rel: Option<f64>,
    pub level_rel_tol: Option<f64>,
    pub max_probes: Option<usize>,
    pub epsilon_rel: Option<f64>,
    pub zeta_rel: Option<f64>,
    pub zeta_floor: Option<f64>,
    pub beta1_floor_rel: Option<f64>,
    pub seed_fraction: Option<f64>,
    /// Weight matrix of the stochastic Lyapunov equation (identity if absent).
    pub q: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub points: Option<usize>,
    pub slack: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSection {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Command-line overrides. Only budgets and seeds may be overridden.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_boxes: Option<usize>,
    pub epochs: Option<usize>,
    pub attraction_samples: Option<usize>,
    pub value_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidateSettings {
    pub points: usize,
    pub slack: f64,
    pub confidence: f64,
}

/// A config with defaults filled in and the system built.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub raw: RunConfig,
    pub system: StochasticSystem,
    pub sim: SimConfig,
    pub grid_per_dim: usize,
    pub grid_cap: usize,
    pub train: TrainConfig,
    pub quad: QuadSettings,
    pub composite: CompositeSettings,
    pub validate: ValidateSettings,
    pub heatmap: (usize, usize),
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = o.max_boxes {
            self.verify.max_boxes = Some(b);
        }
        if let Some(e) = o.epochs {
            self.train.epochs = Some(e);
        }
        if let Some(a) = o.attraction_samples {
            self.sim.attraction_samples = Some(a);
        }
        if let Some(v) = o.value_samples {
            self.sim.value_samples = Some(v);
        }
    }

    pub fn build_system(&self) -> Result<StochasticSystem, ConfigError> {
        let s = &self.system;
        let n = s.f.len();
        if n == 0 {
            return Err(ConfigError::Invalid("system.f must have at least one component".into()));
        }
        let expr = |what: String, text: &str| parse(text, n).map_err(|source| ConfigError::Expr { what, source });
        let drift = s.f.iter().enumerate().map(|(i, t)| expr(format!("f[{}]", i + 1), t)).collect::<Result<Vec<_>, _>>()?;
        let mut diffusion = Vec::with_capacity(s.sigma.len());
        for (i, row) in s.sigma.iter().enumerate() {
            let r = row
                .iter()
                .enumerate()
                .map(|(j, t)| expr(format!("sigma[{}][{}]", i + 1, j + 1), t))
                .collect::<Result<Vec<_>, _>>()?;
            diffusion.push(r);
        }
        let weight = match &s.g {
            Some(t) => expr("g".into(), t)?,
            None => Expr::mul(Expr::Const(0.1), Expr::squared_norm(n)),
        };
        if s.domain.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(ConfigError::Invalid("every domain side needs finite lo < hi".into()));
        }
        let bounds: Vec<(f64, f64)> = s.domain.iter().map(|[lo, hi]| (*lo, *hi)).collect();
        let domain = Hyperbox::from_bounds(&bounds);
        let sys = match s.weight_radius {
            Some(d) if d > 0.0 => StochasticSystem::with_weight_radius(drift, diffusion, weight, domain, d)?,
            Some(_) => return Err(ConfigError::Invalid("system.weight_radius must be positive".into())),
            None => StochasticSystem::new(drift, diffusion, weight, domain)?,
        };
        Ok(sys)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let system = self.build_system()?;
        let n = system.n();
        let invalid = |m: &str| ConfigError::Invalid(m.into());

        let d = SimConfig::for_domain(system.domain());
        let s = &self.sim;
        let sim = SimConfig {
            dt: s.dt.unwrap_or(d.dt),
            horizon: s.horizon.unwrap_or(d.horizon),
            conv_radius: s.conv_radius.unwrap_or(d.conv_radius),
            div_radius: s.div_radius.unwrap_or(d.div_radius),
            value_samples: s.value_samples.unwrap_or(d.value_samples),
            attraction_samples: s.attraction_samples.unwrap_or(d.attraction_samples),
            seed: self.seed,
        };
        sim.validate(system.domain()).map_err(|e| ConfigError::Invalid(format!("[sim] {e}")))?;

        let d = TrainConfig::default();
        let t = &self.train;
        let lr = t.learning_rate.unwrap_or(d.learning_rate);
        let train = TrainConfig {
            hidden: t.hidden.clone().unwrap_or(d.hidden),
            collocation: t.collocation.unwrap_or(d.collocation),
            epochs: t.epochs.unwrap_or(d.epochs),
            learning_rate: lr,
            final_learning_rate: t.final_learning_rate.unwrap_or(lr),
            weights: LossWeights {
                residual: t.residual_weight.unwrap_or(d.weights.residual),
                boundary: t.boundary_weight.unwrap_or(d.weights.boundary),
                data: t.data_weight.unwrap_or(d.weights.data),
            },
            seed: self.seed,
            checkpoint_every: t.checkpoint_every.unwrap_or(d.checkpoint_every),
        };
        if train.hidden.is_empty() || train.hidden.contains(&0) {
            return Err(invalid("[train] hidden needs at least one non-empty layer"));
        }
        if train.collocation == 0 || train.epochs == 0 {
            return Err(invalid("[train] collocation and epochs must be at least 1"));
        }
        if !(train.learning_rate > 0.0 && train.final_learning_rate > 0.0) {
            return Err(invalid("[train] learning rates must be positive"));
        }
        let w = &train.weights;
        if !(w.residual >= 0.0 && w.boundary >= 0.0 && w.data >= 0.0) {
            return Err(invalid("[train] loss weights must be non-negative"));
        }

        let v = &self.verify;
        let dv = VerifyOptions::default();
        let dl = LevelOptions::default();
        let dq = QuadSettings::default();
        let dc = CompositeSettings::default();
        let verify = VerifyOptions {
            max_boxes: v.max_boxes.unwrap_or(dv.max_boxes),
            min_width_rel: v.min_width_rel.unwrap_or(dv.min_width_rel),
        };
        let level = LevelOptions { rel_tol: v.level_rel_tol.unwrap_or(dl.rel_tol), max_probes: v.max_probes.unwrap_or(dl.max_probes) };
        if verify.max_boxes == 0 || !(verify.min_width_rel > 0.0 && verify.min_width_rel < 1.0) {
            return Err(invalid("[verify] need max_boxes ≥ 1 and 0 < min_width_rel < 1"));
        }
        if !(level.rel_tol > 0.0 && level.rel_tol < 1.0) || level.max_probes == 0 {
            return Err(invalid("[verify] need 0 < level_rel_tol < 1 and max_probes ≥ 1"));
        }
        let zeta_rel = v.zeta_rel.unwrap_or(dq.zeta_rel);
        let zeta_floor = v.zeta_floor.unwrap_or(dq.zeta_floor);
        let epsilon_rel = v.epsilon_rel.unwrap_or(dq.epsilon_rel);
        let beta1_floor_rel = v.beta1_floor_rel.unwrap_or(dc.beta1_floor_rel);
        if !(zeta_rel >= 0.0 && zeta_floor > 0.0) {
            return Err(invalid("[verify] need zeta_rel ≥ 0 and zeta_floor > 0"));
        }
        let seed_fraction = v.seed_fraction.unwrap_or(dc.seed_fraction);
        if [epsilon_rel, beta1_floor_rel, seed_fraction].iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(invalid("[verify] epsilon_rel, beta1_floor_rel and seed_fraction must lie in (0, 1)"));
        }
        let q = match &v.q {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(invalid("[verify] q must be n×n"));
                }
                Some(Matrix::from_vec(n, n, rows.iter().flatten().copied().collect()))
            }
            None => None,
        };
        let quad = QuadSettings { q, epsilon_rel, zeta_rel, zeta_floor, verify, level };
        let composite = CompositeSettings { verify, level, zeta_rel, zeta_floor, beta1_floor_rel, seed_fraction };

        let va = &self.validate;
        let validate = ValidateSettings {
            points: va.points.unwrap_or(20),
            slack: va.slack.unwrap_or(0.03),
            confidence: va.confidence.unwrap_or(0.99),
        };
        if validate.points == 0 || !(validate.slack >= 0.0) || !(validate.confidence > 0.0 && validate.confidence < 1.0) {
            return Err(invalid("[validate] need points ≥ 1, slack ≥ 0 and 0 < confidence < 1"));
        }
        let heatmap = (self.heatmap.nx.unwrap_or(100), self.heatmap.ny.unwrap_or(100));
        if heatmap.0 == 0 || heatmap.1 == 0 {
            return Err(invalid("[heatmap] nx and ny must be at least 1"));
        }
        let grid_per_dim = self.sim.grid_per_dim.unwrap_or(21);
        let grid_cap = self.sim.grid_cap.unwrap_or(2000);
        if grid_cap == 0 {
            return Err(invalid("[sim] grid_cap must be at least 1"));
        }

        Ok(Resolved {
            raw: self.clone(),
            system,
            sim,
            grid_per_dim,
            grid_cap,
            train,
            quad,
            composite,
            validate,
            heatmap,
            out_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}
