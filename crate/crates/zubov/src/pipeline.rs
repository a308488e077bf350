//! Subcommand logic: each stage reads and writes files under the output
//! directory and reports failures with the exit code they map to.

use std::path::{Path, PathBuf};
use std::time::Instant;

use zubov_core::linlyap::{certify_quadratic, local_certificate_expressions, LinAlgError, QuadError, QuadraticCertificate};
use zubov_core::net::{self, TrainError, Training};
use zubov_core::proa::{certify_composite, CompositeError, Heatmap};
use zubov_core::sim::{self, AttractionCount, SimConfig};
use zubov_core::verify::{
    export_smt, Condition, Constraint, ExprFn, LevelError, NetGenerator, NetValue, SmtError,
};
use zubov_core::{CompositeCertificate, NeuralFunction, ValueSample, VerifyOutcome, VerifyStatus};

use crate::config::{ConfigError, Resolved};
use crate::formats::{self, CertificateReport, FormatError, Metadata, QuadReport};
use crate::validation::{self, ValidationReport};

pub const QUAD_FILE: &str = "quadratic.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const CERTIFICATE_FILE: &str = "certificate.json";

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Unknown = 3,
    Falsified = 4,
    Numeric = 5,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct Failure {
    pub stage: &'static str,
    pub message: String,
    pub code: ExitCode,
}

impl Failure {
    pub fn new(stage: &'static str, code: ExitCode, message: impl Into<String>) -> Self {
        Failure { stage, message: message.into(), code }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new("config", ExitCode::Config, e.to_string())
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::new("files", ExitCode::Config, e.to_string())
    }
}

/// Exit code for a verifier outcome that did not certify.
pub fn outcome_code(o: &VerifyOutcome) -> ExitCode {
    match o.status {
        VerifyStatus::Certified => ExitCode::Success,
        VerifyStatus::Falsified { .. } => ExitCode::Falsified,
        VerifyStatus::Unknown { .. } => ExitCode::Unknown,
    }
}

fn level_code(e: &LevelError) -> ExitCode {
    match e {
        LevelError::EmptyRange { .. } => ExitCode::Numeric,
        LevelError::NoPassingProbe { outcome, .. } => outcome_code(outcome),
    }
}

pub fn quad_code(e: &QuadError) -> ExitCode {
    match e {
        QuadError::LocalLevel(l) | QuadError::ExtendedLevel(l) => level_code(l),
        QuadError::Lyapunov(LinAlgError::Shape) => ExitCode::Config,
        _ => ExitCode::Numeric,
    }
}

pub fn composite_code(e: &CompositeError) -> ExitCode {
    e.outcome.as_ref().map_or(ExitCode::Numeric, outcome_code)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new("files", ExitCode::Config, format!("{}: {e}", dir.display())))
}

pub fn quad(cfg: &Resolved) -> Result<QuadraticCertificate, Failure> {
    certify_quadratic(&cfg.system, &cfg.quad).map_err(|e| Failure::new("quad", quad_code(&e), e.to_string()))
}

/// Runs the quadratic certification and writes its report.
pub fn cmd_quad(cfg: &Resolved) -> Result<QuadraticCertificate, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let t = Instant::now();
    let cert = quad(cfg)?;
    let report = QuadReport { quadratic: (&cert).into(), metadata: Metadata::now(t.elapsed()) };
    formats::write_json(&cfg.out_dir.join(QUAD_FILE), &report)?;
    Ok(cert)
}

pub fn load_quad(dir: &Path) -> Result<QuadraticCertificate, Failure> {
    let path = dir.join(QUAD_FILE);
    let report: QuadReport = formats::read_json(&path)?;
    report
        .quadratic
        .to_certificate()
        .map_err(|e| Failure::new("files", ExitCode::Config, format!("{}: {e}", path.display())))
}

/// Monte Carlo value estimates on the configured grid (empty when
/// `grid_per_dim` is 0).
pub fn dataset(cfg: &Resolved) -> Vec<ValueSample> {
    if cfg.grid_per_dim == 0 {
        return Vec::new();
    }
    let points = sim::grid_points(cfg.system.domain(), cfg.grid_per_dim, cfg.grid_cap);
    sim::value_dataset(&cfg.system, &points, &cfg.sim)
}

pub struct TrainOutput {
    pub training: Training,
    pub data: Vec<ValueSample>,
    /// Set when training stopped at a non-finite loss; `training` then
    /// holds the last good state.
    pub diverged_at: Option<usize>,
}

pub fn train(cfg: &Resolved, data: &[ValueSample], on_epoch: &mut dyn FnMut(&net::EpochStats)) -> Result<(Training, Option<usize>), Failure> {
    match net::train(&cfg.system, data, &cfg.train, on_epoch) {
        Ok(t) => Ok((t, None)),
        Err(TrainError::NonFinite { epoch, last_good }) => Ok((*last_good, Some(epoch))),
        Err(TrainError::Config(m)) => Err(Failure::new("train", ExitCode::Config, m)),
        Err(e) => Err(Failure::new("train", ExitCode::Numeric, e.to_string())),
    }
}

/// Generates the dataset, trains, and writes dataset, checkpoint and loss
/// history. A divergence still writes the last good checkpoint before
/// failing.
pub fn cmd_train(cfg: &Resolved, on_epoch: &mut dyn FnMut(&net::EpochStats)) -> Result<TrainOutput, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let data = dataset(cfg);
    formats::write_value_dataset(&cfg.out_dir.join(DATASET_FILE), &data, cfg.system.n())?;
    let (training, diverged_at) = train(cfg, &data, on_epoch)?;
    formats::save_checkpoint(&cfg.out_dir.join(CHECKPOINT_FILE), &training.net)?;
    formats::write_loss_history(&cfg.out_dir.join(LOSS_FILE), &training.history)?;
    if !training.checkpoints.is_empty() {
        let dir = cfg.out_dir.join("checkpoints");
        ensure_dir(&dir)?;
        for (epoch, net) in &training.checkpoints {
            formats::save_checkpoint(&dir.join(format!("epoch_{epoch:06}.json")), net)?;
        }
    }
    if let Some(epoch) = diverged_at {
        return Err(Failure::new(
            "train",
            ExitCode::Numeric,
            format!("non-finite loss at epoch {epoch}; last good checkpoint written"),
        ));
    }
    Ok(TrainOutput { training, data, diverged_at })
}

pub fn certify(cfg: &Resolved, quadratic: QuadraticCertificate, net: NeuralFunction) -> Result<CompositeCertificate, CompositeError> {
    certify_composite(&cfg.system, quadratic, net, &cfg.composite)
}

/// Reads the quadratic report and a checkpoint, searches the neural
/// constants and writes the certificate report (complete or partial).
pub fn cmd_certify(cfg: &Resolved, checkpoint: Option<&Path>) -> Result<CompositeCertificate, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let quadratic = load_quad(&cfg.out_dir)?;
    let ck = checkpoint.map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let net = formats::load_checkpoint(&ck)?;
    if net.input_dim() != cfg.system.n() {
        return Err(Failure::new("certify", ExitCode::Config, "checkpoint input size differs from the state dimension"));
    }
    let ck_ref = relative_to(&ck, &cfg.out_dir);
    let t = Instant::now();
    let path = cfg.out_dir.join(CERTIFICATE_FILE);
    match certify(cfg, quadratic.clone(), net) {
        Ok(cert) => {
            formats::write_json(&path, &CertificateReport::complete(&cert, &ck_ref, Metadata::now(t.elapsed())))?;
            if let Some(why) = cert.incompleteness() {
                let code = [&cert.quadratic.local_outcome, &cert.quadratic.extended_outcome]
                    .into_iter()
                    .find(|o| !o.is_certified())
                    .map_or(ExitCode::Numeric, outcome_code);
                return Err(Failure::new("certify", code, why));
            }
            Ok(cert)
        }
        Err(e) => {
            formats::write_json(&path, &CertificateReport::failed(&quadratic, &e, &ck_ref, Metadata::now(t.elapsed())))?;
            Err(Failure::new("certify", composite_code(&e), e.to_string()))
        }
    }
}

fn relative_to(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

/// Loads `certificate.json` and its checkpoint; refuses incomplete ones.
pub fn load_certificate(dir: &Path, certificate: Option<&Path>) -> Result<CompositeCertificate, Failure> {
    let path = certificate.map_or_else(|| dir.join(CERTIFICATE_FILE), Path::to_path_buf);
    let report: CertificateReport = formats::read_json(&path)?;
    if let Some(f) = &report.failure {
        let code = f
            .outcome
            .as_ref()
            .and_then(|o| o.to_outcome().ok())
            .map_or(ExitCode::Numeric, |o| outcome_code(&o));
        return Err(Failure::new("certificate", code, format!("incomplete certificate: {} failed: {}", f.stage, f.detail)));
    }
    let base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
    let net = formats::load_checkpoint(&base.join(&report.checkpoint))?;
    let cert = report
        .to_certificate(net)
        .map_err(|e| Failure::new("certificate", ExitCode::Config, format!("{}: {e}", path.display())))?;
    if let Some(why) = cert.incompleteness() {
        return Err(Failure::new("certificate", ExitCode::Unknown, format!("incomplete certificate: {why}")));
    }
    Ok(cert)
}

pub fn heatmap(cfg: &Resolved, cert: &CompositeCertificate) -> Result<Heatmap, Failure> {
    cert.heatmap(cfg.system.domain(), cfg.heatmap.0, cfg.heatmap.1)
        .map_err(|e| Failure::new("heatmap", ExitCode::Unknown, e.to_string()))
}

pub fn cmd_heatmap(cfg: &Resolved, certificate: Option<&Path>) -> Result<Heatmap, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let cert = load_certificate(&cfg.out_dir, certificate)?;
    let map = heatmap(cfg, &cert)?;
    formats::write_heatmap_csv(&cfg.out_dir.join("heatmap.csv"), &map)?;
    formats::write_pgm(&cfg.out_dir.join("heatmap.pgm"), &map)?;
    Ok(map)
}

pub fn validate(
    cfg: &Resolved,
    cert: &CompositeCertificate,
    progress: impl FnMut(&validation::PointCheck),
) -> Result<ValidationReport, Failure> {
    let points = validation::points_in_region(cert, cfg.system.domain(), cfg.validate.points);
    let v = &cfg.validate;
    validation::validate_bound(cert, &cfg.system.compile(), &cfg.sim, &points, v.confidence, v.slack, progress)
        .map_err(|e| Failure::new("validate", ExitCode::Unknown, e.to_string()))
}

/// Writes `validation.json`; any red flag or slack failure is reported as
/// a falsification of the bound.
pub fn cmd_validate(
    cfg: &Resolved,
    certificate: Option<&Path>,
    progress: impl FnMut(&validation::PointCheck),
) -> Result<ValidationReport, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let cert = load_certificate(&cfg.out_dir, certificate)?;
    let report = validate(cfg, &cert, progress)?;
    formats::write_json(&cfg.out_dir.join("validation.json"), &report)?;
    if !report.passed() {
        return Err(Failure::new(
            "validate",
            ExitCode::Falsified,
            format!("{} red flags, {} points below p − slack", report.red_flags, report.slack_failures),
        ));
    }
    Ok(report)
}

/// One SMT-LIB2 script per certified condition: `(file name, script)`.
pub fn smt_scripts(cfg: &Resolved, cert: &CompositeCertificate) -> Result<Vec<(String, String)>, SmtError> {
    let sys = &cfg.system;
    let n = sys.n();
    let quad = &cert.quadratic;
    let local = local_certificate_expressions(sys, &quad.p, &quad.q);
    let v = ExprFn::new(local.v.clone(), n);
    let lv = ExprFn::new(local.h.clone(), n);
    let m2 = ExprFn::new(local.frobenius_squared(), n);
    let w = NetValue::new(&cert.net);
    let lw = NetGenerator::new(&cert.net, sys);
    let domain = sys.domain().clone();
    let cond = |target, region, bound| Condition { target, region, bound, domain: domain.clone() };

    let mut out = Vec::new();
    let c = cond(&m2, vec![Constraint::at_most(&v, quad.c_local)], 4.0 * quad.r * quad.r);
    out.push((
        "quad_local.smt2".to_string(),
        export_smt(&c, &[&format!("Local quadratic condition: |M(x)|_F^2 <= 4 r^2 on V <= {}", quad.c_local)])?,
    ));
    let c = cond(&lv, vec![Constraint::between(&v, quad.c_local, quad.c2)], -quad.zeta);
    out.push((
        "quad_extended.smt2".to_string(),
        export_smt(&c, &[&format!("Extended quadratic condition: LV <= -{} on {} <= V <= {}", quad.zeta, quad.c_local, quad.c2)])?,
    ));
    let c = cond(&lw, vec![Constraint::between(&w, cert.beta1, cert.beta2)], -cert.zeta);
    out.push((
        "neural_annulus.smt2".to_string(),
        export_smt(&c, &[&format!("Neural condition: LW <= -{} on {} <= W <= {}", cert.zeta, cert.beta1, cert.beta2)])?,
    ));
    let c = cond(&v, vec![Constraint::at_most(&w, cert.beta1)], cert.c1);
    out.push((
        "inclusion_inner.smt2".to_string(),
        export_smt(&c, &[&format!("Inclusion: W <= {} implies V <= {}", cert.beta1, cert.c1)])?,
    ));
    let c = cond(&w, vec![Constraint::at_most(&v, quad.c2)], cert.beta2);
    out.push((
        "inclusion_outer.smt2".to_string(),
        export_smt(&c, &[&format!("Inclusion: V <= {} implies W <= {}", quad.c2, cert.beta2)])?,
    ));
    Ok(out)
}

pub fn cmd_export_smt(cfg: &Resolved, certificate: Option<&Path>) -> Result<Vec<PathBuf>, Failure> {
    let cert = load_certificate(&cfg.out_dir, certificate)?;
    let scripts = smt_scripts(cfg, &cert).map_err(|e| Failure::new("export-smt", ExitCode::Config, e.to_string()))?;
    let dir = cfg.out_dir.join("smt");
    ensure_dir(&dir)?;
    let mut paths = Vec::new();
    for (name, text) in scripts {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Failure::new("export-smt", ExitCode::Config, format!("{}: {e}", p.display())))?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SimulationReport {
    pub x0: Vec<f64>,
    pub paths: usize,
    pub converged: usize,
    pub diverged: usize,
    pub timeout: usize,
    pub frequency: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub confidence: f64,
}

pub fn simulate(cfg: &Resolved, x0: &[f64]) -> Result<(SimulationReport, Vec<(f64, Vec<f64>)>), Failure> {
    if x0.len() != cfg.system.n() {
        return Err(Failure::new("simulate", ExitCode::Config, format!("x0 needs {} coordinates", cfg.system.n())));
    }
    let sys = cfg.system.compile();
    let count: AttractionCount = sim::estimate_attraction(&sys, x0, &cfg.sim, 0);
    let mut path = Vec::new();
    sim::simulate_path(&sys, x0, &cfg.sim, 0, 0, Some(&mut path));
    let conf = cfg.validate.confidence;
    let (lo, hi) = validation::clopper_pearson(count.converged, count.total(), conf);
    let report = SimulationReport {
        x0: x0.to_vec(),
        paths: count.total(),
        converged: count.converged,
        diverged: count.diverged,
        timeout: count.timeout,
        frequency: count.frequency(),
        ci_lower: lo,
        ci_upper: hi,
        confidence: conf,
    };
    Ok((report, path))
}

/// Writes `simulation.json` and the trajectory of path 0.
pub fn cmd_simulate(cfg: &Resolved, x0: &[f64]) -> Result<SimulationReport, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let (report, path) = simulate(cfg, x0)?;
    formats::write_json(&cfg.out_dir.join("simulation.json"), &report)?;
    formats::write_trajectory(&cfg.out_dir.join("trajectory.csv"), &path)?;
    Ok(report)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct StabilizedReport {
    pub x0: Vec<f64>,
    pub paths: usize,
    pub converged: usize,
    pub frequency: f64,
}

/// Grid points whose noise-free path diverges, with their attraction
/// frequency under noise, best first; writes `stabilization.json`.
pub fn cmd_stabilization(cfg: &Resolved, per_dim: usize, paths: usize) -> Result<Vec<StabilizedReport>, Failure> {
    ensure_dir(&cfg.out_dir)?;
    let sim_cfg = SimConfig { attraction_samples: paths, ..cfg.sim.clone() };
    let found: Vec<StabilizedReport> = sim::stabilization_search(&cfg.system, &sim_cfg, per_dim)
        .into_iter()
        .map(|s| StabilizedReport { x0: s.point, paths: s.count.total(), converged: s.count.converged, frequency: s.count.frequency() })
        .collect();
    formats::write_json(&cfg.out_dir.join("stabilization.json"), &found)?;
    Ok(found)
}
