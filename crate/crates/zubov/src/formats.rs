//! File formats: network checkpoints, CSV tables, PGM images and JSON
//! reports.
//!
//! # Checkpoint
//!
//! ```json
//! {
//!   "format": "zubov-network",
//!   "version": 1,
//!   "activation": "tanh",
//!   "sizes": [2, 10, 10, 10, 1],
//!   "layers": [{ "weights": [[w00, w01], ...], "biases": [b0, ...] }, ...]
//! }
//! ```
//!
//! `layers[l].weights[k][i]` multiplies input `i` of layer `l` into output
//! `k`. Hidden layers apply `tanh`; the output layer is affine. Numbers are
//! written in shortest round-trip form, so reloading is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zubov_core::expr::Hyperbox;
use zubov_core::linlyap::{Matrix, QuadraticCertificate};
use zubov_core::net::EpochStats;
use zubov_core::proa::{CompositeError, Heatmap};
use zubov_core::verify::UnknownReason;
use zubov_core::{CompositeCertificate, NeuralFunction, ValueSample, VerifyOutcome, VerifyStatus};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {detail}")]
    Invalid { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> FormatError + '_ {
    move |source| FormatError::Csv { path: path.display().to_string(), source }
}

fn invalid(path: &Path, detail: impl Into<String>) -> FormatError {
    FormatError::Invalid { path: path.display().to_string(), detail: detail.into() }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.display().to_string(), source })
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct CheckpointLayer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub activation: String,
    pub sizes: Vec<usize>,
    pub layers: Vec<CheckpointLayer>,
}

pub const CHECKPOINT_FORMAT: &str = "zubov-network";

impl Checkpoint {
    pub fn from_net(net: &NeuralFunction) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| CheckpointLayer {
                weights: l.weights().chunks(l.inputs()).map(<[f64]>::to_vec).collect(),
                biases: l.biases().to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            activation: "tanh".into(),
            sizes: net.sizes().to_vec(),
            layers,
        }
    }

    pub fn to_net(&self) -> Result<NeuralFunction, String> {
        if self.format != CHECKPOINT_FORMAT || self.version != 1 {
            return Err(format!("unsupported checkpoint format {} v{}", self.format, self.version));
        }
        if self.activation != "tanh" {
            return Err(format!("unsupported activation {}", self.activation));
        }
        let params = self
            .layers
            .iter()
            .map(|l| (l.weights.iter().flatten().copied().collect(), l.biases.clone()))
            .collect();
        NeuralFunction::from_parameters(&self.sizes, params).map_err(|e| e.to_string())
    }
}

pub fn save_checkpoint(path: &Path, net: &NeuralFunction) -> Result<(), FormatError> {
    write_json(path, &Checkpoint::from_net(net))
}

pub fn load_checkpoint(path: &Path) -> Result<NeuralFunction, FormatError> {
    let c: Checkpoint = read_json(path)?;
    c.to_net().map_err(|d| invalid(path, d))
}

fn x_headers(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|i| format!("x{i}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, FormatError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// Columns `x1..xn, w_hat`.
pub fn write_value_dataset(path: &Path, data: &[ValueSample], n: usize) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    w.write_record(x_headers(n).chain(["w_hat".to_string()])).map_err(csv_err(path))?;
    for s in data {
        w.write_record(s.point.iter().chain([&s.w_hat]).map(f64::to_string)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_value_dataset(path: &Path) -> Result<Vec<ValueSample>, FormatError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let cols = r.headers().map_err(csv_err(path))?.len();
    if cols < 2 {
        return Err(invalid(path, "expected columns x1..xn, w_hat"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(path, format!("line {}: {e}", out.len() + 2))))
            .collect::<Result<Vec<_>, _>>()?;
        let (w_hat, point) = vals.split_last().ok_or_else(|| invalid(path, "empty record"))?;
        out.push(ValueSample { point: point.to_vec(), w_hat: *w_hat });
    }
    Ok(out)
}

/// Columns `epoch, total, residual, boundary, data, learning_rate`.
pub fn write_loss_history(path: &Path, history: &[EpochStats]) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "total", "residual", "boundary", "data", "learning_rate"]).map_err(csv_err(path))?;
    for s in history {
        w.write_record([
            s.epoch.to_string(),
            s.total.to_string(),
            s.residual.to_string(),
            s.boundary.to_string(),
            s.data.to_string(),
            s.learning_rate.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Columns `t, x1..xn`.
pub fn write_trajectory(path: &Path, samples: &[(f64, Vec<f64>)]) -> Result<(), FormatError> {
    let n = samples.first().map_or(0, |(_, x)| x.len());
    let mut w = csv_writer(path)?;
    w.write_record(["t".to_string()].into_iter().chain(x_headers(n))).map_err(csv_err(path))?;
    for (t, x) in samples {
        w.write_record([t].into_iter().chain(x).map(f64::to_string)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Columns `x1..xn, p`, one row per cell in heatmap order.
pub fn write_heatmap_csv(path: &Path, map: &Heatmap) -> Result<(), FormatError> {
    let n = map.cells.first().map_or(0, |(x, _)| x.len());
    let mut w = csv_writer(path)?;
    w.write_record(x_headers(n).chain(["p".to_string()])).map_err(csv_err(path))?;
    for (x, p) in &map.cells {
        w.write_record(x.iter().chain([p]).map(f64::to_string)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Binary 8-bit PGM with `p ∈ [0, 1]` scaled to `0..=255`.
pub fn pgm_bytes(map: &Heatmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.nx, map.ny).into_bytes();
    out.extend(map.cells.iter().map(|(_, p)| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, map: &Heatmap) -> Result<(), FormatError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(&pgm_bytes(map)).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// A verifier outcome in report form.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct OutcomeReport {
    pub status: String,
    pub boxes: usize,
    pub max_depth: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cell: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

impl From<&VerifyOutcome> for OutcomeReport {
    fn from(o: &VerifyOutcome) -> Self {
        let mut r = OutcomeReport {
            status: o.status.name().into(),
            boxes: o.boxes,
            max_depth: o.max_depth,
            witness: None,
            value: None,
            cell: None,
            reason: None,
        };
        match &o.status {
            VerifyStatus::Certified => {}
            VerifyStatus::Falsified { witness, value } => {
                r.witness = Some(witness.clone());
                r.value = *value;
            }
            VerifyStatus::Unknown { cell, reason } => {
                r.cell = Some(cell.sides().iter().map(|s| [s.lo(), s.hi()]).collect());
                r.reason = Some(format!("{reason:?}"));
            }
        }
        r
    }
}

impl OutcomeReport {
    pub fn to_outcome(&self) -> Result<VerifyOutcome, String> {
        let status = match self.status.as_str() {
            "CERTIFIED" => VerifyStatus::Certified,
            "FALSIFIED" => VerifyStatus::Falsified {
                witness: self.witness.clone().ok_or("FALSIFIED outcome without witness")?,
                value: self.value,
            },
            "UNKNOWN" => {
                let cell = self.cell.as_ref().ok_or("UNKNOWN outcome without cell")?;
                let bounds: Vec<(f64, f64)> = cell.iter().map(|[a, b]| (*a, *b)).collect();
                let reason = match self.reason.as_deref() {
                    Some("MinWidth") => UnknownReason::MinWidth,
                    Some("Budget") => UnknownReason::Budget,
                    other => return Err(format!("unknown reason {other:?}")),
                };
                VerifyStatus::Unknown { cell: Hyperbox::from_bounds(&bounds), reason }
            }
            other => return Err(format!("unknown status {other}")),
        };
        Ok(VerifyOutcome { status, boxes: self.boxes, max_depth: self.max_depth })
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err("ragged matrix".into());
    }
    Ok(Matrix::from_vec(n, c, rows.iter().flatten().copied().collect()))
}

/// Wall-clock data, kept apart so the rest of a report is reproducible.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct Metadata {
    pub created_unix: u64,
    pub elapsed_seconds: f64,
    pub version: String,
}

impl Metadata {
    pub fn now(elapsed: std::time::Duration) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Metadata { created_unix, elapsed_seconds: elapsed.as_secs_f64(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

/// The quadratic certificate: `V(x) = xᵀPx`, local level `c_local`
/// (from the Frobenius-norm condition) and extended level `c2`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct QuadraticBody {
    pub a: Vec<Vec<f64>>,
    pub s: Vec<Vec<Vec<f64>>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub lyapunov_residual: f64,
    pub epsilon: f64,
    pub r: f64,
    pub cap: f64,
    pub c_local: f64,
    pub local: OutcomeReport,
    pub zeta: f64,
    pub c2: f64,
    pub extended: OutcomeReport,
    pub probes: usize,
}

impl From<&QuadraticCertificate> for QuadraticBody {
    fn from(c: &QuadraticCertificate) -> Self {
        QuadraticBody {
            a: rows(&c.a),
            s: c.s.iter().map(rows).collect(),
            p: rows(&c.p),
            q: rows(&c.q),
            lyapunov_residual: c.residual,
            epsilon: c.epsilon,
            r: c.r,
            cap: c.cap,
            c_local: c.c_local,
            local: (&c.local_outcome).into(),
            zeta: c.zeta,
            c2: c.c2,
            extended: (&c.extended_outcome).into(),
            probes: c.probes,
        }
    }
}

impl QuadraticBody {
    pub fn to_certificate(&self) -> Result<QuadraticCertificate, String> {
        Ok(QuadraticCertificate {
            a: matrix(&self.a)?,
            s: self.s.iter().map(|m| matrix(m)).collect::<Result<_, _>>()?,
            p: matrix(&self.p)?,
            q: matrix(&self.q)?,
            residual: self.lyapunov_residual,
            epsilon: self.epsilon,
            r: self.r,
            cap: self.cap,
            c_local: self.c_local,
            local_outcome: self.local.to_outcome()?,
            zeta: self.zeta,
            c2: self.c2,
            extended_outcome: self.extended.to_outcome()?,
            probes: self.probes,
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct QuadReport {
    pub quadratic: QuadraticBody,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct NeuralBody {
    pub beta1: f64,
    pub beta2: f64,
    pub c1: f64,
    pub zeta: f64,
    /// `LW ≤ −ζ` on `{β1 ≤ W ≤ β2}`.
    pub annulus: OutcomeReport,
    /// `{W ≤ β1} ⊆ {V ≤ c1}`.
    pub inner_inclusion: OutcomeReport,
    /// `{V ≤ c2} ⊆ {W ≤ β2}`.
    pub outer_inclusion: OutcomeReport,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct FailureBody {
    pub stage: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outcome: Option<OutcomeReport>,
    /// Constants found before the failing stage.
    pub partial: Vec<(String, f64)>,
}

impl From<&CompositeError> for FailureBody {
    fn from(e: &CompositeError) -> Self {
        FailureBody {
            stage: e.stage.name().into(),
            detail: e.detail.clone(),
            outcome: e.outcome.as_ref().map(Into::into),
            partial: e.partial.iter().map(|(k, v)| ((*k).into(), *v)).collect(),
        }
    }
}

/// The composite certificate, or the stage at which it failed.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct CertificateReport {
    pub complete: bool,
    /// Checkpoint file, relative to the report's directory.
    pub checkpoint: String,
    pub quadratic: QuadraticBody,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub neural: Option<NeuralBody>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<FailureBody>,
    pub metadata: Metadata,
}

impl CertificateReport {
    pub fn complete(cert: &CompositeCertificate, checkpoint: &str, metadata: Metadata) -> Self {
        CertificateReport {
            complete: cert.is_complete(),
            checkpoint: checkpoint.into(),
            quadratic: (&cert.quadratic).into(),
            neural: Some(NeuralBody {
                beta1: cert.beta1,
                beta2: cert.beta2,
                c1: cert.c1,
                zeta: cert.zeta,
                annulus: (&cert.neural_outcome).into(),
                inner_inclusion: (&cert.inner_inclusion).into(),
                outer_inclusion: (&cert.outer_inclusion).into(),
            }),
            failure: None,
            metadata,
        }
    }

    pub fn failed(quad: &QuadraticCertificate, err: &CompositeError, checkpoint: &str, metadata: Metadata) -> Self {
        CertificateReport {
            complete: false,
            checkpoint: checkpoint.into(),
            quadratic: quad.into(),
            neural: None,
            failure: Some(err.into()),
            metadata,
        }
    }

    /// Rebuild the certificate around a loaded network.
    pub fn to_certificate(&self, net: NeuralFunction) -> Result<CompositeCertificate, String> {
        let nb = match (&self.neural, &self.failure) {
            (Some(nb), None) => nb,
            (_, Some(f)) => return Err(format!("certification failed at {}: {}", f.stage, f.detail)),
            (None, None) => return Err("report has no neural constants".into()),
        };
        Ok(CompositeCertificate {
            quadratic: self.quadratic.to_certificate()?,
            net,
            beta1: nb.beta1,
            beta2: nb.beta2,
            c1: nb.c1,
            zeta: nb.zeta,
            neural_outcome: nb.annulus.to_outcome()?,
            inner_inclusion: nb.inner_inclusion.to_outcome()?,
            outer_inclusion: nb.outer_inclusion.to_outcome()?,
        })
    }
}
