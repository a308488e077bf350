use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use zubov::config::{Overrides, Resolved, RunConfig};
use zubov::pipeline::{self, ExitCode, Failure};

#[derive(Parser)]
#[command(name = "zubov", version, about = "Neural and quadratic Lyapunov certificates for stochastic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Box budget per verifier call.
    #[arg(long)]
    max_boxes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Paths per attraction estimate.
    #[arg(long)]
    paths: Option<usize>,
    /// Paths per value estimate.
    #[arg(long)]
    value_paths: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stochastic Lyapunov equation and certify the quadratic levels.
    Quad(Common),
    /// Generate value data and train the neural Lyapunov function.
    Train(Common),
    /// Search and certify the neural levels against the quadratic certificate.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to certify (default: `<out>/checkpoint.json`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Attraction-probability bound on a grid (CSV and PGM).
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Compare the bound with Monte Carlo attraction frequencies.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Write one SMT-LIB2 script per certified condition.
    ExportSmt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Simulate from one initial state, or search a grid for points that
    /// diverge without noise but converge with it.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "search")]
        x0: Option<Vec<f64>>,
        /// Grid points per axis for the noise-stabilization search.
        #[arg(long, conflicts_with = "x0")]
        search: Option<usize>,
    },
}

fn resolve(c: &Common) -> Result<Resolved, Failure> {
    let mut raw = RunConfig::load(&c.config)?;
    raw.apply(&Overrides {
        seed: c.seed,
        max_boxes: c.max_boxes,
        epochs: c.epochs,
        attraction_samples: c.paths,
        value_samples: c.value_paths,
    });
    let mut r = raw.resolve()?;
    if let Some(o) = &c.out {
        r.out_dir = o.clone();
    }
    Ok(r)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Quad(c) => {
            let cfg = resolve(&c)?;
            let q = pipeline::cmd_quad(&cfg)?;
            println!("P = {:?}", q.p.data());
            println!("c_local = {} ({})", q.c_local, q.local_outcome.status);
            println!("c2 = {} ({}), zeta = {}", q.c2, q.extended_outcome.status, q.zeta);
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let every = (cfg.train.epochs / 20).max(1);
            let out = pipeline::cmd_train(&cfg, &mut |s| {
                if s.epoch % every == 0 {
                    eprintln!("epoch {:>6}  loss {:.4e}  residual {:.4e}  boundary {:.4e}  data {:.4e}", s.epoch, s.total, s.residual, s.boundary, s.data);
                }
            })?;
            let last = out.training.history.last().map_or(f64::NAN, |s| s.total);
            println!("trained {} epochs on {} data points, final loss {last:.4e}", out.training.history.len(), out.data.len());
        }
        Command::Certify { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let cert = pipeline::cmd_certify(&cfg, checkpoint.as_deref())?;
            println!("beta1 = {}, beta2 = {}, zeta = {}", cert.beta1, cert.beta2, cert.zeta);
            println!("c1 = {}, c2 = {}", cert.c1, cert.c2());
            println!("certificate complete");
        }
        Command::Heatmap { common, certificate } => {
            let cfg = resolve(&common)?;
            let map = pipeline::cmd_heatmap(&cfg, certificate.as_deref())?;
            println!("wrote {}×{} heatmap", map.nx, map.ny);
        }
        Command::Validate { common, certificate } => {
            let cfg = resolve(&common)?;
            let report = pipeline::cmd_validate(&cfg, certificate.as_deref(), |p| {
                eprintln!(
                    "x0 {:?}: p {:.4}, frequency {:.4} [{:.4}, {:.4}]{}",
                    p.x, p.p, p.frequency, p.ci_lower, p.ci_upper,
                    if p.red_flag { "  RED FLAG" } else { "" }
                );
            })?;
            println!("{} points, no red flags", report.points.len());
        }
        Command::ExportSmt { common, certificate } => {
            let cfg = resolve(&common)?;
            for p in pipeline::cmd_export_smt(&cfg, certificate.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Simulate { common, x0, search } => {
            let cfg = resolve(&common)?;
            if let Some(per_dim) = search {
                let found = pipeline::cmd_stabilization(&cfg, per_dim, cfg.sim.attraction_samples)?;
                match found.first() {
                    Some(best) => println!("best {:?}: frequency {} over {} paths", best.x0, best.frequency, best.paths),
                    None => println!("no grid point diverges without noise"),
                }
            } else if let Some(x0) = x0 {
                let r = pipeline::cmd_simulate(&cfg, &x0)?;
                println!(
                    "{} paths: {} converged, {} diverged, {} timed out; frequency {} [{}, {}]",
                    r.paths, r.converged, r.diverged, r.timeout, r.frequency, r.ci_lower, r.ci_upper
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.code as i32);
    }
    process::exit(ExitCode::Success as i32);
}
