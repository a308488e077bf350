//! Probabilistic region-of-attraction certificates for stochastic systems.
//!
//! The crate is `no_std` + `alloc`. It contains the algorithmic pieces:
//!
//! - [`expr`]: symbolic expressions with exact differentiation and sound
//!   interval evaluation.
//! - [`system`]: the SDE model `dX = f(X) dt + σ(X) dB`, its generator `L`,
//!   the linearization and the Zubov residual.
//! - [`linlyap`]: small dense linear algebra, the stochastic Lyapunov
//!   equation and the local quadratic certificate.
//! - [`sim`]: Euler–Maruyama simulation, value-function data and Monte Carlo
//!   attraction frequencies.
//! - [`net`]: tanh networks with exact input Hessians and physics-informed
//!   training on the stochastic Zubov equation.
//! - [`verify`]: interval branch-and-bound certification, level searches and
//!   SMT-LIB2 export.
//! - [`proa`]: the composite certificate and the attraction-probability
//!   lower bound.
//!
//! File formats, the CLI and anything touching the filesystem live in the
//! companion `zubov` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod expr;
pub mod linlyap;
pub mod net;
pub mod proa;
pub mod sim;
pub mod system;
pub mod verify;

pub use expr::{EvalError, Expr, Hyperbox, Interval, ParseError, Program};
pub use linlyap::{Matrix, QuadraticCertificate};
pub use net::{NeuralFunction, TrainConfig};
pub use proa::CompositeCertificate;
pub use sim::{Outcome, SimConfig, ValueSample};
pub use system::{Linearization, StochasticSystem};
pub use verify::{BoxFunction, Condition, Constraint, VerifyOptions, VerifyOutcome, VerifyStatus};
