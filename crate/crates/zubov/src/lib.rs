//! Files, configuration and command-line pipeline around [`zubov_core`].

pub mod config;
pub mod formats;
pub mod pipeline;
pub mod validation;

pub use zubov_core as core;
