//! Non-exemplar continual graph learning with analytic model merging.
//!
//! A GCN encoder is adapted to each incoming task by backpropagation. Its
//! per-layer least-squares statistics are folded into an encoder memory bank
//! and merged into one encoder in closed form. A classifier is then rebuilt
//! analytically from accumulated statistics of the merged encoder's
//! embeddings. No raw nodes from earlier tasks are kept.
//!
//! ```no_run
//! use adr_core::config::ExperimentConfig;
//! use adr_core::continual;
//!
//! let cfg = ExperimentConfig::load("adr_sbm.json")?;
//! let record = continual::run(&cfg).map_err(|f| f.source)?;
//! println!("{:?}", record.metrics);
//! # Ok::<(), adr_core::AdrError>(())
//! ```

pub mod acr;
pub mod config;
pub mod continual;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod ham;
pub mod linalg;
pub mod sweep;

pub use config::{ExperimentConfig, Method};
pub use error::{AdrError, Result};
pub use linalg::DenseMatrix;
