//! Regression-proxy evaluation and search of neural architectures.
//!
//! Candidate networks are trained for a handful of iterations on a single
//! batch to regress synthetic signal tensors; their validation losses rank
//! the architectures. The crate also provides the searchable space of such
//! proxy tasks, aging evolution over tasks and architectures, rank
//! statistics, and a small procedural benchmark that supplies groundtruth.

pub mod arch;
pub mod bench;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod images;
pub mod metrics;
pub mod nn;
pub mod proxy;
pub mod rng;
pub mod rnn;
pub mod signals;
pub mod task;

pub use error::{Error, Result};
