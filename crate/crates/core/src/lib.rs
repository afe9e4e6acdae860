//! Mean-field network toolkit: parametrizations, Γ index partitions,
//! weight transfer by empirical-measure resampling, and diagnostics.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod init;
pub mod measure;
pub mod net;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod transfer;
pub mod union_find;

pub use error::{Error, Result};
