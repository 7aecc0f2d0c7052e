//! Fisher information, detector response and maximum-likelihood estimation
//! for spectral weak measurements read out by a saturating CMOS array.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apparatus;
pub mod cli;
pub mod config;
pub mod detector_model;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod io;
pub mod special;
pub mod spectral_meter;

pub use apparatus::Apparatus;
pub use config::RunConfig;
pub use detector_model::{DetectorModel, Frame, OutcomePmf};
pub use error::{FisherError, ModelError};
pub use estimator::{EstimateError, FrameSet, PrecisionReport, Provenance};
pub use fisher::FisherResult;
pub use spectral_meter::{PhysicalConfig, Scheme, SchemeConfig};
