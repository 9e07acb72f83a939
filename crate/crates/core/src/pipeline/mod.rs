//! Campaign orchestration, configuration, persistence, and reporting.

pub mod campaign;
pub mod config;
pub mod report;

pub use campaign::{
    directory_digest, fit_from_directory, resolve_material, run_campaign, simulate_sample,
    simulate_sample_with_artifacts, CampaignResult, CampaignTiming, Manifest, OffsetStat,
    SampleRecord, SampleStatus, WeightsFile,
};
pub use config::{CampaignConfig, MaterialSource, SimulatorKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{failed} of {total} sample simulations failed (more than 10%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 1 for usage/configuration, 2 for numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<crate::polycrystal::PolyError> for PipelineError {
    fn from(e: crate::polycrystal::PolyError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<crate::rvefem::FemError> for PipelineError {
    fn from(e: crate::rvefem::FemError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<crate::pce::PceError> for PipelineError {
    fn from(e: crate::pce::PceError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<crate::calibrate::CalibrateError> for PipelineError {
    fn from(e: crate::calibrate::CalibrateError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}
