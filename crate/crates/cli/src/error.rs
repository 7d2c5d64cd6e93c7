use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} not found: {}", path.display())]
    MissingInput { what: String, path: PathBuf },

    #[error(transparent)]
    Core(#[from] scene_align::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 1 for failures of the computation itself.
    pub fn exit_code(&self) -> i32 {
        use scene_align::Error as E;
        match self {
            CliError::Config(_) | CliError::MissingInput { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidIntrinsics(_)
                | E::InvalidFrame(_)
                | E::InvalidArgument(_)
                | E::DimensionMismatch(..)
                | E::ShapeMismatch { .. }
                | E::UnknownCategory(_)
                | E::UnknownModel(_)
                | E::Format { .. }
                | E::Io { .. }
                | E::Image { .. }
                | E::Json { .. } => 2,
                E::EmptyMask
                | E::EmptyBox
                | E::ZeroFootprint
                | E::SamplingFailed(_)
                | E::Diverged { .. }
                | E::SingleClass
                | E::AllCandidatesFailed
                | E::NoGroundTruth => 1,
            },
        }
    }
}
