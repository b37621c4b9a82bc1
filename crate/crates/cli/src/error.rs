use netgnn_core::autodiff::AutodiffError;
use netgnn_core::dataset::DatasetError;
use netgnn_core::graph::GraphError;
use netgnn_core::model::{CheckpointError, ModelError};
use netgnn_core::netsim::SimError;
use netgnn_core::optimize::OptimizeError;
use netgnn_core::traffic::TrafficError;
use netgnn_core::train::TrainError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("checkpoint version mismatch: {0}")]
    CheckpointVersion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Schema(_) => 5,
            CliError::CheckpointVersion(_) => 6,
            CliError::MissingFile(_) => 7,
        }
    }
}

fn io(e: &std::io::Error, what: String) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::MissingFile(what)
    } else {
        CliError::Data(what)
    }
}

pub fn dataset(e: DatasetError, path: &std::path::Path) -> CliError {
    let what = format!("{}: {e}", path.display());
    match &e {
        DatasetError::Io(err) => io(err, what),
        DatasetError::Parse { .. } | DatasetError::Invalid { .. } => CliError::Schema(what),
        DatasetError::Request(_) => CliError::Config(what),
    }
}

pub fn checkpoint(e: CheckpointError, path: &std::path::Path) -> CliError {
    let what = format!("{}: {e}", path.display());
    match &e {
        CheckpointError::Io(err) => io(err, what),
        CheckpointError::Corrupt(_) => CliError::Data(what),
        CheckpointError::Version { .. } => CliError::CheckpointVersion(what),
        CheckpointError::Schema(_) => CliError::Schema(what),
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Instance(_) => CliError::Data(e.to_string()),
            ModelError::Mask(_) | ModelError::Autodiff(AutodiffError::NonFinite { .. }) => {
                CliError::Numeric(e.to_string())
            }
            ModelError::Autodiff(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::EmptyData | TrainError::Length(..) => CliError::Data(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::ZeroVariance => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Config(e.to_string()),
            SimError::Mismatch(_) => CliError::Data(e.to_string()),
            SimError::NoDeliveries { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrafficError> for CliError {
    fn from(e: TrafficError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Invalid(_) | OptimizeError::MissingModel(_) => CliError::Config(e.to_string()),
            OptimizeError::Graph(g) => g.into(),
            OptimizeError::Traffic(t) => t.into(),
            OptimizeError::Sim(s) => s.into(),
            OptimizeError::Model(m) => m.into(),
            OptimizeError::Csv(_) | OptimizeError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}
