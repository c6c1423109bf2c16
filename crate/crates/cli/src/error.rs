use std::path::Path;

use crashscen_core::assembly::AssemblyError;
use crashscen_core::map_graph::MapError;
use crashscen_core::oracle::OracleError;
use crashscen_core::pipeline::PipelineError;
use crashscen_core::placement::PlacementError;
use crashscen_core::report_extraction::{BackendError, ExtractionError};
use crashscen_core::scenario_gen::ScenarioError;
use thiserror::Error;

/// Command failure, one variant per exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Extraction(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Placement(String),
    #[error("{0}")]
    Generation(String),
    #[error("{0}")]
    Mutation(String),
    #[error("{0}")]
    Oracle(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Extraction(_) => 5,
            CliError::Backend(_) => 6,
            CliError::Placement(_) => 7,
            CliError::Generation(_) => 8,
            CliError::Mutation(_) => 9,
            CliError::Oracle(_) => 10,
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::MalformedDocument(_) | MapError::UnsupportedFeature(_) | MapError::DanglingReference(_) => {
                CliError::Parse(e.to_string())
            }
            _ => CliError::Placement(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<ExtractionError> for CliError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::Backend(b) => b.into(),
            ExtractionError::Facts(_) => CliError::Parse(e.to_string()),
            _ => CliError::Extraction(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Backend(b) => b.into(),
            ScenarioError::Io { .. } => CliError::Io(e.to_string()),
            ScenarioError::Malformed(_) => CliError::Parse(e.to_string()),
            _ => CliError::Generation(e.to_string()),
        }
    }
}

impl From<AssemblyError> for CliError {
    fn from(e: AssemblyError) -> Self {
        match e {
            AssemblyError::Scenario(s) => s.into(),
            AssemblyError::Manifest(_) => CliError::Parse(e.to_string()),
            _ => CliError::Mutation(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Io(_) => CliError::Io(e.to_string()),
            OracleError::Parse { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Oracle(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Placement(PlacementError::Map(m)) => m.into(),
            PipelineError::Placement(p) => CliError::Placement(p.to_string()),
            PipelineError::Scenario(s) => s.into(),
            PipelineError::Mutation(m) => CliError::Mutation(m.to_string()),
            PipelineError::Assembly(a) => a.into(),
            PipelineError::Analysis(o) => o.into(),
            PipelineError::Oracle { node, source } => match CliError::from(source) {
                CliError::Io(m) => CliError::Io(format!("node {node}: {m}")),
                CliError::Parse(m) => CliError::Parse(format!("node {node}: {m}")),
                other => CliError::Oracle(format!("node {node}: {other}")),
            },
            PipelineError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}
