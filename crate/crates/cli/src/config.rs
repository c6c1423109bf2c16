use std::path::{Path, PathBuf};

use crashscen_core::oracle::OracleConfig;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Offline fragment renderer (content filling only).
    Rule,
    /// Replay of recorded transcripts.
    Fixture,
    /// Chat-completions endpoint from CRASHSCEN_LLM_* variables.
    Http,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: Option<BackendKind>,
    pub transcripts: Option<PathBuf>,
}

/// Contents of a `--config` file. Relative paths resolve against the file's
/// directory; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub map: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub seed: Option<u64>,
    pub extraction: BackendConfig,
    pub content: BackendConfig,
    pub retention: Option<f64>,
    pub insert_obstacle: Option<bool>,
    pub jobs: Option<usize>,
    pub oracle: OracleConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.map,
            &mut cfg.params,
            &mut cfg.schema,
            &mut cfg.extraction.transcripts,
            &mut cfg.content.transcripts,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Io(format!("{}: referenced by {} but missing", p.display(), path.display())));
            }
        }
        cfg.oracle.validate().map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}
