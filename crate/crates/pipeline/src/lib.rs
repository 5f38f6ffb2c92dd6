//! Batch orchestration around `diffurank-core`: configuration, a resumable
//! per-object stage machine, caption metrics and view-selection ablations.

pub mod ablation;
pub mod backend;
pub mod config;
pub mod metrics;
pub mod run;
pub mod state;
pub mod store;

pub use ablation::{ablation_run, horizontal_views, select_views, AblationMode, AblationOutput};
pub use backend::{Backend, Renderer};
pub use config::{BackendConfig, ConfigError, HttpBackend, MockBackend, PipelineConfig};
pub use metrics::{clip_r_precision, clip_score, MetricsError};
pub use run::{run_pipeline, CallCounts, RankingLine, RunOptions, RunReport, SummaryArtifact};
pub use state::{Journal, JournalEntry, ObjectState, Stage};
pub use store::ArtifactStore;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Journal(#[from] state::JournalError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error("{object_id}: no {stage} artifact recorded")]
    MissingArtifact { object_id: String, stage: Stage },
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Client(#[from] diffurank_core::clients::ClientError),
    #[error(transparent)]
    World(#[from] diffurank_core::toy::WorldError),
    #[error(transparent)]
    Train(#[from] diffurank_core::toy::TrainError),
    #[error(transparent)]
    Audit(#[from] diffurank_core::audit::AuditError),
}

/// Reads one object id per line, skipping blanks and `#` comments.
pub fn read_object_ids(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
