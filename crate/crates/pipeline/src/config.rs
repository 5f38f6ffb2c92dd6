//! Run configuration, loaded from TOML or JSON.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use diffurank_core::diffusion::{LossMode, NoiseSharing};
use diffurank_core::render::{ExternalRenderer, RenderSettings};
use diffurank_core::toy::TrainConfig;

/// Grey ray-traced views in a default job; smaller view counts use all-grey jobs.
const GREY_VIEWS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Rendered views per object (M).
    pub num_views: usize,
    /// Captions requested per view (N).
    pub captions_per_view: usize,
    /// Noise draws per caption when scoring.
    pub num_samples: usize,
    /// Views forwarded to the summarizer (P).
    pub top_p: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub loss_mode: LossMode,
    pub noise_sharing: NoiseSharing,
    /// Trained denoiser weights. For mock runs a missing file is trained and saved.
    pub denoiser: Option<PathBuf>,
    pub training: TrainConfig,
    pub backend: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_views: 28,
            captions_per_view: 5,
            num_samples: 5,
            top_p: 6,
            seed: 0,
            output_dir: PathBuf::from("diffurank-out"),
            workers: 0,
            loss_mode: LossMode::X0Prediction,
            noise_sharing: NoiseSharing::PerObject,
            denoiser: None,
            training: TrainConfig::default(),
            backend: BackendConfig::Mock(MockBackend::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockBackend),
    Http(HttpBackend),
}

/// Toy-world clients. Objects come from `world` if set, else a generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockBackend {
    pub world: Option<PathBuf>,
    pub num_objects: usize,
    pub world_seed: u64,
    /// Objects in the world used to train a denoiser when none is saved.
    pub training_objects: usize,
    /// Objects the summarizer refuses with a policy violation.
    pub violations: Vec<String>,
    /// Objects whose captioning calls fail.
    pub caption_failures: Vec<String>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend {
            world: None,
            num_objects: 10,
            world_seed: 0,
            training_objects: 200,
            violations: Vec::new(),
            caption_failures: Vec::new(),
        }
    }
}

/// Remote model services. Unset endpoints fall back to
/// `DIFFURANK_ENDPOINT_<CLIENT>` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackend {
    pub renderer: ExternalRenderer,
    #[serde(default)]
    pub captioner: Option<String>,
    #[serde(default)]
    pub encoder: Option<String>,
    #[serde(default)]
    pub vlm: Option<String>,
    #[serde(default)]
    pub embedder: Option<String>,
    #[serde(default)]
    pub statements: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    3
}

impl PipelineConfig {
    /// Reads a `.toml` or `.json` file and resolves relative paths against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut config: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
        };
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let Some(p) = &mut self.denoiser {
            join(p);
        }
        match &mut self.backend {
            BackendConfig::Mock(mock) => {
                if let Some(p) = &mut mock.world {
                    join(p);
                }
            }
            BackendConfig::Http(http) => {
                if http.renderer.program.components().count() > 1 {
                    join(&mut http.renderer.program);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("num_views", self.num_views),
            ("captions_per_view", self.captions_per_view),
            ("num_samples", self.num_samples),
            ("top_p", self.top_p),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 1")));
            }
        }
        if self.top_p > self.num_views {
            return Err(ConfigError::Invalid(format!(
                "top_p ({}) exceeds num_views ({})",
                self.top_p, self.num_views
            )));
        }
        if let BackendConfig::Mock(mock) = &self.backend {
            if mock.world.is_none() && mock.num_objects == 0 {
                return Err(ConfigError::Invalid("mock backend needs num_objects >= 1".into()));
            }
            if self.num_views < 2 {
                return Err(ConfigError::Invalid("mock backend needs num_views >= 2".into()));
            }
        }
        self.training
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Camera layout for `num_views`: up to 8 grey views, the rest transparent.
    pub fn render_settings(&self) -> RenderSettings {
        let grey = self.num_views.min(GREY_VIEWS);
        RenderSettings {
            grey_views: grey as u32,
            transparent_views: (self.num_views - grey) as u32,
            ..RenderSettings::default()
        }
    }

    pub fn render_dir(&self) -> PathBuf {
        self.output_dir.join("renders")
    }

    pub fn captions_csv(&self) -> PathBuf {
        self.output_dir.join("captions.csv")
    }

    pub fn rankings_jsonl(&self) -> PathBuf {
        self.output_dir.join("rankings.jsonl")
    }

    pub fn report_json(&self) -> PathBuf {
        self.output_dir.join("report.json")
    }

    pub fn journal_path(&self) -> PathBuf {
        self.output_dir.join("journal.jsonl")
    }

    pub fn artifact_dir(&self) -> PathBuf {
        self.output_dir.join("artifacts")
    }
}
