//! Client, renderer and denoiser wiring for a configured backend.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffurank_core::clients::{
    CaptionerClient, EmbedderClient, LatentEncoderClient, MockCaptioner, MockEmbedder, MockEncoder,
    MockStatementConverter, MockVlm, StatementConverterClient, VlmSummarizerClient,
};
use diffurank_core::diffusion::{ConditionalDenoiser, LossMode};
use diffurank_core::render::{mock_render, ExternalRenderer, RenderError, RenderJob, RenderOutput};
use diffurank_core::toy::{train_with, ToyDenoiser, ToyWorld, WorldConfig};
use diffurank_http::{
    ClientKind, HttpCaptioner, HttpConfig, HttpEmbedder, HttpEncoder, HttpStatementConverter, HttpVlm,
};

use crate::config::{BackendConfig, HttpBackend, MockBackend, PipelineConfig};
use crate::PipelineError;

const TRAINING_WORLD_TAG: u64 = 0x5452_4149_4e00; // "TRAIN"

pub enum Renderer {
    /// Draws toy objects from the world manifest.
    Mock(Arc<ToyWorld>),
    External(ExternalRenderer),
}

impl Renderer {
    pub fn render(&self, job: &RenderJob, root: &Path) -> Result<RenderOutput, RenderError> {
        match self {
            Renderer::Mock(world) => {
                let object = world.object(&job.object_id).ok_or_else(|| RenderError::Adapter {
                    status: "unknown object".into(),
                    stderr: format!("{} is not in the toy world", job.object_id),
                })?;
                mock_render(job, object, root)
            }
            Renderer::External(renderer) => renderer.render(job, root),
        }
    }
}

/// Everything a run talks to.
pub struct Backend {
    pub renderer: Renderer,
    pub captioner: Arc<dyn CaptionerClient>,
    pub encoder: Arc<dyn LatentEncoderClient>,
    pub vlm: Arc<dyn VlmSummarizerClient>,
    pub statements: Arc<dyn StatementConverterClient>,
    pub embedder: Option<Arc<dyn EmbedderClient>>,
    pub denoiser: Arc<dyn ConditionalDenoiser>,
    /// The weights behind `denoiser`, for scoring in another loss mode.
    pub model: ToyDenoiser,
    /// The toy world behind a mock backend.
    pub world: Option<Arc<ToyWorld>>,
}

impl Backend {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        match &config.backend {
            BackendConfig::Mock(mock) => {
                let world = Arc::new(load_world(config, mock)?);
                let denoiser = mock_denoiser(config, mock)?;
                Ok(Backend::mock(config, world, denoiser))
            }
            BackendConfig::Http(http) => Backend::http(config, http),
        }
    }

    /// Toy-world backend with an already trained denoiser.
    pub fn mock(config: &PipelineConfig, world: Arc<ToyWorld>, denoiser: ToyDenoiser) -> Self {
        let (violations, failures) = match &config.backend {
            BackendConfig::Mock(m) => (m.violations.clone(), m.caption_failures.clone()),
            BackendConfig::Http(_) => Default::default(),
        };
        let transparent = config.render_settings().transparent_views as usize;
        let encoder_views = if transparent == 0 { config.num_views } else { transparent };
        Backend {
            renderer: Renderer::Mock(world.clone()),
            captioner: Arc::new(MockCaptioner::new(world.clone()).with_failures(failures)),
            encoder: Arc::new(MockEncoder::new(world.clone()).with_expected_views(encoder_views)),
            vlm: Arc::new(MockVlm::new(world.clone()).with_violations(violations)),
            statements: Arc::new(MockStatementConverter::new()),
            embedder: Some(Arc::new(MockEmbedder::new(world.clone()))),
            denoiser: Arc::new(denoiser.clone().with_mode(config.loss_mode)),
            model: denoiser,
            world: Some(world),
        }
    }

    fn http(config: &PipelineConfig, http: &HttpBackend) -> Result<Self, PipelineError> {
        let endpoint = |kind: ClientKind, configured: &Option<String>| -> Result<HttpConfig, PipelineError> {
            let mut cfg = match configured {
                Some(url) => HttpConfig {
                    api_key: std::env::var(diffurank_http::API_KEY_VAR).ok(),
                    ..HttpConfig::new(url.clone())
                },
                None => HttpConfig::from_env(kind).ok_or_else(|| {
                    PipelineError::Setup(format!(
                        "no {} endpoint: set it in the config or {}",
                        kind.name(),
                        kind.env_var()
                    ))
                })?,
            };
            cfg.timeout_ms = http.timeout_ms;
            cfg.max_retries = http.max_retries;
            cfg.requests_per_second = http.requests_per_second;
            Ok(cfg)
        };
        let denoiser_path = config
            .denoiser
            .as_ref()
            .ok_or_else(|| PipelineError::Setup("http backend needs a denoiser model file".into()))?;
        let denoiser = ToyDenoiser::load(denoiser_path)
            .map_err(|e| PipelineError::Setup(format!("{}: {e}", denoiser_path.display())))?;
        let embedder: Option<Arc<dyn EmbedderClient>> = match endpoint(ClientKind::Embedder, &http.embedder) {
            Ok(cfg) => Some(Arc::new(HttpEmbedder::new(cfg))),
            Err(_) => None,
        };
        Ok(Backend {
            renderer: Renderer::External(http.renderer.clone()),
            captioner: Arc::new(HttpCaptioner::new(endpoint(ClientKind::Captioner, &http.captioner)?)),
            encoder: Arc::new(HttpEncoder::new(endpoint(ClientKind::Encoder, &http.encoder)?)),
            vlm: Arc::new(HttpVlm::new(endpoint(ClientKind::Vlm, &http.vlm)?)),
            statements: Arc::new(HttpStatementConverter::new(endpoint(
                ClientKind::Statements,
                &http.statements,
            )?)),
            embedder,
            denoiser: Arc::new(denoiser.clone().with_mode(config.loss_mode)),
            model: denoiser,
            world: None,
        })
    }

    /// The denoiser predicting `mode`'s target.
    pub fn denoiser_with(&self, mode: LossMode) -> Arc<dyn ConditionalDenoiser> {
        Arc::new(self.model.clone().with_mode(mode))
    }

    /// Object ids of the toy world, for runs without an explicit list.
    pub fn default_objects(&self) -> Vec<String> {
        self.world.as_ref().map(|w| w.object_ids()).unwrap_or_default()
    }
}

fn load_world(config: &PipelineConfig, mock: &MockBackend) -> Result<ToyWorld, PipelineError> {
    let world = match &mock.world {
        Some(path) => ToyWorld::load(path)?,
        None => ToyWorld::generate(
            &WorldConfig {
                num_objects: mock.num_objects,
                num_views: config.num_views,
                captions_per_view: config.captions_per_view,
                ..WorldConfig::default()
            },
            mock.world_seed,
        )?,
    };
    if world.config.num_views != config.num_views {
        return Err(PipelineError::Setup(format!(
            "toy world has {} views per object but num_views is {}",
            world.config.num_views, config.num_views
        )));
    }
    Ok(world)
}

/// Where a mock run keeps its trained denoiser when the config names none.
pub fn default_denoiser_path(config: &PipelineConfig) -> PathBuf {
    config.output_dir.join("denoiser.json")
}

/// Loads the configured denoiser, or trains one on a fresh toy world and
/// saves it so later runs reuse the same weights.
fn mock_denoiser(config: &PipelineConfig, mock: &MockBackend) -> Result<ToyDenoiser, PipelineError> {
    let path = config.denoiser.clone().unwrap_or_else(|| default_denoiser_path(config));
    if path.exists() {
        return ToyDenoiser::load(&path).map_err(|e| PipelineError::Setup(format!("{}: {e}", path.display())));
    }
    let world = ToyWorld::generate(
        &WorldConfig {
            num_objects: mock.training_objects,
            num_views: config.num_views,
            ..WorldConfig::default()
        },
        mock.world_seed ^ TRAINING_WORLD_TAG,
    )?;
    log::info!("training toy denoiser on {} objects", world.objects.len());
    let denoiser = train_with(&world, &config.training)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    denoiser
        .save(&path)
        .map_err(|e| PipelineError::Setup(format!("{}: {e}", path.display())))?;
    Ok(denoiser)
}
