//! Interfaces for the external models the pipeline consults, with
//! deterministic toy-world mocks. HTTP adapters live in a separate crate.

mod mock;

pub use mock::{
    MockCaptioner, MockEmbedder, MockEncoder, MockStatementConverter, MockVlm, EMBEDDING_DIM,
};

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::diffusion::ObjectLatent;

/// Default summarizer prompt.
pub const DEFAULT_SUMMARY_PROMPT: &str = "Renderings show different angles of the same set of 3D objects. Concisely describe 3D object (distinct features, objects, structures, material, color, etc) as a caption";

/// Images a summarizer accepts unless a request raises the limit.
pub const DEFAULT_MAX_SUMMARY_IMAGES: usize = 6;

/// Transparent views an encoder expects per object.
pub const ENCODER_VIEWS: usize = 20;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ClientError {
    #[error("{client}: request timed out after {millis} ms")]
    Timeout { client: String, millis: u64 },
    #[error("{client}: authentication rejected (status {status})")]
    Auth { client: String, status: u16 },
    #[error("{client}: malformed response ({reason}): {body}")]
    Malformed {
        client: String,
        reason: String,
        body: String,
    },
    #[error("{client}: server returned status {status}: {body}")]
    Status {
        client: String,
        status: u16,
        body: String,
    },
    #[error("{client}: transport failure: {message}")]
    Transport { client: String, message: String },
    #[error("{client}: invalid request: {message}")]
    InvalidRequest { client: String, message: String },
    #[error("{client}: expected {expected} items, got {found}")]
    CountMismatch {
        client: String,
        expected: usize,
        found: usize,
    },
}

impl ClientError {
    pub fn invalid(client: &str, message: impl Into<String>) -> Self {
        ClientError::InvalidRequest {
            client: client.to_string(),
            message: message.into(),
        }
    }

    /// Worth retrying: timeouts, transport failures and 5xx/429 statuses.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Timeout { .. } | ClientError::Transport { .. } => true,
            ClientError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

pub trait CaptionerClient: Send + Sync {
    /// Exactly `n` captions of one rendered view.
    fn caption_view(&self, image_ref: &Path, n: usize) -> Result<Vec<String>, ClientError>;
}

pub trait LatentEncoderClient: Send + Sync {
    /// Encodes an object from its transparent-background views.
    fn encode(&self, object_id: &str, transparent_views: &[PathBuf]) -> Result<ObjectLatent, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRequest {
    pub images: Vec<PathBuf>,
    pub prompt: String,
    pub max_images: usize,
}

impl SummaryRequest {
    pub fn new(images: Vec<PathBuf>) -> Self {
        SummaryRequest {
            images,
            prompt: DEFAULT_SUMMARY_PROMPT.to_string(),
            max_images: DEFAULT_MAX_SUMMARY_IMAGES,
        }
    }

    pub fn with_max_images(mut self, max_images: usize) -> Self {
        self.max_images = max_images;
        self
    }

    pub fn check(&self, client: &str) -> Result<(), ClientError> {
        if self.images.is_empty() {
            return Err(ClientError::invalid(client, "no images to summarize"));
        }
        if self.images.len() > self.max_images {
            return Err(ClientError::invalid(
                client,
                format!(
                    "{} images exceed the limit of {}",
                    self.images.len(),
                    self.max_images
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SummaryOutcome {
    Caption {
        text: String,
        /// Prompt tokens reported by the backend, when it reports them.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_tokens: Option<u32>,
    },
    ContentPolicyViolation,
}

pub trait VlmSummarizerClient: Send + Sync {
    fn summarize(&self, request: &SummaryRequest) -> Result<SummaryOutcome, ClientError>;
}

pub trait StatementConverterClient: Send + Sync {
    /// One declarative statement per option, in option order.
    fn to_statements(&self, question: &str, options: &[String]) -> Result<Vec<String>, ClientError>;
}

pub trait EmbedderClient: Send + Sync {
    /// Unit-norm text embedding.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ClientError>;
    /// Unit-norm image embedding.
    fn embed_image(&self, image_ref: &Path) -> Result<Vec<f64>, ClientError>;
}

/// Scales `v` to unit L2 norm. Zero vectors are returned unchanged.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Dot product; equals cosine similarity for unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks a client's item count against the request.
pub fn expect_count<T>(client: &str, items: Vec<T>, expected: usize) -> Result<Vec<T>, ClientError> {
    if items.len() == expected {
        Ok(items)
    } else {
        Err(ClientError::CountMismatch {
            client: client.to_string(),
            expected,
            found: items.len(),
        })
    }
}

impl<C: CaptionerClient + ?Sized> CaptionerClient for std::sync::Arc<C> {
    fn caption_view(&self, image_ref: &Path, n: usize) -> Result<Vec<String>, ClientError> {
        (**self).caption_view(image_ref, n)
    }
}

impl<C: LatentEncoderClient + ?Sized> LatentEncoderClient for std::sync::Arc<C> {
    fn encode(&self, object_id: &str, views: &[PathBuf]) -> Result<ObjectLatent, ClientError> {
        (**self).encode(object_id, views)
    }
}

impl<C: VlmSummarizerClient + ?Sized> VlmSummarizerClient for std::sync::Arc<C> {
    fn summarize(&self, request: &SummaryRequest) -> Result<SummaryOutcome, ClientError> {
        (**self).summarize(request)
    }
}

impl<C: StatementConverterClient + ?Sized> StatementConverterClient for std::sync::Arc<C> {
    fn to_statements(&self, question: &str, options: &[String]) -> Result<Vec<String>, ClientError> {
        (**self).to_statements(question, options)
    }
}

impl<C: EmbedderClient + ?Sized> EmbedderClient for std::sync::Arc<C> {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        (**self).embed_text(text)
    }

    fn embed_image(&self, image_ref: &Path) -> Result<Vec<f64>, ClientError> {
        (**self).embed_image(image_ref)
    }
}
