use base64::Engine;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

use diffurank_core::clients::{
    expect_count, normalize, CaptionerClient, ClientError, EmbedderClient, LatentEncoderClient,
    StatementConverterClient, SummaryOutcome, SummaryRequest, VlmSummarizerClient,
};
use diffurank_core::diffusion::{LatentSource, ObjectLatent};

use crate::{HttpConfig, HttpTransport};

const POLICY_FLAG: &str = "content_policy_violation";

fn encode_image(client: &str, path: &Path) -> Result<String, ClientError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ClientError::invalid(client, format!("{}: {e}", path.display())))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn encode_images(client: &str, paths: &[PathBuf]) -> Result<Vec<String>, ClientError> {
    paths.iter().map(|p| encode_image(client, p)).collect()
}

macro_rules! transport_accessors {
    ($name:ident) => {
        impl $name {
            pub fn new(config: HttpConfig) -> Self {
                $name {
                    transport: HttpTransport::new(Self::CLIENT, config),
                }
            }

            pub fn transport(&self) -> &HttpTransport {
                &self.transport
            }
        }
    };
}

/// `POST /caption {image_b64, n}` returning `{captions: [..]}`.
pub struct HttpCaptioner {
    transport: HttpTransport,
}

impl HttpCaptioner {
    const CLIENT: &'static str = "captioner";
}
transport_accessors!(HttpCaptioner);

impl CaptionerClient for HttpCaptioner {
    fn caption_view(&self, image_ref: &Path, n: usize) -> Result<Vec<String>, ClientError> {
        let body = json!({ "image_b64": encode_image(Self::CLIENT, image_ref)?, "n": n });
        let response = self.transport.post_json("/caption", &body)?;
        let captions: Vec<String> = self.transport.field(&response, "captions")?;
        let captions = captions.into_iter().map(|c| c.trim().to_string()).collect();
        expect_count(Self::CLIENT, captions, n)
    }
}

/// `POST /encode {object_id, images: [b64..]}` returning `{latent: [..]}`.
pub struct HttpEncoder {
    transport: HttpTransport,
}

impl HttpEncoder {
    const CLIENT: &'static str = "encoder";
}
transport_accessors!(HttpEncoder);

impl LatentEncoderClient for HttpEncoder {
    fn encode(&self, object_id: &str, transparent_views: &[PathBuf]) -> Result<ObjectLatent, ClientError> {
        let body = json!({
            "object_id": object_id,
            "images": encode_images(Self::CLIENT, transparent_views)?,
        });
        let response = self.transport.post_json("/encode", &body)?;
        let vector: Vec<f64> = self.transport.field(&response, "latent")?;
        ObjectLatent::new(object_id, vector, LatentSource::Encoder).map_err(|e| ClientError::Malformed {
            client: Self::CLIENT.into(),
            reason: e.to_string(),
            body: response.to_string(),
        })
    }
}

/// `POST /summarize {images, prompt}` returning `{caption}` or
/// `{flag: "content_policy_violation"}`.
pub struct HttpVlm {
    transport: HttpTransport,
}

impl HttpVlm {
    const CLIENT: &'static str = "vlm";
}
transport_accessors!(HttpVlm);

impl VlmSummarizerClient for HttpVlm {
    fn summarize(&self, request: &SummaryRequest) -> Result<SummaryOutcome, ClientError> {
        request.check(Self::CLIENT)?;
        let body = json!({
            "images": encode_images(Self::CLIENT, &request.images)?,
            "prompt": request.prompt,
        });
        let response = self.transport.post_json("/summarize", &body)?;
        if response.get("flag").and_then(Value::as_str) == Some(POLICY_FLAG) {
            return Ok(SummaryOutcome::ContentPolicyViolation);
        }
        let text: String = self.transport.field(&response, "caption")?;
        let prompt_tokens = response
            .get("prompt_tokens")
            .and_then(Value::as_u64)
            .and_then(|v| u32::try_from(v).ok());
        Ok(SummaryOutcome::Caption {
            text: text.trim().to_string(),
            prompt_tokens,
        })
    }
}

/// `POST /statements {question, options}` returning `{statements: [..]}`.
pub struct HttpStatementConverter {
    transport: HttpTransport,
}

impl HttpStatementConverter {
    const CLIENT: &'static str = "statements";
}
transport_accessors!(HttpStatementConverter);

impl StatementConverterClient for HttpStatementConverter {
    fn to_statements(&self, question: &str, options: &[String]) -> Result<Vec<String>, ClientError> {
        let body = json!({ "question": question, "options": options });
        let response = self.transport.post_json("/statements", &body)?;
        let statements: Vec<String> = self.transport.field(&response, "statements")?;
        expect_count(Self::CLIENT, statements, options.len())
    }
}

/// `POST /embed {text}` or `{image_b64}` returning `{vector: [..]}`.
pub struct HttpEmbedder {
    transport: HttpTransport,
}

impl HttpEmbedder {
    const CLIENT: &'static str = "embedder";

    fn embed(&self, body: Value) -> Result<Vec<f64>, ClientError> {
        let response = self.transport.post_json("/embed", &body)?;
        let vector: Vec<f64> = self.transport.field(&response, "vector")?;
        if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) || vector.iter().all(|x| *x == 0.0) {
            return Err(ClientError::Malformed {
                client: Self::CLIENT.into(),
                reason: "embedding is empty, zero or non-finite".into(),
                body: response.to_string(),
            });
        }
        Ok(normalize(vector))
    }
}
transport_accessors!(HttpEmbedder);

impl EmbedderClient for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        self.embed(json!({ "text": text }))
    }

    fn embed_image(&self, image_ref: &Path) -> Result<Vec<f64>, ClientError> {
        self.embed(json!({ "image_b64": encode_image(Self::CLIENT, image_ref)? }))
    }
}
