use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{
    expect_count, normalize, CaptionerClient, ClientError, EmbedderClient, LatentEncoderClient,
    StatementConverterClient, SummaryOutcome, SummaryRequest, VlmSummarizerClient,
    DEFAULT_MAX_SUMMARY_IMAGES, ENCODER_VIEWS,
};
use crate::diffusion::{LatentSource, ObjectLatent};
use crate::render::decode_view_ref;
use crate::toy::{describe_masked, template, token_features, words, ToyCaptioner, ToyWorld, VisibilityMask, WorldObject, VOCABULARY};
use crate::util::{keyed_rng, stable_key};

pub const EMBEDDING_DIM: usize = 32;
const EMBED_TAG: u64 = 0x454d_4244; // "EMBD"

fn resolve<'w>(world: &'w ToyWorld, client: &str, image_ref: &Path) -> Result<(&'w WorldObject, u32), ClientError> {
    let (object_id, view_id) = decode_view_ref(image_ref)
        .ok_or_else(|| ClientError::invalid(client, format!("unrecognized image ref {}", image_ref.display())))?;
    let object = world
        .object(&object_id)
        .ok_or_else(|| ClientError::invalid(client, format!("unknown object {object_id}")))?;
    Ok((object, view_id))
}

fn mask_of(object: &WorldObject, view_id: u32) -> VisibilityMask {
    object.view(view_id).map_or(VisibilityMask::NONE, |v| v.visibility)
}

/// Captions views with the world's [`ToyCaptioner`], so its output matches
/// the captions stored in the world.
pub struct MockCaptioner {
    world: Arc<ToyWorld>,
    captioner: ToyCaptioner,
    failing: BTreeSet<String>,
    calls: AtomicUsize,
}

impl MockCaptioner {
    pub fn new(world: Arc<ToyWorld>) -> Self {
        let captioner = world.captioner;
        MockCaptioner {
            world,
            captioner,
            failing: BTreeSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_captioner(mut self, captioner: ToyCaptioner) -> Self {
        self.captioner = captioner;
        self
    }

    /// Objects whose views fail to caption.
    pub fn with_failures(mut self, objects: impl IntoIterator<Item = String>) -> Self {
        self.failing.extend(objects);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl CaptionerClient for MockCaptioner {
    fn caption_view(&self, image_ref: &Path, n: usize) -> Result<Vec<String>, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (object, view_id) = resolve(&self.world, "captioner", image_ref)?;
        if self.failing.contains(object.object_id()) {
            return Err(ClientError::invalid("captioner", "injected failure"));
        }
        let captions = self.captioner.captions(
            object.object_id(),
            &object.object.attributes,
            view_id,
            mask_of(object, view_id),
            n,
        );
        expect_count("captioner", captions, n)
    }
}

/// Returns the world's latent for the object behind the views.
pub struct MockEncoder {
    world: Arc<ToyWorld>,
    expected_views: usize,
    calls: AtomicUsize,
}

impl MockEncoder {
    pub fn new(world: Arc<ToyWorld>) -> Self {
        MockEncoder {
            world,
            expected_views: ENCODER_VIEWS,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_expected_views(mut self, n: usize) -> Self {
        self.expected_views = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl LatentEncoderClient for MockEncoder {
    fn encode(&self, object_id: &str, views: &[PathBuf]) -> Result<ObjectLatent, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if views.len() != self.expected_views {
            return Err(ClientError::CountMismatch {
                client: "encoder".into(),
                expected: self.expected_views,
                found: views.len(),
            });
        }
        for view in views {
            let (object, _) = resolve(&self.world, "encoder", view)?;
            if object.object_id() != object_id {
                return Err(ClientError::invalid(
                    "encoder",
                    format!("view {} belongs to {}", view.display(), object.object_id()),
                ));
            }
        }
        let object = self
            .world
            .object(object_id)
            .ok_or_else(|| ClientError::invalid("encoder", format!("unknown object {object_id}")))?;
        Ok(ObjectLatent {
            source: LatentSource::Encoder,
            ..object.object.latent.clone()
        })
    }
}

/// Describes the attributes visible in its input views. Up to the default
/// image limit it reports the union of what the views show; past it, only
/// attributes visible in at least half of the views survive, so piling on
/// views can lose detail.
pub struct MockVlm {
    world: Arc<ToyWorld>,
    violations: BTreeSet<String>,
    calls: AtomicUsize,
}

impl MockVlm {
    pub fn new(world: Arc<ToyWorld>) -> Self {
        MockVlm {
            world,
            violations: BTreeSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Objects for which the summarizer reports a policy violation.
    pub fn with_violations(mut self, objects: impl IntoIterator<Item = String>) -> Self {
        self.violations.extend(objects);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Attributes the summary will mention for these views.
    pub fn visible(masks: &[VisibilityMask]) -> VisibilityMask {
        if masks.len() <= DEFAULT_MAX_SUMMARY_IMAGES {
            return masks.iter().fold(VisibilityMask::NONE, |a, m| a.union(*m));
        }
        let majority = |count: usize| 2 * count >= masks.len();
        VisibilityMask {
            shape: majority(masks.iter().filter(|m| m.shape).count()),
            color: majority(masks.iter().filter(|m| m.color).count()),
            size: majority(masks.iter().filter(|m| m.size).count()),
        }
    }
}

impl VlmSummarizerClient for MockVlm {
    fn summarize(&self, request: &SummaryRequest) -> Result<SummaryOutcome, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        request.check("vlm")?;
        let mut object_id = None;
        let mut masks = Vec::with_capacity(request.images.len());
        let mut object = None;
        for image in &request.images {
            let (o, view_id) = resolve(&self.world, "vlm", image)?;
            if object_id.is_some_and(|id| id != o.object_id()) {
                return Err(ClientError::invalid("vlm", "images show different objects"));
            }
            object_id = Some(o.object_id());
            masks.push(mask_of(o, view_id));
            object = Some(o);
        }
        let object = object.expect("request checked non-empty");
        if self.violations.contains(object.object_id()) {
            return Ok(SummaryOutcome::ContentPolicyViolation);
        }
        let phrase = describe_masked(&object.object.attributes, Self::visible(&masks));
        Ok(SummaryOutcome::Caption {
            text: template(1, &phrase),
            prompt_tokens: Some((request.prompt.split_whitespace().count() + 85 * masks.len()) as u32),
        })
    }
}

/// Fixture lookup `(question, option) → statement`, falling back to
/// "the object is <option>".
#[derive(Default)]
pub struct MockStatementConverter {
    fixtures: BTreeMap<(String, String), String>,
}

impl MockStatementConverter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixture(mut self, question: &str, option: &str, statement: &str) -> Self {
        self.fixtures
            .insert((question.to_string(), option.to_string()), statement.to_string());
        self
    }
}

impl StatementConverterClient for MockStatementConverter {
    fn to_statements(&self, question: &str, options: &[String]) -> Result<Vec<String>, ClientError> {
        let statements = options
            .iter()
            .map(|o| {
                self.fixtures
                    .get(&(question.to_string(), o.clone()))
                    .cloned()
                    .unwrap_or_else(|| format!("the object is {o}"))
            })
            .collect();
        expect_count("statements", statements, options.len())
    }
}

/// Bag-of-attributes embedder. Text embeddings put the caption's attribute
/// tokens in the first coordinates and hash the remaining words into the
/// rest; image embeddings put the view's visible attributes first and fill
/// the rest with per-view noise. Both are unit norm.
pub struct MockEmbedder {
    world: Option<Arc<ToyWorld>>,
    noise: f64,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(world: Arc<ToyWorld>) -> Self {
        MockEmbedder {
            world: Some(world),
            noise: 0.3,
            calls: AtomicUsize::new(0),
        }
    }

    /// Text-only embedder; image requests fail.
    pub fn text_only() -> Self {
        MockEmbedder {
            world: None,
            noise: 0.3,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

fn unit_or_axis(v: Vec<f64>) -> Vec<f64> {
    if v.iter().all(|x| *x == 0.0) {
        let mut axis = vec![0.0; v.len()];
        axis[v.len() - 1] = 1.0;
        axis
    } else {
        normalize(v)
    }
}

impl EmbedderClient for MockEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[..VOCABULARY.len()].copy_from_slice(&token_features(text));
        let buckets = (EMBEDDING_DIM - VOCABULARY.len()) as u64;
        for w in words(text).filter(|w| !VOCABULARY.contains(&w.as_str())) {
            v[VOCABULARY.len() + (stable_key(&w) % buckets) as usize] += 0.3;
        }
        Ok(unit_or_axis(v))
    }

    fn embed_image(&self, image_ref: &Path) -> Result<Vec<f64>, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let world = self
            .world
            .as_ref()
            .ok_or_else(|| ClientError::invalid("embedder", "no world to resolve images"))?;
        let (object, view_id) = resolve(world, "embedder", image_ref)?;
        let phrase = describe_masked(&object.object.attributes, mask_of(object, view_id));
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[..VOCABULARY.len()].copy_from_slice(&token_features(&phrase));
        let mut rng = keyed_rng([world.seed, EMBED_TAG, stable_key(object.object_id()), view_id as u64]);
        for x in &mut v[VOCABULARY.len()..] {
            *x = self.noise * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(unit_or_axis(v))
    }
}
