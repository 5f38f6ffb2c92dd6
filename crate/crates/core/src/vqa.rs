//! Paired two-option VQA: each question is turned into one statement per
//! option, every image picks its best-aligned statement, and a pair counts
//! as correct only when both images pick their gold statement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::clients::{cosine, ClientError, EmbedderClient, StatementConverterClient};
use crate::diffusion::{
    accumulate_scores, CaptionGroup, ConditionalDenoiser, LatentSource, LossMode, ObjectLatent,
    ScoringConfig, ScoringError,
};
use crate::render::image_path;
use crate::toy::ToyWorld;
use crate::util::keyed_rng;

pub const OPTIONS_PER_QUESTION: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum VqaError {
    #[error("pair {pair}: expected {OPTIONS_PER_QUESTION} options and statements, found {options} and {statements}")]
    Shape {
        pair: String,
        options: usize,
        statements: usize,
    },
    #[error("pair {pair}: gold index {index} out of range")]
    Gold { pair: String, index: usize },
    #[error("statement scoring needs the ε-prediction loss")]
    WrongLossMode,
    #[error("image has no {0}")]
    MissingInput(&'static str),
    #[error("non-finite statement score")]
    NonFinite,
    #[error("no pairs to evaluate")]
    Empty,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("benchmark file: {0}")]
    Io(#[from] std::io::Error),
    #[error("benchmark json: {0}")]
    Json(#[from] serde_json::Error),
}

/// An image as seen by the scorers: a file for embedders, a latent for the
/// diffusion scorer. Either may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaImage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaPair {
    pub pair_id: String,
    pub image_a: VqaImage,
    pub image_b: VqaImage,
    pub question: String,
    pub options: Vec<String>,
    /// Filled from `options` by a statement converter when empty.
    #[serde(default)]
    pub statements: Vec<String>,
    pub gold: Gold,
}

impl VqaPair {
    pub fn validate(&self) -> Result<(), VqaError> {
        if self.options.len() != OPTIONS_PER_QUESTION || self.statements.len() != OPTIONS_PER_QUESTION {
            return Err(VqaError::Shape {
                pair: self.pair_id.clone(),
                options: self.options.len(),
                statements: self.statements.len(),
            });
        }
        for index in [self.gold.a, self.gold.b] {
            if index >= self.options.len() {
                return Err(VqaError::Gold {
                    pair: self.pair_id.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    /// Converts the question and options into statements if none are set.
    pub fn prepare(&mut self, converter: &dyn StatementConverterClient) -> Result<(), VqaError> {
        if self.statements.is_empty() {
            self.statements = converter.to_statements(&self.question, &self.options)?;
        }
        self.validate()
    }
}

pub fn load_benchmark(path: &Path) -> Result<Vec<VqaPair>, VqaError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Alignment score of each statement for one image latent, with all
/// statements sharing the same noise draws. Order follows `statements`.
pub fn score_statements(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    statements: &[String],
    config: &ScoringConfig,
) -> Result<Vec<f64>, VqaError> {
    if config.loss_mode != LossMode::EpsPrediction {
        return Err(VqaError::WrongLossMode);
    }
    let groups: Vec<CaptionGroup> = statements
        .iter()
        .enumerate()
        .map(|(i, s)| CaptionGroup::new(i as u32, [s.as_str()]))
        .collect();
    let report = accumulate_scores(denoiser, latent, &groups, config)?;
    Ok(report.scores.values().map(|s| s.value).collect())
}

/// Scores every statement for an image; higher is better.
pub trait StatementScorer: Sync {
    fn score(&self, image: &VqaImage, statements: &[String]) -> Result<Vec<f64>, VqaError>;
}

pub struct DiffusionScorer<'a> {
    pub denoiser: &'a dyn ConditionalDenoiser,
    pub config: ScoringConfig,
}

impl StatementScorer for DiffusionScorer<'_> {
    fn score(&self, image: &VqaImage, statements: &[String]) -> Result<Vec<f64>, VqaError> {
        let vector = image.latent.clone().ok_or(VqaError::MissingInput("latent"))?;
        let id = image
            .image_ref
            .as_ref()
            .map_or_else(|| "vqa-image".to_string(), |p| p.display().to_string());
        let latent = ObjectLatent::new(id, vector, LatentSource::Encoder)?;
        score_statements(self.denoiser, &latent, statements, &self.config)
    }
}

/// Cosine similarity between image and statement embeddings.
pub struct CosineScorer<'a> {
    pub embedder: &'a dyn EmbedderClient,
}

impl StatementScorer for CosineScorer<'_> {
    fn score(&self, image: &VqaImage, statements: &[String]) -> Result<Vec<f64>, VqaError> {
        let path = image.image_ref.as_ref().ok_or(VqaError::MissingInput("image_ref"))?;
        let v = self.embedder.embed_image(path)?;
        statements
            .iter()
            .map(|s| Ok(cosine(&v, &self.embedder.embed_text(s)?)))
            .collect()
    }
}

/// Uniform random scores; each call draws from its own keyed stream.
pub struct RandomScorer {
    seed: u64,
    counter: AtomicU64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer {
            seed,
            counter: AtomicU64::new(0),
        }
    }
}

impl StatementScorer for RandomScorer {
    fn score(&self, _image: &VqaImage, statements: &[String]) -> Result<Vec<f64>, VqaError> {
        let call = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut rng = keyed_rng([self.seed, 0x5241_4e44, call, 0]);
        Ok(statements.iter().map(|_| rng.random::<f64>()).collect())
    }
}

/// Index of the highest score, ties to the lowest index.
pub fn argmax(scores: &[f64]) -> Result<usize, VqaError> {
    if scores.is_empty() {
        return Err(VqaError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(VqaError::NonFinite);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// The chosen statement for each image. Both images may pick the same one.
pub fn answer_pair(pair: &VqaPair, scorer: &dyn StatementScorer) -> Result<(usize, usize), VqaError> {
    pair.validate()?;
    let a = argmax(&scorer.score(&pair.image_a, &pair.statements)?)?;
    let b = argmax(&scorer.score(&pair.image_b, &pair.statements)?)?;
    Ok((a, b))
}

pub fn cosine_baseline(embedder: &dyn EmbedderClient, pair: &VqaPair) -> Result<(usize, usize), VqaError> {
    answer_pair(pair, &CosineScorer { embedder })
}

/// Fraction of pairs where both choices match the gold answers.
pub fn pair_accuracy(results: &[((usize, usize), Gold)]) -> Result<f64, VqaError> {
    if results.is_empty() {
        return Err(VqaError::Empty);
    }
    let correct = results
        .iter()
        .filter(|((a, b), gold)| *a == gold.a && *b == gold.b)
        .count();
    Ok(correct as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    pub choice_a: usize,
    pub choice_b: usize,
    pub gold: Gold,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaReport {
    pub pair_accuracy: f64,
    pub image_a_accuracy: f64,
    pub image_b_accuracy: f64,
    pub per_pair: Vec<PairOutcome>,
}

/// Answers every pair in order.
pub fn evaluate(pairs: &[VqaPair], scorer: &dyn StatementScorer) -> Result<VqaReport, VqaError> {
    if pairs.is_empty() {
        return Err(VqaError::Empty);
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (a, b) = answer_pair(pair, scorer)?;
        per_pair.push(PairOutcome {
            pair_id: pair.pair_id.clone(),
            choice_a: a,
            choice_b: b,
            gold: pair.gold,
            correct: a == pair.gold.a && b == pair.gold.b,
        });
    }
    let results: Vec<_> = per_pair.iter().map(|p| ((p.choice_a, p.choice_b), p.gold)).collect();
    let n = per_pair.len() as f64;
    Ok(VqaReport {
        pair_accuracy: pair_accuracy(&results)?,
        image_a_accuracy: per_pair.iter().filter(|p| p.choice_a == p.gold.a).count() as f64 / n,
        image_b_accuracy: per_pair.iter().filter(|p| p.choice_b == p.gold.b).count() as f64 / n,
        per_pair,
    })
}

/// Pair accuracy of a uniformly random scorer over `num_pairs` synthetic
/// pairs with random gold labels.
pub fn simulate_random_guess(num_pairs: usize, seed: u64) -> Result<f64, VqaError> {
    let scorer = RandomScorer::new(seed);
    let mut rng = keyed_rng([seed, 0x474f_4c44, 0, 0]);
    let image = VqaImage {
        image_ref: None,
        latent: None,
    };
    let statements = vec!["first".to_string(), "second".to_string()];
    let mut results = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let gold = Gold {
            a: rng.random_range(0..OPTIONS_PER_QUESTION),
            b: rng.random_range(0..OPTIONS_PER_QUESTION),
        };
        let a = argmax(&scorer.score(&image, &statements)?)?;
        let b = argmax(&scorer.score(&image, &statements)?)?;
        results.push(((a, b), gold));
    }
    pair_accuracy(&results)
}

/// Two-option pairs over a toy world: each pair takes two objects that differ
/// in one attribute class and asks about that class. Images are the objects'
/// informative views (latent plus image path under `render_root`); options
/// are the two attribute values in random order.
pub fn toy_pairs(world: &ToyWorld, num_pairs: usize, seed: u64, render_root: &Path) -> Vec<VqaPair> {
    let n = world.objects.len();
    let mut pairs = Vec::with_capacity(num_pairs);
    let mut rng = keyed_rng([seed, 0x5651_4131, world.seed, 0]);
    // bounded so a world without any differing objects cannot spin forever
    let mut attempts = 0usize;
    while pairs.len() < num_pairs && n >= 2 && attempts < 1000 * num_pairs {
        attempts += 1;
        let class = rng.random_range(0..3);
        let a = &world.objects[rng.random_range(0..n)];
        let b = &world.objects[rng.random_range(0..n)];
        let (attr_a, attr_b) = (&a.object.attributes, &b.object.attributes);
        let (question, value_a, value_b) = match class {
            0 => ("What shape is the object?", attr_a.shape.token(), attr_b.shape.token()),
            1 => ("What color is the object?", attr_a.color.token(), attr_b.color.token()),
            _ => (
                "Is the object small or large?",
                attr_a.size_class().token(),
                attr_b.size_class().token(),
            ),
        };
        if value_a == value_b {
            continue;
        }
        let flip = rng.random_bool(0.5);
        let options: Vec<String> = if flip {
            vec![value_b.to_string(), value_a.to_string()]
        } else {
            vec![value_a.to_string(), value_b.to_string()]
        };
        let image = |o: &crate::toy::WorldObject| VqaImage {
            image_ref: Some(image_path(render_root, o.object_id(), o.informative_views[0])),
            latent: Some(o.object.latent.vector.clone()),
        };
        pairs.push(VqaPair {
            pair_id: format!("pair-{:03}", pairs.len() + 1),
            image_a: image(a),
            image_b: image(b),
            question: question.to_string(),
            statements: options.iter().map(|o| format!("the object is {o}")).collect(),
            options,
            gold: Gold {
                a: flip as usize,
                b: !flip as usize,
            },
        });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DenoiserError;
    use crate::toy::generate_world;

    struct ConstantLoss;

    impl ConditionalDenoiser for ConstantLoss {
        fn prediction_target(&self) -> LossMode {
            LossMode::EpsPrediction
        }

        fn denoise(&self, noised: &[f64], _t: f64, _c: &str) -> Result<Vec<f64>, DenoiserError> {
            Ok(vec![0.5; noised.len()])
        }
    }

    struct Fixed(Vec<Vec<f64>>);

    impl StatementScorer for Fixed {
        fn score(&self, image: &VqaImage, _s: &[String]) -> Result<Vec<f64>, VqaError> {
            let which = image.latent.as_ref().unwrap()[0] as usize;
            Ok(self.0[which].clone())
        }
    }

    fn pair(gold: Gold) -> VqaPair {
        VqaPair {
            pair_id: "p".into(),
            image_a: VqaImage { image_ref: None, latent: Some(vec![0.0]) },
            image_b: VqaImage { image_ref: None, latent: Some(vec![1.0]) },
            question: "q".into(),
            options: vec!["x".into(), "y".into()],
            statements: vec!["the object is x".into(), "the object is y".into()],
            gold,
        }
    }

    #[test]
    fn constant_loss_gives_equal_scores_and_ten_calls() {
        let d = crate::diffusion::CountingDenoiser::new(ConstantLoss);
        let latent = ObjectLatent::new("o", vec![0.1, 0.2], LatentSource::Encoder).unwrap();
        let cfg = ScoringConfig::default().with_mode(LossMode::EpsPrediction);
        let s = score_statements(&d, &latent, &["a".into(), "b".into()], &cfg).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(d.calls(), 10);
        assert!(matches!(
            score_statements(&d, &latent, &["a".into()], &ScoringConfig::default()),
            Err(VqaError::WrongLossMode)
        ));
    }

    #[test]
    fn argmax_cases() {
        assert_eq!(argmax(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(argmax(&[-0.1, -0.9]).unwrap(), 0);
        assert_eq!(argmax(&[0.5, 0.5]).unwrap(), 0);
        assert!(argmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn coincident_choices_are_allowed() {
        let scorer = Fixed(vec![vec![0.9, 0.1], vec![0.8, 0.2]]);
        let p = pair(Gold { a: 0, b: 1 });
        assert_eq!(answer_pair(&p, &scorer).unwrap(), (0, 0));
        let r = evaluate(&[p], &scorer).unwrap();
        assert_eq!(r.pair_accuracy, 0.0);
        assert_eq!(r.image_a_accuracy, 1.0);
    }

    #[test]
    fn pair_accuracy_examples() {
        let g = Gold { a: 0, b: 1 };
        assert_eq!(pair_accuracy(&[((0, 1), g), ((0, 1), g)]).unwrap(), 1.0);
        assert_eq!(pair_accuracy(&[((1, 1), g), ((0, 0), g)]).unwrap(), 0.0);
        assert!(pair_accuracy(&[]).is_err());
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        let mut p = pair(Gold { a: 0, b: 2 });
        assert!(matches!(p.validate(), Err(VqaError::Gold { .. })));
        p.gold.b = 1;
        p.statements.pop();
        assert!(matches!(p.validate(), Err(VqaError::Shape { .. })));
    }

    #[test]
    fn toy_pairs_have_distinct_gold_answers() {
        let world = generate_world(30, 6, 2);
        let pairs = toy_pairs(&world, 50, 1, Path::new("renders"));
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            p.validate().unwrap();
            assert_ne!(p.gold.a, p.gold.b);
            assert_ne!(p.options[0], p.options[1]);
        }
        assert_eq!(pairs, toy_pairs(&world, 50, 1, Path::new("renders")));
    }
}
