//! Trainable conditional denoiser for toy latents.
//!
//! The network sees the noised latent, `sqrt(ᾱ)`, `sqrt(1 − ᾱ)`, `t` and the
//! multi-hot attribute tokens of the caption, and predicts the clean latent as
//! `sqrt(ᾱ)·x_t + mlp(features)`. In ε-prediction mode the clean estimate is
//! converted with `ε̂ = (x_t − sqrt(ᾱ)·x̂_0) / sqrt(1 − ᾱ)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::attributes::{token_features, VisibilityMask, VOCABULARY};
use super::captioner::{describe_masked, template};
use super::mlp::{Adam, Mlp, Tape};
use super::world::{ToyWorld, WorldConfig};
use crate::diffusion::{
    accumulate_scores, CaptionGroup, ConditionalDenoiser, DenoiserError, LossMode, NoiseSchedule,
    ScoringConfig, ScoringError,
};

/// Smallest noise scale used when converting to an ε estimate.
const MIN_NOISE_SCALE: f64 = 1e-6;
const HOLDOUT_TAG: u64 = 0x484f_4c44; // "HOLD"

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("cannot train on an empty world")]
    EmptyWorld,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training did not separate true from mismatched captions: {0}")]
    NotSeparated(SeparationReport),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    World(#[from] super::world::WorldError),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    latent_dim: usize,
    schedule: NoiseSchedule,
    mode: LossMode,
    net: Mlp,
}

fn feature_dim(latent_dim: usize) -> usize {
    latent_dim + 3 + VOCABULARY.len()
}

impl ToyDenoiser {
    /// Randomly initialized network; the null model for separation checks.
    pub fn untrained(latent_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [feature_dim(latent_dim), hidden, hidden, latent_dim];
        ToyDenoiser {
            latent_dim,
            schedule: NoiseSchedule::default(),
            mode: LossMode::X0Prediction,
            net: Mlp::new(&sizes, &mut rng),
        }
    }

    /// Same network, predicting the requested target.
    pub fn with_mode(mut self, mode: LossMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    fn features(&self, noised: &[f64], t: f64, tokens: &[f64]) -> Vec<f64> {
        let alpha_bar = self.schedule.alpha_bar(t);
        let mut f = Vec::with_capacity(feature_dim(self.latent_dim));
        f.extend_from_slice(noised);
        f.extend([alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt(), t]);
        f.extend_from_slice(tokens);
        f
    }

    /// Clean-latent estimate for attribute token features `tokens`.
    pub fn predict_clean(&self, noised: &[f64], t: f64, tokens: &[f64]) -> Vec<f64> {
        let skip = self.schedule.alpha_bar(t).sqrt();
        let out = self.net.forward(&self.features(noised, t, tokens));
        noised.iter().zip(out).map(|(x, o)| skip * x + o).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl ConditionalDenoiser for ToyDenoiser {
    fn prediction_target(&self) -> LossMode {
        self.mode
    }

    fn denoise(&self, noised: &[f64], t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError> {
        if noised.len() != self.latent_dim {
            return Err(DenoiserError(format!(
                "toy denoiser expects {} coordinates, got {}",
                self.latent_dim,
                noised.len()
            )));
        }
        let clean = self.predict_clean(noised, t, &token_features(condition));
        Ok(match self.mode {
            LossMode::X0Prediction => clean,
            LossMode::EpsPrediction => {
                let alpha_bar = self.schedule.alpha_bar(t);
                let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt().max(MIN_NOISE_SCALE));
                noised.iter().zip(clean).map(|(x, c)| (x - a * c) / s).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Noised training examples drawn per object per epoch.
    pub samples_per_object: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate decays linearly to this fraction of its start value.
    pub final_lr_fraction: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Objects in the held-out world used by the separation check.
    pub holdout_objects: usize,
    /// Noise draws per caption in the separation check.
    pub check_samples: usize,
    /// Minimum z statistic of the separation margin.
    pub min_z: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            samples_per_object: 16,
            batch_size: 128,
            learning_rate: 3e-3,
            final_lr_fraction: 0.05,
            hidden: 64,
            seed: 0,
            holdout_objects: 100,
            check_samples: 16,
            min_z: 4.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let problem = if self.epochs == 0 {
            Some("epochs must be >= 1")
        } else if self.samples_per_object == 0 || self.batch_size == 0 {
            Some("samples_per_object and batch_size must be >= 1")
        } else if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            Some("learning_rate must be positive")
        } else if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            Some("final_lr_fraction must lie in [0, 1]")
        } else if self.hidden == 0 {
            Some("hidden must be >= 1")
        } else if self.holdout_objects < 2 || self.check_samples == 0 {
            Some("holdout_objects must be >= 2 and check_samples >= 1")
        } else {
            None
        };
        match problem {
            Some(p) => Err(TrainError::InvalidConfig(p.into())),
            None => Ok(()),
        }
    }
}

/// Outcome of comparing the denoising loss under each object's own caption
/// with the loss under another object's caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub pairs: usize,
    pub mean_true_loss: f64,
    pub mean_mismatched_loss: f64,
    /// Mean of `mismatched − true` loss over pairs.
    pub margin: f64,
    pub margin_std_error: f64,
    pub z: f64,
    pub min_z: f64,
}

impl SeparationReport {
    pub fn passed(&self) -> bool {
        self.margin > 0.0 && self.z >= self.min_z
    }
}

impl std::fmt::Display for SeparationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pairs={} true_loss={:.5} mismatched_loss={:.5} margin={:.5} (se {:.5}, z={:.2}, need z>={})",
            self.pairs,
            self.mean_true_loss,
            self.mean_mismatched_loss,
            self.margin,
            self.margin_std_error,
            self.z,
            self.min_z
        )
    }
}

/// Pairs each object with the next object (cyclically) whose attribute
/// classes differ, and compares full-description captions under shared draws.
pub fn separation_report(
    denoiser: &dyn ConditionalDenoiser,
    world: &ToyWorld,
    num_samples: usize,
    seed: u64,
    min_z: f64,
) -> Result<SeparationReport, ScoringError> {
    let n = world.objects.len();
    let config = ScoringConfig::default()
        .with_samples(num_samples)
        .with_seed(seed)
        .with_mode(denoiser.prediction_target());
    let mut true_losses = Vec::with_capacity(n);
    let mut mismatched_losses = Vec::with_capacity(n);
    for (i, obj) in world.objects.iter().enumerate() {
        let attrs = &obj.object.attributes;
        let Some(other) = (1..n)
            .map(|k| &world.objects[(i + k) % n])
            .find(|o| !o.object.attributes.same_classes(attrs))
        else {
            continue;
        };
        let groups = [
            CaptionGroup::new(1, [describe_masked(attrs, VisibilityMask::FULL)]),
            CaptionGroup::new(
                2,
                [describe_masked(&other.object.attributes, VisibilityMask::FULL)],
            ),
        ];
        let report = accumulate_scores(denoiser, &obj.object.latent, &groups, &config)?;
        true_losses.push(-report.scores[&1].value);
        mismatched_losses.push(-report.scores[&2].value);
    }
    let pairs = true_losses.len();
    let diffs: Vec<f64> = mismatched_losses
        .iter()
        .zip(&true_losses)
        .map(|(m, t)| m - t)
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let margin = mean(&diffs);
    let var = if pairs > 1 {
        diffs.iter().map(|d| (d - margin).powi(2)).sum::<f64>() / (pairs - 1) as f64
    } else {
        0.0
    };
    let se = (var / pairs.max(1) as f64).sqrt();
    let z = if se > 0.0 { margin / se } else { 0.0 };
    Ok(SeparationReport {
        pairs,
        mean_true_loss: mean(&true_losses),
        mean_mismatched_loss: mean(&mismatched_losses),
        margin,
        margin_std_error: se,
        z,
        min_z,
    })
}

/// The held-out world a trained model is checked on: same generator settings
/// as `world`, a seed the training data never saw.
pub fn holdout_world(world: &ToyWorld, num_objects: usize) -> Result<ToyWorld, TrainError> {
    let config = WorldConfig {
        num_objects,
        ..world.config.clone()
    };
    Ok(ToyWorld::generate(&config, world.seed ^ HOLDOUT_TAG.rotate_left(17))?)
}

struct Example {
    object: usize,
    mask: VisibilityMask,
    template: usize,
}

/// Trains on noised latents of `world`'s objects, conditioned on captions of
/// uniformly random visibility masks, then checks separation on a held-out
/// world. Training is single-threaded and fully determined by `config.seed`.
pub fn train_with(world: &ToyWorld, config: &TrainConfig) -> Result<ToyDenoiser, TrainError> {
    if world.objects.is_empty() {
        return Err(TrainError::EmptyWorld);
    }
    config.validate()?;
    let dim = world.config.latent_dim;
    let mut model = ToyDenoiser::untrained(dim, config.hidden, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt = Adam::new(model.net.num_params(), config.learning_rate);
    let mut tape = Tape::default();
    let mut grads = vec![0.0; model.net.num_params()];
    let mut epoch_loss = 0.0;

    let tokens: Vec<Vec<[f64; VOCABULARY.len()]>> = world
        .objects
        .iter()
        .map(|o| {
            (0..8u8)
                .flat_map(|bits| {
                    let phrase = describe_masked(&o.object.attributes, VisibilityMask::from_bits(bits));
                    (0..5).map(move |k| token_features(&template(k, &phrase)))
                })
                .collect()
        })
        .collect();

    let total_steps = config.epochs
        * (world.objects.len() * config.samples_per_object).div_ceil(config.batch_size);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut examples: Vec<Example> = (0..world.objects.len())
            .flat_map(|object| std::iter::repeat_n(object, config.samples_per_object))
            .map(|object| Example {
                object,
                mask: VisibilityMask::from_bits(rng.random_range(0..8)),
                template: rng.random_range(0..5),
            })
            .collect();
        examples.shuffle(&mut rng);
        epoch_loss = 0.0;
        for batch in examples.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / (dim * batch.len()) as f64;
            for ex in batch {
                let clean = &world.objects[ex.object].object.latent.vector;
                let t: f64 = rng.random();
                let alpha_bar = model.schedule.alpha_bar(t);
                let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
                let noised: Vec<f64> = clean
                    .iter()
                    .map(|x| a * x + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let cond = &tokens[ex.object][ex.mask.bits() as usize * 5 + ex.template];
                let features = model.features(&noised, t, cond);
                let out = model.net.forward_tape(&features, &mut tape);
                let residual: Vec<f64> = out
                    .iter()
                    .zip(&noised)
                    .zip(clean)
                    .map(|((o, x), c)| a * x + o - c)
                    .collect();
                epoch_loss += residual.iter().map(|r| r * r).sum::<f64>() / dim as f64;
                let grad_out: Vec<f64> = residual.iter().map(|r| r * scale).collect();
                model.net.backward(&tape, &grad_out, &mut grads);
            }
            let progress = step as f64 / total_steps.max(1) as f64;
            opt.learning_rate =
                config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
            opt.update(model.net.params_mut(), &grads);
            step += 1;
        }
        epoch_loss /= examples.len() as f64;
        if epoch % 25 == 0 {
            log::debug!("toy denoiser epoch {epoch}: loss {epoch_loss:.5}");
        }
    }
    log::info!(
        "trained toy denoiser: {} epochs, final loss {epoch_loss:.5}",
        config.epochs
    );

    let holdout = holdout_world(world, config.holdout_objects)?;
    let report = separation_report(
        &model,
        &holdout,
        config.check_samples,
        config.seed ^ HOLDOUT_TAG,
        config.min_z,
    )?;
    log::info!("separation on held-out world: {report}");
    if report.passed() {
        Ok(model)
    } else {
        Err(TrainError::NotSeparated(report))
    }
}

pub fn train_toy_denoiser(world: &ToyWorld, epochs: usize, seed: u64) -> Result<ToyDenoiser, TrainError> {
    train_with(
        world,
        &TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        },
    )
}
