//! Conditional denoising-loss scoring.
//!
//! An object latent `O_0` is noised as `O_t = sqrt(ᾱ_t)·O_0 + sqrt(1 − ᾱ_t)·ε`
//! and handed to a text-conditioned denoiser. The per-coordinate squared
//! error against the denoiser's target (`O_0` for x0-prediction, `ε` for
//! ε-prediction) is the loss; the negative mean loss over captions and
//! noise draws is the alignment score of a caption group.

mod draws;
mod schedule;
mod scoring;

pub use draws::{draw_sequence, noise_draw, DrawKey};
pub use schedule::{NoiseSchedule, MAX_TERMINAL_ALPHA_BAR};
pub use scoring::{accumulate_scores, AlignmentScore, CaptionGroup, ScoreReport};

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("timestamp {0} outside [0, 1]")]
    TimestampOutOfRange(f64),
    #[error("caption group {group} has no captions")]
    EmptyGroup { group: u32 },
    #[error("duplicate caption group id {0}")]
    DuplicateGroup(u32),
    #[error("caption {caption_index} of group {group} is empty")]
    EmptyCaption { group: u32, caption_index: usize },
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("config scores {config:?} but the denoiser predicts {denoiser:?}")]
    ModeMismatch { config: LossMode, denoiser: LossMode },
    #[error("denoiser failed on group {group}, caption {caption_index}, draw {draw}: {source}")]
    Denoiser {
        group: u32,
        caption_index: usize,
        draw: usize,
        #[source]
        source: DenoiserError,
    },
    #[error("denoiser returned non-finite output for group {group}, caption {caption_index}, draw {draw}")]
    NonFiniteOutput {
        group: u32,
        caption_index: usize,
        draw: usize,
    },
}

/// Failure reported by a [`ConditionalDenoiser`] backend.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct DenoiserError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    Encoder,
    Synthetic,
}

/// Encoded representation of a 3D object (or an image stand-in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLatent {
    pub object_id: String,
    pub vector: Vec<f64>,
    pub source: LatentSource,
}

impl ObjectLatent {
    pub fn new(
        object_id: impl Into<String>,
        vector: Vec<f64>,
        source: LatentSource,
    ) -> Result<Self, ScoringError> {
        let latent = ObjectLatent {
            object_id: object_id.into(),
            vector,
            source,
        };
        latent.validate()?;
        Ok(latent)
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.vector.is_empty() {
            return Err(ScoringError::InvalidConfig(format!(
                "latent of {} has dimension 0",
                self.object_id
            )));
        }
        ensure_finite(&self.vector, || format!("latent of {}", self.object_id))
    }
}

/// One `(t_k, ε_k)` sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub index: usize,
    pub t: f64,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Denoiser predicts the clean latent; loss target is `O_0`.
    #[default]
    X0Prediction,
    /// Denoiser predicts the injected noise; loss target is `ε`.
    EpsPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Every caption group draws its own `(t, ε)` sequence.
    PerView,
    /// All caption groups of one object reuse the same draw sequence.
    #[default]
    PerObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub num_samples: usize,
    pub loss_mode: LossMode,
    pub schedule: NoiseSchedule,
    pub noise_sharing: NoiseSharing,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            num_samples: 5,
            loss_mode: LossMode::X0Prediction,
            schedule: NoiseSchedule::default(),
            noise_sharing: NoiseSharing::PerObject,
            seed: 0,
        }
    }
}

impl ScoringConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, num_samples: usize) -> Self {
        self.num_samples = num_samples;
        self
    }

    pub fn with_mode(mut self, loss_mode: LossMode) -> Self {
        self.loss_mode = loss_mode;
        self
    }

    pub fn with_sharing(mut self, noise_sharing: NoiseSharing) -> Self {
        self.noise_sharing = noise_sharing;
        self
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.num_samples == 0 {
            return Err(ScoringError::InvalidConfig("num_samples must be >= 1".into()));
        }
        self.schedule.validate()
    }
}

/// A text-conditioned denoiser. Implementations must be deterministic for
/// fixed inputs and return a vector of the same dimension as `noised`.
pub trait ConditionalDenoiser: Send + Sync {
    fn prediction_target(&self) -> LossMode;

    fn denoise(&self, noised: &[f64], t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError>;
}

impl<D: ConditionalDenoiser + ?Sized> ConditionalDenoiser for &D {
    fn prediction_target(&self) -> LossMode {
        (**self).prediction_target()
    }

    fn denoise(&self, noised: &[f64], t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError> {
        (**self).denoise(noised, t, condition)
    }
}

impl<D: ConditionalDenoiser + ?Sized> ConditionalDenoiser for std::sync::Arc<D> {
    fn prediction_target(&self) -> LossMode {
        (**self).prediction_target()
    }

    fn denoise(&self, noised: &[f64], t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError> {
        (**self).denoise(noised, t, condition)
    }
}

/// Wraps a denoiser and counts every `denoise` call.
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        CountingDenoiser {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<D: ConditionalDenoiser> ConditionalDenoiser for CountingDenoiser<D> {
    fn prediction_target(&self) -> LossMode {
        self.inner.prediction_target()
    }

    fn denoise(&self, noised: &[f64], t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.denoise(noised, t, condition)
    }
}

fn ensure_finite(values: &[f64], what: impl FnOnce() -> String) -> Result<(), ScoringError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ScoringError::NonFinite { what: what() })
    }
}

/// `sqrt(ᾱ)·clean + sqrt(1 − ᾱ)·epsilon`, elementwise.
pub fn noise_with_alpha_bar(
    clean: &[f64],
    epsilon: &[f64],
    alpha_bar: f64,
) -> Result<Vec<f64>, ScoringError> {
    if clean.len() != epsilon.len() {
        return Err(ScoringError::DimensionMismatch {
            expected: clean.len(),
            found: epsilon.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(ScoringError::InvalidConfig(format!(
            "alpha_bar {alpha_bar} outside [0, 1]"
        )));
    }
    ensure_finite(clean, || "clean latent".into())?;
    ensure_finite(epsilon, || "noise".into())?;
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    Ok(clean
        .iter()
        .zip(epsilon)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

pub fn forward_noise(
    latent: &ObjectLatent,
    draw: &NoiseDraw,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, ScoringError> {
    if !(0.0..=1.0).contains(&draw.t) {
        return Err(ScoringError::TimestampOutOfRange(draw.t));
    }
    noise_with_alpha_bar(&latent.vector, &draw.epsilon, schedule.alpha_bar(draw.t))
}

/// Squared L2 distance divided by the dimension.
pub fn mean_squared_error(prediction: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(prediction.len(), target.len());
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    sum / target.len() as f64
}

/// Loss of one caption against an already-noised input.
pub(crate) fn loss_for_noised(
    denoiser: &dyn ConditionalDenoiser,
    noised: &[f64],
    latent: &ObjectLatent,
    draw: &NoiseDraw,
    caption: &str,
    mode: LossMode,
    group: u32,
    caption_index: usize,
) -> Result<f64, ScoringError> {
    let output = denoiser
        .denoise(noised, draw.t, caption)
        .map_err(|source| ScoringError::Denoiser {
            group,
            caption_index,
            draw: draw.index,
            source,
        })?;
    if output.len() != latent.dim() {
        return Err(ScoringError::DimensionMismatch {
            expected: latent.dim(),
            found: output.len(),
        });
    }
    if output.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::NonFiniteOutput {
            group,
            caption_index,
            draw: draw.index,
        });
    }
    let target = match mode {
        LossMode::X0Prediction => &latent.vector,
        LossMode::EpsPrediction => &draw.epsilon,
    };
    Ok(mean_squared_error(&output, target))
}

pub(crate) fn check_mode(
    denoiser: &dyn ConditionalDenoiser,
    config: &ScoringConfig,
) -> Result<(), ScoringError> {
    let predicted = denoiser.prediction_target();
    if predicted != config.loss_mode {
        return Err(ScoringError::ModeMismatch {
            config: config.loss_mode,
            denoiser: predicted,
        });
    }
    Ok(())
}

/// Denoising loss of a single caption under a single draw.
pub fn single_loss(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    draw: &NoiseDraw,
    caption: &str,
    config: &ScoringConfig,
) -> Result<f64, ScoringError> {
    if caption.trim().is_empty() {
        return Err(ScoringError::EmptyCaption {
            group: 0,
            caption_index: 0,
        });
    }
    check_mode(denoiser, config)?;
    let noised = forward_noise(latent, draw, &config.schedule)?;
    loss_for_noised(denoiser, &noised, latent, draw, caption, config.loss_mode, 0, 0)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Returns a fixed vector, or echoes one of the targets.
    pub enum FixedDenoiser {
        Constant(Vec<f64>, LossMode),
        Clean(Vec<f64>),
        Nan,
    }

    impl ConditionalDenoiser for FixedDenoiser {
        fn prediction_target(&self) -> LossMode {
            match self {
                FixedDenoiser::Constant(_, m) => *m,
                _ => LossMode::X0Prediction,
            }
        }

        fn denoise(&self, noised: &[f64], _t: f64, _c: &str) -> Result<Vec<f64>, DenoiserError> {
            Ok(match self {
                FixedDenoiser::Constant(v, _) => v.clone(),
                FixedDenoiser::Clean(v) => v.clone(),
                FixedDenoiser::Nan => vec![f64::NAN; noised.len()],
            })
        }
    }

    /// Recovers ε exactly from the noised input given the clean latent.
    pub struct EpsOracle {
        pub clean: Vec<f64>,
        pub schedule: NoiseSchedule,
    }

    impl ConditionalDenoiser for EpsOracle {
        fn prediction_target(&self) -> LossMode {
            LossMode::EpsPrediction
        }

        fn denoise(&self, noised: &[f64], t: f64, _c: &str) -> Result<Vec<f64>, DenoiserError> {
            let ab = self.schedule.alpha_bar(t);
            Ok(noised
                .iter()
                .zip(&self.clean)
                .map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt())
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn latent(v: Vec<f64>) -> ObjectLatent {
        ObjectLatent::new("obj", v, LatentSource::Synthetic).unwrap()
    }

    #[test]
    fn boundary_alpha_bar_one_returns_clean() {
        let v = vec![0.3, -1.7, 2.5e10, 1e-300];
        let out = noise_with_alpha_bar(&v, &[9.0, -4.0, 1.0, 3.0], 1.0).unwrap();
        assert_eq!(out, v);
        let draw = NoiseDraw {
            index: 0,
            t: 0.0,
            epsilon: vec![1.0; 4],
        };
        assert_eq!(forward_noise(&latent(v.clone()), &draw, &NoiseSchedule::default()).unwrap(), v);
    }

    #[test]
    fn boundary_alpha_bar_zero_returns_noise() {
        let e = vec![0.25, -3.0, 7.5];
        assert_eq!(noise_with_alpha_bar(&[0.0; 3], &e, 0.0).unwrap(), e);
    }

    #[test]
    fn hand_evaluated_closed_form() {
        // sqrt(0.25)·(1, 0) + sqrt(0.75)·(0, 2) = (0.5, sqrt(3))
        let out = noise_with_alpha_bar(&[1.0, 0.0], &[0.0, 2.0], 0.25).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_non_finite() {
        assert!(matches!(
            noise_with_alpha_bar(&[1.0, 2.0], &[1.0], 0.5),
            Err(ScoringError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(
            noise_with_alpha_bar(&[f64::NAN], &[1.0], 0.5),
            Err(ScoringError::NonFinite { .. })
        ));
        assert!(matches!(
            noise_with_alpha_bar(&[1.0], &[f64::INFINITY], 0.5),
            Err(ScoringError::NonFinite { .. })
        ));
        let draw = NoiseDraw {
            index: 0,
            t: 1.5,
            epsilon: vec![0.0],
        };
        assert!(matches!(
            forward_noise(&latent(vec![1.0]), &draw, &NoiseSchedule::default()),
            Err(ScoringError::TimestampOutOfRange(_))
        ));
        assert!(ObjectLatent::new("x", vec![], LatentSource::Synthetic).is_err());
    }

    #[test]
    fn single_loss_perfect_predictions() {
        let clean = vec![0.5, -0.25, 1.0];
        let l = latent(clean.clone());
        let draw = noise_draw(DrawKey::shared(3), 0, 3);
        let cfg = ScoringConfig::default();
        let x0 = FixedDenoiser::Clean(clean.clone());
        assert_eq!(single_loss(&x0, &l, &draw, "a cube", &cfg).unwrap(), 0.0);

        let eps = EpsOracle {
            clean,
            schedule: cfg.schedule,
        };
        let cfg = cfg.with_mode(LossMode::EpsPrediction);
        assert!(single_loss(&eps, &l, &draw, "a cube", &cfg).unwrap() < 1e-20);
    }

    #[test]
    fn single_loss_mean_of_squared_residuals() {
        // target (0, 0), prediction (1, 1): (1 + 1) / 2 = 1
        let l = latent(vec![0.0, 0.0]);
        let d = FixedDenoiser::Constant(vec![1.0, 1.0], LossMode::X0Prediction);
        let draw = NoiseDraw {
            index: 0,
            t: 0.3,
            epsilon: vec![0.1, 0.2],
        };
        let loss = single_loss(&d, &l, &draw, "a cube", &ScoringConfig::default()).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn single_loss_errors() {
        let l = latent(vec![0.0, 0.0]);
        let draw = NoiseDraw {
            index: 4,
            t: 0.3,
            epsilon: vec![0.1, 0.2],
        };
        let cfg = ScoringConfig::default();
        assert!(matches!(
            single_loss(&FixedDenoiser::Nan, &l, &draw, "a cube", &cfg),
            Err(ScoringError::NonFiniteOutput { draw: 4, .. })
        ));
        assert!(matches!(
            single_loss(&FixedDenoiser::Nan, &l, &draw, "  ", &cfg),
            Err(ScoringError::EmptyCaption { .. })
        ));
        let short = FixedDenoiser::Constant(vec![1.0], LossMode::X0Prediction);
        assert!(matches!(
            single_loss(&short, &l, &draw, "a cube", &cfg),
            Err(ScoringError::DimensionMismatch { .. })
        ));
        let eps = FixedDenoiser::Constant(vec![1.0, 1.0], LossMode::EpsPrediction);
        assert!(matches!(
            single_loss(&eps, &l, &draw, "a cube", &cfg),
            Err(ScoringError::ModeMismatch { .. })
        ));
    }
}
