use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::draws::{draw_sequence, DrawKey};
use super::{
    check_mode, forward_noise, loss_for_noised, ConditionalDenoiser, NoiseDraw, NoiseSharing,
    ObjectLatent, ScoringConfig, ScoringError,
};

/// Captions scored together under one id (a rendered view, or a VQA statement).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGroup {
    pub id: u32,
    pub captions: Vec<String>,
}

impl CaptionGroup {
    pub fn new(id: u32, captions: impl IntoIterator<Item = impl Into<String>>) -> Self {
        CaptionGroup {
            id,
            captions: captions.into_iter().map(Into::into).collect(),
        }
    }
}

/// Negative mean denoising loss of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub view_id: u32,
    pub value: f64,
    pub num_losses: usize,
    pub seed: u64,
    /// Standard error of `value`, from the spread of the per-draw caption means.
    /// `None` with a single draw.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: BTreeMap<u32, AlignmentScore>,
    pub denoiser_calls: usize,
}

struct PreparedDraw {
    draw: NoiseDraw,
    noised: Vec<f64>,
}

fn prepare(
    latent: &ObjectLatent,
    key: DrawKey,
    config: &ScoringConfig,
) -> Result<Vec<PreparedDraw>, ScoringError> {
    draw_sequence(key, config.num_samples, latent.dim())
        .into_iter()
        .map(|draw| {
            let noised = forward_noise(latent, &draw, &config.schedule)?;
            Ok(PreparedDraw { draw, noised })
        })
        .collect()
}

/// Scores every caption group against `latent`.
///
/// For each draw index `k` the same noised input is shared by all captions of
/// a group. With [`NoiseSharing::PerObject`] the draw sequence is also shared
/// across groups, so score differences between groups use common random
/// numbers. Losses are reduced in `(k, j)` order, so results are bit-identical
/// for a fixed seed regardless of thread scheduling.
pub fn accumulate_scores(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    groups: &[CaptionGroup],
    config: &ScoringConfig,
) -> Result<ScoreReport, ScoringError> {
    config.validate()?;
    check_mode(denoiser, config)?;
    latent.validate()?;

    let mut seen = BTreeSet::new();
    for group in groups {
        if !seen.insert(group.id) {
            return Err(ScoringError::DuplicateGroup(group.id));
        }
        if group.captions.is_empty() {
            return Err(ScoringError::EmptyGroup { group: group.id });
        }
        if let Some(j) = group.captions.iter().position(|c| c.trim().is_empty()) {
            return Err(ScoringError::EmptyCaption {
                group: group.id,
                caption_index: j,
            });
        }
    }

    let shared = match config.noise_sharing {
        NoiseSharing::PerObject => Some(prepare(latent, DrawKey::shared(config.seed), config)?),
        NoiseSharing::PerView => None,
    };

    let scored: Vec<(AlignmentScore, usize)> = groups
        .par_iter()
        .map(|group| {
            let own;
            let draws = match &shared {
                Some(d) => d,
                None => {
                    own = prepare(latent, DrawKey::for_config(config, group.id), config)?;
                    &own
                }
            };
            score_group(denoiser, latent, group, draws, config)
        })
        .collect::<Result<_, _>>()?;

    let mut denoiser_calls = 0;
    let mut scores = BTreeMap::new();
    for (score, calls) in scored {
        denoiser_calls += calls;
        scores.insert(score.view_id, score);
    }
    Ok(ScoreReport {
        scores,
        denoiser_calls,
    })
}

fn score_group(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    group: &CaptionGroup,
    draws: &[PreparedDraw],
    config: &ScoringConfig,
) -> Result<(AlignmentScore, usize), ScoringError> {
    let n = group.captions.len() as f64;
    let mut per_draw = Vec::with_capacity(draws.len());
    let mut calls = 0;
    for prepared in draws {
        let mut sum = 0.0;
        for (j, caption) in group.captions.iter().enumerate() {
            sum += loss_for_noised(
                denoiser,
                &prepared.noised,
                latent,
                &prepared.draw,
                caption,
                config.loss_mode,
                group.id,
                j,
            )?;
            calls += 1;
        }
        per_draw.push(sum / n);
    }
    let k = per_draw.len() as f64;
    let mean = per_draw.iter().sum::<f64>() / k;
    let std_error = (per_draw.len() > 1).then(|| {
        let var = per_draw.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    });
    Ok((
        AlignmentScore {
            view_id: group.id,
            value: 0.0 - mean,
            num_losses: calls,
            seed: config.seed,
            std_error,
        },
        calls,
    ))
}
