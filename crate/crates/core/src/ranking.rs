//! Per-object view ranking: captions are grouped by view, each group is
//! scored by [`accumulate_scores`], and views are ordered by descending score
//! with ties broken by ascending view id.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::diffusion::{
    accumulate_scores, AlignmentScore, CaptionGroup, ConditionalDenoiser, ObjectLatent,
    ScoringConfig, ScoringError,
};
use crate::render::{RenderStrategy, RenderedView};

pub const DEFAULT_TOP_P: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum RankingError {
    #[error("top_p must be >= 1")]
    InvalidTopP,
    #[error("no views to rank")]
    NoViews,
    #[error("none of the {0} views has a caption")]
    AllViewsCaptionless(usize),
    #[error("caption {caption_index} refers to unknown view {view_id}")]
    UnknownView { view_id: u32, caption_index: u32 },
    #[error("view {0} listed twice")]
    DuplicateView(u32),
    #[error("caption {caption_index} of view {view_id} appears twice")]
    DuplicateCaption { view_id: u32, caption_index: u32 },
    #[error("caption {caption_index} of view {view_id} is empty")]
    EmptyCaption { view_id: u32, caption_index: u32 },
    #[error("ranking result is empty")]
    EmptyResult,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub view_id: u32,
    pub caption_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedView {
    pub view_id: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<RenderStrategy>,
}

/// Views of one object ordered best-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub object_id: String,
    pub ordered_views: Vec<RankedView>,
    pub top_p: usize,
    pub selected: Vec<u32>,
    /// Views dropped because they had no captions.
    #[serde(default)]
    pub excluded_views: Vec<u32>,
    #[serde(default)]
    pub scores: Vec<AlignmentScore>,
    #[serde(default)]
    pub denoiser_calls: usize,
}

/// Descending score, ascending view id on ties.
fn rank_order(a: &RankedView, b: &RankedView) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.view_id.cmp(&b.view_id))
}

impl RankingResult {
    /// Orders `views` and selects the first `min(top_p, M)`.
    pub fn from_scores(
        object_id: impl Into<String>,
        mut views: Vec<RankedView>,
        top_p: usize,
    ) -> Result<Self, RankingError> {
        if top_p == 0 {
            return Err(RankingError::InvalidTopP);
        }
        if views.is_empty() {
            return Err(RankingError::NoViews);
        }
        views.sort_by(rank_order);
        let selected = views.iter().take(top_p).map(|v| v.view_id).collect();
        Ok(RankingResult {
            object_id: object_id.into(),
            ordered_views: views,
            top_p,
            selected,
            excluded_views: Vec::new(),
            scores: Vec::new(),
            denoiser_calls: 0,
        })
    }

    pub fn top(&self) -> Option<u32> {
        self.selected.first().copied()
    }

    pub fn score_of(&self, view_id: u32) -> Option<f64> {
        self.ordered_views
            .iter()
            .find(|v| v.view_id == view_id)
            .map(|v| v.score)
    }
}

/// Ranks rendered views of one object by the alignment of their captions.
pub fn rank_views(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    views: &[RenderedView],
    captions: &[CaptionCandidate],
    config: &ScoringConfig,
    top_p: usize,
) -> Result<RankingResult, RankingError> {
    let strategies: Vec<(u32, Option<RenderStrategy>)> =
        views.iter().map(|v| (v.view_id, Some(v.strategy))).collect();
    rank_view_ids(denoiser, latent, &strategies, captions, config, top_p)
}

/// [`rank_views`] over bare view ids, for callers without render metadata.
pub fn rank_view_ids(
    denoiser: &dyn ConditionalDenoiser,
    latent: &ObjectLatent,
    views: &[(u32, Option<RenderStrategy>)],
    captions: &[CaptionCandidate],
    config: &ScoringConfig,
    top_p: usize,
) -> Result<RankingResult, RankingError> {
    if top_p == 0 {
        return Err(RankingError::InvalidTopP);
    }
    if views.is_empty() {
        return Err(RankingError::NoViews);
    }
    let mut by_view: BTreeMap<u32, BTreeMap<u32, &str>> = BTreeMap::new();
    let mut strategy_of = BTreeMap::new();
    for (id, strategy) in views {
        if strategy_of.insert(*id, *strategy).is_some() {
            return Err(RankingError::DuplicateView(*id));
        }
        by_view.insert(*id, BTreeMap::new());
    }
    for c in captions {
        let group = by_view
            .get_mut(&c.view_id)
            .ok_or(RankingError::UnknownView {
                view_id: c.view_id,
                caption_index: c.caption_index,
            })?;
        if c.text.trim().is_empty() {
            return Err(RankingError::EmptyCaption {
                view_id: c.view_id,
                caption_index: c.caption_index,
            });
        }
        if group.insert(c.caption_index, c.text.as_str()).is_some() {
            return Err(RankingError::DuplicateCaption {
                view_id: c.view_id,
                caption_index: c.caption_index,
            });
        }
    }

    // captions ordered by caption_index, so the input order never matters
    let mut groups = Vec::with_capacity(by_view.len());
    let mut excluded = Vec::new();
    for (view_id, texts) in &by_view {
        if texts.is_empty() {
            excluded.push(*view_id);
        } else {
            groups.push(CaptionGroup::new(*view_id, texts.values().copied()));
        }
    }
    if groups.is_empty() {
        return Err(RankingError::AllViewsCaptionless(views.len()));
    }

    let report = accumulate_scores(denoiser, latent, &groups, config)?;
    let ranked = report
        .scores
        .values()
        .map(|s| RankedView {
            view_id: s.view_id,
            score: s.value,
            strategy: strategy_of[&s.view_id],
        })
        .collect();
    let mut result = RankingResult::from_scores(latent.object_id.clone(), ranked, top_p)?;
    result.excluded_views = excluded;
    result.scores = report.scores.into_values().collect();
    result.denoiser_calls = report.denoiser_calls;
    Ok(result)
}

/// The `min(p, M)` worst views, worst first.
pub fn bottom_views(result: &RankingResult, p: usize) -> Result<Vec<u32>, RankingError> {
    if result.ordered_views.is_empty() {
        return Err(RankingError::EmptyResult);
    }
    Ok(result
        .ordered_views
        .iter()
        .rev()
        .take(p)
        .map(|v| v.view_id)
        .collect())
}

/// View ids of `captions` that are absent from `views`. Useful for warnings
/// before ranking.
pub fn caption_views(captions: &[CaptionCandidate]) -> BTreeSet<u32> {
    captions.iter().map(|c| c.view_id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DenoiserError, LatentSource, LossMode};
    use proptest::prelude::*;

    struct ConstantLoss;

    impl ConditionalDenoiser for ConstantLoss {
        fn prediction_target(&self) -> LossMode {
            LossMode::X0Prediction
        }

        fn denoise(&self, noised: &[f64], _t: f64, _c: &str) -> Result<Vec<f64>, DenoiserError> {
            Ok(vec![1.0; noised.len()])
        }
    }

    /// Loss grows with caption length.
    struct LengthLoss;

    impl ConditionalDenoiser for LengthLoss {
        fn prediction_target(&self) -> LossMode {
            LossMode::X0Prediction
        }

        fn denoise(&self, noised: &[f64], t: f64, c: &str) -> Result<Vec<f64>, DenoiserError> {
            Ok(noised.iter().map(|x| x * t + c.len() as f64 * 0.1).collect())
        }
    }

    fn latent() -> ObjectLatent {
        ObjectLatent::new("obj", vec![0.0, 0.0, 0.0], LatentSource::Synthetic).unwrap()
    }

    fn ids(m: u32) -> Vec<(u32, Option<RenderStrategy>)> {
        (1..=m).map(|i| (i, None)).collect()
    }

    fn captions(m: u32, n: u32) -> Vec<CaptionCandidate> {
        (1..=m)
            .flat_map(|v| {
                (1..=n).map(move |j| CaptionCandidate {
                    view_id: v,
                    caption_index: j,
                    text: "x".repeat((v * 3 + j) as usize % 11 + 1),
                })
            })
            .collect()
    }

    #[test]
    fn single_view_is_selected() {
        let r = rank_view_ids(&LengthLoss, &latent(), &ids(1), &captions(1, 5), &ScoringConfig::default(), 6)
            .unwrap();
        assert_eq!(r.selected, vec![1]);
    }

    #[test]
    fn ties_break_by_ascending_view_id() {
        let r = rank_view_ids(&ConstantLoss, &latent(), &ids(3), &captions(3, 2), &ScoringConfig::default(), 2)
            .unwrap();
        assert_eq!(r.selected, vec![1, 2]);
        assert!(r.ordered_views.iter().all(|v| v.score == -1.0));
    }

    #[test]
    fn bottom_views_definitions() {
        let cfg = ScoringConfig::default();
        let r = rank_view_ids(&LengthLoss, &latent(), &ids(6), &captions(6, 3), &cfg, 6).unwrap();
        let mut rev: Vec<u32> = r.ordered_views.iter().map(|v| v.view_id).collect();
        rev.reverse();
        assert_eq!(bottom_views(&r, 6).unwrap(), rev);

        let r = rank_view_ids(&LengthLoss, &latent(), &ids(28), &captions(28, 5), &cfg, 6).unwrap();
        let expected: Vec<u32> = r.ordered_views[22..].iter().rev().map(|v| v.view_id).collect();
        assert_eq!(bottom_views(&r, 6).unwrap(), expected);
    }

    #[test]
    fn all_ties_bottom_picks_highest_ids() {
        // enumeration on M = 4: ordering is 1, 2, 3, 4, so the bottom 2 are 4, 3
        let r = rank_view_ids(&ConstantLoss, &latent(), &ids(4), &captions(4, 1), &ScoringConfig::default(), 2)
            .unwrap();
        let order: Vec<u32> = r.ordered_views.iter().map(|v| v.view_id).collect();
        assert_eq!(order, vec![1, 2, 3, 4]);
        assert_eq!(bottom_views(&r, 2).unwrap(), vec![4, 3]);
        assert_eq!(bottom_views(&r, 10).unwrap(), vec![4, 3, 2, 1]);
    }

    #[test]
    fn captionless_views_are_excluded_and_reported() {
        let mut c = captions(4, 2);
        c.retain(|c| c.view_id != 2);
        let r = rank_view_ids(&LengthLoss, &latent(), &ids(4), &c, &ScoringConfig::default(), 6).unwrap();
        assert_eq!(r.excluded_views, vec![2]);
        assert_eq!(r.ordered_views.len(), 3);
        assert!(!r.selected.contains(&2));

        let err = rank_view_ids(&LengthLoss, &latent(), &ids(4), &[], &ScoringConfig::default(), 6).unwrap_err();
        assert!(matches!(err, RankingError::AllViewsCaptionless(4)));
    }

    #[test]
    fn input_errors() {
        let cfg = ScoringConfig::default();
        assert!(matches!(
            rank_view_ids(&LengthLoss, &latent(), &ids(2), &captions(2, 1), &cfg, 0),
            Err(RankingError::InvalidTopP)
        ));
        assert!(matches!(
            rank_view_ids(&LengthLoss, &latent(), &ids(2), &captions(3, 1), &cfg, 1),
            Err(RankingError::UnknownView { view_id: 3, .. })
        ));
        let mut dup = captions(2, 2);
        dup[1].caption_index = 1;
        assert!(matches!(
            rank_view_ids(&LengthLoss, &latent(), &ids(2), &dup, &cfg, 1),
            Err(RankingError::DuplicateCaption { .. })
        ));
        let mut blank = captions(2, 2);
        blank[0].text = "   ".into();
        assert!(matches!(
            rank_view_ids(&LengthLoss, &latent(), &ids(2), &blank, &cfg, 1),
            Err(RankingError::EmptyCaption { .. })
        ));
    }

    proptest! {
        #[test]
        fn caption_permutation_invariance(seed in any::<u64>(), perm_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = ScoringConfig::default().with_seed(seed);
            let base = captions(6, 4);
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let a = rank_view_ids(&LengthLoss, &latent(), &ids(6), &base, &cfg, 3).unwrap();
            let b = rank_view_ids(&LengthLoss, &latent(), &ids(6), &shuffled, &cfg, 3).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn top_bottom_disjoint(scores in proptest::collection::vec(-10.0f64..0.0, 2..30), p in 1usize..15) {
            let m = scores.len();
            let views = scores.iter().enumerate()
                .map(|(i, s)| RankedView { view_id: i as u32 + 1, score: *s, strategy: None })
                .collect();
            let r = RankingResult::from_scores("o", views, p).unwrap();
            prop_assert_eq!(r.selected.len(), p.min(m));
            let ordered: Vec<u32> = r.ordered_views.iter().map(|v| v.view_id).collect();
            prop_assert_eq!(&ordered[..r.selected.len()], &r.selected[..]);
            prop_assert!(r.ordered_views.windows(2).all(|w| w[0].score >= w[1].score));
            if 2 * p <= m {
                let bottom = bottom_views(&r, p).unwrap();
                prop_assert!(bottom.iter().all(|v| !r.selected.contains(v)));
            }
        }

        #[test]
        fn monotone_transform_keeps_selection(scores in proptest::collection::vec(-5.0f64..0.0, 1..28), p in 1usize..10) {
            let views: Vec<RankedView> = scores.iter().enumerate()
                .map(|(i, s)| RankedView { view_id: i as u32 + 1, score: *s, strategy: None })
                .collect();
            let transformed = views.iter()
                .map(|v| RankedView { score: (3.0 * v.score).exp() - 7.0, ..v.clone() })
                .collect();
            let a = RankingResult::from_scores("o", views, p).unwrap();
            let b = RankingResult::from_scores("o", transformed, p).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
