//! Re-summarizes completed objects from different view subsets.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use diffurank_core::audit::{write_captions_csv, CaptionRecord};
use diffurank_core::clients::{SummaryOutcome, DEFAULT_MAX_SUMMARY_IMAGES};
use diffurank_core::ranking::{bottom_views, RankingResult};
use diffurank_core::render::{RenderOutput, RenderStrategy, RenderedView};

use crate::backend::Backend;
use crate::config::PipelineConfig;
use crate::run::{summarize, write_atomic, Context, SummaryArtifact};
use crate::state::{replay, Stage};
use crate::store::ArtifactStore;
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationMode {
    /// The P best-ranked views.
    TopP,
    /// The P worst-ranked views.
    BottomP,
    /// P grey views spread evenly in azimuth.
    HorizontalP,
    /// Every rendered view.
    AllViews,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::TopP,
        AblationMode::BottomP,
        AblationMode::HorizontalP,
        AblationMode::AllViews,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::TopP => "top_p",
            AblationMode::BottomP => "bottom_p",
            AblationMode::HorizontalP => "horizontal_p",
            AblationMode::AllViews => "all_views",
        }
    }

    pub fn needs_ranking(self) -> bool {
        matches!(self, AblationMode::TopP | AblationMode::BottomP)
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "top" | "top_p" => Ok(AblationMode::TopP),
            "bottom" | "bottom_p" => Ok(AblationMode::BottomP),
            "horizontal" | "horizontal_p" => Ok(AblationMode::HorizontalP),
            "all" | "all_views" => Ok(AblationMode::AllViews),
            other => Err(format!("unknown ablation mode {other:?}")),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("{0} needs a ranking, but the object has none")]
    MissingRanking(AblationMode),
    #[error("only {available} grey views for {requested} horizontal picks")]
    TooFewGreyViews { available: usize, requested: usize },
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Grey views nearest to the azimuths `0, 360/p, 2·360/p, ...`, one per
/// target, each view used at most once. Ties go to the lower view id. With
/// the default 8 grey views at 45° steps and `p = 6` this picks views
/// 1, 2, 4, 5, 6 and 8.
pub fn horizontal_views(views: &[RenderedView], p: usize) -> Result<Vec<u32>, SelectionError> {
    let mut grey: Vec<(u32, f64)> = views
        .iter()
        .filter(|v| v.strategy == RenderStrategy::GreyRaytrace)
        .map(|v| (v.view_id, v.camera.azimuth_degrees()))
        .collect();
    grey.sort_by_key(|g| g.0);
    if grey.len() < p {
        return Err(SelectionError::TooFewGreyViews {
            available: grey.len(),
            requested: p,
        });
    }
    let mut picked = Vec::with_capacity(p);
    for k in 0..p {
        let target = 360.0 * k as f64 / p as f64;
        let best = grey
            .iter()
            .filter(|(id, _)| !picked.contains(id))
            .min_by(|a, b| {
                circular_distance(a.1, target)
                    .total_cmp(&circular_distance(b.1, target))
                    .then(a.0.cmp(&b.0))
            })
            .expect("enough grey views checked above");
        picked.push(best.0);
    }
    Ok(picked)
}

/// The views a mode forwards to the summarizer.
pub fn select_views(
    mode: AblationMode,
    render: &RenderOutput,
    ranking: Option<&RankingResult>,
    p: usize,
) -> Result<Vec<u32>, SelectionError> {
    let ranking = || ranking.ok_or(SelectionError::MissingRanking(mode));
    match mode {
        AblationMode::TopP => Ok(ranking()?.ordered_views.iter().take(p).map(|v| v.view_id).collect()),
        AblationMode::BottomP => {
            Ok(bottom_views(ranking()?, p).map_err(|_| SelectionError::MissingRanking(mode))?)
        }
        AblationMode::HorizontalP => horizontal_views(&render.rendered_views(), p),
        AblationMode::AllViews => {
            let mut ids: Vec<u32> = render.views.iter().map(|v| v.view.view_id).collect();
            ids.sort_unstable();
            Ok(ids)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutput {
    pub mode: AblationMode,
    pub records: Vec<CaptionRecord>,
    pub selections: BTreeMap<String, Vec<u32>>,
    pub flagged: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

/// Summarizes each object from the views `mode` selects, using the render
/// and ranking artifacts of an earlier run. Writes
/// `<output_dir>/ablation/<mode>.csv`.
pub fn ablation_run(
    config: &PipelineConfig,
    backend: &Backend,
    object_ids: &[String],
    mode: AblationMode,
) -> Result<AblationOutput, PipelineError> {
    config.validate()?;
    let states = if config.journal_path().exists() {
        replay(&config.journal_path())?
    } else {
        BTreeMap::new()
    };
    let ctx = Context {
        config,
        backend,
        store: ArtifactStore::new(config.artifact_dir()),
    };
    let max_images = match mode {
        AblationMode::AllViews => config.num_views,
        _ => config.top_p.max(DEFAULT_MAX_SUMMARY_IMAGES),
    };
    let mut ids = object_ids.to_vec();
    ids.sort();
    ids.dedup();

    let mut output = AblationOutput {
        mode,
        records: Vec::new(),
        selections: BTreeMap::new(),
        flagged: Vec::new(),
        failed: BTreeMap::new(),
    };
    for id in ids {
        let Some(state) = states.get(&id).filter(|s| s.artifact(Stage::Rendered).is_some()) else {
            output.failed.insert(id, "no render artifacts; run the pipeline first".into());
            continue;
        };
        let render: RenderOutput = ctx.load(state, Stage::Rendered)?;
        let ranking: Option<RankingResult> = match state.artifact(Stage::Ranked) {
            Some(hash) => Some(ctx.store.get(hash)?),
            None => None,
        };
        let views = match select_views(mode, &render, ranking.as_ref(), config.top_p) {
            Ok(v) => v,
            Err(e) => {
                output.failed.insert(id, e.to_string());
                continue;
            }
        };
        match summarize(&ctx, &render, &views, max_images) {
            Ok(SummaryArtifact {
                outcome: SummaryOutcome::Caption { text, .. },
                ..
            }) => output.records.push(CaptionRecord::new(id.clone(), text)),
            Ok(_) => output.flagged.push(id.clone()),
            Err(e) => {
                output.failed.insert(id.clone(), e.to_string());
            }
        }
        output.selections.insert(id, views);
    }

    let mut csv = Vec::new();
    write_captions_csv(&mut csv, &output.records, false)?;
    write_atomic(
        &config.output_dir.join("ablation").join(format!("{mode}.csv")),
        &csv,
    )?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffurank_core::render::build_job;

    fn views() -> Vec<RenderedView> {
        build_job("obj", 1)
            .views
            .into_iter()
            .map(|v| RenderedView {
                view_id: v.view_id,
                strategy: v.strategy,
                image_ref: format!("{}.png", v.view_id).into(),
                camera: v.camera,
            })
            .collect()
    }

    #[test]
    fn default_horizontal_pick() {
        assert_eq!(horizontal_views(&views(), 6).unwrap(), vec![1, 2, 4, 5, 6, 8]);
    }

    #[test]
    fn horizontal_views_are_grey() {
        let all = views();
        for p in 1..=8 {
            let picked = horizontal_views(&all, p).unwrap();
            assert_eq!(picked.len(), p);
            for id in picked {
                let v = all.iter().find(|v| v.view_id == id).unwrap();
                assert_eq!(v.strategy, RenderStrategy::GreyRaytrace);
            }
        }
        assert!(horizontal_views(&all, 9).is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("bottom".parse::<AblationMode>().unwrap(), AblationMode::BottomP);
        assert_eq!("ALL-VIEWS".parse::<AblationMode>().unwrap(), AblationMode::AllViews);
        assert!("sideways".parse::<AblationMode>().is_err());
    }
}
