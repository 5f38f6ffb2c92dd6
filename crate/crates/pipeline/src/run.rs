//! The batch run: every object walks RENDERED → CAPTIONED → ENCODED →
//! RANKED → SUMMARIZED, persisting each stage before starting the next.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use diffurank_core::audit::{write_captions_csv, CaptionRecord};
use diffurank_core::clients::{SummaryOutcome, SummaryRequest, DEFAULT_MAX_SUMMARY_IMAGES};
use diffurank_core::diffusion::{ObjectLatent, ScoringConfig};
use diffurank_core::ranking::{rank_views, CaptionCandidate, RankingResult};
use diffurank_core::render::{build_job_with, RenderOutput, RenderStrategy, RenderedView};
use diffurank_core::stable_key;

use crate::backend::Backend;
use crate::config::PipelineConfig;
use crate::state::{FailureDetail, Journal, JournalEntry, ObjectState, Stage};
use crate::store::ArtifactStore;
use crate::PipelineError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop every object once it reaches this stage, as if the process died.
    pub halt_after: Option<Stage>,
}

/// What the summarizer produced for an object, and from which views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryArtifact {
    pub views: Vec<u32>,
    pub outcome: SummaryOutcome,
}

#[derive(Debug, Default)]
struct Counters {
    render: AtomicUsize,
    caption: AtomicUsize,
    encode: AtomicUsize,
    summarize: AtomicUsize,
    denoiser: AtomicUsize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub render: usize,
    pub caption: usize,
    pub encode: usize,
    pub summarize: usize,
}

impl CallCounts {
    pub fn total(&self) -> usize {
        self.render + self.caption + self.encode + self.summarize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub objects: usize,
    pub summarized: usize,
    pub flagged: Vec<String>,
    pub failed: BTreeMap<String, FailureDetail>,
    pub failures_by_stage: BTreeMap<Stage, usize>,
    /// Objects left mid-pipeline by `halt_after`.
    pub pending: Vec<String>,
    /// Client calls made by this invocation (zero when everything resumed).
    pub calls: CallCounts,
    pub denoiser_calls: usize,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        !self.failed.is_empty()
    }
}

pub(crate) struct Context<'a> {
    pub config: &'a PipelineConfig,
    pub backend: &'a Backend,
    pub store: ArtifactStore,
}

impl Context<'_> {
    pub fn scoring(&self, object_id: &str) -> ScoringConfig {
        ScoringConfig {
            num_samples: self.config.num_samples,
            loss_mode: self.config.loss_mode,
            noise_sharing: self.config.noise_sharing,
            seed: self.config.seed ^ stable_key(object_id),
            ..ScoringConfig::default()
        }
    }

    pub fn load<T: serde::de::DeserializeOwned>(&self, state: &ObjectState, stage: Stage) -> Result<T, PipelineError> {
        let hash = state.artifact(stage).ok_or_else(|| PipelineError::MissingArtifact {
            object_id: state.object_id.clone(),
            stage,
        })?;
        Ok(self.store.get(hash)?)
    }
}

/// Runs (or resumes) the pipeline for `object_ids` and writes the caption
/// CSV, the ranking JSON lines and the run report under the output dir.
pub fn run_pipeline(
    config: &PipelineConfig,
    backend: &Backend,
    object_ids: &[String],
    options: &RunOptions,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mut ids = object_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != object_ids.len() {
        log::warn!("{} duplicate object ids ignored", object_ids.len() - ids.len());
    }

    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let (journal, mut states) = Journal::open(&config.journal_path())?;
    let ctx = Context {
        config,
        backend,
        store: ArtifactStore::new(config.artifact_dir()),
    };
    let counters = Counters::default();
    let resumed = ids.iter().filter(|id| states.get(*id).is_some_and(ObjectState::is_terminal)).count();
    log::info!("{} objects, {resumed} already complete", ids.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Setup(e.to_string()))?;
    let finished: Vec<ObjectState> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let state = states.get(id).cloned().unwrap_or_else(|| ObjectState::new(id));
                advance(&ctx, &journal, &counters, state, options)
            })
            .collect::<Result<_, _>>()
    })?;
    for state in finished {
        states.insert(state.object_id.clone(), state);
    }
    let selected: Vec<&ObjectState> = ids.iter().map(|id| &states[id]).collect();

    write_outputs(&ctx, &selected)?;
    let report = build_report(&selected, &counters);
    write_atomic(
        &config.report_json(),
        &serde_json::to_vec_pretty(&report).expect("report serializes"),
    )?;
    log::info!(
        "{} summarized, {} flagged, {} failed",
        report.summarized,
        report.flagged.len(),
        report.failed.len()
    );
    Ok(report)
}

fn advance(
    ctx: &Context<'_>,
    journal: &Journal,
    counters: &Counters,
    mut state: ObjectState,
    options: &RunOptions,
) -> Result<ObjectState, PipelineError> {
    while let Some(stage) = Stage::next(state.stage) {
        if options.halt_after.is_some_and(|h| state.stage.is_some_and(|s| s >= h)) {
            break;
        }
        let entry = match execute(ctx, counters, &state, stage) {
            Ok((reached, hash)) => JournalEntry {
                object_id: state.object_id.clone(),
                stage: reached,
                artifact: Some(hash),
                error: None,
            },
            Err(StageFailure::Infrastructure(e)) => return Err(e),
            Err(StageFailure::Object(message)) => {
                log::warn!("{} failed at {stage}: {message}", state.object_id);
                JournalEntry {
                    object_id: state.object_id.clone(),
                    stage: Stage::Failed,
                    artifact: None,
                    error: Some(FailureDetail { stage, message }),
                }
            }
        };
        journal.append(&entry)?;
        state.apply(&entry).map_err(crate::state::JournalError::from)?;
    }
    Ok(state)
}

enum StageFailure {
    /// The run itself cannot continue (journal or store trouble).
    Infrastructure(PipelineError),
    /// Only this object is affected.
    Object(String),
}

impl From<PipelineError> for StageFailure {
    fn from(e: PipelineError) -> Self {
        StageFailure::Infrastructure(e)
    }
}

impl From<crate::store::StoreError> for StageFailure {
    fn from(e: crate::store::StoreError) -> Self {
        StageFailure::Infrastructure(e.into())
    }
}

fn object_err(e: impl std::fmt::Display) -> StageFailure {
    StageFailure::Object(e.to_string())
}

fn execute(
    ctx: &Context<'_>,
    counters: &Counters,
    state: &ObjectState,
    stage: Stage,
) -> Result<(Stage, String), StageFailure> {
    let id = state.object_id.as_str();
    let backend = ctx.backend;
    let config = ctx.config;
    match stage {
        Stage::Rendered => {
            let job = build_job_with(id, config.seed, &config.render_settings());
            counters.render.fetch_add(1, Ordering::Relaxed);
            let output = backend
                .renderer
                .render(&job, &config.render_dir())
                .map_err(object_err)?;
            Ok((stage, ctx.store.put(&output)?))
        }
        Stage::Captioned => {
            let render: RenderOutput = ctx.load(state, Stage::Rendered)?;
            let mut captions = Vec::new();
            for view in sorted_views(&render) {
                counters.caption.fetch_add(1, Ordering::Relaxed);
                let texts = backend
                    .captioner
                    .caption_view(&view.image_ref, config.captions_per_view)
                    .map_err(object_err)?;
                captions.extend(texts.into_iter().enumerate().map(|(i, text)| CaptionCandidate {
                    view_id: view.view_id,
                    caption_index: i as u32 + 1,
                    text,
                }));
            }
            Ok((stage, ctx.store.put(&captions)?))
        }
        Stage::Encoded => {
            let render: RenderOutput = ctx.load(state, Stage::Rendered)?;
            let mut views = render.views_with(RenderStrategy::TransparentRealtime);
            if views.is_empty() {
                views = render.rendered_views();
            }
            views.sort_by_key(|v| v.view_id);
            let refs: Vec<PathBuf> = views.into_iter().map(|v| v.image_ref).collect();
            counters.encode.fetch_add(1, Ordering::Relaxed);
            let latent = backend.encoder.encode(id, &refs).map_err(object_err)?;
            Ok((stage, ctx.store.put(&latent)?))
        }
        Stage::Ranked => {
            let render: RenderOutput = ctx.load(state, Stage::Rendered)?;
            let captions: Vec<CaptionCandidate> = ctx.load(state, Stage::Captioned)?;
            let latent: ObjectLatent = ctx.load(state, Stage::Encoded)?;
            let ranking = rank_views(
                backend.denoiser.as_ref(),
                &latent,
                &sorted_views(&render),
                &captions,
                &ctx.scoring(id),
                config.top_p,
            )
            .map_err(object_err)?;
            counters.denoiser.fetch_add(ranking.denoiser_calls, Ordering::Relaxed);
            Ok((stage, ctx.store.put(&ranking)?))
        }
        Stage::Summarized => {
            let render: RenderOutput = ctx.load(state, Stage::Rendered)?;
            let ranking: RankingResult = ctx.load(state, Stage::Ranked)?;
            counters.summarize.fetch_add(1, Ordering::Relaxed);
            let artifact = summarize(ctx, &render, &ranking.selected, config.top_p.max(DEFAULT_MAX_SUMMARY_IMAGES))
                .map_err(object_err)?;
            let reached = match artifact.outcome {
                SummaryOutcome::ContentPolicyViolation => {
                    log::info!("{id} flagged by the summarizer's content policy");
                    Stage::Flagged
                }
                SummaryOutcome::Caption { .. } => Stage::Summarized,
            };
            Ok((reached, ctx.store.put(&artifact)?))
        }
        Stage::Flagged | Stage::Failed => unreachable!("terminal stages are never executed"),
    }
}

pub(crate) fn sorted_views(render: &RenderOutput) -> Vec<RenderedView> {
    let mut views = render.rendered_views();
    views.sort_by_key(|v| v.view_id);
    views
}

/// Sends the chosen views, in the given order, to the summarizer.
pub(crate) fn summarize(
    ctx: &Context<'_>,
    render: &RenderOutput,
    view_ids: &[u32],
    max_images: usize,
) -> Result<SummaryArtifact, PipelineError> {
    let views = render.rendered_views();
    let images = view_ids
        .iter()
        .map(|id| {
            views
                .iter()
                .find(|v| v.view_id == *id)
                .map(|v| v.image_ref.clone())
                .ok_or_else(|| PipelineError::Setup(format!("view {id} of {} was not rendered", render.object_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let request = SummaryRequest::new(images).with_max_images(max_images);
    let outcome = ctx.backend.vlm.summarize(&request)?;
    Ok(SummaryArtifact {
        views: view_ids.to_vec(),
        outcome,
    })
}

fn write_outputs(ctx: &Context<'_>, states: &[&ObjectState]) -> Result<(), PipelineError> {
    let mut records = Vec::new();
    let mut rankings = Vec::new();
    for state in states {
        if let Some(hash) = state.artifact(Stage::Ranked) {
            let ranking: RankingResult = ctx.store.get(hash)?;
            rankings.extend(serde_json::to_vec(&RankingLine::from(&ranking)).expect("ranking serializes"));
            rankings.push(b'\n');
        }
        if state.stage == Some(Stage::Summarized) {
            let summary: SummaryArtifact = ctx.load(state, Stage::Summarized)?;
            if let SummaryOutcome::Caption { text, .. } = summary.outcome {
                records.push(CaptionRecord::new(state.object_id.clone(), text));
            }
        }
    }
    let mut csv = Vec::new();
    write_captions_csv(&mut csv, &records, false)?;
    write_atomic(&ctx.config.captions_csv(), &csv)?;
    write_atomic(&ctx.config.rankings_jsonl(), &rankings)
}

/// One line of `rankings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingLine {
    pub object_id: String,
    pub selected: Vec<u32>,
    pub ordered_views: Vec<u32>,
    pub scores: Vec<f64>,
    pub denoiser_calls: usize,
}

impl From<&RankingResult> for RankingLine {
    fn from(r: &RankingResult) -> Self {
        RankingLine {
            object_id: r.object_id.clone(),
            selected: r.selected.clone(),
            ordered_views: r.ordered_views.iter().map(|v| v.view_id).collect(),
            scores: r.ordered_views.iter().map(|v| v.score).collect(),
            denoiser_calls: r.denoiser_calls,
        }
    }
}

fn build_report(states: &[&ObjectState], counters: &Counters) -> RunReport {
    let mut report = RunReport {
        objects: states.len(),
        summarized: 0,
        flagged: Vec::new(),
        failed: BTreeMap::new(),
        failures_by_stage: BTreeMap::new(),
        pending: Vec::new(),
        calls: CallCounts {
            render: counters.render.load(Ordering::Relaxed),
            caption: counters.caption.load(Ordering::Relaxed),
            encode: counters.encode.load(Ordering::Relaxed),
            summarize: counters.summarize.load(Ordering::Relaxed),
        },
        denoiser_calls: counters.denoiser.load(Ordering::Relaxed),
    };
    for state in states {
        match state.stage {
            Some(Stage::Summarized) => report.summarized += 1,
            Some(Stage::Flagged) => report.flagged.push(state.object_id.clone()),
            Some(Stage::Failed) => {
                let detail = state.error.clone().unwrap_or(FailureDetail {
                    stage: Stage::Failed,
                    message: "unknown".into(),
                });
                *report.failures_by_stage.entry(detail.stage).or_default() += 1;
                report.failed.insert(state.object_id.clone(), detail);
            }
            _ => report.pending.push(state.object_id.clone()),
        }
    }
    report
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Replaces `path` through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
