use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use diffurank::metrics::{clip_score, r_precision_from_embeddings, DEFAULT_RECALL_KS};
use diffurank::{
    ablation_run, read_object_ids, run_pipeline, AblationMode, Backend, BackendConfig, ConfigError,
    MockBackend, PipelineConfig, PipelineError, RankingLine, RunOptions, Stage,
};
use diffurank_core::audit::{
    calibrate_thresholds, clip_stats, dataset_stats, flag_stats, read_captions_csv, AuditThresholds,
    TextFlagger, ValidationEntry,
};
use diffurank_core::clients::EmbedderClient;
use diffurank_core::diffusion::{LossMode, ScoringConfig};
use diffurank_core::render::image_path;
use diffurank_core::toy::{ToyWorld, WorldConfig};
use diffurank_core::vqa::{evaluate, load_benchmark, toy_pairs, CosineScorer, DiffusionScorer, VqaPair};

const EXIT_PARTIAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "diffurank", version, about = "Rank rendered views by denoising loss and caption 3D objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume the captioning pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// One object id per line; defaults to every toy-world object.
        #[arg(long)]
        objects: Option<PathBuf>,
        /// Stop each object after this stage (RENDERED, CAPTIONED, ...).
        #[arg(long, value_parser = parse_stage)]
        halt_after: Option<Stage>,
    },
    /// Flag captions by term filter and, with thresholds, by embedding similarity.
    Audit {
        #[arg(long)]
        csv: PathBuf,
        /// JSON `{mean_threshold, max_threshold}`; needs `--config` for the embedder and renders.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        header: bool,
        /// Extra whole-word terms to flag.
        #[arg(long = "term")]
        terms: Vec<String>,
    },
    /// Derive audit thresholds from annotated validation entries (JSON list).
    Calibrate {
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer two-option image-pair questions by diffusion scoring.
    Vqa {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Noise draws per statement.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Also run the cosine-similarity baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Caption-length histogram and n-gram vocabulary sizes.
    Stats {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        header: bool,
    },
    /// Re-summarize completed objects from another view subset.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// top, bottom, horizontal or all.
        #[arg(long)]
        mode: AblationMode,
        #[arg(long)]
        objects: Option<PathBuf>,
    },
    /// CLIP score and R-precision of a run's captions.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Caption CSV to score; defaults to the run's output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a toy world, object list, VQA pairs and config to a directory.
    InitToy {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
}

fn parse_stage(text: &str) -> Result<Stage, String> {
    Stage::parse(text).ok_or_else(|| format!("unknown stage {text:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some()
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
    })
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

fn objects_for(backend: &Backend, objects: Option<&Path>) -> Result<Vec<String>> {
    let ids = match objects {
        Some(path) => read_object_ids(path)?,
        None => backend.default_objects(),
    };
    if ids.is_empty() {
        bail!("no objects to process; pass --objects");
    }
    Ok(ids)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            objects,
            halt_after,
        } => {
            let config = load_config(&config)?;
            let backend = Backend::from_config(&config)?;
            let ids = objects_for(&backend, objects.as_deref())?;
            let report = run_pipeline(&config, &backend, &ids, &RunOptions { halt_after })?;
            print_json(&report)?;
            if report.has_failures() {
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Audit {
            csv,
            thresholds,
            config,
            header,
            terms,
        } => return audit(&csv, thresholds.as_deref(), config.as_deref(), header, &terms),
        Command::Calibrate { validation, out } => {
            let text = std::fs::read(&validation).with_context(|| validation.display().to_string())?;
            let entries: Vec<ValidationEntry> = serde_json::from_slice(&text)?;
            let thresholds = calibrate_thresholds(&entries)?;
            let json = serde_json::to_string_pretty(&thresholds)?;
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| path.display().to_string())?,
                None => println!("{json}"),
            }
        }
        Command::Vqa {
            bench,
            config,
            samples,
            baseline,
        } => {
            let config = load_config(&config)?;
            let backend = Backend::from_config(&config)?;
            let mut pairs = load_benchmark(&bench)?;
            for pair in &mut pairs {
                pair.prepare(backend.statements.as_ref())?;
            }
            let denoiser = backend.denoiser_with(LossMode::EpsPrediction);
            let scorer = DiffusionScorer {
                denoiser: denoiser.as_ref(),
                config: ScoringConfig::default()
                    .with_mode(LossMode::EpsPrediction)
                    .with_samples(samples)
                    .with_seed(config.seed),
            };
            let report = evaluate(&pairs, &scorer)?;
            let mut out = serde_json::json!({ "diffusion": report });
            if baseline {
                let embedder = backend.embedder.as_ref().context("no embedder configured")?;
                let cosine = evaluate(&pairs, &CosineScorer { embedder: embedder.as_ref() })?;
                out["cosine"] = serde_json::to_value(cosine)?;
            }
            print_json(&out)?;
        }
        Command::Stats { csv, header } => {
            let file = std::fs::File::open(&csv).with_context(|| csv.display().to_string())?;
            let records = read_captions_csv(file, header)?;
            print_json(&dataset_stats(&records))?;
        }
        Command::Ablate {
            config,
            mode,
            objects,
        } => {
            let config = load_config(&config)?;
            let backend = Backend::from_config(&config)?;
            let ids = objects_for(&backend, objects.as_deref())?;
            let output = ablation_run(&config, &backend, &ids, mode)?;
            print_json(&serde_json::json!({
                "mode": output.mode,
                "captions": output.records.len(),
                "flagged": output.flagged,
                "failed": output.failed,
            }))?;
            if !output.failed.is_empty() {
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Eval { config, csv } => {
            let config = load_config(&config)?;
            let backend = Backend::from_config(&config)?;
            eval(&config, &backend, csv.as_deref())?;
        }
        Command::InitToy {
            dir,
            objects,
            seed,
            pairs,
        } => init_toy(&dir, objects, seed, pairs)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn view_refs(config: &PipelineConfig, object_id: &str) -> Vec<PathBuf> {
    (1..=config.num_views as u32)
        .map(|v| image_path(&config.render_dir(), object_id, v))
        .filter(|p| p.exists())
        .collect()
}

fn audit(
    csv: &Path,
    thresholds: Option<&Path>,
    config: Option<&Path>,
    header: bool,
    terms: &[String],
) -> Result<ExitCode> {
    let file = std::fs::File::open(csv).with_context(|| csv.display().to_string())?;
    let records = read_captions_csv(file, header)?;
    let flagger = TextFlagger::new(terms)?;
    let clip = match thresholds {
        Some(path) => {
            let thresholds: AuditThresholds = serde_json::from_slice(&std::fs::read(path)?)?;
            let config = load_config(config.context("--thresholds needs --config")?)?;
            let backend = Backend::from_config(&config)?;
            Some((thresholds, config, backend))
        }
        None => None,
    };
    let mut flagged = 0;
    for record in &records {
        let text_flag = flagger.flag(record);
        let mut line = serde_json::json!({ "id": record.id, "text_flag": text_flag });
        let mut clip_flag = false;
        if let Some((thresholds, config, backend)) = &clip {
            let embedder: &dyn EmbedderClient = backend.embedder.as_deref().context("no embedder configured")?;
            let views = view_refs(config, &record.id)
                .iter()
                .map(|p| embedder.embed_image(p))
                .collect::<Result<Vec<_>, _>>()?;
            let stats = clip_stats(&views, &embedder.embed_text(&record.caption)?)?;
            clip_flag = flag_stats(&stats, thresholds);
            line["clip"] = serde_json::to_value(stats)?;
            line["clip_flag"] = clip_flag.into();
        }
        flagged += (text_flag || clip_flag) as usize;
        println!("{line}");
    }
    log::info!("{flagged} of {} records flagged", records.len());
    Ok(ExitCode::SUCCESS)
}

fn eval(config: &PipelineConfig, backend: &Backend, csv: Option<&Path>) -> Result<()> {
    let embedder = backend.embedder.as_deref().context("no embedder configured")?;
    let csv = csv.map(Path::to_path_buf).unwrap_or_else(|| config.captions_csv());
    let records = read_captions_csv(std::fs::File::open(&csv).with_context(|| csv.display().to_string())?, false)?;

    let rankings: Vec<RankingLine> = std::fs::read_to_string(config.rankings_jsonl())
        .unwrap_or_default()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;

    let mut scores = Vec::new();
    let mut images = Vec::new();
    let mut captions = Vec::new();
    for record in &records {
        let refs = view_refs(config, &record.id);
        if refs.is_empty() {
            log::warn!("no rendered views for {}", record.id);
            continue;
        }
        scores.push(clip_score(embedder, &record.caption, &refs)?);
        // retrieval uses the best-ranked view, or the first one without a ranking
        let top = rankings
            .iter()
            .find(|r| r.object_id == record.id)
            .and_then(|r| r.selected.first().copied())
            .unwrap_or(1);
        images.push(embedder.embed_image(&image_path(&config.render_dir(), &record.id, top))?);
        captions.push(embedder.embed_text(&record.caption)?);
    }
    if scores.is_empty() {
        bail!("no captions with rendered views in {}", csv.display());
    }
    let ks: Vec<usize> = DEFAULT_RECALL_KS.into_iter().filter(|&k| k <= images.len()).collect();
    let recall = r_precision_from_embeddings(&images, &captions, &ks)?;
    print_json(&serde_json::json!({
        "captions": scores.len(),
        "clip_score": scores.iter().sum::<f64>() / scores.len() as f64,
        "r_precision": recall,
    }))
}

fn init_toy(dir: &Path, objects: usize, seed: u64, num_pairs: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let defaults = PipelineConfig::default();
    let world = ToyWorld::generate(
        &WorldConfig {
            num_objects: objects,
            num_views: defaults.num_views,
            captions_per_view: defaults.captions_per_view,
            ..WorldConfig::default()
        },
        seed,
    )?;
    world.save(&dir.join("world.json"))?;
    std::fs::write(dir.join("objects.txt"), world.object_ids().join("\n") + "\n")?;
    let pairs: Vec<VqaPair> = toy_pairs(&world, num_pairs, seed, &dir.join("out").join("renders"));
    std::fs::write(dir.join("pairs.json"), serde_json::to_vec_pretty(&pairs)?)?;
    let config = PipelineConfig {
        seed,
        output_dir: PathBuf::from("out"),
        backend: BackendConfig::Mock(MockBackend {
            world: Some(PathBuf::from("world.json")),
            world_seed: seed,
            ..MockBackend::default()
        }),
        ..defaults
    };
    std::fs::write(dir.join("config.toml"), toml::to_string_pretty(&config)?)?;
    println!("wrote {} objects and {} pairs to {}", objects, pairs.len(), dir.display());
    Ok(())
}
