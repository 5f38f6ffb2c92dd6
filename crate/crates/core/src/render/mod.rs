//! The 28-view rendering job: 8 grey ray-traced views placed horizontally
//! around the default orientation and 20 transparent real-time views sampled
//! at random after normalization. Also parses renderer output directories and
//! detects all-grey images.
//!
//! Output layout under a render root:
//!
//! ```text
//! <object_id>/<view_id>.png          RGBA image
//! <object_id>/<view_id>_depth.exr    depth map
//! <object_id>/<view_id>_alpha.png    matte alpha
//! <object_id>/cameras.json           fov + rt[3][4] per view
//! ```

mod camera;
mod grey;
mod mock;

pub use camera::{CameraMeta, ROTATION_TOLERANCE};
pub use grey::{detect_all_grey, is_all_grey, GreyConfig};
pub use mock::{decode_view_ref, mock_render};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed camera manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("view {0} missing from render output")]
    MissingView(u32),
    #[error("view {0} appears more than once")]
    DuplicateView(u32),
    #[error("view {0} is not part of the render job")]
    UnexpectedView(u32),
    #[error("view {view_id}: strategy {found:?} does not match job ({expected:?})")]
    StrategyMismatch {
        view_id: u32,
        expected: RenderStrategy,
        found: RenderStrategy,
    },
    #[error("view {view_id}: rotation deviates from orthonormal by {deviation:e}")]
    NonOrthonormal { view_id: u32, deviation: f64 },
    #[error("view {view_id}: fov {fov} outside (0, π)")]
    InvalidFov { view_id: u32, fov: f64 },
    #[error("render file missing: {0}")]
    MissingFile(PathBuf),
    #[error("object {object_id} has {found} toy views but the job has {expected}")]
    ViewCountMismatch {
        object_id: String,
        expected: usize,
        found: usize,
    },
    #[error("render adapter failed ({status}): {stderr}")]
    Adapter { status: String, stderr: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RenderError + '_ {
    move |source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStrategy {
    /// Uniform grey background, ray-traced, horizontal cameras.
    GreyRaytrace,
    /// Transparent background, real-time engine, randomized cameras.
    TransparentRealtime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EngineSettings {
    Cycles { samples: u32, denoiser: String },
    Eevee { taa_render_samples: u32 },
}

impl EngineSettings {
    pub fn grey_default() -> Self {
        EngineSettings::Cycles {
            samples: 16,
            denoiser: "OPTIX".into(),
        }
    }

    pub fn transparent_default() -> Self {
        EngineSettings::Eevee {
            taa_render_samples: 1,
        }
    }
}

/// A rendered view handed to captioning and ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedView {
    pub view_id: u32,
    pub strategy: RenderStrategy,
    pub image_ref: PathBuf,
    pub camera: CameraMeta,
}

/// Camera placement parameters. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub grey_views: u32,
    pub transparent_views: u32,
    pub radius: f64,
    pub fov_degrees: f64,
    /// Grey views alternate between these two elevations (odd views take the first).
    pub grey_elevations: [f64; 2],
    /// Elevation range sampled uniformly for transparent views.
    pub transparent_elevation_range: [f64; 2],
    pub image_size: u32,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            grey_views: 8,
            transparent_views: 20,
            radius: 2.0,
            fov_degrees: 40.0,
            grey_elevations: [20.0, -10.0],
            transparent_elevation_range: [-30.0, 60.0],
            image_size: 64,
        }
    }
}

impl RenderSettings {
    pub fn total_views(&self) -> u32 {
        self.grey_views + self.transparent_views
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub view_id: u32,
    pub strategy: RenderStrategy,
    pub camera: CameraMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderJob {
    pub object_id: String,
    pub seed: u64,
    pub views: Vec<ViewSpec>,
    pub grey_engine: EngineSettings,
    pub transparent_engine: EngineSettings,
    pub image_size: u32,
}

impl RenderJob {
    pub fn view(&self, view_id: u32) -> Option<&ViewSpec> {
        self.views.iter().find(|v| v.view_id == view_id)
    }

    pub fn count(&self, strategy: RenderStrategy) -> usize {
        self.views.iter().filter(|v| v.strategy == strategy).count()
    }
}

pub fn build_job(object_id: &str, seed: u64) -> RenderJob {
    build_job_with(object_id, seed, &RenderSettings::default())
}

/// Grey views get ids `1..=grey_views` at azimuths `k·360/grey_views`;
/// transparent views follow with seeded random azimuth and elevation.
pub fn build_job_with(object_id: &str, seed: u64, settings: &RenderSettings) -> RenderJob {
    let fov = settings.fov_degrees.to_radians();
    let mut views = Vec::with_capacity(settings.total_views() as usize);
    for k in 0..settings.grey_views {
        let azimuth = 360.0 * k as f64 / settings.grey_views as f64;
        let elevation = settings.grey_elevations[(k % 2) as usize];
        views.push(ViewSpec {
            view_id: k + 1,
            strategy: RenderStrategy::GreyRaytrace,
            camera: CameraMeta::orbit(
                azimuth.to_radians(),
                elevation.to_radians(),
                settings.radius,
                fov,
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::util::stable_key(object_id));
    let [lo, hi] = settings.transparent_elevation_range;
    for k in 0..settings.transparent_views {
        let azimuth: f64 = rng.random_range(0.0..360.0);
        let elevation: f64 = rng.random_range(lo..=hi);
        views.push(ViewSpec {
            view_id: settings.grey_views + k + 1,
            strategy: RenderStrategy::TransparentRealtime,
            camera: CameraMeta::orbit(
                azimuth.to_radians(),
                elevation.to_radians(),
                settings.radius,
                fov,
            ),
        });
    }
    RenderJob {
        object_id: object_id.to_string(),
        seed,
        views,
        grey_engine: EngineSettings::grey_default(),
        transparent_engine: EngineSettings::transparent_default(),
        image_size: settings.image_size,
    }
}

/// Per-view files written by a renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFiles {
    pub view: RenderedView,
    pub depth_ref: PathBuf,
    pub alpha_ref: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOutput {
    pub object_id: String,
    pub views: Vec<ViewFiles>,
}

impl RenderOutput {
    pub fn rendered_views(&self) -> Vec<RenderedView> {
        self.views.iter().map(|v| v.view.clone()).collect()
    }

    pub fn views_with(&self, strategy: RenderStrategy) -> Vec<RenderedView> {
        self.views
            .iter()
            .filter(|v| v.view.strategy == strategy)
            .map(|v| v.view.clone())
            .collect()
    }
}

/// One entry of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub view_id: u32,
    pub strategy: RenderStrategy,
    pub fov: f64,
    pub rt: [[f64; 4]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraManifest {
    pub object_id: String,
    pub views: Vec<CameraRecord>,
}

pub const CAMERAS_FILE: &str = "cameras.json";

pub fn image_path(root: &Path, object_id: &str, view_id: u32) -> PathBuf {
    root.join(object_id).join(format!("{view_id}.png"))
}

pub fn depth_path(root: &Path, object_id: &str, view_id: u32) -> PathBuf {
    root.join(object_id).join(format!("{view_id}_depth.exr"))
}

pub fn alpha_path(root: &Path, object_id: &str, view_id: u32) -> PathBuf {
    root.join(object_id).join(format!("{view_id}_alpha.png"))
}

/// Checks a camera set against the job: every job view present exactly once,
/// no extra views, matching strategies, valid intrinsics and orthonormal rotations.
pub fn validate_cameras(job: &RenderJob, records: &[CameraRecord]) -> Result<(), RenderError> {
    let mut seen = BTreeSet::new();
    for record in records {
        if !seen.insert(record.view_id) {
            return Err(RenderError::DuplicateView(record.view_id));
        }
        let spec = job
            .view(record.view_id)
            .ok_or(RenderError::UnexpectedView(record.view_id))?;
        if spec.strategy != record.strategy {
            return Err(RenderError::StrategyMismatch {
                view_id: record.view_id,
                expected: spec.strategy,
                found: record.strategy,
            });
        }
        CameraMeta {
            fov: record.fov,
            rt: record.rt,
        }
        .validate(record.view_id)?;
    }
    if let Some(missing) = job.views.iter().find(|v| !seen.contains(&v.view_id)) {
        return Err(RenderError::MissingView(missing.view_id));
    }
    Ok(())
}

/// Parses and validates `<root>/<object_id>/` against `job`.
pub fn load_render_output(root: &Path, job: &RenderJob) -> Result<RenderOutput, RenderError> {
    let manifest_path = root.join(&job.object_id).join(CAMERAS_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: CameraManifest =
        serde_json::from_str(&text).map_err(|source| RenderError::Manifest {
            path: manifest_path.clone(),
            source,
        })?;
    validate_cameras(job, &manifest.views)?;

    let mut records = manifest.views;
    records.sort_by_key(|r| r.view_id);
    let mut views = Vec::with_capacity(records.len());
    for record in records {
        let image_ref = image_path(root, &job.object_id, record.view_id);
        let depth_ref = depth_path(root, &job.object_id, record.view_id);
        let alpha_ref = alpha_path(root, &job.object_id, record.view_id);
        for path in [&image_ref, &depth_ref, &alpha_ref] {
            if !path.is_file() {
                return Err(RenderError::MissingFile(path.clone()));
            }
        }
        views.push(ViewFiles {
            view: RenderedView {
                view_id: record.view_id,
                strategy: record.strategy,
                image_ref,
                camera: CameraMeta {
                    fov: record.fov,
                    rt: record.rt,
                },
            },
            depth_ref,
            alpha_ref,
        });
    }
    Ok(RenderOutput {
        object_id: job.object_id.clone(),
        views,
    })
}

/// Runs an external renderer: `<program> --job <job.json> --out <root>`, then
/// parses the layout it wrote under `<root>/<object_id>/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRenderer {
    pub program: PathBuf,
    #[serde(default)]
    pub extra_args: Vec<String>,
}

impl ExternalRenderer {
    pub fn command(&self, job_file: &Path, root: &Path) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.extra_args)
            .arg("--job")
            .arg(job_file)
            .arg("--out")
            .arg(root);
        cmd
    }

    pub fn render(&self, job: &RenderJob, root: &Path) -> Result<RenderOutput, RenderError> {
        let dir = root.join(&job.object_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let job_file = dir.join("job.json");
        let body = serde_json::to_vec_pretty(job).expect("render job serializes");
        std::fs::write(&job_file, body).map_err(io_err(&job_file))?;
        let output = self
            .command(&job_file, root)
            .output()
            .map_err(io_err(&self.program))?;
        if !output.status.success() {
            return Err(RenderError::Adapter {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        load_render_output(root, job)
    }
}
