use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::attributes::{Attributes, Color, Shape, SizeClass, VisibilityMask};
use super::captioner::ToyCaptioner;
use crate::diffusion::{LatentSource, ObjectLatent};
use crate::ranking::CaptionCandidate;
use crate::util::keyed_rng;

pub const WORLD_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_LATENT_DIM: usize = 16;

/// Seed of the fixed attribute prototype vectors. Changing it changes every
/// toy latent, so it is part of the world format.
pub const PROTOTYPE_SEED: u64 = 0x746f_7977_6f72_6c64;
const OBJECT_TAG: u64 = 0x4f42_4a45_4354; // "OBJECT"

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unsupported world format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("world snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("world snapshot json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyObject {
    pub object_id: String,
    pub attributes: Attributes,
    pub latent: ObjectLatent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyView {
    pub view_id: u32,
    pub visibility: VisibilityMask,
}

/// An object with its views, captions and the manifest of informative views
/// (views exposing every attribute).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub object: ToyObject,
    pub views: Vec<ToyView>,
    pub captions: Vec<CaptionCandidate>,
    pub informative_views: Vec<u32>,
}

impl WorldObject {
    pub fn object_id(&self) -> &str {
        &self.object.object_id
    }

    pub fn view(&self, view_id: u32) -> Option<&ToyView> {
        self.views.iter().find(|v| v.view_id == view_id)
    }

    pub fn is_informative(&self, view_id: u32) -> bool {
        self.informative_views.contains(&view_id)
    }

    pub fn captions_for(&self, view_id: u32) -> impl Iterator<Item = &CaptionCandidate> {
        self.captions.iter().filter(move |c| c.view_id == view_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_objects: usize,
    pub num_views: usize,
    pub captions_per_view: usize,
    pub caption_error_rate: f64,
    /// Standard deviation of the per-coordinate latent jitter.
    pub jitter: f64,
    pub latent_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_objects: 100,
            num_views: 6,
            captions_per_view: 5,
            caption_error_rate: 0.0,
            jitter: 0.1,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }
}

impl WorldConfig {
    pub fn new(num_objects: usize, num_views: usize) -> Self {
        WorldConfig {
            num_objects,
            num_views,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let problem = if self.num_objects == 0 {
            Some("num_objects must be >= 1")
        } else if self.num_views < 2 {
            Some("num_views must be >= 2")
        } else if self.captions_per_view == 0 {
            Some("captions_per_view must be >= 1")
        } else if !(0.0..=1.0).contains(&self.caption_error_rate) {
            Some("caption_error_rate must lie in [0, 1]")
        } else if self.latent_dim == 0 {
            Some("latent_dim must be >= 1")
        } else if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            Some("jitter must be finite and >= 0")
        } else {
            None
        };
        match problem {
            Some(p) => Err(WorldError::InvalidConfig(p.into())),
            None => Ok(()),
        }
    }
}

/// Fixed per-class directions in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub shape: Vec<Vec<f64>>,
    pub color: Vec<Vec<f64>>,
}

impl Prototypes {
    /// Entries are i.i.d. `N(0, 0.25)` from [`PROTOTYPE_SEED`], so each
    /// prototype has norm ≈ 2 at `dim = 16`.
    pub fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
        let mut vector = || -> Vec<f64> {
            (0..dim)
                .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let shape = (0..Shape::ALL.len()).map(|_| vector()).collect();
        let color = (0..Color::ALL.len()).map(|_| vector()).collect();
        Prototypes { shape, color }
    }

    /// Noise-free latent: `size · shape_proto + color_proto`.
    pub fn mean_latent(&self, attributes: &Attributes) -> Vec<f64> {
        self.shape[attributes.shape.index()]
            .iter()
            .zip(&self.color[attributes.color.index()])
            .map(|(s, c)| attributes.size * s + c)
            .collect()
    }
}

/// `latent = size·shape_proto[shape] + color_proto[color] + jitter·z`, with
/// `z ~ N(0, I)` drawn from `rng`.
pub fn derive_latent<R: Rng>(
    prototypes: &Prototypes,
    attributes: &Attributes,
    jitter: f64,
    rng: &mut R,
) -> Vec<f64> {
    prototypes
        .mean_latent(attributes)
        .into_iter()
        .map(|m| m + jitter * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn sample_attributes<R: Rng>(rng: &mut R) -> Attributes {
    let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
    let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
    let class = SizeClass::ALL[rng.random_range(0..SizeClass::ALL.len())];
    let (lo, hi) = class.range();
    Attributes {
        shape,
        color,
        size: rng.random_range(lo..hi),
    }
}

pub fn object_id(index: usize) -> String {
    format!("toy-{index:04}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    pub format_version: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub captioner: ToyCaptioner,
    pub objects: Vec<WorldObject>,
}

pub fn generate_world(num_objects: usize, num_views: usize, seed: u64) -> ToyWorld {
    ToyWorld::generate(&WorldConfig::new(num_objects, num_views), seed)
        .expect("generate_world called with num_objects >= 1 and num_views >= 2")
}

impl ToyWorld {
    pub fn generate(config: &WorldConfig, seed: u64) -> Result<Self, WorldError> {
        config.validate()?;
        let attributes = (0..config.num_objects)
            .map(|i| sample_attributes(&mut keyed_rng([seed, OBJECT_TAG, i as u64, 0])))
            .collect();
        Self::from_attributes(attributes, config, seed)
    }

    /// Builds a world around the given attribute tuples. Object `i` gets id
    /// `toy-{i:04}`; jitter and view masks come from per-object keyed streams.
    pub fn from_attributes(
        attributes: Vec<Attributes>,
        config: &WorldConfig,
        seed: u64,
    ) -> Result<Self, WorldError> {
        let config = WorldConfig {
            num_objects: attributes.len(),
            ..config.clone()
        };
        config.validate()?;
        let prototypes = Prototypes::new(config.latent_dim);
        let captioner = ToyCaptioner::new(config.caption_error_rate, seed);
        let objects = attributes
            .into_iter()
            .enumerate()
            .map(|(i, attrs)| {
                let mut rng = keyed_rng([seed, OBJECT_TAG, i as u64, 1]);
                let id = object_id(i);
                let latent = ObjectLatent {
                    object_id: id.clone(),
                    vector: derive_latent(&prototypes, &attrs, config.jitter, &mut rng),
                    source: LatentSource::Synthetic,
                };
                let views = sample_views(config.num_views, &mut rng);
                let informative_views = views
                    .iter()
                    .filter(|v| v.visibility.is_full())
                    .map(|v| v.view_id)
                    .collect();
                let captions = views
                    .iter()
                    .flat_map(|v| {
                        captioner
                            .captions(&id, &attrs, v.view_id, v.visibility, config.captions_per_view)
                            .into_iter()
                            .enumerate()
                            .map(move |(j, text)| CaptionCandidate {
                                view_id: v.view_id,
                                caption_index: j as u32 + 1,
                                text,
                            })
                    })
                    .collect();
                WorldObject {
                    object: ToyObject {
                        object_id: id,
                        attributes: attrs,
                        latent,
                    },
                    views,
                    captions,
                    informative_views,
                }
            })
            .collect();
        Ok(ToyWorld {
            format_version: WORLD_FORMAT_VERSION,
            seed,
            config,
            captioner,
            objects,
        })
    }

    pub fn object(&self, object_id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.object.object_id == object_id)
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.object.object_id.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String, WorldError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != WORLD_FORMAT_VERSION {
            return Err(WorldError::Version {
                found: header.format_version,
                expected: WORLD_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// View ids `1..=n`. One view, at a random position, exposes every attribute;
/// the others draw their mask uniformly from all 8 subsets.
fn sample_views<R: Rng>(n: usize, rng: &mut R) -> Vec<ToyView> {
    let full_at = rng.random_range(0..n);
    (0..n)
        .map(|i| ToyView {
            view_id: i as u32 + 1,
            visibility: if i == full_at {
                VisibilityMask::FULL
            } else {
                VisibilityMask::from_bits(rng.random_range(0..8))
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::attributes::Mentions;
    use super::*;

    #[test]
    fn same_seed_same_world() {
        assert_eq!(generate_world(1, 2, 5), generate_world(1, 2, 5));
        assert_ne!(generate_world(3, 4, 5), generate_world(3, 4, 6));
    }

    #[test]
    fn construction_counts() {
        let w = generate_world(100, 6, 1);
        assert_eq!(w.objects.len(), 100);
        for o in &w.objects {
            assert_eq!(o.views.len(), 6);
            for v in &o.views {
                assert_eq!(o.captions_for(v.view_id).count(), 5);
            }
            assert_eq!(o.object.latent.dim(), DEFAULT_LATENT_DIM);
            assert!(o.object.latent.vector.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn manifest_marks_full_views_informative() {
        let w = generate_world(50, 6, 2);
        for o in &w.objects {
            assert!(!o.informative_views.is_empty());
            for v in &o.views {
                assert_eq!(o.is_informative(v.view_id), v.visibility.is_full());
            }
            // zero error rate: informative captions mention all three attributes correctly
            for id in &o.informative_views {
                for c in o.captions_for(*id) {
                    assert_eq!(Mentions::parse(&c.text).correct(&o.object.attributes), 3);
                }
            }
        }
    }

    #[test]
    fn latent_is_documented_function_of_attributes() {
        let w = ToyWorld::generate(
            &WorldConfig {
                jitter: 0.0,
                ..WorldConfig::new(4, 2)
            },
            8,
        )
        .unwrap();
        let protos = Prototypes::new(DEFAULT_LATENT_DIM);
        for o in &w.objects {
            assert_eq!(o.object.latent.vector, protos.mean_latent(&o.object.attributes));
        }
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let w = generate_world(3, 3, 4);
        let text = w.to_json().unwrap();
        assert_eq!(ToyWorld::from_json(&text).unwrap(), w);
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(matches!(ToyWorld::from_json(&bumped), Err(WorldError::Version { found: 99, .. })));
    }

    #[test]
    fn invalid_configs() {
        assert!(ToyWorld::generate(&WorldConfig::new(0, 3), 1).is_err());
        assert!(ToyWorld::generate(&WorldConfig::new(3, 1), 1).is_err());
    }
}
