//! Synthetic verification world: parametric objects with shape, color and
//! size attributes, views that expose subsets of those attributes, a
//! captioner describing exactly what a view shows, a small trainable
//! conditional denoiser and a quadrature reference for alignment scores.

mod attributes;
mod captioner;
mod denoiser;
mod mlp;
mod oracle;
mod world;

pub use attributes::{
    token_features, words, Attributes, Color, Mentions, Shape, SizeClass, VisibilityMask,
    VOCABULARY,
};
pub use captioner::{describe, describe_masked, template, CaptionSample, ToyCaptioner};
pub use denoiser::{
    holdout_world, separation_report, train_toy_denoiser, train_with, ModelFileError,
    SeparationReport, ToyDenoiser, TrainConfig, TrainError,
};
pub use mlp::{Adam, Mlp, Tape};
pub use oracle::{oracle_alignment, MIN_T_GRID, ORACLE_EPS_POINTS, ORACLE_SEED};
pub use world::{
    derive_latent, generate_world, object_id, sample_attributes, Prototypes, ToyObject, ToyView,
    ToyWorld, WorldConfig, WorldError, WorldObject, DEFAULT_LATENT_DIM, PROTOTYPE_SEED,
    WORLD_FORMAT_VERSION,
};
