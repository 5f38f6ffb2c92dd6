//! View ranking by conditional denoising loss, plus the supporting pieces of a
//! multi-view captioning pipeline: render job manifests, a synthetic toy world
//! for verification, caption auditing and paired VQA scoring.

pub mod audit;
pub mod clients;
pub mod diffusion;
pub mod ranking;
pub mod render;
pub mod toy;
pub mod vqa;
pub(crate) mod util;

pub use util::stable_key;
