#![allow(dead_code)]

use diffurank_core::diffusion::{ConditionalDenoiser, DenoiserError, LossMode};
use diffurank_core::ranking::CaptionCandidate;

/// Blends the known clean latent with the noised input by a weight read
/// from the first word of the caption, so better captions denoise better.
pub struct BlendDenoiser {
    pub clean: Vec<f64>,
}

impl ConditionalDenoiser for BlendDenoiser {
    fn prediction_target(&self) -> LossMode {
        LossMode::X0Prediction
    }

    fn denoise(&self, noised: &[f64], _t: f64, condition: &str) -> Result<Vec<f64>, DenoiserError> {
        let weight: f64 = condition
            .split_whitespace()
            .next()
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| DenoiserError(format!("no weight in {condition:?}")))?;
        Ok(noised
            .iter()
            .zip(&self.clean)
            .map(|(n, c)| weight * c + (1.0 - weight) * n)
            .collect())
    }
}

pub fn caption(view_id: u32, caption_index: u32, text: &str) -> CaptionCandidate {
    CaptionCandidate {
        view_id,
        caption_index,
        text: text.to_string(),
    }
}
